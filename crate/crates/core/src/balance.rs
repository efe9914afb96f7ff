//! SmoothQuant-style channel balancing.
//!
//! A per-input-channel mask `m` moves dynamic range between activations and
//! weights: `x W^T == (x diag(m)) (W diag(m)^{-1})^T` holds exactly before
//! quantization, while the balanced operands are friendlier to a 4-bit code
//! set. The mask is built from a weight statistic and an activation
//! statistic as `m_i = w_i^alpha / (a_i + eps)^(1-alpha)`.

use crate::error::{Error, Result};
use crate::tensor::{abs_max_over_axis, scale_columns, Tensor};

/// Which activation statistic fed the mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StatKind {
    Max,
    Percentile(f64),
}

/// Strictly positive per-input-channel scales plus the parameters that
/// produced them, recorded so the mask can be rebuilt bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMask {
    mask: Vec<f64>,
    alpha: f64,
    epsilon: f64,
    stat_kind: StatKind,
}

impl ChannelMask {
    pub fn mask(&self) -> &[f64] {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn stat_kind(&self) -> StatKind {
        self.stat_kind
    }

    /// Reconstruct a mask from stored entries (state restore path).
    pub fn from_parts(
        mask: Vec<f64>,
        alpha: f64,
        epsilon: f64,
        stat_kind: StatKind,
    ) -> Result<Self> {
        if let Some(bad) = mask.iter().find(|m| !(**m > 0.0) || !m.is_finite()) {
            return Err(Error::Mask(format!("mask entry {bad} not positive finite")));
        }
        Ok(Self {
            mask,
            alpha,
            epsilon,
            stat_kind,
        })
    }
}

/// Per-input-channel weight statistic: `w_i = max_o |W[o][i]|`.
pub fn weight_stat(w: &Tensor) -> Result<Vec<f64>> {
    abs_max_over_axis(w, 1)
}

/// Build the balancing mask `m_i = w_i^alpha / (a_i + eps)^(1-alpha)`.
///
/// A zero weight statistic with `alpha > 0` would give `m_i = 0` and an
/// uninvertible diagonal, so those channels fall back to the neutral mask
/// `m_i = 1`. At `alpha = 0` the weight statistic drops out (`w^0 = 1`)
/// and the closed form applies to every channel.
pub fn build_mask(
    w_stat: &[f64],
    a_stat: &[f64],
    alpha: f64,
    epsilon: f64,
    stat_kind: StatKind,
) -> Result<ChannelMask> {
    if w_stat.len() != a_stat.len() {
        return Err(Error::Input(format!(
            "build_mask: {} weight stats vs {} activation stats",
            w_stat.len(),
            a_stat.len()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Parameter(format!("alpha {alpha} outside [0, 1]")));
    }
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::Parameter(format!("epsilon {epsilon} invalid")));
    }
    let mut mask = Vec::with_capacity(w_stat.len());
    for (i, (&w, &a)) in w_stat.iter().zip(a_stat).enumerate() {
        if w < 0.0 || a < 0.0 {
            return Err(Error::Input(format!(
                "build_mask: negative statistic at channel {i} (w={w}, a={a})"
            )));
        }
        let m = if w == 0.0 && alpha > 0.0 {
            1.0
        } else {
            w.powf(alpha) / (a + epsilon).powf(1.0 - alpha)
        };
        if !(m > 0.0) || !m.is_finite() {
            return Err(Error::Mask(format!(
                "build_mask: channel {i} mask {m} not positive finite (w={w}, a={a}, eps={epsilon})"
            )));
        }
        mask.push(m);
    }
    Ok(ChannelMask {
        mask,
        alpha,
        epsilon,
        stat_kind,
    })
}

/// Divide weight column `i` by `m_i` (the `W diag(m)^{-1}` side).
pub fn balance_weights(w: &Tensor, mask: &ChannelMask) -> Result<Tensor> {
    scale_columns(w, &mask.mask, true)
}

/// Multiply activation column `i` by `m_i` (the `x diag(m)` side).
pub fn balance_activations(x: &Tensor, mask: &ChannelMask) -> Result<Tensor> {
    scale_columns(x, &mask.mask, false)
}
