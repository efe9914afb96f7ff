//! Signed 4-bit floating-point fake quantization.
//!
//! A [`Hif4Format`] is a parameterizable code set: one sign bit plus an
//! exponent/mantissa split of the remaining three bits. The default E2M1
//! split gives the magnitude ladder `{0, 0.5, 1, 1.5, 2, 3, 4, 6}`. There
//! are no NaN or infinity codes; negative zero dequantizes to zero.
//!
//! Quantize-dequantize is simulated in `f64` ("fake" quantization): each
//! value is divided by its slice scale, snapped to the nearest code, and
//! multiplied back. Ties between two equidistant codes resolve to the code
//! with the even index in the sorted signed code list, which keeps the
//! operator deterministic and exactly sign-symmetric (the list length is
//! odd, so negation preserves index parity).

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Parameterizable signed 4-bit floating-point code set.
#[derive(Debug, Clone, PartialEq)]
pub struct Hif4Format {
    exponent_bits: u32,
    mantissa_bits: u32,
    magnitudes: Vec<f64>,
    codes: Vec<f64>,
    max_magnitude: f64,
}

impl Hif4Format {
    /// Derive the code set for a bit split. `exponent_bits + mantissa_bits`
    /// must equal 3 (the fourth bit is the sign).
    ///
    /// Magnitudes follow the usual small-float convention: IEEE-style bias
    /// `2^(e-1) - 1`, a subnormal row at the bottom of the exponent range,
    /// and a pure fraction ladder when there are no exponent bits.
    pub fn new(exponent_bits: u32, mantissa_bits: u32) -> Result<Self> {
        if exponent_bits + mantissa_bits != 3 {
            return Err(Error::Format(format!(
                "bit split E{exponent_bits}M{mantissa_bits} does not fill 3 non-sign bits"
            )));
        }
        let e = exponent_bits;
        let m = mantissa_bits;
        let frac = (1u32 << m) as f64;
        let mut magnitudes = Vec::with_capacity(1 << (e + m));
        if e == 0 {
            for f in 0..(1u32 << m) {
                magnitudes.push(f as f64 / frac);
            }
        } else {
            let bias = (1i32 << (e - 1)) - 1;
            for f in 0..(1u32 << m) {
                magnitudes.push(f as f64 / frac * exp2i(1 - bias));
            }
            for exp in 1..(1i32 << e) {
                for f in 0..(1u32 << m) {
                    magnitudes.push((1.0 + f as f64 / frac) * exp2i(exp - bias));
                }
            }
        }
        debug_assert!(magnitudes.windows(2).all(|w| w[0] < w[1]));
        let max_magnitude = *magnitudes.last().expect("non-empty ladder");

        let mut codes: Vec<f64> = magnitudes.iter().rev().map(|&v| -v).collect();
        codes.pop(); // drop -0, keeping a single zero entry
        codes.extend_from_slice(&magnitudes);
        Ok(Self {
            exponent_bits,
            mantissa_bits,
            magnitudes,
            codes,
            max_magnitude,
        })
    }

    /// The default E2M1 format with magnitudes `{0, 0.5, 1, 1.5, 2, 3, 4, 6}`.
    pub fn e2m1() -> Self {
        Self::new(2, 1).expect("E2M1 is a valid split")
    }

    pub fn exponent_bits(&self) -> u32 {
        self.exponent_bits
    }

    pub fn mantissa_bits(&self) -> u32 {
        self.mantissa_bits
    }

    /// Non-negative representable magnitudes, ascending from 0.
    pub fn magnitudes(&self) -> &[f64] {
        &self.magnitudes
    }

    pub fn max_magnitude(&self) -> f64 {
        self.max_magnitude
    }

    /// Sorted signed code set: the union of `{-m, +m}` over all magnitudes,
    /// with zero appearing exactly once.
    pub fn code_set(&self) -> &[f64] {
        &self.codes
    }

    /// Snap `u` to the nearest code, ties to the even code index.
    pub fn nearest_code(&self, u: f64) -> f64 {
        let codes = &self.codes;
        let i = codes.partition_point(|&c| c < u);
        if i == 0 {
            return codes[0];
        }
        if i == codes.len() {
            return codes[codes.len() - 1];
        }
        let lo = codes[i - 1];
        let hi = codes[i];
        let d_lo = u - lo;
        let d_hi = hi - u;
        if d_lo < d_hi {
            lo
        } else if d_hi < d_lo {
            hi
        } else if (i - 1) % 2 == 0 {
            lo
        } else {
            hi
        }
    }
}

/// Exact `2^k` for small integer `k`.
fn exp2i(k: i32) -> f64 {
    f64::powi(2.0, k)
}

/// Quantization axis convention for 2-D tensors.
///
/// Weights `[out, in]` are scaled per output channel (per row); activations
/// `[tokens, features]` per feature channel (per column).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantAxis {
    PerOutputChannel,
    PerFeatureChannel,
    PerTensor,
}

/// Rounding rule applied when snapping to the code set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Rounding {
    #[default]
    NearestTiesToEvenIndex,
}

/// A format plus per-slice scales along a quantization axis.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantDescriptor {
    pub axis: QuantAxis,
    pub format: Hif4Format,
    pub scales: Vec<f64>,
    pub rounding: Rounding,
}

impl QuantDescriptor {
    pub fn new(axis: QuantAxis, format: Hif4Format, scales: Vec<f64>) -> Result<Self> {
        if scales.is_empty() {
            return Err(Error::Descriptor("descriptor has no scales".into()));
        }
        if let Some(bad) = scales.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(Error::Descriptor(format!(
                "scale {bad} is not strictly positive and finite"
            )));
        }
        if axis == QuantAxis::PerTensor && scales.len() != 1 {
            return Err(Error::Descriptor(format!(
                "per-tensor descriptor carries {} scales",
                scales.len()
            )));
        }
        Ok(Self {
            axis,
            format,
            scales,
            rounding: Rounding::NearestTiesToEvenIndex,
        })
    }

    /// Build a descriptor with absmax scales computed from `t` per slice.
    pub fn absmax_for(t: &Tensor, axis: QuantAxis, format: Hif4Format) -> Result<Self> {
        let scales = match axis {
            QuantAxis::PerTensor => vec![compute_scale(t.data(), &format)?],
            QuantAxis::PerOutputChannel => {
                let (rows, _) = t.dims2()?;
                (0..rows)
                    .map(|r| compute_scale(t.row(r), &format))
                    .collect::<Result<Vec<_>>>()?
            }
            QuantAxis::PerFeatureChannel => {
                let (rows, cols) = t.dims2()?;
                let mut scales = Vec::with_capacity(cols);
                let mut column = vec![0.0f64; rows];
                for c in 0..cols {
                    for (r, slot) in column.iter_mut().enumerate() {
                        *slot = t.get2(r, c);
                    }
                    scales.push(compute_scale(&column, &format)?);
                }
                scales
            }
        };
        Self::new(axis, format, scales)
    }

    fn check_against(&self, t: &Tensor) -> Result<()> {
        match self.axis {
            QuantAxis::PerTensor => Ok(()),
            QuantAxis::PerOutputChannel => {
                let (rows, _) = t.dims2()?;
                if self.scales.len() != rows {
                    return Err(Error::Descriptor(format!(
                        "{} per-output-channel scales for {rows} rows",
                        self.scales.len()
                    )));
                }
                Ok(())
            }
            QuantAxis::PerFeatureChannel => {
                let (_, cols) = t.dims2()?;
                if self.scales.len() != cols {
                    return Err(Error::Descriptor(format!(
                        "{} per-feature-channel scales for {cols} columns",
                        self.scales.len()
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Absmax scale for one slice: `max|values| / max_magnitude`, or the 1.0
/// sentinel for an all-zero slice so exact zeros round-trip.
pub fn compute_scale(values: &[f64], format: &Hif4Format) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Input("compute_scale: empty slice".into()));
    }
    let mut absmax = 0.0f64;
    for &v in values {
        if !v.is_finite() {
            return Err(Error::Input(format!("compute_scale: non-finite value {v}")));
        }
        if v.abs() > absmax {
            absmax = v.abs();
        }
    }
    if absmax == 0.0 {
        Ok(1.0)
    } else {
        Ok(absmax / format.max_magnitude)
    }
}

/// Quantize-dequantize every element of `t` under `d`: each value `v` with
/// slice scale `s` becomes `s * c` for the code `c` nearest to `v / s`.
pub fn fake_quant(t: &Tensor, d: &QuantDescriptor) -> Result<Tensor> {
    d.check_against(t)?;
    let mut out = t.clone();
    match d.axis {
        QuantAxis::PerTensor => {
            let s = d.scales[0];
            for v in out.data_mut() {
                *v = s * d.format.nearest_code(*v / s);
            }
        }
        QuantAxis::PerOutputChannel => {
            let (rows, cols) = t.dims2()?;
            let data = out.data_mut();
            for r in 0..rows {
                let s = d.scales[r];
                for v in &mut data[r * cols..(r + 1) * cols] {
                    *v = s * d.format.nearest_code(*v / s);
                }
            }
        }
        QuantAxis::PerFeatureChannel => {
            let (rows, cols) = t.dims2()?;
            let data = out.data_mut();
            for r in 0..rows {
                for c in 0..cols {
                    let s = d.scales[c];
                    let v = &mut data[r * cols + c];
                    *v = s * d.format.nearest_code(*v / s);
                }
            }
        }
    }
    Ok(out)
}

/// Mean squared quantization error of `t` under `d`.
pub fn quant_error(t: &Tensor, d: &QuantDescriptor) -> Result<f64> {
    let q = fake_quant(t, d)?;
    let n = t.len();
    if n == 0 {
        return Ok(0.0);
    }
    let sum: f64 = t
        .data()
        .iter()
        .zip(q.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / n as f64)
}
