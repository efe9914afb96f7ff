//! Toy transformer model description and full-precision forward pass.
//!
//! The model is two stacks of pre-norm residual blocks. Each block holds
//! attention-style projection groups (q, k, v, o around a cheap elementwise
//! mixing nonlinearity) and a feed-forward pair (up, down around a GELU).
//! Boundary layers (embedding-side and head-side projections outside the
//! blocks) are also residual, so per-channel structure in the input
//! survives through depth instead of being washed out by the first dense
//! matmul.
//!
//! The forward pass is parameterized over the linear-layer operator: the
//! full-precision path, calibration hooks, and the quantized path all share
//! the same routing.

use std::collections::BTreeSet;

use crate::digest::Fnv64;
use crate::error::{Error, Result};
use crate::tensor::{matmul_bt, Tensor};

/// Role tag for a projection inside a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerRole {
    AttentionProjection,
    FfnProjection,
    Boundary,
}

/// One named linear layer: `y = x W^T + b`.
#[derive(Debug, Clone)]
pub struct LinearLayer {
    pub name: String,
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub role: LayerRole,
}

/// q/k/v/o projections around the elementwise mixing step.
#[derive(Debug, Clone)]
pub struct AttnGroup {
    pub q: LinearLayer,
    pub k: LinearLayer,
    pub v: LinearLayer,
    pub o: LinearLayer,
}

/// Feed-forward up/down pair.
#[derive(Debug, Clone)]
pub struct FfnPair {
    pub up: LinearLayer,
    pub down: LinearLayer,
}

/// One pre-norm residual block.
#[derive(Debug, Clone)]
pub struct BlockSpec {
    pub name: String,
    pub attn_groups: Vec<AttnGroup>,
    pub ffn: FfnPair,
}

impl BlockSpec {
    /// Projections in forward order.
    pub fn layers(&self) -> impl Iterator<Item = &LinearLayer> {
        self.attn_groups
            .iter()
            .flat_map(|g| [&g.q, &g.k, &g.v, &g.o])
            .chain([&self.ffn.up, &self.ffn.down])
    }

    pub fn num_projections(&self) -> usize {
        4 * self.attn_groups.len() + 2
    }
}

/// One transformer stack: boundary layers around an ordered block list.
#[derive(Debug, Clone)]
pub struct StackSpec {
    pub name: String,
    pub boundary_pre: Vec<LinearLayer>,
    pub blocks: Vec<BlockSpec>,
    pub boundary_post: Vec<LinearLayer>,
}

impl StackSpec {
    pub fn boundary_layers(&self) -> impl Iterator<Item = &LinearLayer> {
        self.boundary_pre.iter().chain(&self.boundary_post)
    }

    pub fn layers(&self) -> impl Iterator<Item = &LinearLayer> {
        self.boundary_pre
            .iter()
            .chain(self.blocks.iter().flat_map(|b| b.layers()))
            .chain(&self.boundary_post)
    }
}

/// The whole model: an ordered list of stacks.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub stacks: Vec<StackSpec>,
}

impl ModelSpec {
    /// All linear layers in forward order.
    pub fn layers(&self) -> impl Iterator<Item = &LinearLayer> {
        self.stacks.iter().flat_map(|s| s.layers())
    }

    pub fn layer(&self, name: &str) -> Option<&LinearLayer> {
        self.layers().find(|l| l.name == name)
    }

    /// Feature width consumed by the first layer.
    pub fn input_width(&self) -> Option<usize> {
        self.layers().next().map(|l| l.in_features)
    }

    /// Total bytes of weight (and bias) payload at f64.
    pub fn weight_bytes(&self) -> usize {
        self.layers()
            .map(|l| 8 * (l.weight.len() + l.bias.as_ref().map_or(0, Tensor::len)))
            .sum()
    }

    /// Check name uniqueness and declared-vs-actual shapes.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for l in self.layers() {
            if !seen.insert(l.name.as_str()) {
                return Err(Error::Config(format!("duplicate layer name `{}`", l.name)));
            }
            let (o, k) = l.weight.dims2()?;
            if o != l.out_features || k != l.in_features {
                return Err(Error::Config(format!(
                    "layer `{}` declares {}x{} but weight is {o}x{k}",
                    l.name, l.out_features, l.in_features
                )));
            }
            if let Some(b) = &l.bias {
                if b.shape() != [l.out_features] {
                    return Err(Error::Config(format!(
                        "layer `{}` bias shape {:?}",
                        l.name,
                        b.shape()
                    )));
                }
            }
        }
        Ok(())
    }

    /// 64-bit digest over every layer's name, shape, weight, and bias, in
    /// forward order. Ties a PTQ state to the exact base weights.
    pub fn weight_digest(&self) -> u64 {
        let mut h = Fnv64::new();
        for l in self.layers() {
            h.update(l.name.as_bytes());
            h.update_u32(l.out_features as u32);
            h.update_u32(l.in_features as u32);
            for &v in l.weight.data() {
                h.update_f64(v);
            }
            match &l.bias {
                Some(b) => {
                    h.update(&[1]);
                    for &v in b.data() {
                        h.update_f64(v);
                    }
                }
                None => h.update(&[0]),
            }
        }
        h.finish()
    }
}

/// Full-precision linear layer application.
pub fn fp_linear(layer: &LinearLayer, x: &Tensor) -> Result<Tensor> {
    matmul_bt(x, &layer.weight, layer.bias.as_ref())
}

/// Row-wise RMS normalization.
pub fn rms_norm(x: &Tensor) -> Result<Tensor> {
    let (rows, cols) = x.dims2()?;
    let mut out = x.clone();
    let data = out.data_mut();
    for r in 0..rows {
        let row = &mut data[r * cols..(r + 1) * cols];
        let ms: f64 = row.iter().map(|v| v * v).sum::<f64>() / cols as f64;
        let inv = 1.0 / (ms + 1e-6).sqrt();
        for v in row {
            *v *= inv;
        }
    }
    Ok(out)
}

/// Tanh-form GELU.
fn gelu(v: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * v * (1.0 + (C * (v + 0.044715 * v * v * v)).tanh())
}

/// Run the model on `input`, applying `linear` for every projection.
///
/// Every sublayer is residual: boundary layers compute
/// `h + linear(rms_norm(h))`, attention groups mix q/k/v elementwise and
/// add the o-projection back, and the ffn pair wraps a GELU.
pub fn forward_with<F>(model: &ModelSpec, input: &Tensor, linear: &mut F) -> Result<Tensor>
where
    F: FnMut(&LinearLayer, &Tensor) -> Result<Tensor>,
{
    let mut h = input.clone();
    for stack in &model.stacks {
        for l in &stack.boundary_pre {
            let xn = rms_norm(&h)?;
            h = h.add(&linear(l, &xn)?)?;
        }
        for block in &stack.blocks {
            for g in &block.attn_groups {
                let xn = rms_norm(&h)?;
                let q = linear(&g.q, &xn)?;
                let k = linear(&g.k, &xn)?;
                let v = linear(&g.v, &xn)?;
                let mut mixed = q;
                for ((m, kv), vv) in mixed
                    .data_mut()
                    .iter_mut()
                    .zip(k.data())
                    .zip(v.data())
                {
                    *m = *m * kv.tanh() + vv;
                }
                h = h.add(&linear(&g.o, &mixed)?)?;
            }
            let xn = rms_norm(&h)?;
            let up = linear(&block.ffn.up, &xn)?.map(gelu);
            h = h.add(&linear(&block.ffn.down, &up)?)?;
        }
        for l in &stack.boundary_post {
            let xn = rms_norm(&h)?;
            h = h.add(&linear(l, &xn)?)?;
        }
    }
    Ok(h)
}

/// Full-precision forward pass.
pub fn forward_fp(model: &ModelSpec, input: &Tensor) -> Result<Tensor> {
    forward_with(model, input, &mut |l, x| fp_linear(l, x))
}
