//! Seeded generators for toy-model weights and heavy-tailed activation
//! batches.
//!
//! All randomness comes from ChaCha8 streams seeded from the spec, so the
//! same spec always produces the same bytes, independent of platform or
//! thread count. Batch streams derive one sub-seed per batch index with a
//! splitmix64 step, keeping the `(seed, index) -> batch` mapping explicit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    AttnGroup, BlockSpec, FfnPair, LayerRole, LinearLayer, ModelSpec, StackSpec,
};
use crate::tensor::Tensor;

/// Base distribution family for synthetic activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistKind {
    Gaussian,
    Lognormal,
    StudentT,
    GaussianWithSpikes,
}

/// Parameters of a synthetic activation source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistributionSpec {
    pub kind: DistKind,
    /// Base scale of the distribution.
    pub scale: f64,
    /// Degrees of freedom (student-t only).
    pub dof: f64,
    /// Probability that an entry is replaced by a spike
    /// (gaussian-with-spikes only).
    pub spike_rate: f64,
    /// Spike amplitude as a multiple of `scale`.
    pub spike_magnitude: f64,
    /// Optional per-channel multipliers creating channel imbalance.
    pub per_channel_scale: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for DistributionSpec {
    fn default() -> Self {
        Self {
            kind: DistKind::Gaussian,
            scale: 1.0,
            dof: 3.0,
            spike_rate: 0.0,
            spike_magnitude: 0.0,
            per_channel_scale: None,
            seed: 42,
        }
    }
}

impl DistributionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::Spec(format!("scale {} must be positive", self.scale)));
        }
        if self.kind == DistKind::StudentT && !(self.dof > 0.0) {
            return Err(Error::Spec(format!("dof {} must be positive", self.dof)));
        }
        if !(0.0..=1.0).contains(&self.spike_rate) {
            return Err(Error::Spec(format!(
                "spike_rate {} outside [0, 1]",
                self.spike_rate
            )));
        }
        if self.spike_magnitude < 0.0 || !self.spike_magnitude.is_finite() {
            return Err(Error::Spec(format!(
                "spike_magnitude {} invalid",
                self.spike_magnitude
            )));
        }
        if let Some(pcs) = &self.per_channel_scale {
            if let Some(bad) = pcs.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
                return Err(Error::Spec(format!("per_channel_scale entry {bad}")));
            }
        }
        Ok(())
    }

    /// Sub-spec for batch `index` of a stream: same distribution, derived
    /// seed.
    pub fn for_batch(&self, index: u64) -> DistributionSpec {
        DistributionSpec {
            seed: splitmix64(self.seed ^ (index.wrapping_add(1).wrapping_mul(GOLDEN))),
            ..self.clone()
        }
    }
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Draw one `tokens x channels` batch. Deterministic in `(spec, tokens,
/// channels)`; entries are generated row-major with a fixed number of RNG
/// draws per entry.
pub fn gen_batch(spec: &DistributionSpec, tokens: usize, channels: usize) -> Result<Tensor> {
    spec.validate()?;
    if tokens == 0 || channels == 0 {
        return Err(Error::Spec(format!(
            "batch extents must be positive (got {tokens} x {channels})"
        )));
    }
    if let Some(pcs) = &spec.per_channel_scale {
        if pcs.len() != channels {
            return Err(Error::Spec(format!(
                "per_channel_scale has {} entries for {channels} channels",
                pcs.len()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let lognormal = LogNormal::new(0.0, 1.0).expect("standard lognormal");
    let student = if spec.kind == DistKind::StudentT {
        Some(StudentT::new(spec.dof).map_err(|e| Error::Spec(format!("student-t: {e}")))?)
    } else {
        None
    };

    let mut data = Vec::with_capacity(tokens * channels);
    for _ in 0..tokens {
        for c in 0..channels {
            let v = match spec.kind {
                DistKind::Gaussian => normal.sample(&mut rng) * spec.scale,
                DistKind::Lognormal => {
                    // Symmetric heavy right tail: lognormal magnitude with
                    // a random sign.
                    let mag = lognormal.sample(&mut rng) * spec.scale;
                    if rng.gen::<bool>() {
                        mag
                    } else {
                        -mag
                    }
                }
                DistKind::StudentT => {
                    student.as_ref().expect("student dist").sample(&mut rng) * spec.scale
                }
                DistKind::GaussianWithSpikes => {
                    let g = normal.sample(&mut rng) * spec.scale;
                    let u: f64 = rng.gen();
                    if u < spec.spike_rate {
                        spec.spike_magnitude * spec.scale * g.signum()
                    } else {
                        g
                    }
                }
            };
            let v = match &spec.per_channel_scale {
                Some(pcs) => v * pcs[c],
                None => v,
            };
            data.push(v);
        }
    }
    Tensor::from_rows(tokens, channels, data)
}

/// Deterministic stream of `count` batches derived from one spec.
pub fn batch_stream(
    spec: &DistributionSpec,
    count: usize,
    tokens: usize,
    channels: usize,
) -> Result<Vec<Tensor>> {
    (0..count)
        .map(|i| gen_batch(&spec.for_batch(i as u64), tokens, channels))
        .collect()
}

/// Knobs for toy-model construction beyond the standard shape.
#[derive(Debug, Clone)]
pub struct ToyModelParams {
    pub stacks: usize,
    pub blocks: usize,
    pub width: usize,
    pub boundary: usize,
    /// Attention groups per block; each contributes 4 projections.
    pub attn_groups: usize,
    /// Feed-forward hidden width as a multiple of `width`.
    pub ffn_mult: usize,
    pub seed: u64,
}

impl ToyModelParams {
    pub fn new(blocks: usize, width: usize, boundary: usize, seed: u64) -> Self {
        Self {
            stacks: 2,
            blocks,
            width,
            boundary,
            attn_groups: 2,
            ffn_mult: 2,
            seed,
        }
    }
}

/// Standard toy model: two stacks, `blocks` blocks of 10 projections each
/// (two attention groups plus the ffn pair), and `boundary` residual
/// boundary layers per stack split before/after the blocks.
pub fn gen_toy_model(blocks: usize, width: usize, boundary: usize, seed: u64) -> Result<ModelSpec> {
    gen_toy_model_with(&ToyModelParams::new(blocks, width, boundary, seed))
}

pub fn gen_toy_model_with(params: &ToyModelParams) -> Result<ModelSpec> {
    if params.width == 0 || params.stacks == 0 || params.ffn_mult == 0 {
        return Err(Error::Spec(format!(
            "toy model extents must be positive (width {}, stacks {}, ffn_mult {})",
            params.width, params.stacks, params.ffn_mult
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let w = params.width;
    let hidden = params.ffn_mult * w;
    // Projections that write into the residual stream get a depth-scaled
    // init so the stream keeps roughly unit scale through the network and
    // per-channel structure in the input survives to the deepest layers.
    let residual_writes =
        params.stacks * (params.boundary + params.blocks * (params.attn_groups + 1));
    let res_gain = 1.0 / (2.0 * residual_writes.max(1) as f64).sqrt();
    let mut stacks = Vec::with_capacity(params.stacks);
    for s in 0..params.stacks {
        let stack_name = format!("tx{}", s + 1);
        let pre_count = params.boundary / 2;
        let boundary_pre = (0..pre_count)
            .map(|i| {
                gen_linear(
                    &mut rng,
                    format!("{stack_name}.in_proj{i}"),
                    w,
                    w,
                    res_gain,
                    LayerRole::Boundary,
                )
            })
            .collect();
        let blocks = (0..params.blocks)
            .map(|b| {
                let attn_groups = (0..params.attn_groups)
                    .map(|g| {
                        let p = format!("{stack_name}.blk{b}.attn{g}");
                        AttnGroup {
                            q: gen_linear(&mut rng, format!("{p}.q"), w, w, 1.0, LayerRole::AttentionProjection),
                            k: gen_linear(&mut rng, format!("{p}.k"), w, w, 1.0, LayerRole::AttentionProjection),
                            v: gen_linear(&mut rng, format!("{p}.v"), w, w, 1.0, LayerRole::AttentionProjection),
                            o: gen_linear(&mut rng, format!("{p}.o"), w, w, res_gain, LayerRole::AttentionProjection),
                        }
                    })
                    .collect();
                let p = format!("{stack_name}.blk{b}.ffn");
                BlockSpec {
                    name: format!("{stack_name}.blk{b}"),
                    attn_groups,
                    ffn: FfnPair {
                        up: gen_linear(&mut rng, format!("{p}.up"), w, hidden, 1.0, LayerRole::FfnProjection),
                        down: gen_linear(&mut rng, format!("{p}.down"), hidden, w, res_gain, LayerRole::FfnProjection),
                    },
                }
            })
            .collect();
        let boundary_post = (0..params.boundary - pre_count)
            .map(|i| {
                gen_linear(
                    &mut rng,
                    format!("{stack_name}.out_proj{i}"),
                    w,
                    w,
                    res_gain,
                    LayerRole::Boundary,
                )
            })
            .collect();
        stacks.push(StackSpec {
            name: stack_name,
            boundary_pre,
            blocks,
            boundary_post,
        });
    }
    let model = ModelSpec { stacks };
    model.validate()?;
    Ok(model)
}

fn gen_linear(
    rng: &mut ChaCha8Rng,
    name: String,
    in_features: usize,
    out_features: usize,
    gain: f64,
    role: LayerRole,
) -> LinearLayer {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let w_std = gain / (in_features as f64).sqrt();
    let weight = Tensor::from_rows(
        out_features,
        in_features,
        (0..out_features * in_features)
            .map(|_| normal.sample(rng) * w_std)
            .collect(),
    )
    .expect("weight shape");
    let bias = Tensor::from_vec(
        (0..out_features).map(|_| normal.sample(rng) * 0.02 * gain).collect(),
    );
    LinearLayer {
        name,
        in_features,
        out_features,
        weight,
        bias: Some(bias),
        role,
    }
}
