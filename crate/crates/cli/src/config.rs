//! Run configuration: one JSON file is the source of truth, individual
//! CLI flags override individual keys for sweeps.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use taq4_core::calib::PercentileMethod;
use taq4_core::codec::Hif4Format;
use taq4_core::engine::QuantConfig;
use taq4_core::error::{Error, Result};
use taq4_core::model::ModelSpec;
use taq4_core::state::StatChoice;
use taq4_core::synth::{gen_toy_model_with, DistKind, DistributionSpec, ToyModelParams};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub stacks: usize,
    pub blocks: usize,
    pub width: usize,
    pub boundary: usize,
    pub attn_groups: usize,
    pub ffn_mult: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            stacks: 2,
            blocks: 4,
            width: 64,
            boundary: 6,
            attn_groups: 2,
            ffn_mult: 2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub kind: DistKind,
    pub scale: f64,
    pub dof: f64,
    pub spike_rate: f64,
    pub spike_magnitude: f64,
    pub per_channel_scale: Option<Vec<f64>>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            kind: DistKind::GaussianWithSpikes,
            scale: 1.0,
            dof: 3.0,
            spike_rate: 1e-3,
            spike_magnitude: 20.0,
            per_channel_scale: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantSection {
    pub percentile_p: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub stat: StatChoice,
    pub percentile_method: String,
    pub exponent_bits: u32,
    pub mantissa_bits: u32,
    pub retained_blocks: usize,
    pub sample_cap: Option<usize>,
}

impl Default for QuantSection {
    fn default() -> Self {
        Self {
            percentile_p: 99.9,
            alpha: 0.5,
            epsilon: 1e-8,
            stat: StatChoice::Percentile,
            percentile_method: "linear".into(),
            exponent_bits: 2,
            mantissa_bits: 1,
            retained_blocks: 0,
            sample_cap: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamConfig {
    pub batches: usize,
    pub tokens: usize,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            batches: 16,
            tokens: 64,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    pub calib: Option<PathBuf>,
    pub state: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Text,
    Json,
}

/// The whole run configuration. Every CLI flag overrides exactly one key.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; model weights, calibration data, evaluation data, and
    /// reservoir sampling derive distinct sub-seeds from it.
    pub seed: u64,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub quant: QuantSection,
    pub calib: StreamConfig,
    pub eval: StreamConfig,
    pub io: IoConfig,
    pub report: ReportFormat,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            model: ModelConfig::default(),
            data: DataConfig::default(),
            quant: QuantSection::default(),
            calib: StreamConfig::default(),
            eval: StreamConfig {
                batches: 4,
                tokens: 64,
            },
            io: IoConfig::default(),
            report: ReportFormat::Text,
        }
    }
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn derive_seed(master: u64, tag: u64) -> u64 {
    let mut z = master ^ tag.wrapping_mul(GOLDEN);
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))
    }

    pub fn model_seed(&self) -> u64 {
        derive_seed(self.seed, 1)
    }

    pub fn calib_data_seed(&self) -> u64 {
        derive_seed(self.seed, 2)
    }

    pub fn eval_data_seed(&self) -> u64 {
        derive_seed(self.seed, 3)
    }

    pub fn build_model(&self) -> Result<ModelSpec> {
        gen_toy_model_with(&ToyModelParams {
            stacks: self.model.stacks,
            blocks: self.model.blocks,
            width: self.model.width,
            boundary: self.model.boundary,
            attn_groups: self.model.attn_groups,
            ffn_mult: self.model.ffn_mult,
            seed: self.model_seed(),
        })
    }

    pub fn distribution(&self, seed: u64) -> DistributionSpec {
        DistributionSpec {
            kind: self.data.kind,
            scale: self.data.scale,
            dof: self.data.dof,
            spike_rate: self.data.spike_rate,
            spike_magnitude: self.data.spike_magnitude,
            per_channel_scale: self.data.per_channel_scale.clone(),
            seed,
        }
    }

    pub fn quant_config(&self) -> Result<QuantConfig> {
        let method = match self.quant.percentile_method.as_str() {
            "linear" => PercentileMethod::LinearInterpolation,
            "nearest-rank" => PercentileMethod::NearestRank,
            other => {
                return Err(Error::Config(format!(
                    "unknown percentile_method `{other}` (expected `linear` or `nearest-rank`)"
                )))
            }
        };
        let config = QuantConfig {
            percentile_p: self.quant.percentile_p,
            alpha: self.quant.alpha,
            epsilon: self.quant.epsilon,
            stat_choice: self.quant.stat,
            percentile_method: method,
            format: Hif4Format::new(self.quant.exponent_bits, self.quant.mantissa_bits)
                .map_err(|e| Error::Config(e.to_string()))?,
            retained_block_budget: self.quant.retained_blocks,
            seed: self.seed,
            sample_cap: self.quant.sample_cap,
        };
        config.validate()?;
        Ok(config)
    }
}
