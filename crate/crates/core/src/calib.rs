//! Per-layer, per-channel activation sample stores for calibration.
//!
//! Hooks feed the absolute value of every input activation into an
//! [`ActivationAccumulator`]; max and percentile queries over the retained
//! samples drive channel-mask construction. By default every sample is
//! retained, so percentile answers are exact. An optional per-channel cap
//! switches to seeded reservoir replacement (algorithm R) for memory
//! safety, at the cost of exactness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::digest::fnv1a64;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// How a percentile query maps a fractional rank to a value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PercentileMethod {
    /// Sort ascending, rank `r = (p/100) * (n-1)`, then
    /// `s[floor(r)] + (r - floor(r)) * (s[ceil(r)] - s[floor(r)])`.
    #[default]
    LinearInterpolation,
    /// Smallest retained value with cumulative frequency >= p.
    NearestRank,
}

/// Per-channel store of absolute activation samples for one layer.
#[derive(Debug, Clone)]
pub struct ActivationAccumulator {
    layer_name: String,
    num_channels: usize,
    samples: Vec<Vec<f64>>,
    observed_count: Vec<u64>,
    cap: Option<usize>,
    seed: u64,
    rng: ChaCha8Rng,
}

/// Derives the reservoir RNG stream for a layer from the run seed.
fn layer_rng(seed: u64, layer_name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a64(layer_name.as_bytes()))
}

impl ActivationAccumulator {
    /// Uncapped accumulator: retains every observed sample.
    pub fn new(layer_name: impl Into<String>, num_channels: usize, seed: u64) -> Self {
        Self::with_cap(layer_name, num_channels, None, seed)
    }

    /// Accumulator with an optional per-channel retention cap.
    pub fn with_cap(
        layer_name: impl Into<String>,
        num_channels: usize,
        cap: Option<usize>,
        seed: u64,
    ) -> Self {
        let layer_name = layer_name.into();
        let rng = layer_rng(seed, &layer_name);
        Self {
            layer_name,
            num_channels,
            samples: vec![Vec::new(); num_channels],
            observed_count: vec![0; num_channels],
            cap,
            seed,
            rng,
        }
    }

    /// Rebuild an accumulator from checkpointed parts.
    pub fn from_parts(
        layer_name: String,
        num_channels: usize,
        samples: Vec<Vec<f64>>,
        observed_count: Vec<u64>,
        cap: Option<usize>,
        seed: u64,
        rng_word_pos: u128,
    ) -> Result<Self> {
        if samples.len() != num_channels || observed_count.len() != num_channels {
            return Err(Error::Accumulator(format!(
                "layer `{layer_name}`: {} sample lists / {} counts for {num_channels} channels",
                samples.len(),
                observed_count.len()
            )));
        }
        let mut rng = layer_rng(seed, &layer_name);
        rng.set_word_pos(rng_word_pos);
        Ok(Self {
            layer_name,
            num_channels,
            samples,
            observed_count,
            cap,
            seed,
            rng,
        })
    }

    pub fn layer_name(&self) -> &str {
        &self.layer_name
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    pub fn cap(&self) -> Option<usize> {
        self.cap
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rng_word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    /// Retained samples for channel `i`.
    pub fn channel_samples(&self, i: usize) -> &[f64] {
        &self.samples[i]
    }

    pub fn observed_count(&self) -> &[u64] {
        &self.observed_count
    }

    /// Record `|batch[j][i]|` for every token `j` and channel `i`.
    ///
    /// With a cap set, a full channel applies reservoir replacement driven
    /// by the accumulator's seeded RNG; iteration order is row-major, so
    /// the result is deterministic for a given batch sequence.
    pub fn observe(&mut self, batch: &Tensor) -> Result<()> {
        let (tokens, channels) = batch.dims2()?;
        if channels != self.num_channels {
            return Err(Error::Accumulator(format!(
                "layer `{}`: batch has {channels} channels, accumulator {}",
                self.layer_name, self.num_channels
            )));
        }
        for j in 0..tokens {
            for i in 0..channels {
                let v = batch.get2(j, i).abs();
                self.push_sample(i, v);
            }
        }
        Ok(())
    }

    fn push_sample(&mut self, channel: usize, v: f64) {
        self.observed_count[channel] += 1;
        match self.cap {
            Some(cap) if self.samples[channel].len() >= cap => {
                let t = self.observed_count[channel];
                let slot = self.rng.gen_range(0..t);
                if (slot as usize) < cap {
                    self.samples[channel][slot as usize] = v;
                }
            }
            _ => self.samples[channel].push(v),
        }
    }

    /// Per-channel maximum of the retained samples (the conservative
    /// absmax calibration statistic).
    pub fn max_stat(&self) -> Result<Vec<f64>> {
        (0..self.num_channels)
            .map(|i| {
                let ch = &self.samples[i];
                if ch.is_empty() {
                    return Err(self.empty_channel(i));
                }
                Ok(ch.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v)))
            })
            .collect()
    }

    /// Empirical p-th percentile of the retained samples per channel,
    /// using linear interpolation on the sorted list.
    pub fn percentile(&self, p: f64) -> Result<Vec<f64>> {
        self.percentile_with(p, PercentileMethod::LinearInterpolation)
    }

    pub fn percentile_with(&self, p: f64, method: PercentileMethod) -> Result<Vec<f64>> {
        if !(p > 0.0 && p <= 100.0) {
            return Err(Error::Parameter(format!(
                "percentile p={p} outside (0, 100]"
            )));
        }
        (0..self.num_channels)
            .map(|i| {
                let ch = &self.samples[i];
                if ch.is_empty() {
                    return Err(self.empty_channel(i));
                }
                let mut sorted = ch.clone();
                sorted.sort_unstable_by(f64::total_cmp);
                Ok(percentile_of_sorted(&sorted, p, method))
            })
            .collect()
    }

    /// Pool two accumulators for the same layer.
    ///
    /// Uncapped pooling concatenates sample lists, so query answers do not
    /// depend on the merge order. With a cap, `other`'s retained samples
    /// stream through `self`'s reservoir, which is deterministic but
    /// order-sensitive.
    pub fn merge(&self, other: &ActivationAccumulator) -> Result<ActivationAccumulator> {
        if self.layer_name != other.layer_name
            || self.num_channels != other.num_channels
            || self.cap != other.cap
        {
            return Err(Error::Accumulator(format!(
                "merge identity mismatch: `{}`/{}ch/cap {:?} vs `{}`/{}ch/cap {:?}",
                self.layer_name,
                self.num_channels,
                self.cap,
                other.layer_name,
                other.num_channels,
                other.cap
            )));
        }
        let mut merged = self.clone();
        for i in 0..self.num_channels {
            for &v in &other.samples[i] {
                merged.push_sample(i, v);
            }
            // push_sample counted other's retained samples; correct the
            // total to the full observed stream.
            merged.observed_count[i] =
                self.observed_count[i] + other.observed_count[i];
        }
        Ok(merged)
    }

    fn empty_channel(&self, i: usize) -> Error {
        Error::Coverage {
            layer: self.layer_name.clone(),
            detail: format!("channel {i} has no calibration samples"),
        }
    }
}

/// Percentile of an already-sorted ascending slice.
pub fn percentile_of_sorted(sorted: &[f64], p: f64, method: PercentileMethod) -> f64 {
    let n = sorted.len();
    match method {
        PercentileMethod::LinearInterpolation => {
            let r = (p / 100.0) * (n - 1) as f64;
            let lo = r.floor() as usize;
            let hi = r.ceil() as usize;
            sorted[lo] + (r - lo as f64) * (sorted[hi] - sorted[lo])
        }
        PercentileMethod::NearestRank => {
            let rank = (p / 100.0 * n as f64).ceil() as usize;
            sorted[rank.saturating_sub(1).min(n - 1)]
        }
    }
}
