//! Layer-wise PTQ orchestration: partition the model, collect calibration
//! statistics, build masks, quantize weights, assemble the compact state,
//! and run quantized inference and evaluation.
//!
//! The three-stage flow is: `calibrate` runs the full-precision model over
//! a batch stream and fills per-layer accumulators; `run_ptq` turns those
//! statistics into per-layer masks and quantized-weight descriptors;
//! `apply_state` re-derives the quantized weights from the base model plus
//! the state, verifying every checksum.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::balance::{balance_activations, balance_weights, build_mask, weight_stat, StatKind};
use crate::calib::{ActivationAccumulator, PercentileMethod};
use crate::codec::{fake_quant, Hif4Format, QuantAxis, QuantDescriptor};
use crate::error::{Error, Result};
use crate::model::{forward_with, fp_linear, LinearLayer, ModelSpec};
use crate::state::{
    quantized_weight_checksum, LayerQuantState, PtqState, StatChoice, FORMAT_VERSION,
};
use crate::tensor::{matmul_bt, Tensor};

/// Knobs of one PTQ run.
#[derive(Debug, Clone)]
pub struct QuantConfig {
    pub percentile_p: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub stat_choice: StatChoice,
    pub percentile_method: PercentileMethod,
    pub format: Hif4Format,
    /// Whole blocks kept in full precision, at most 2 across all stacks.
    pub retained_block_budget: usize,
    pub seed: u64,
    /// Optional per-channel calibration sample cap (reservoir sampling).
    pub sample_cap: Option<usize>,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self {
            percentile_p: 99.9,
            alpha: 0.5,
            epsilon: 1e-8,
            stat_choice: StatChoice::Percentile,
            percentile_method: PercentileMethod::LinearInterpolation,
            format: Hif4Format::e2m1(),
            retained_block_budget: 0,
            seed: 42,
            sample_cap: None,
        }
    }
}

pub const MAX_RETAINED_BLOCKS: usize = 2;

impl QuantConfig {
    pub fn validate(&self) -> Result<()> {
        if self.retained_block_budget > MAX_RETAINED_BLOCKS {
            return Err(Error::Config(format!(
                "retained_block_budget {} exceeds the maximum of {MAX_RETAINED_BLOCKS}",
                self.retained_block_budget
            )));
        }
        if !(self.percentile_p > 0.0 && self.percentile_p <= 100.0) {
            return Err(Error::Config(format!(
                "percentile_p {} outside (0, 100]",
                self.percentile_p
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Config(format!(
                "epsilon {} must be positive",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// Statistic echoed into the state header. A percentile run at exactly
    /// p = 100 is the max statistic by definition, so it is recorded
    /// canonically as max with p = 100; the max statistic likewise echoes
    /// p = 100 since the percentile value is meaningless for it.
    pub fn echo_stat(&self) -> (StatChoice, f64) {
        match self.stat_choice {
            StatChoice::Max => (StatChoice::Max, 100.0),
            StatChoice::Percentile if self.percentile_p == 100.0 => (StatChoice::Max, 100.0),
            StatChoice::Percentile => (StatChoice::Percentile, self.percentile_p),
        }
    }

    fn echo_stat_kind(&self) -> StatKind {
        match self.echo_stat() {
            (StatChoice::Max, _) => StatKind::Max,
            (StatChoice::Percentile, p) => StatKind::Percentile(p),
        }
    }
}

/// Per-stack layer accounting, in the shape of the layer-conversion table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StackCounts {
    pub stack: String,
    pub quantized: usize,
    pub retained_linear: usize,
    pub retained_blocks: usize,
}

/// Deterministic split of the model's linear layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerPartition {
    pub quantize: Vec<String>,
    pub retain: Vec<String>,
    pub per_stack: Vec<StackCounts>,
}

/// Split layers into the quantize and retain sets.
///
/// Boundary layers always stay in full precision. When the retained-block
/// budget is positive, whole blocks are pulled from the front of each
/// stack's block list, visiting stacks round-robin in declaration order,
/// until the budget is exhausted.
pub fn select_layers(model: &ModelSpec, config: &QuantConfig) -> Result<LayerPartition> {
    config.validate()?;
    let mut retained_blocks: Vec<Vec<bool>> = model
        .stacks
        .iter()
        .map(|s| vec![false; s.blocks.len()])
        .collect();
    let mut next_front = vec![0usize; model.stacks.len()];
    let mut left = config.retained_block_budget;
    while left > 0 {
        let mut advanced = false;
        for (s, stack) in model.stacks.iter().enumerate() {
            if left == 0 {
                break;
            }
            if next_front[s] < stack.blocks.len() {
                retained_blocks[s][next_front[s]] = true;
                next_front[s] += 1;
                left -= 1;
                advanced = true;
            }
        }
        if !advanced {
            break; // budget exceeds the total block count
        }
    }

    let mut quantize = Vec::new();
    let mut retain = Vec::new();
    let mut per_stack = Vec::new();
    for (s, stack) in model.stacks.iter().enumerate() {
        let mut counts = StackCounts {
            stack: stack.name.clone(),
            quantized: 0,
            retained_linear: 0,
            retained_blocks: 0,
        };
        for l in &stack.boundary_pre {
            retain.push(l.name.clone());
            counts.retained_linear += 1;
        }
        for (b, block) in stack.blocks.iter().enumerate() {
            if retained_blocks[s][b] {
                counts.retained_blocks += 1;
                for l in block.layers() {
                    retain.push(l.name.clone());
                    counts.retained_linear += 1;
                }
            } else {
                for l in block.layers() {
                    quantize.push(l.name.clone());
                    counts.quantized += 1;
                }
            }
        }
        for l in &stack.boundary_post {
            retain.push(l.name.clone());
            counts.retained_linear += 1;
        }
        per_stack.push(counts);
    }
    Ok(LayerPartition {
        quantize,
        retain,
        per_stack,
    })
}

/// Run the full-precision model over the calibration stream, filling one
/// accumulator per quantize-partition layer with absolute input samples.
pub fn calibrate(
    model: &ModelSpec,
    batches: &[Tensor],
    config: &QuantConfig,
) -> Result<BTreeMap<String, ActivationAccumulator>> {
    let partition = select_layers(model, config)?;
    let mut stats: BTreeMap<String, ActivationAccumulator> = partition
        .quantize
        .iter()
        .map(|name| {
            let layer = model.layer(name).expect("partition names come from the model");
            (
                name.clone(),
                ActivationAccumulator::with_cap(
                    name.clone(),
                    layer.in_features,
                    config.sample_cap,
                    config.seed,
                ),
            )
        })
        .collect();

    for batch in batches {
        forward_with(model, batch, &mut |l: &LinearLayer, x: &Tensor| {
            if let Some(acc) = stats.get_mut(&l.name) {
                acc.observe(x)?;
            }
            fp_linear(l, x)
        })?;
    }

    for (name, acc) in &stats {
        if let Some(ch) = (0..acc.num_channels()).find(|&i| acc.channel_samples(i).is_empty()) {
            return Err(Error::Coverage {
                layer: name.clone(),
                detail: format!("channel {ch} received no calibration samples"),
            });
        }
    }
    Ok(stats)
}

/// Build the compact PTQ state from calibration statistics.
///
/// Layers are processed independently (in parallel) and the records sorted
/// by layer name. Statistics must cover exactly the quantize partition.
pub fn run_ptq(
    model: &ModelSpec,
    stats: &BTreeMap<String, ActivationAccumulator>,
    config: &QuantConfig,
) -> Result<PtqState> {
    let partition = select_layers(model, config)?;
    for name in &partition.quantize {
        if !stats.contains_key(name) {
            return Err(Error::Coverage {
                layer: name.clone(),
                detail: "missing calibration statistics".into(),
            });
        }
    }
    if stats.len() != partition.quantize.len() {
        let quantize: std::collections::BTreeSet<_> = partition.quantize.iter().collect();
        let extra = stats
            .keys()
            .find(|k| !quantize.contains(k))
            .expect("size mismatch implies an extra key");
        return Err(Error::Coverage {
            layer: extra.clone(),
            detail: "statistics for a layer outside the quantize partition".into(),
        });
    }

    let (echo_choice, echo_p) = config.echo_stat();
    let mut records = partition
        .quantize
        .par_iter()
        .map(|name| {
            let layer = model.layer(name).expect("partition names come from the model");
            let acc = &stats[name];
            quantize_layer(layer, acc, config)
        })
        .collect::<Result<Vec<_>>>()?;
    records.sort_by(|a, b| a.layer_name.cmp(&b.layer_name));

    let state = PtqState {
        version: FORMAT_VERSION,
        base_model_digest: model.weight_digest(),
        percentile_p: echo_p,
        alpha: config.alpha,
        epsilon: config.epsilon,
        stat_choice: echo_choice,
        exponent_bits: config.format.exponent_bits() as u8,
        mantissa_bits: config.format.mantissa_bits() as u8,
        seed: config.seed,
        records,
    };
    state.validate()?;
    Ok(state)
}

fn quantize_layer(
    layer: &LinearLayer,
    acc: &ActivationAccumulator,
    config: &QuantConfig,
) -> Result<LayerQuantState> {
    if acc.num_channels() != layer.in_features {
        return Err(Error::Accumulator(format!(
            "layer `{}`: accumulator has {} channels, layer {} input features",
            layer.name,
            acc.num_channels(),
            layer.in_features
        )));
    }
    let a_stat = match config.stat_choice {
        StatChoice::Max => acc.max_stat()?,
        StatChoice::Percentile => {
            acc.percentile_with(config.percentile_p, config.percentile_method)?
        }
    };
    let w_stat = weight_stat(&layer.weight)?;
    let mask = build_mask(
        &w_stat,
        &a_stat,
        config.alpha,
        config.epsilon,
        config.echo_stat_kind(),
    )?;
    let balanced = balance_weights(&layer.weight, &mask)?;
    let wdesc = QuantDescriptor::absmax_for(
        &balanced,
        QuantAxis::PerOutputChannel,
        config.format.clone(),
    )?;
    let quantized = fake_quant(&balanced, &wdesc)?;
    let checksum = quantized_weight_checksum(&quantized)?;
    Ok(LayerQuantState {
        layer_name: layer.name.clone(),
        in_features: layer.in_features as u32,
        out_features: layer.out_features as u32,
        mask,
        weight_scales: wdesc.scales,
        checksum,
    })
}

/// One restored quantized layer: the mask plus the cached fake-quantized
/// balanced weight. Bias stays full precision.
#[derive(Debug, Clone)]
pub struct QuantizedLayer {
    pub name: String,
    pub mask: crate::balance::ChannelMask,
    pub quantized_weight: Tensor,
    pub bias: Option<Tensor>,
    pub format: Hif4Format,
}

/// A model view where recorded layers run the quantized path and everything
/// else runs full precision against the untouched base weights.
#[derive(Debug)]
pub struct QuantizedModel<'a> {
    pub model: &'a ModelSpec,
    pub layers: BTreeMap<String, QuantizedLayer>,
}

impl QuantizedModel<'_> {
    pub fn linear(&self, layer: &LinearLayer, x: &Tensor) -> Result<Tensor> {
        match self.layers.get(&layer.name) {
            Some(q) => quantized_linear_forward(x, q),
            None => fp_linear(layer, x),
        }
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        forward_with(self.model, input, &mut |l, x| self.linear(l, x))
    }
}

/// Re-derive every recorded layer's quantized weight from the base model
/// and verify it against the stored checksum, then verify the base-model
/// digest. Returns the runnable quantized view.
pub fn apply_state<'a>(model: &'a ModelSpec, state: &PtqState) -> Result<QuantizedModel<'a>> {
    state.validate()?;
    let format = state.format()?;
    let mut layers = BTreeMap::new();
    for record in &state.records {
        let layer = model.layer(&record.layer_name).ok_or_else(|| {
            Error::State(format!("state names unknown layer `{}`", record.layer_name))
        })?;
        if layer.in_features != record.in_features as usize
            || layer.out_features != record.out_features as usize
        {
            return Err(Error::State(format!(
                "layer `{}`: state is {}x{}, model is {}x{}",
                record.layer_name,
                record.out_features,
                record.in_features,
                layer.out_features,
                layer.in_features
            )));
        }
        let balanced = balance_weights(&layer.weight, &record.mask)?;
        let wdesc = record.weight_descriptor(format.clone())?;
        let quantized = fake_quant(&balanced, &wdesc)?;
        let checksum = quantized_weight_checksum(&quantized)?;
        if checksum != record.checksum {
            return Err(Error::Integrity(format!(
                "layer `{}`: quantized-weight checksum mismatch (stored {:#018x}, recomputed {checksum:#018x})",
                record.layer_name, record.checksum
            )));
        }
        layers.insert(
            record.layer_name.clone(),
            QuantizedLayer {
                name: record.layer_name.clone(),
                mask: record.mask.clone(),
                quantized_weight: quantized,
                bias: layer.bias.clone(),
                format: format.clone(),
            },
        );
    }
    let digest = model.weight_digest();
    if digest != state.base_model_digest {
        return Err(Error::Integrity(format!(
            "base model digest mismatch (state {:#018x}, model {digest:#018x})",
            state.base_model_digest
        )));
    }
    Ok(QuantizedModel { model, layers })
}

/// `y = HiF4(x diag(m)) W_hat^T + b` with dynamic per-feature-channel
/// absmax scales computed from the balanced activation.
pub fn quantized_linear_forward(x: &Tensor, layer: &QuantizedLayer) -> Result<Tensor> {
    let (_, cols) = x.dims2()?;
    if cols != layer.mask.len() {
        return Err(Error::Shape(format!(
            "layer `{}`: input width {cols}, mask length {}",
            layer.name,
            layer.mask.len()
        )));
    }
    let balanced = balance_activations(x, &layer.mask)?;
    let adesc = QuantDescriptor::absmax_for(
        &balanced,
        QuantAxis::PerFeatureChannel,
        layer.format.clone(),
    )?;
    let xq = fake_quant(&balanced, &adesc)?;
    matmul_bt(&xq, &layer.quantized_weight, layer.bias.as_ref())
}

/// Per-layer evaluation entry.
#[derive(Debug, Clone, Serialize)]
pub struct LayerEval {
    pub layer: String,
    /// MSE of the quantized layer output against the FP output on the same
    /// (full-precision) input.
    pub mse: f64,
    /// Signal-to-quantization-noise ratio in dB; absent when the layer is
    /// exact on the eval stream.
    pub sqnr_db: Option<f64>,
    /// Fraction of eval activations above the calibrated range recovered
    /// from the mask; absent when unrecoverable (alpha = 1).
    pub clip_fraction: Option<f64>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct EndToEndEval {
    pub mse: f64,
    pub max_abs_err: f64,
    pub cosine: f64,
}

/// Deterministic evaluation report for one state.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub stat: String,
    pub percentile_p: f64,
    pub batches: usize,
    pub tokens: usize,
    pub layers: Vec<LayerEval>,
    pub end_to_end: EndToEndEval,
}

struct LayerAcc {
    err_sq: f64,
    sig_sq: f64,
    count: u64,
    clip_exceed: u64,
    clip_total: u64,
}

/// Compare quantized inference against the full-precision reference on an
/// evaluation stream.
///
/// Per-layer errors are isolated (both paths see the same full-precision
/// input); the end-to-end metrics compare complete forward passes.
pub fn evaluate(model: &ModelSpec, state: &PtqState, batches: &[Tensor]) -> Result<EvalReport> {
    if batches.is_empty() {
        return Err(Error::Input("evaluate: empty evaluation stream".into()));
    }
    let qmodel = apply_state(model, state)?;

    // Per-channel calibrated ranges recovered from mask entries, for the
    // clipping diagnostic: m = w^a / (a_cal + eps)^(1-a) inverts to
    // a_cal = (w^a / m)^(1/(1-a)) - eps whenever alpha < 1.
    let mut thresholds: BTreeMap<String, Vec<Option<f64>>> = BTreeMap::new();
    if state.alpha < 1.0 {
        for record in &state.records {
            let layer = model.layer(&record.layer_name).expect("apply_state checked");
            let w_stat = weight_stat(&layer.weight)?;
            let th = w_stat
                .iter()
                .zip(record.mask.mask())
                .map(|(&w, &m)| {
                    if w > 0.0 || state.alpha == 0.0 {
                        let a = (w.powf(state.alpha) / m).powf(1.0 / (1.0 - state.alpha))
                            - state.epsilon;
                        Some(a.max(0.0))
                    } else {
                        None
                    }
                })
                .collect();
            thresholds.insert(record.layer_name.clone(), th);
        }
    }

    let mut per_layer: BTreeMap<String, LayerAcc> = state
        .records
        .iter()
        .map(|r| {
            (
                r.layer_name.clone(),
                LayerAcc {
                    err_sq: 0.0,
                    sig_sq: 0.0,
                    count: 0,
                    clip_exceed: 0,
                    clip_total: 0,
                },
            )
        })
        .collect();

    let mut e2e_err_sq = 0.0f64;
    let mut e2e_max = 0.0f64;
    let mut e2e_dot = 0.0f64;
    let mut e2e_na = 0.0f64;
    let mut e2e_nb = 0.0f64;
    let mut e2e_count = 0u64;
    let mut tokens = 0usize;

    for batch in batches {
        tokens += batch.dims2()?.0;
        let fp_out = forward_with(model, batch, &mut |l: &LinearLayer, x: &Tensor| {
            let y = fp_linear(l, x)?;
            if let Some(q) = qmodel.layers.get(&l.name) {
                let yq = quantized_linear_forward(x, q)?;
                let acc = per_layer.get_mut(&l.name).expect("seeded from records");
                for (a, b) in y.data().iter().zip(yq.data()) {
                    let d = a - b;
                    acc.err_sq += d * d;
                    acc.sig_sq += a * a;
                }
                acc.count += y.len() as u64;
                if let Some(th) = thresholds.get(&l.name) {
                    let (rows, cols) = x.dims2()?;
                    for r in 0..rows {
                        for (c, limit) in th.iter().enumerate().take(cols) {
                            if let Some(limit) = limit {
                                acc.clip_total += 1;
                                if x.get2(r, c).abs() > *limit {
                                    acc.clip_exceed += 1;
                                }
                            }
                        }
                    }
                }
            }
            Ok(y)
        })?;
        let q_out = qmodel.forward(batch)?;
        for (a, b) in fp_out.data().iter().zip(q_out.data()) {
            let d = a - b;
            e2e_err_sq += d * d;
            if d.abs() > e2e_max {
                e2e_max = d.abs();
            }
            e2e_dot += a * b;
            e2e_na += a * a;
            e2e_nb += b * b;
        }
        e2e_count += fp_out.len() as u64;
    }

    let layers = per_layer
        .into_iter()
        .map(|(layer, acc)| LayerEval {
            layer,
            mse: acc.err_sq / acc.count as f64,
            sqnr_db: if acc.err_sq > 0.0 {
                Some(10.0 * (acc.sig_sq / acc.err_sq).log10())
            } else {
                None
            },
            clip_fraction: if acc.clip_total > 0 {
                Some(acc.clip_exceed as f64 / acc.clip_total as f64)
            } else {
                None
            },
        })
        .collect();

    let denom = e2e_na.sqrt() * e2e_nb.sqrt();
    let cosine = if e2e_err_sq == 0.0 {
        1.0
    } else if denom == 0.0 {
        0.0
    } else {
        e2e_dot / denom
    };
    let (echo_stat, echo_p) = match state.stat_choice {
        StatChoice::Max => ("max", state.percentile_p),
        StatChoice::Percentile => ("percentile", state.percentile_p),
    };
    Ok(EvalReport {
        stat: echo_stat.to_string(),
        percentile_p: echo_p,
        batches: batches.len(),
        tokens,
        layers,
        end_to_end: EndToEndEval {
            mse: e2e_err_sq / e2e_count as f64,
            max_abs_err: e2e_max,
            cosine,
        },
    })
}

/// Per-layer MSE difference between the two calibration statistics.
#[derive(Debug, Clone, Serialize)]
pub struct AbLayerDelta {
    pub layer: String,
    pub max_mse: f64,
    pub percentile_mse: f64,
    /// `percentile_mse - max_mse`; negative favors percentile calibration.
    pub delta: f64,
}

/// Side-by-side max vs percentile evaluation from one set of statistics.
#[derive(Debug, Clone, Serialize)]
pub struct AbReport {
    pub max: EvalReport,
    pub percentile: EvalReport,
    pub layer_deltas: Vec<AbLayerDelta>,
    pub percentile_wins_end_to_end: bool,
    pub layer_win_fraction: f64,
}

/// End-to-end quantized-vs-reference MSE only, skipping the per-layer
/// diagnostics. Matches `evaluate(..).end_to_end.mse` exactly.
pub fn end_to_end_mse(model: &ModelSpec, state: &PtqState, batches: &[Tensor]) -> Result<f64> {
    if batches.is_empty() {
        return Err(Error::Input("end_to_end_mse: empty evaluation stream".into()));
    }
    let qmodel = apply_state(model, state)?;
    let mut err_sq = 0.0f64;
    let mut count = 0u64;
    for batch in batches {
        let fp_out = crate::model::forward_fp(model, batch)?;
        let q_out = qmodel.forward(batch)?;
        for (a, b) in fp_out.data().iter().zip(q_out.data()) {
            let d = a - b;
            err_sq += d * d;
        }
        count += fp_out.len() as u64;
    }
    Ok(err_sq / count as f64)
}

/// Run the PTQ stage twice from the same accumulators (max statistic vs
/// percentile statistic) and evaluate both on the same stream.
pub fn evaluate_ab(
    model: &ModelSpec,
    stats: &BTreeMap<String, ActivationAccumulator>,
    config: &QuantConfig,
    batches: &[Tensor],
) -> Result<AbReport> {
    let max_config = QuantConfig {
        stat_choice: StatChoice::Max,
        ..config.clone()
    };
    let pct_config = QuantConfig {
        stat_choice: StatChoice::Percentile,
        ..config.clone()
    };
    let max_state = run_ptq(model, stats, &max_config)?;
    let pct_state = run_ptq(model, stats, &pct_config)?;
    let max_report = evaluate(model, &max_state, batches)?;
    let pct_report = evaluate(model, &pct_state, batches)?;

    let layer_deltas: Vec<AbLayerDelta> = max_report
        .layers
        .iter()
        .zip(&pct_report.layers)
        .map(|(m, p)| {
            debug_assert_eq!(m.layer, p.layer);
            AbLayerDelta {
                layer: m.layer.clone(),
                max_mse: m.mse,
                percentile_mse: p.mse,
                delta: p.mse - m.mse,
            }
        })
        .collect();
    let wins = layer_deltas.iter().filter(|d| d.delta < 0.0).count();
    let layer_win_fraction = if layer_deltas.is_empty() {
        0.0
    } else {
        wins as f64 / layer_deltas.len() as f64
    };
    Ok(AbReport {
        percentile_wins_end_to_end: pct_report.end_to_end.mse < max_report.end_to_end.mse,
        layer_win_fraction,
        max: max_report,
        percentile: pct_report,
        layer_deltas,
    })
}
