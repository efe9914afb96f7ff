//! Deterministic text and JSON rendering for reports and summaries.
//!
//! No timestamps, no map iteration order surprises: rerunning a command
//! with the same config and seed produces byte-identical output.

use taq4_core::engine::{AbReport, EvalReport, LayerPartition};
use taq4_core::state::{CalibCheckpoint, PtqState, StatChoice};

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.6}"),
        None => "-".into(),
    }
}

/// Min/median/max of a non-empty slice.
fn spread(values: &[f64]) -> (f64, f64, f64) {
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    (
        sorted[0],
        sorted[sorted.len() / 2],
        sorted[sorted.len() - 1],
    )
}

pub fn eval_report_text(r: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "evaluation: stat={} p={} batches={} tokens={}\n",
        r.stat, r.percentile_p, r.batches, r.tokens
    ));
    out.push_str(&format!(
        "end-to-end: mse={:.6e} max_abs_err={:.6e} cosine={:.6}\n",
        r.end_to_end.mse, r.end_to_end.max_abs_err, r.end_to_end.cosine
    ));
    if !r.layers.is_empty() {
        out.push_str("layer                          mse          sqnr_db   clip\n");
        for l in &r.layers {
            out.push_str(&format!(
                "{:<28}  {:.5e}  {:>8}  {}\n",
                l.layer,
                l.mse,
                fmt_opt(l.sqnr_db.map(|v| (v * 100.0).round() / 100.0)),
                fmt_opt(l.clip_fraction),
            ));
        }
    }
    out
}

pub fn ab_report_text(r: &AbReport) -> String {
    let mut out = String::new();
    out.push_str("== A/B: max vs percentile calibration ==\n");
    out.push_str(&format!(
        "end-to-end mse: max={:.6e} percentile={:.6e} ({})\n",
        r.max.end_to_end.mse,
        r.percentile.end_to_end.mse,
        if r.percentile_wins_end_to_end {
            "percentile wins"
        } else {
            "max wins"
        }
    ));
    out.push_str(&format!(
        "percentile win-rate over layers: {:.1}% ({} layers)\n",
        100.0 * r.layer_win_fraction,
        r.layer_deltas.len()
    ));
    out.push_str("layer                          max_mse      pct_mse      delta\n");
    for d in &r.layer_deltas {
        out.push_str(&format!(
            "{:<28}  {:.5e}  {:.5e}  {:+.3e}\n",
            d.layer, d.max_mse, d.percentile_mse, d.delta
        ));
    }
    out.push_str("\n== full reports ==\n");
    out.push_str(&eval_report_text(&r.max));
    out.push('\n');
    out.push_str(&eval_report_text(&r.percentile));
    out
}

pub fn calibration_summary(ck: &CalibCheckpoint) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "calibration checkpoint: {} layers, seed {}, base model digest {:#018x}\n",
        ck.accumulators.len(),
        ck.seed,
        ck.base_model_digest
    ));
    out.push_str("layer                          channels  observed/ch  retained/ch\n");
    for acc in &ck.accumulators {
        let observed = acc.observed_count();
        let min_obs = observed.iter().min().copied().unwrap_or(0);
        let max_obs = observed.iter().max().copied().unwrap_or(0);
        let retained: Vec<usize> = (0..acc.num_channels())
            .map(|i| acc.channel_samples(i).len())
            .collect();
        let min_ret = retained.iter().min().copied().unwrap_or(0);
        let max_ret = retained.iter().max().copied().unwrap_or(0);
        out.push_str(&format!(
            "{:<28}  {:>8}  {:>11}  {:>11}\n",
            acc.layer_name(),
            acc.num_channels(),
            if min_obs == max_obs {
                format!("{min_obs}")
            } else {
                format!("{min_obs}..{max_obs}")
            },
            if min_ret == max_ret {
                format!("{min_ret}")
            } else {
                format!("{min_ret}..{max_ret}")
            },
        ));
    }
    out
}

pub fn partition_table(partition: &LayerPartition) -> String {
    let mut out = String::new();
    out.push_str("layer conversion summary\n");
    out.push_str("module       hif4-linear  fp-linear  fp-blocks\n");
    let mut tq = 0;
    let mut tr = 0;
    let mut tb = 0;
    for c in &partition.per_stack {
        out.push_str(&format!(
            "{:<11}  {:>11}  {:>9}  {:>9}\n",
            c.stack, c.quantized, c.retained_linear, c.retained_blocks
        ));
        tq += c.quantized;
        tr += c.retained_linear;
        tb += c.retained_blocks;
    }
    out.push_str(&format!("{:<11}  {tq:>11}  {tr:>9}  {tb:>9}\n", "total"));
    out
}

pub fn mask_summary(state: &PtqState) -> String {
    let mut out = String::new();
    out.push_str("mask summary (per-layer m_i)\n");
    out.push_str("layer                          min          median       max\n");
    for r in &state.records {
        let (min, med, max) = spread(r.mask.mask());
        out.push_str(&format!(
            "{:<28}  {:.5e}  {:.5e}  {:.5e}\n",
            r.layer_name, min, med, max
        ));
    }
    out
}

pub fn state_dump(state: &PtqState) -> String {
    let stat = match state.stat_choice {
        StatChoice::Max => "max",
        StatChoice::Percentile => "percentile",
    };
    let mut out = String::new();
    out.push_str("PTQ state\n");
    out.push_str(&format!("  version:            {}\n", state.version));
    out.push_str(&format!(
        "  base model digest:  {:#018x}\n",
        state.base_model_digest
    ));
    out.push_str(&format!("  stat:               {stat}\n"));
    out.push_str(&format!("  percentile_p:       {}\n", state.percentile_p));
    out.push_str(&format!("  alpha:              {}\n", state.alpha));
    out.push_str(&format!("  epsilon:            {:e}\n", state.epsilon));
    out.push_str(&format!(
        "  format:             E{}M{}\n",
        state.exponent_bits, state.mantissa_bits
    ));
    out.push_str(&format!("  seed:               {}\n", state.seed));
    out.push_str(&format!("  records:            {}\n", state.records.len()));
    if !state.records.is_empty() {
        out.push_str(
            "layer                          in    out   mask min/med/max              checksum\n",
        );
        for r in &state.records {
            let (mn, md, mx) = spread(r.mask.mask());
            out.push_str(&format!(
                "{:<28}  {:<4}  {:<4}  {:.2e}/{:.2e}/{:.2e}  {:#018x}\n",
                r.layer_name, r.in_features, r.out_features, mn, md, mx, r.checksum
            ));
        }
    }
    out
}

pub fn calib_dump(ck: &CalibCheckpoint) -> String {
    let mut out = String::new();
    out.push_str("calibration checkpoint\n");
    out.push_str(&format!("  version:            {}\n", ck.version));
    out.push_str(&format!(
        "  base model digest:  {:#018x}\n",
        ck.base_model_digest
    ));
    out.push_str(&format!("  seed:               {}\n", ck.seed));
    out.push_str(&format!("  records:            {}\n", ck.accumulators.len()));
    out.push_str(&calibration_summary(ck));
    out
}
