//! Batch CLI for the W4A4 PTQ pipeline: calibrate, quantize, eval,
//! inspect.
//!
//! Exit codes: 0 success, 1 i/o or internal failure, 2 configuration
//! error, 3 calibration-coverage error, 4 file-format or version error,
//! 5 corruption, 6 state-integrity failure.

mod config;
mod report;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use taq4_core::engine::{self, AbReport, EvalReport};
use taq4_core::error::{Error, Result};
use taq4_core::state::{CalibCheckpoint, PtqState, StatChoice, CALIB_MAGIC, FORMAT_VERSION};
use taq4_core::synth::batch_stream;

use config::{ReportFormat, RunConfig};

#[derive(Parser)]
#[command(
    name = "taq4",
    version,
    about = "W4A4 post-training quantization pipeline over a built-in toy transformer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags that override single keys of the JSON run configuration.
#[derive(Args, Debug, Default)]
struct Overrides {
    /// JSON run configuration (defaults apply when omitted)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides `seed`)
    #[arg(long)]
    seed: Option<u64>,
    /// Percentile value p (overrides `quant.percentile_p`)
    #[arg(long)]
    percentile: Option<f64>,
    /// Balancing coefficient (overrides `quant.alpha`)
    #[arg(long)]
    alpha: Option<f64>,
    /// Activation statistic (overrides `quant.stat`)
    #[arg(long, value_parser = ["max", "percentile"])]
    stat: Option<String>,
    /// Retained whole-block budget (overrides `quant.retained_blocks`)
    #[arg(long)]
    retained_blocks: Option<usize>,
    /// Calibration batch count (overrides `calib.batches`)
    #[arg(long)]
    calib_batches: Option<usize>,
    /// Output path (overrides the command's `io` entry)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the FP model over the calibration stream; write a checkpoint
    Calibrate {
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Build the compact PTQ state from a calibration checkpoint
    Quantize {
        #[command(flatten)]
        overrides: Overrides,
        /// Calibration checkpoint path (overrides `io.calib`)
        #[arg(long)]
        calib: Option<PathBuf>,
    },
    /// Compare quantized inference against the FP reference
    Eval {
        #[command(flatten)]
        overrides: Overrides,
        /// PTQ state path (overrides `io.state`)
        #[arg(long)]
        state: Option<PathBuf>,
        /// Also compare max vs percentile calibration side by side
        #[arg(long)]
        ab: bool,
        /// Report format (overrides `report`)
        #[arg(long, value_parser = ["text", "json"])]
        report: Option<String>,
    },
    /// Print a human-readable dump of a state or checkpoint file
    Inspect {
        /// File to inspect
        path: PathBuf,
    },
}

fn load_config(o: &Overrides) -> Result<RunConfig> {
    let mut cfg = match &o.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(p) = o.percentile {
        cfg.quant.percentile_p = p;
    }
    if let Some(a) = o.alpha {
        cfg.quant.alpha = a;
    }
    if let Some(stat) = &o.stat {
        cfg.quant.stat = match stat.as_str() {
            "max" => StatChoice::Max,
            _ => StatChoice::Percentile,
        };
    }
    if let Some(r) = o.retained_blocks {
        cfg.quant.retained_blocks = r;
    }
    if let Some(b) = o.calib_batches {
        cfg.calib.batches = b;
    }
    Ok(cfg)
}

fn cmd_calibrate(o: &Overrides) -> Result<()> {
    let cfg = load_config(o)?;
    let model = cfg.build_model()?;
    let quant = cfg.quant_config()?;
    let batches = batch_stream(
        &cfg.distribution(cfg.calib_data_seed()),
        cfg.calib.batches,
        cfg.calib.tokens,
        cfg.model.width,
    )?;
    let stats = engine::calibrate(&model, &batches, &quant)?;
    let checkpoint = CalibCheckpoint {
        version: FORMAT_VERSION,
        base_model_digest: model.weight_digest(),
        seed: quant.seed,
        accumulators: stats.into_values().collect(),
    };
    let out = o
        .out
        .clone()
        .or_else(|| cfg.io.calib.clone())
        .unwrap_or_else(|| PathBuf::from("calib.taqc"));
    checkpoint.save(&out)?;
    print!("{}", report::calibration_summary(&checkpoint));
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_quantize(o: &Overrides, calib: &Option<PathBuf>) -> Result<()> {
    let cfg = load_config(o)?;
    let model = cfg.build_model()?;
    let quant = cfg.quant_config()?;
    let calib_path = calib
        .clone()
        .or_else(|| cfg.io.calib.clone())
        .ok_or_else(|| Error::Config("no calibration checkpoint path (--calib or io.calib)".into()))?;
    let checkpoint = CalibCheckpoint::load(&calib_path)?;
    if checkpoint.base_model_digest != model.weight_digest() {
        return Err(Error::Config(format!(
            "checkpoint {} was calibrated on a different model (digest {:#018x}, expected {:#018x})",
            calib_path.display(),
            checkpoint.base_model_digest,
            model.weight_digest()
        )));
    }
    let stats: BTreeMap<_, _> = checkpoint
        .accumulators
        .into_iter()
        .map(|acc| (acc.layer_name().to_string(), acc))
        .collect();
    let state = engine::run_ptq(&model, &stats, &quant)?;
    let out = o
        .out
        .clone()
        .or_else(|| cfg.io.state.clone())
        .unwrap_or_else(|| PathBuf::from("state.taq4"));
    state.save(&out)?;
    let partition = engine::select_layers(&model, &quant)?;
    print!("{}", report::partition_table(&partition));
    print!("{}", report::mask_summary(&state));
    println!("wrote {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    eval: &'a EvalReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    ab: Option<&'a AbReport>,
}

fn cmd_eval(
    o: &Overrides,
    state_path: &Option<PathBuf>,
    ab: bool,
    report_flag: &Option<String>,
) -> Result<()> {
    let mut cfg = load_config(o)?;
    if let Some(r) = report_flag {
        cfg.report = match r.as_str() {
            "json" => ReportFormat::Json,
            _ => ReportFormat::Text,
        };
    }
    let model = cfg.build_model()?;
    let quant = cfg.quant_config()?;
    let state_path = state_path
        .clone()
        .or_else(|| cfg.io.state.clone())
        .ok_or_else(|| Error::Config("no PTQ state path (--state or io.state)".into()))?;
    let state = PtqState::load(&state_path)?;
    let eval_batches = batch_stream(
        &cfg.distribution(cfg.eval_data_seed()),
        cfg.eval.batches,
        cfg.eval.tokens,
        cfg.model.width,
    )?;
    let eval_report = engine::evaluate(&model, &state, &eval_batches)?;
    let ab_report = if ab {
        let calib_batches = batch_stream(
            &cfg.distribution(cfg.calib_data_seed()),
            cfg.calib.batches,
            cfg.calib.tokens,
            cfg.model.width,
        )?;
        let stats = engine::calibrate(&model, &calib_batches, &quant)?;
        Some(engine::evaluate_ab(&model, &stats, &quant, &eval_batches)?)
    } else {
        None
    };

    let rendered = match cfg.report {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(&EvalOutput {
                eval: &eval_report,
                ab: ab_report.as_ref(),
            })
            .expect("report serialization cannot fail");
            s.push('\n');
            s
        }
        ReportFormat::Text => {
            let mut s = report::eval_report_text(&eval_report);
            if let Some(ab) = &ab_report {
                s.push('\n');
                s.push_str(&report::ab_report_text(ab));
            }
            s
        }
    };
    match o.out.clone().or_else(|| cfg.io.report.clone()) {
        Some(path) => {
            fs::write(&path, rendered)?;
            println!("wrote {}", path.display());
        }
        None => print!("{rendered}"),
    }
    Ok(())
}

fn cmd_inspect(path: &Path) -> Result<()> {
    let bytes = fs::read(path)?;
    if bytes.len() >= 4 && &bytes[..4] == CALIB_MAGIC {
        let ck = CalibCheckpoint::deserialize(&bytes)?;
        print!("{}", report::calib_dump(&ck));
    } else {
        let state = PtqState::deserialize(&bytes)?;
        print!("{}", report::state_dump(&state));
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parameter(_) | Error::Spec(_) | Error::Format(_) => 2,
        Error::Coverage { .. } => 3,
        Error::FileFormat(_) | Error::Version(_) => 4,
        Error::Corruption(_) => 5,
        Error::Integrity(_) => 6,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Calibrate { overrides } => cmd_calibrate(overrides),
        Command::Quantize { overrides, calib } => cmd_quantize(overrides, calib),
        Command::Eval {
            overrides,
            state,
            ab,
            report,
        } => cmd_eval(overrides, state, *ab, report),
        Command::Inspect { path } => cmd_inspect(path),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
