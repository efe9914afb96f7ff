//! Scratch probe round 4 (deleted before finalizing).

use taq4_core::engine::{calibrate, evaluate_ab, QuantConfig};
use taq4_core::synth::{batch_stream, gen_toy_model, DistKind, DistributionSpec};

fn run(
    label: &str,
    width: usize,
    blocks: usize,
    calib_tokens: usize,
    eval_tokens: usize,
    mag: f64,
    spiky_eval: bool,
    seeds: u64,
) {
    let model = gen_toy_model(blocks, width, 6, 4242).unwrap();
    let mut wins = 0;
    let mut ratios = Vec::new();
    let t0 = std::time::Instant::now();
    for seed in 0..seeds {
        let config = QuantConfig {
            seed,
            ..QuantConfig::default()
        };
        let spec = DistributionSpec {
            kind: DistKind::GaussianWithSpikes,
            spike_rate: 1e-3,
            spike_magnitude: mag,
            seed: 5000 + seed,
            ..DistributionSpec::default()
        };
        let calib = batch_stream(&spec, 16, calib_tokens, width).unwrap();
        let eval_spec = if spiky_eval {
            DistributionSpec {
                seed: 9000 + seed,
                ..spec.clone()
            }
        } else {
            DistributionSpec {
                kind: DistKind::Gaussian,
                seed: 9000 + seed,
                ..DistributionSpec::default()
            }
        };
        let eval = batch_stream(&eval_spec, 8, eval_tokens, width).unwrap();
        let stats = calibrate(&model, &calib, &config).unwrap();
        let ab = evaluate_ab(&model, &stats, &config, &eval).unwrap();
        if ab.percentile_wins_end_to_end {
            wins += 1;
        }
        ratios.push(ab.percentile.end_to_end.mse / ab.max.end_to_end.mse);
    }
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eprintln!(
        "{label}: wins {wins}/{seeds} med={:.4} min={:.4} max={:.4} ({:.1?})",
        ratios[ratios.len() / 2],
        ratios[0],
        ratios[ratios.len() - 1],
        t0.elapsed()
    );
}

#[test]
#[ignore]
fn probe4a() {
    run("A w128 n4096 geval2048", 128, 2, 256, 256, 25.0, false, 8);
}

#[test]
#[ignore]
fn probe4b() {
    run("B w128 n4096 seval2048", 128, 2, 256, 256, 25.0, true, 8);
}

#[test]
#[ignore]
fn probe4c() {
    run("C w128 n1024 geval2048", 128, 2, 64, 256, 25.0, false, 8);
}
