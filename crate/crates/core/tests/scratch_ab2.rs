//! Scratch probe round 2 (deleted before finalizing).

use taq4_core::engine::{calibrate, evaluate_ab, QuantConfig};
use taq4_core::synth::{batch_stream, gen_toy_model, DistKind, DistributionSpec};

fn run(
    width: usize,
    blocks: usize,
    calib_batches: usize,
    tokens: usize,
    mag: f64,
    alpha: f64,
    gaussian_eval: bool,
    fixed_model: bool,
) {
    let mut wins = 0;
    let mut ratios = Vec::new();
    let seeds = 20u64;
    let t0 = std::time::Instant::now();
    let shared_model = gen_toy_model(blocks, width, 6, 4242).unwrap();
    for seed in 0..seeds {
        let model = if fixed_model {
            shared_model.clone()
        } else {
            gen_toy_model(blocks, width, 6, 1000 + seed).unwrap()
        };
        let config = QuantConfig {
            seed,
            alpha,
            ..QuantConfig::default()
        };
        let spec = DistributionSpec {
            kind: DistKind::GaussianWithSpikes,
            spike_rate: 1e-3,
            spike_magnitude: mag,
            seed: 5000 + seed,
            ..DistributionSpec::default()
        };
        let calib = batch_stream(&spec, calib_batches, tokens, width).unwrap();
        let eval_spec = if gaussian_eval {
            DistributionSpec {
                kind: DistKind::Gaussian,
                seed: 9000 + seed,
                ..DistributionSpec::default()
            }
        } else {
            DistributionSpec {
                seed: 9000 + seed,
                ..spec.clone()
            }
        };
        let eval = batch_stream(&eval_spec, 4, 128, width).unwrap();
        let stats = calibrate(&model, &calib, &config).unwrap();
        let ab = evaluate_ab(&model, &stats, &config, &eval).unwrap();
        if ab.percentile_wins_end_to_end {
            wins += 1;
        }
        ratios.push(ab.percentile.end_to_end.mse / ab.max.end_to_end.mse);
    }
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eprintln!(
        "w={width} b={blocks} n={} mag={mag} a={alpha} geval={gaussian_eval} fixed={fixed_model}: \
         wins {wins}/{seeds} med={:.4} min={:.4} max={:.4} ({:.1?})",
        calib_batches * tokens,
        ratios[ratios.len() / 2],
        ratios[0],
        ratios[ratios.len() - 1],
        t0.elapsed()
    );
}

#[test]
#[ignore]
fn probe2() {
    run(128, 2, 16, 64, 20.0, 0.5, true, true);
    run(128, 2, 16, 64, 20.0, 0.5, false, true);
    run(64, 2, 16, 64, 20.0, 0.5, true, true);
}
