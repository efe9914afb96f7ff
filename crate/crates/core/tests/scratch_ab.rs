//! Scratch probe for the A/B win-rate (deleted before finalizing).

use taq4_core::engine::{calibrate, evaluate_ab, QuantConfig};
use taq4_core::synth::{batch_stream, gen_toy_model, DistKind, DistributionSpec};

#[test]
#[ignore]
fn probe_win_rate() {
    for (width, blocks, calib_batches, tokens, mag) in [
        (32usize, 2usize, 16usize, 64usize, 20.0f64),
        (32, 2, 16, 128, 20.0),
        (32, 2, 16, 128, 30.0),
        (64, 2, 16, 128, 25.0),
    ] {
        let mut wins = 0;
        let mut ratios = Vec::new();
        let seeds = 20u64;
        let t0 = std::time::Instant::now();
        for seed in 0..seeds {
            let model = gen_toy_model(blocks, width, 6, 1000 + seed).unwrap();
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
            let calib = batch_stream(&spec, calib_batches, tokens, width).unwrap();
            let eval_spec = DistributionSpec {
                seed: 9000 + seed,
                ..spec.clone()
            };
            let eval = batch_stream(&eval_spec, 4, 64, width).unwrap();
            let stats = calibrate(&model, &calib, &config).unwrap();
            let ab = evaluate_ab(&model, &stats, &config, &eval).unwrap();
            if ab.percentile_wins_end_to_end {
                wins += 1;
            }
            ratios.push(ab.percentile.end_to_end.mse / ab.max.end_to_end.mse);
        }
        ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
        eprintln!(
            "w={width} b={blocks} cb={calib_batches} tok={tokens} mag={mag}: wins {wins}/{seeds}, \
             mse ratio med={:.4} min={:.4} max={:.4}  ({:?})",
            ratios[ratios.len() / 2],
            ratios[0],
            ratios[ratios.len() - 1],
            t0.elapsed()
        );
    }
}
