//! Scratch probe round 5: per-channel imbalance (deleted before finalizing).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use taq4_core::engine::{calibrate, evaluate_ab, QuantConfig};
use taq4_core::synth::{batch_stream, gen_toy_model, DistKind, DistributionSpec};

fn lognormal_pcs(width: usize, sigma: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, sigma).unwrap();
    (0..width)
        .map(|_| f64::exp(n.sample(&mut rng)).clamp(0.05, 20.0))
        .collect()
}

fn run(label: &str, width: usize, pcs_sigma: f64, spiky_eval: bool, mag: f64, seeds: u64) {
    let model = gen_toy_model(2, width, 6, 4242).unwrap();
    let mut wins = 0;
    let mut ratios = Vec::new();
    let t0 = std::time::Instant::now();
    for seed in 0..seeds {
        let config = QuantConfig {
            seed,
            ..QuantConfig::default()
        };
        let pcs = lognormal_pcs(width, pcs_sigma, 777 + seed);
        let spec = DistributionSpec {
            kind: DistKind::GaussianWithSpikes,
            spike_rate: 1e-3,
            spike_magnitude: mag,
            per_channel_scale: Some(pcs.clone()),
            seed: 5000 + seed,
            ..DistributionSpec::default()
        };
        let calib = batch_stream(&spec, 16, 64, width).unwrap();
        let eval_spec = if spiky_eval {
            DistributionSpec {
                seed: 9000 + seed,
                ..spec.clone()
            }
        } else {
            DistributionSpec {
                kind: DistKind::Gaussian,
                per_channel_scale: Some(pcs),
                seed: 9000 + seed,
                ..DistributionSpec::default()
            }
        };
        let eval = batch_stream(&eval_spec, 8, 256, width).unwrap();
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
fn probe5a() {
    run("pcs1.0 geval w128", 128, 1.0, false, 25.0, 8);
}

#[test]
#[ignore]
fn probe5b() {
    run("pcs1.0 seval w128", 128, 1.0, true, 25.0, 8);
}

#[test]
#[ignore]
fn probe5c() {
    run("pcs1.5 geval w128", 128, 1.5, false, 25.0, 8);
}

#[test]
#[ignore]
fn probe5d() {
    run("pcs1.0 geval w64", 64, 1.0, false, 25.0, 8);
}
