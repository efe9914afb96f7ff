//! Scratch probe round 7 (deleted before finalizing).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use taq4_core::engine::{calibrate, end_to_end_mse, run_ptq, QuantConfig};
use taq4_core::state::StatChoice;
use taq4_core::synth::{batch_stream, gen_toy_model, DistKind, DistributionSpec};

fn lognormal_pcs(width: usize, sigma: f64, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, sigma).unwrap();
    (0..width)
        .map(|_| f64::exp(n.sample(&mut rng)).clamp(lo, hi))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn run(
    label: &str,
    width: usize,
    blocks: usize,
    boundary: usize,
    pcs_sigma: f64,
    clamp: (f64, f64),
    mag: f64,
    seeds: u64,
) {
    let model = gen_toy_model(blocks, width, boundary, 4242).unwrap();
    let mut wins = 0;
    let mut ratios = Vec::new();
    let t0 = std::time::Instant::now();
    for seed in 0..seeds {
        let config = QuantConfig {
            seed,
            ..QuantConfig::default()
        };
        let pcs = if pcs_sigma > 0.0 {
            Some(lognormal_pcs(width, pcs_sigma, clamp.0, clamp.1, 777 + seed))
        } else {
            None
        };
        let spec = DistributionSpec {
            kind: DistKind::GaussianWithSpikes,
            spike_rate: 1e-3,
            spike_magnitude: mag,
            per_channel_scale: pcs,
            seed: 5000 + seed,
            ..DistributionSpec::default()
        };
        let calib = batch_stream(&spec, 16, 64, width).unwrap();
        let eval = batch_stream(
            &DistributionSpec {
                seed: 9000 + seed,
                ..spec.clone()
            },
            8,
            256,
            width,
        )
        .unwrap();
        let stats = calibrate(&model, &calib, &config).unwrap();
        let max_state = run_ptq(
            &model,
            &stats,
            &QuantConfig {
                stat_choice: StatChoice::Max,
                ..config.clone()
            },
        )
        .unwrap();
        let pct_state = run_ptq(
            &model,
            &stats,
            &QuantConfig {
                stat_choice: StatChoice::Percentile,
                ..config.clone()
            },
        )
        .unwrap();
        let m = end_to_end_mse(&model, &max_state, &eval).unwrap();
        let p = end_to_end_mse(&model, &pct_state, &eval).unwrap();
        if p < m {
            wins += 1;
        }
        ratios.push(p / m);
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
fn probe7() {
    run("E w128 b1 bd0 pcs2.0 mag25", 128, 1, 0, 2.0, (0.05, 20.0), 25.0, 10);
    run("F w128 b1 bd0 pcs2.0 mag20", 128, 1, 0, 2.0, (0.05, 20.0), 20.0, 10);
    run("G w128 b2 bd0 pcs2.0 mag25", 128, 2, 0, 2.0, (0.05, 20.0), 25.0, 10);
    run("H w64 b1 bd0 pcs2.0 mag25", 64, 1, 0, 2.0, (0.05, 20.0), 25.0, 10);
    run("I w128 b1 bd0 pcs2.5 wide mag30", 128, 1, 0, 2.5, (0.02, 50.0), 30.0, 10);
}
