//! Scratch grid sweep (deleted before finalizing).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use taq4_core::engine::{calibrate, end_to_end_mse, run_ptq, QuantConfig};
use taq4_core::state::StatChoice;
use taq4_core::synth::{batch_stream, gen_toy_model, DistKind, DistributionSpec};

fn pcs(width: usize, mu: f64, sigma: f64, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(mu, sigma).unwrap();
    (0..width)
        .map(|_| f64::exp(n.sample(&mut rng)).clamp(lo, hi))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn cell(
    label: &str,
    width: usize,
    blocks: usize,
    boundary: usize,
    pcs_kind: u8,
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
        let scales = match pcs_kind {
            0 => None,
            1 => Some(pcs(width, 0.0, 1.5, 0.05, 20.0, 777 + seed)),
            _ => Some(pcs(width, -1.5, 1.5, 0.02, 2.0, 777 + seed)),
        };
        let spec = DistributionSpec {
            kind: DistKind::GaussianWithSpikes,
            spike_rate: 1e-3,
            spike_magnitude: mag,
            per_channel_scale: scales,
            seed: 5000 + seed,
            ..DistributionSpec::default()
        };
        let calib = batch_stream(&spec, 16, 64, width).unwrap();
        let eval = batch_stream(
            &DistributionSpec {
                seed: 9000 + seed,
                ..spec.clone()
            },
            6,
            128,
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
        "{label}: wins {wins}/{seeds} med={:.4} q25={:.4} q75={:.4} ({:.1?})",
        ratios[ratios.len() / 2],
        ratios[ratios.len() / 4],
        ratios[3 * ratios.len() / 4],
        t0.elapsed()
    );
}

#[test]
#[ignore]
fn sweep() {
    for width in [32usize, 48, 64] {
        for boundary in [0usize, 6] {
            for pk in [1u8, 2] {
                let label = format!("w{width} bd{boundary} pcs{pk} mag20");
                cell(&label, width, 1, boundary, pk, 20.0, 24);
            }
        }
    }
    cell("w64 bd6 pcs1 mag25", 64, 1, 6, 1, 25.0, 24);
    cell("w64 bd0 pcs0 mag20", 64, 1, 0, 0, 20.0, 24);
}
