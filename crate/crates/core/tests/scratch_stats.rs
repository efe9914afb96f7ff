//! Scratch statistic inspection (deleted before finalizing).

use taq4_core::engine::{calibrate, QuantConfig};
use taq4_core::synth::{batch_stream, gen_toy_model, DistKind, DistributionSpec};

#[test]
#[ignore]
fn inspect_layer_stats() {
    let width = 32;
    let seed = 3u64;
    let model = gen_toy_model(2, width, 6, 1000 + seed).unwrap();
    let config = QuantConfig {
        seed,
        ..QuantConfig::default()
    };
    let spec = DistributionSpec {
        kind: DistKind::GaussianWithSpikes,
        spike_rate: 1e-3,
        spike_magnitude: 20.0,
        seed: 5000 + seed,
        ..DistributionSpec::default()
    };
    let calib = batch_stream(&spec, 16, 64, width).unwrap();

    // How many spikes are in the raw input stream per channel?
    let mut per_channel_spikes = vec![0usize; width];
    for b in &calib {
        for r in 0..64 {
            for c in 0..width {
                if b.get2(r, c).abs() >= 19.9 {
                    per_channel_spikes[c] += 1;
                }
            }
        }
    }
    eprintln!("input spikes per channel: {per_channel_spikes:?}");

    let stats = calibrate(&model, &calib, &config).unwrap();
    for name in ["tx1.blk0.attn0.q", "tx1.blk1.ffn.up", "tx2.blk0.attn0.q"] {
        let acc = &stats[name];
        let amax = acc.max_stat().unwrap();
        let ap = acc.percentile(99.9).unwrap();
        let ratio: Vec<f64> = amax.iter().zip(&ap).map(|(m, p)| m / p).collect();
        let mut sorted = ratio.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        eprintln!(
            "{name}: max/pct ratio min {:.2} med {:.2} max {:.2}",
            sorted[0],
            sorted[width / 2],
            sorted[width - 1]
        );
        eprintln!("  amax[0..8]: {:?}", &amax[..8].iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>());
        eprintln!("  ap  [0..8]: {:?}", &ap[..8].iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>());
    }
}
