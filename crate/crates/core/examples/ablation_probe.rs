use eegfuse::config::{Ablations, TrainConfig};
use eegfuse::engine::run_protocol;
use eegfuse::featio::{generate_synthetic, SynthConfig};

fn main() {
    let synth = SynthConfig {
        n_subjects: 5, trials_per_subject: 6, segments_per_trial: 20,
        n_channels: 16, n_bands: 5, n_classes: 3,
        shift_strength: 0.5, noise_sigma: 0.3,
    };
    for name in ["no_contrastive", "no_attn_fusion", "no_sample_weights"] {
        let mut means = Vec::new();
        for seed in 0..5u64 {
            let ds = generate_synthetic(&synth, 1000 + seed).unwrap();
            let mut ablations = Ablations::default();
            ablations.set(name).unwrap();
            let cfg = TrainConfig { max_epochs: 40, et: 30, seed, ablations, ..TrainConfig::default() };
            let out = run_protocol(&ds, 1, &cfg, None, 2).unwrap();
            means.push(out.mean_acc);
        }
        let m: f64 = means.iter().sum::<f64>() / 5.0;
        println!("{name}: mean {m:.4} per-seed {:?}", means.iter().map(|x| (x*1e4).round()/1e4).collect::<Vec<_>>());
    }
}
