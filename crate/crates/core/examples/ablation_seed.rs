//! Runs both colour modes on one synthetic seed and prints timings.
//! Usage: cargo run --release --example ablation_seed -- [seed] [epochs] [batch]

use std::time::Instant;

use birdmil::pipeline::experiment::run_both_modes;
use birdmil::pipeline::{featurize_manifest, synthesize_dataset, AblationConfig, SynthSpec};

fn main() -> birdmil::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut config = AblationConfig::desk_scale();
    if let Some(e) = args.get(2).and_then(|s| s.parse().ok()) {
        config.experiment.train.epochs = e;
    }
    if let Some(b) = args.get(3).and_then(|s| s.parse().ok()) {
        config.experiment.train.batch_size = b;
    }
    config.experiment.train.seed = seed;
    let dir = tempfile::tempdir().expect("tempdir");
    let t = Instant::now();
    let spec = SynthSpec { seed, ..config.synth.clone() };
    let manifest = synthesize_dataset(&spec, dir.path())?;
    println!("synth {:.1}s", t.elapsed().as_secs_f64());
    let t = Instant::now();
    let features = featurize_manifest(dir.path(), &manifest, &config.experiment.features)?;
    println!("features {:.1}s", t.elapsed().as_secs_f64());
    let t = Instant::now();
    let (c, g) = run_both_modes(&features, &config.experiment)?;
    println!("train+eval {:.1}s", t.elapsed().as_secs_f64());
    for r in [&c, &g] {
        let f1: Vec<String> = r.folds.iter().map(|f| format!("{:.3}", f.metrics.macro_f1)).collect();
        println!("{}: mean {:?} folds {:?} loss {:.3}", r.mode, r.mean, f1, r.folds[0].final_loss);
    }
    Ok(())
}
