use std::path::{Path, PathBuf};
use std::process::ExitCode;

use birdmil::audio::{load_wav, resample};
use birdmil::colorizer::{export_png, render, ColorMode};
use birdmil::events::{condition, detect_events, EventsManifest};
use birdmil::io::{create_dir_all, read_json, read_toml, write_json};
use birdmil::pipeline::experiment::{evaluate_fold, train_model, FoldReport};
use birdmil::pipeline::features::event_spectrogram;
use birdmil::pipeline::synth::MANIFEST_FILE;
use birdmil::pipeline::{
    ablate_synthetic, build_manifest, featurize_manifest, run_experiment, synthesize_dataset, AblationConfig,
    DatasetManifest, ExperimentConfig, ExperimentReport, PipelineCheckpoint, SynthSpec,
};
use birdmil::spectrogram::{MelFrontEnd, MelSpectrogram};
use birdmil::{Error, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "birdmil", version, about = "Frequency-colorized multiple-instance bird call classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic motif dataset and its manifest
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        folds: Option<usize>,
        /// Recordings per class for the built-in shared-motif preset
        #[arg(long, default_value_t = 40)]
        recordings: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a stratified K-fold manifest from <root>/<label>/*.wav
    Manifest {
        root: PathBuf,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to <root>/manifest.json
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mine acoustic events from a WAV file
    Detect {
        wav: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute normalised mel spectrograms of detected events
    Featurize {
        wav: PathBuf,
        /// Events JSON from `detect`; events are mined afresh when omitted
        #[arg(long)]
        events: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render spectrogram .npy files as colorized or grayscale images
    Colorize {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "colorized")]
        mode: ColorMode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a manifest, optionally holding out one fold
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "colorized")]
        mode: ColorMode,
        /// Fold to leave out of training
        #[arg(long)]
        fold: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on one fold
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Defaults to the checkpoint's held-out fold
        #[arg(long)]
        fold: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full K-fold cross-validation in one colour mode
    Experiment {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "colorized")]
        mode: ColorMode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Colorized vs grayscale on synthetic shared-motif data, with a Wilcoxon test
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        folds: Option<usize>,
        /// Number of seeds, counted up from --seed
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn experiment_config(common: &Common) -> Result<ExperimentConfig> {
    let mut config: ExperimentConfig = match &common.config {
        Some(path) => read_toml(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.train.seed = seed;
    }
    Ok(config)
}

fn manifest_root(manifest: &Path) -> PathBuf {
    manifest
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            common,
            folds,
            recordings,
            out,
        } => {
            let mut spec: SynthSpec = match &common.config {
                Some(path) => read_toml(path)?,
                None => SynthSpec::shared_motif(0, recordings),
            };
            if let Some(seed) = common.seed {
                spec.seed = seed;
            }
            if let Some(k) = folds {
                spec.k_folds = k;
            }
            let manifest = synthesize_dataset(&spec, &out)?;
            println!(
                "wrote {} recordings in {} classes to {}",
                manifest.entries.len(),
                manifest.n_classes(),
                out.display()
            );
        }
        Command::Manifest { root, folds, seed, out } => {
            let manifest = build_manifest(&root, folds, seed)?;
            let out = out.unwrap_or_else(|| root.join(MANIFEST_FILE));
            manifest.save(&out)?;
            println!("{} entries, fold sizes {:?}", manifest.entries.len(), manifest.fold_sizes());
        }
        Command::Detect { wav, common, out } => {
            let config = experiment_config(&common)?;
            let mut clip = load_wav(&wav)?;
            if clip.sample_rate != config.features.mel.sample_rate {
                clip = resample(&clip, config.features.mel.sample_rate)?;
            }
            let events = detect_events(&clip, &config.features.events)?;
            write_json(&out, &EventsManifest::new(&clip, &events))?;
            println!("{} events", events.len());
        }
        Command::Featurize {
            wav,
            events,
            common,
            out,
        } => {
            let config = experiment_config(&common)?;
            config.features.validate()?;
            let mut clip = load_wav(&wav)?;
            if clip.sample_rate != config.features.mel.sample_rate {
                clip = resample(&clip, config.features.mel.sample_rate)?;
            }
            let manifest = match events {
                Some(path) => read_json::<EventsManifest>(path)?,
                None => EventsManifest::new(&clip, &detect_events(&clip, &config.features.events)?),
            };
            let conditioned = condition(&clip, &config.features.events)?;
            let frontend = MelFrontEnd::new(config.features.mel.clone())?;
            create_dir_all(&out)?;
            let window = config.features.window_samples();
            for (k, event) in manifest.cut(&conditioned)?.iter().enumerate() {
                let spec = event_spectrogram(&event.samples, window, &frontend)?;
                spec.write_npy(out.join(format!("event_{k:02}.npy")))?;
            }
            write_json(out.join("events.json"), &manifest)?;
            println!("{} spectrograms", manifest.events.len());
        }
        Command::Colorize {
            inputs,
            common,
            mode,
            out,
        } => {
            let config = experiment_config(&common)?;
            create_dir_all(&out)?;
            for input in &inputs {
                let spec = MelSpectrogram::read_npy(input, config.features.mel.clone())?;
                let img = render(&spec, mode)?;
                let stem = input
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "spectrogram".into());
                export_png(&img, out.join(format!("{stem}.png")))?;
                img.write_npy(out.join(format!("{stem}_{mode}.npy")))?;
            }
            println!("rendered {} images", inputs.len());
        }
        Command::Train {
            manifest,
            common,
            mode,
            fold,
            out,
        } => {
            let config = experiment_config(&common)?;
            let dataset = DatasetManifest::load(&manifest)?;
            if let Some(k) = fold {
                if k >= dataset.k_folds {
                    return Err(Error::InvalidParameter(format!("fold {k} >= {}", dataset.k_folds)));
                }
            }
            let features = featurize_manifest(manifest_root(&manifest), &dataset, &config.features)?;
            let (ckpt, loss) = train_model(&features, mode, &config, fold, config.train.seed)?;
            ckpt.save(&out)?;
            println!("final epoch loss {loss:.5}, alpha {:.4}", ckpt.model.params.alpha());
        }
        Command::Eval {
            checkpoint,
            manifest,
            fold,
            out,
        } => {
            let ckpt = PipelineCheckpoint::load(&checkpoint)?;
            let dataset = DatasetManifest::load(&manifest)?;
            let fold = fold.or(ckpt.held_out_fold).ok_or_else(|| {
                Error::InvalidParameter("--fold required for a checkpoint trained on all folds".into())
            })?;
            let features = featurize_manifest(manifest_root(&manifest), &dataset, &ckpt.features)?;
            let (_, val_idx) = features.fold_indices(fold);
            let (metrics, n_val) = evaluate_fold(&ckpt, &features, fold)?;
            let report = ExperimentReport::new(
                ckpt.mode,
                ckpt.model.train.seed,
                vec![FoldReport {
                    fold,
                    n_train: features.items.len() - val_idx.len(),
                    n_val,
                    metrics,
                    alpha: ckpt.model.params.alpha(),
                    final_loss: f64::NAN,
                }],
            );
            report.write(&out, "report")?;
            print!("{}", report.to_csv());
        }
        Command::Experiment {
            manifest,
            common,
            mode,
            out,
        } => {
            let config = experiment_config(&common)?;
            let dataset = DatasetManifest::load(&manifest)?;
            let features = featurize_manifest(manifest_root(&manifest), &dataset, &config.features)?;
            let report = run_experiment(&features, mode, &config)?;
            report.write(&out, "report")?;
            print!("{}", report.to_csv());
        }
        Command::Ablate {
            common,
            folds,
            seeds,
            out,
        } => {
            let mut config: AblationConfig = match &common.config {
                Some(path) => read_toml(path)?,
                None => AblationConfig::desk_scale(),
            };
            if common.seed.is_some() || seeds.is_some() {
                let base = common.seed.unwrap_or(config.seeds.first().copied().unwrap_or(0));
                let n = seeds.unwrap_or(config.seeds.len());
                config.seeds = (base..base + n as u64).collect();
            }
            if let Some(k) = folds {
                config.synth.k_folds = k;
            }
            create_dir_all(&out)?;
            let report = ablate_synthetic(&config, out.join("data"))?;
            for r in report.colorized.iter().chain(&report.grayscale) {
                r.write(&out, &format!("{}_seed{}", r.mode, r.seed))?;
            }
            write_json(out.join("ablation.json"), &report)?;
            let summary = format!(
                "colorized macro_f1 {:.4}\ngrayscale macro_f1 {:.4}\nwilcoxon p {:.6} (n={}) significant={}\n",
                report.colorized_mean.macro_f1,
                report.grayscale_mean.macro_f1,
                report.wilcoxon.p_value,
                report.wilcoxon.n,
                report.significant
            );
            write_text(&out.join("summary.txt"), &summary)?;
            print!("{summary}");
        }
    }
    Ok(())
}

fn error_line(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": { "kind": kind, "message": message } }).to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", error_line("usage", e.to_string().trim()));
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(e.kind(), &e.to_string()));
            ExitCode::FAILURE
        }
    }
}
