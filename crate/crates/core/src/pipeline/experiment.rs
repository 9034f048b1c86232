use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::features::{featurize_manifest, FeatureConfig, FeatureSet};
use super::synth::{synthesize_dataset, SynthSpec};
use crate::colorizer::ColorMode;
use crate::error::{Error, Result};
use crate::events::EventConfig;
use crate::metrics::{EvalBatch, MetricSet, DEFAULT_F1_THRESHOLD};
use crate::model::{Checkpoint, EncoderConfig, MilModel, TrainConfig};
use crate::spectrogram::MelConfig;
use crate::stats::{wilcoxon_signed_rank_greater, WilcoxonResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub features: FeatureConfig,
    /// Conv block widths of the instance encoder.
    pub widths: Vec<usize>,
    pub train: TrainConfig,
    pub f1_threshold: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            features: FeatureConfig::default(),
            widths: EncoderConfig::new(1, 1, 1).widths,
            train: TrainConfig::default(),
            f1_threshold: DEFAULT_F1_THRESHOLD,
        }
    }
}

impl ExperimentConfig {
    /// Coarse front end and short schedule sized for a single CPU core.
    pub fn desk_scale() -> Self {
        Self {
            features: FeatureConfig {
                events: EventConfig::default(),
                mel: MelConfig {
                    total_bins: 36,
                    fft_size: 4096,
                    hop: 4096,
                    ..MelConfig::default()
                },
            },
            widths: vec![8, 16, 32],
            train: TrainConfig {
                epochs: 15,
                batch_size: 8,
                ..TrainConfig::default()
            },
            f1_threshold: DEFAULT_F1_THRESHOLD,
        }
    }

    pub fn encoder_config(&self, n_classes: usize) -> EncoderConfig {
        EncoderConfig {
            in_channels: 3,
            widths: self.widths.clone(),
            n_classes,
            input_bins: self.features.mel.total_bins,
            input_frames: self.features.n_frames(),
        }
    }
}

/// Training seed of one fold, shared by both colour modes.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(fold as u64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub metrics: MetricSet,
    pub alpha: f64,
    pub final_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub mode: ColorMode,
    pub seed: u64,
    pub folds: Vec<FoldReport>,
    pub mean: MetricSet,
}

pub fn mean_metrics(sets: &[MetricSet]) -> MetricSet {
    let n = sets.len() as f64;
    MetricSet {
        macro_f1: sets.iter().map(|m| m.macro_f1).sum::<f64>() / n,
        macro_roc_auc: sets.iter().map(|m| m.macro_roc_auc).sum::<f64>() / n,
        cmap: sets.iter().map(|m| m.cmap).sum::<f64>() / n,
    }
}

impl ExperimentReport {
    pub fn new(mode: ColorMode, seed: u64, folds: Vec<FoldReport>) -> Self {
        let sets: Vec<MetricSet> = folds.iter().map(|f| f.metrics).collect();
        Self {
            mode,
            seed,
            mean: mean_metrics(&sets),
            folds,
        }
    }

    /// `metric,fold,value` rows, per fold then the mean.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,fold,value\n");
        for f in &self.folds {
            for (name, v) in f.metrics.named() {
                let _ = writeln!(out, "{name},{},{v}", f.fold);
            }
        }
        for (name, v) in self.mean.named() {
            let _ = writeln!(out, "{name},mean,{v}");
        }
        out
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        crate::io::create_dir_all(dir)?;
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        crate::io::write_json(dir.join(format!("{stem}.json")), self)
    }
}

/// Everything needed to re-run inference on new recordings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineCheckpoint {
    pub model: Checkpoint,
    pub features: FeatureConfig,
    pub mode: ColorMode,
    pub label_set: Vec<String>,
    /// Fold left out of training, if any.
    pub held_out_fold: Option<usize>,
    pub f1_threshold: f64,
}

impl PipelineCheckpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_json(path, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ckpt: Self = crate::io::read_json(path)?;
        if ckpt.model.format_version != Checkpoint::FORMAT_VERSION {
            return Err(Error::Serde(format!(
                "unsupported checkpoint version {}",
                ckpt.model.format_version
            )));
        }
        Ok(ckpt)
    }
}

/// Trains on every item outside `held_out` (all items when `None`).
pub fn train_model(
    features: &FeatureSet,
    mode: ColorMode,
    config: &ExperimentConfig,
    held_out: Option<usize>,
    seed: u64,
) -> Result<(PipelineCheckpoint, f64)> {
    let train_idx: Vec<usize> = (0..features.items.len())
        .filter(|&i| Some(features.items[i].fold) != held_out)
        .collect();
    if train_idx.is_empty() {
        return Err(Error::InvalidParameter("no training recordings".into()));
    }
    let encoder = config.encoder_config(features.n_classes());
    let model = MilModel::conv(encoder.clone())?;
    let train_cfg = TrainConfig {
        seed,
        ..config.train.clone()
    };
    let bags = features.bags(&train_idx, mode)?;
    let outcome = model.train(&bags, &train_cfg)?;
    let final_loss = outcome.epoch_losses.last().copied().unwrap_or(f64::NAN);
    let ckpt = PipelineCheckpoint {
        model: Checkpoint::new(encoder, train_cfg, outcome.params),
        features: features.config.clone(),
        mode,
        label_set: features.label_set.clone(),
        held_out_fold: held_out,
        f1_threshold: config.f1_threshold,
    };
    Ok((ckpt, final_loss))
}

/// Scores the items of `fold` with a trained checkpoint.
pub fn evaluate_fold(ckpt: &PipelineCheckpoint, features: &FeatureSet, fold: usize) -> Result<(MetricSet, usize)> {
    if ckpt.label_set != features.label_set {
        return Err(Error::ShapeMismatch("checkpoint and dataset label sets differ".into()));
    }
    let (_, val_idx) = features.fold_indices(fold);
    if val_idx.is_empty() {
        return Err(Error::EmptyFold(fold));
    }
    let model = ckpt.model.model()?;
    let bags = features.bags(&val_idx, ckpt.mode)?;
    let scores = model.predict(&ckpt.model.params, &bags)?;
    let mut truth = Array2::zeros(scores.dim());
    for (row, &i) in val_idx.iter().enumerate() {
        truth[[row, features.items[i].label]] = 1.0;
    }
    let batch = EvalBatch::new(scores, truth, ckpt.f1_threshold)?;
    Ok((MetricSet::evaluate(&batch)?, val_idx.len()))
}

/// K-fold cross-validation: for each fold, train on the other K-1 folds and
/// evaluate on the held-out one.
pub fn run_experiment(features: &FeatureSet, mode: ColorMode, config: &ExperimentConfig) -> Result<ExperimentReport> {
    let seed = config.train.seed;
    let mut folds = Vec::with_capacity(features.k_folds);
    for fold in 0..features.k_folds {
        let (train_idx, val_idx) = features.fold_indices(fold);
        if val_idx.is_empty() {
            return Err(Error::EmptyFold(fold));
        }
        let (ckpt, final_loss) = train_model(features, mode, config, Some(fold), fold_seed(seed, fold))?;
        let (metrics, n_val) = evaluate_fold(&ckpt, features, fold)?;
        log::info!("{mode} seed {seed} fold {fold}: {metrics:?}");
        folds.push(FoldReport {
            fold,
            n_train: train_idx.len(),
            n_val,
            metrics,
            alpha: ckpt.model.params.alpha(),
            final_loss,
        });
    }
    Ok(ExperimentReport::new(mode, seed, folds))
}

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub colorized: Vec<ExperimentReport>,
    pub grayscale: Vec<ExperimentReport>,
    pub colorized_mean: MetricSet,
    pub grayscale_mean: MetricSet,
    /// Per-fold macro-F1 averaged over seeds, `(colorized, grayscale)`.
    pub fold_pairs: Vec<(f64, f64)>,
    /// Colorized > grayscale over `fold_pairs`.
    pub wilcoxon: WilcoxonResult,
    /// Same test over every (seed, fold) run pair.
    pub wilcoxon_all_runs: WilcoxonResult,
    pub significance_level: f64,
    pub significant: bool,
}

impl AblationReport {
    /// Pairs both modes run-by-run. `runs` holds `(colorized, grayscale)` per seed.
    pub fn from_runs(runs: Vec<(ExperimentReport, ExperimentReport)>) -> Result<Self> {
        let (colorized, grayscale): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
        if colorized.is_empty() {
            return Err(Error::InvalidParameter("no ablation runs".into()));
        }
        let k = colorized[0].folds.len();
        let f1 = |r: &ExperimentReport, fold: usize| r.folds[fold].metrics.macro_f1;
        let n = colorized.len() as f64;
        let fold_pairs: Vec<(f64, f64)> = (0..k)
            .map(|fold| {
                (
                    colorized.iter().map(|r| f1(r, fold)).sum::<f64>() / n,
                    grayscale.iter().map(|r| f1(r, fold)).sum::<f64>() / n,
                )
            })
            .collect();
        let (cx, gx): (Vec<f64>, Vec<f64>) = fold_pairs.iter().copied().unzip();
        let wilcoxon = wilcoxon_signed_rank_greater(&cx, &gx)?;
        let all_c: Vec<f64> = colorized.iter().flat_map(|r| r.folds.iter().map(|f| f.metrics.macro_f1)).collect();
        let all_g: Vec<f64> = grayscale.iter().flat_map(|r| r.folds.iter().map(|f| f.metrics.macro_f1)).collect();
        let wilcoxon_all_runs = wilcoxon_signed_rank_greater(&all_c, &all_g)?;
        let means = |rs: &[ExperimentReport]| mean_metrics(&rs.iter().map(|r| r.mean).collect::<Vec<_>>());
        Ok(Self {
            seeds: colorized.iter().map(|r| r.seed).collect(),
            colorized_mean: means(&colorized),
            grayscale_mean: means(&grayscale),
            colorized,
            grayscale,
            fold_pairs,
            significant: wilcoxon.rejects(SIGNIFICANCE_LEVEL),
            wilcoxon,
            wilcoxon_all_runs,
            significance_level: SIGNIFICANCE_LEVEL,
        })
    }
}

/// Both colour modes on one feature set, trained from the same seeds.
pub fn run_both_modes(features: &FeatureSet, config: &ExperimentConfig) -> Result<(ExperimentReport, ExperimentReport)> {
    Ok((
        run_experiment(features, ColorMode::Colorized, config)?,
        run_experiment(features, ColorMode::Grayscale, config)?,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub seeds: Vec<u64>,
    pub synth: SynthSpec,
    pub experiment: ExperimentConfig,
}

impl AblationConfig {
    /// Shared-motif dataset, 40 recordings per class, 5 folds, 5 seeds.
    pub fn desk_scale() -> Self {
        Self {
            seeds: (0..5).collect(),
            synth: SynthSpec::shared_motif(0, 40),
            experiment: ExperimentConfig::desk_scale(),
        }
    }
}

/// Per seed: synthesize a dataset under `workdir/seed_<s>`, featurize it once,
/// and cross-validate both colour modes on the same windows.
pub fn ablate_synthetic(config: &AblationConfig, workdir: impl AsRef<Path>) -> Result<AblationReport> {
    let workdir = workdir.as_ref();
    let mut runs = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let spec = SynthSpec {
            seed,
            ..config.synth.clone()
        };
        let root = workdir.join(format!("seed_{seed}"));
        let manifest = synthesize_dataset(&spec, &root)?;
        let features = featurize_manifest(&root, &manifest, &config.experiment.features)?;
        let experiment = ExperimentConfig {
            train: TrainConfig {
                seed,
                ..config.experiment.train.clone()
            },
            ..config.experiment.clone()
        };
        runs.push(run_both_modes(&features, &experiment)?);
    }
    AblationReport::from_runs(runs)
}
