//! Dataset manifests, synthetic motif data, feature extraction and
//! cross-validated experiments.

pub mod experiment;
pub mod features;
pub mod manifest;
pub mod synth;

pub use experiment::{
    ablate_synthetic, run_experiment, AblationConfig, AblationReport, ExperimentConfig, ExperimentReport,
    FoldReport, PipelineCheckpoint,
};
pub use features::{featurize_manifest, FeatureConfig, FeatureSet};
pub use manifest::{build_manifest, DatasetManifest, ManifestEntry};
pub use synth::{synthesize_dataset, ClassSpec, PitchPattern, Repetition, SynthSpec};
