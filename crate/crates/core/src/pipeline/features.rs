use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::DatasetManifest;
use crate::audio::{load_wav, resample, AudioClip};
use crate::colorizer::{render, ColorMode};
use crate::error::{Error, Result};
use crate::events::{condition, extract_events, frame_energy, AcousticEvent, EventConfig, EventsManifest};
use crate::model::{RecordingBag, BAG_SLOTS};
use crate::spectrogram::{normalize_log_normalize, MelConfig, MelFrontEnd, MelSpectrogram};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub events: EventConfig,
    pub mel: MelConfig,
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        self.mel.validate()?;
        if self.events.max_events == 0 || self.events.max_events > BAG_SLOTS {
            return Err(Error::InvalidParameter(format!(
                "max_events must be in 1..={BAG_SLOTS}"
            )));
        }
        if self.window_samples() < self.mel.fft_size {
            return Err(Error::InvalidParameter("event window shorter than one FFT frame".into()));
        }
        Ok(())
    }

    pub fn window_samples(&self) -> usize {
        (self.events.window_secs * self.mel.sample_rate as f64).round() as usize
    }

    /// Frames in every instance spectrogram.
    pub fn n_frames(&self) -> usize {
        self.mel.n_frames(self.window_samples())
    }
}

/// Event windows of one recording and their normalised mel spectrograms.
#[derive(Clone, Debug, PartialEq)]
pub struct RecordingFeatures {
    pub events: EventsManifest,
    pub spectrograms: Vec<MelSpectrogram>,
}

/// Mines events from `clip`, then builds one normalised spectrogram per event.
///
/// Windows cut from recordings shorter than the event length are zero-padded
/// at the end. A recording without any energy peak (e.g. digital silence)
/// falls back to its first window, so every bag holds at least one instance.
pub fn featurize_clip(clip: &AudioClip, config: &FeatureConfig, frontend: &MelFrontEnd) -> Result<RecordingFeatures> {
    let clip = if clip.sample_rate == config.mel.sample_rate {
        clip.clone()
    } else {
        resample(clip, config.mel.sample_rate)?
    };
    let conditioned = condition(&clip, &config.events)?;
    let profile = frame_energy(&conditioned, config.events.frame_length, config.events.hop_length)?;
    let mut events = extract_events(&conditioned, &profile, &config.events);
    let window = config.window_samples();
    if events.is_empty() {
        let end = window.min(conditioned.len());
        events.push(AcousticEvent {
            start_sample: 0,
            end_sample: end,
            peak_frame: 0,
            peak_energy: 0.0,
            clamped: end < window,
            samples: conditioned.samples[..end].to_vec(),
        });
    }
    let spectrograms = events
        .iter()
        .map(|e| event_spectrogram(&e.samples, window, frontend))
        .collect::<Result<_>>()?;
    Ok(RecordingFeatures {
        events: EventsManifest::new(&clip, &events),
        spectrograms,
    })
}

/// Normalised mel spectrogram of one event, zero-padded to `window` samples.
pub fn event_spectrogram(samples: &[f64], window: usize, frontend: &MelFrontEnd) -> Result<MelSpectrogram> {
    let raw = if samples.len() < window {
        let mut padded = samples.to_vec();
        padded.resize(window, 0.0);
        frontend.compute(&padded)?
    } else {
        frontend.compute(samples)?
    };
    Ok(normalize_log_normalize(&raw))
}

pub fn featurize_file(path: impl AsRef<Path>, config: &FeatureConfig, frontend: &MelFrontEnd) -> Result<RecordingFeatures> {
    featurize_clip(&load_wav(path)?, config, frontend)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureItem {
    pub path: PathBuf,
    pub label: usize,
    pub fold: usize,
    pub features: RecordingFeatures,
}

/// Mode-independent features of a whole manifest, in manifest order.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub label_set: Vec<String>,
    pub k_folds: usize,
    pub config: FeatureConfig,
    pub items: Vec<FeatureItem>,
}

impl FeatureSet {
    pub fn n_classes(&self) -> usize {
        self.label_set.len()
    }

    pub fn fold_indices(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.items.len()).partition(|&i| self.items[i].fold != fold)
    }

    /// Colour-renders the instances of item `i` into a bag.
    pub fn bag(&self, i: usize, mode: ColorMode) -> Result<RecordingBag> {
        let item = &self.items[i];
        let instances = item
            .features
            .spectrograms
            .iter()
            .map(|s| render(s, mode).map(|c| c.channels))
            .collect::<Result<Vec<_>>>()?;
        let mut labels = vec![0.0; self.n_classes()];
        labels[item.label] = 1.0;
        RecordingBag::new(instances, labels, BAG_SLOTS)
    }

    pub fn bags(&self, indices: &[usize], mode: ColorMode) -> Result<Vec<RecordingBag>> {
        indices.par_iter().map(|&i| self.bag(i, mode)).collect()
    }
}

/// Featurizes every manifest entry; paths are resolved against `root`.
pub fn featurize_manifest(root: impl AsRef<Path>, manifest: &DatasetManifest, config: &FeatureConfig) -> Result<FeatureSet> {
    config.validate()?;
    manifest.validate()?;
    let root = root.as_ref();
    let frontend = MelFrontEnd::new(config.mel.clone())?;
    let items = manifest
        .entries
        .par_iter()
        .map(|e| {
            let features = featurize_file(root.join(&e.path), config, &frontend)?;
            Ok(FeatureItem {
                path: e.path.clone(),
                label: manifest.label_index(&e.label).expect("validated label"),
                fold: e.fold,
                features,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureSet {
        label_set: manifest.label_set.clone(),
        k_folds: manifest.k_folds,
        config: config.clone(),
        items,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> FeatureConfig {
        FeatureConfig {
            events: EventConfig::default(),
            mel: MelConfig {
                total_bins: 24,
                fft_size: 4096,
                hop: 4096,
                ..MelConfig::default()
            },
        }
    }

    #[test]
    fn silence_falls_back_to_one_window() {
        let cfg = small_config();
        let frontend = MelFrontEnd::new(cfg.mel.clone()).unwrap();
        let clip = AudioClip::new(vec![0.0; 32_000 * 8], 32_000, "s").unwrap();
        let f = featurize_clip(&clip, &cfg, &frontend).unwrap();
        assert_eq!(f.spectrograms.len(), 1);
        assert_eq!(f.events.events[0].start_sample, 0);
        assert!(f.spectrograms[0].values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn short_recording_is_padded_to_fixed_frames() {
        let cfg = small_config();
        let frontend = MelFrontEnd::new(cfg.mel.clone()).unwrap();
        let samples: Vec<f64> = (0..32_000 * 2)
            .map(|i| 0.3 * (i as f64 * 0.2).sin() * ((i / 3000) % 2) as f64)
            .collect();
        let clip = AudioClip::new(samples, 32_000, "short").unwrap();
        let f = featurize_clip(&clip, &cfg, &frontend).unwrap();
        assert!(!f.spectrograms.is_empty());
        for s in &f.spectrograms {
            assert_eq!(s.values.dim(), (24, cfg.n_frames()));
        }
    }

    #[test]
    fn other_rates_are_resampled() {
        let cfg = small_config();
        let frontend = MelFrontEnd::new(cfg.mel.clone()).unwrap();
        let samples: Vec<f64> = (0..44_100 * 6).map(|i| 0.2 * (i as f64 * 0.3).sin()).collect();
        let clip = AudioClip::new(samples, 44_100, "x").unwrap();
        let f = featurize_clip(&clip, &cfg, &frontend).unwrap();
        assert_eq!(f.events.sample_rate, 32_000);
    }

    #[test]
    fn invalid_event_count_rejected() {
        let mut cfg = small_config();
        cfg.events.max_events = 6;
        assert!(cfg.validate().is_err());
    }
}
