//! Synthetic bird-song datasets built from pitch-pattern and repetition motifs.
//!
//! Motif pitch contours are laid out in mel units around a class centre, so two
//! classes sharing a motif at different bands produce the same shape on a mel
//! spectrogram, just shifted vertically.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{build_manifest, DatasetManifest};
use crate::audio::{write_wav_i16, AudioClip, CANONICAL_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::spectrogram::{hz_to_mel, mel_to_hz};

/// Repetition rate separating series/phrases from trills/warbles.
pub const FAST_NOTE_RATE: f64 = 8.0;

pub const MANIFEST_FILE: &str = "manifest.json";

const HUM_HZ: f64 = 60.0;
/// Pitch offsets (in units of the motif span) for successive distinct notes.
const DISTINCT_NOTE_OFFSETS: [f64; 7] = [0.0, 0.8, -0.6, 0.4, -0.9, 0.6, -0.3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PitchPattern {
    Monotone,
    Upslurred,
    Downslurred,
    Overslurred,
    Underslurred,
}

impl PitchPattern {
    pub const ALL: [PitchPattern; 5] = [
        PitchPattern::Monotone,
        PitchPattern::Upslurred,
        PitchPattern::Downslurred,
        PitchPattern::Overslurred,
        PitchPattern::Underslurred,
    ];

    /// Pitch offset in `[-1, 1]` at note position `u` in `[0, 1]`.
    pub fn contour(self, u: f64) -> f64 {
        match self {
            PitchPattern::Monotone => 0.0,
            PitchPattern::Upslurred => 2.0 * u - 1.0,
            PitchPattern::Downslurred => 1.0 - 2.0 * u,
            PitchPattern::Overslurred => 2.0 * (PI * u).sin() - 1.0,
            PitchPattern::Underslurred => 1.0 - 2.0 * (PI * u).sin(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Repetition {
    /// Distinct notes, slow.
    Phrase,
    /// One repeated note, slow.
    Series,
    /// Distinct notes, fast.
    Warble,
    /// One repeated note, fast.
    Trill,
}

impl Repetition {
    pub const ALL: [Repetition; 4] = [
        Repetition::Phrase,
        Repetition::Series,
        Repetition::Warble,
        Repetition::Trill,
    ];

    pub fn notes_per_sec(self) -> f64 {
        match self {
            Repetition::Phrase => 5.0,
            Repetition::Series => 4.0,
            Repetition::Warble => 12.0,
            Repetition::Trill => 16.0,
        }
    }

    pub fn notes_per_bout(self) -> usize {
        match self {
            Repetition::Phrase => 5,
            Repetition::Series => 6,
            Repetition::Warble => 14,
            Repetition::Trill => 18,
        }
    }

    pub fn distinct_notes(self) -> bool {
        matches!(self, Repetition::Phrase | Repetition::Warble)
    }

    pub fn is_fast(self) -> bool {
        self.notes_per_sec() > FAST_NOTE_RATE
    }

    pub fn bout_secs(self) -> f64 {
        self.notes_per_bout() as f64 / self.notes_per_sec()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    pub pitch: PitchPattern,
    pub repetition: Repetition,
    pub band_hz: f64,
    /// Background only, no song.
    #[serde(default)]
    pub silent: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    #[serde(default = "default_sample_rate")]
    pub sample_rate: u32,
    pub recordings_per_class: usize,
    /// Standard deviation of the white background noise.
    pub noise_level: f64,
    /// Amplitude of a 60 Hz mains hum.
    #[serde(default)]
    pub hum_level: f64,
    #[serde(default = "default_min_duration")]
    pub min_duration_secs: f64,
    #[serde(default = "default_max_duration")]
    pub max_duration_secs: f64,
    #[serde(default = "default_min_bouts")]
    pub min_bouts: usize,
    #[serde(default = "default_max_bouts")]
    pub max_bouts: usize,
    /// Half-width of a pitch contour, in mel.
    #[serde(default = "default_span")]
    pub motif_span_mel: f64,
    #[serde(default = "default_f_min")]
    pub f_min: f64,
    #[serde(default = "default_f_max")]
    pub f_max: f64,
    #[serde(default = "default_folds")]
    pub k_folds: usize,
    pub classes: Vec<ClassSpec>,
}

fn default_sample_rate() -> u32 {
    CANONICAL_SAMPLE_RATE
}
fn default_min_duration() -> f64 {
    30.0
}
fn default_max_duration() -> f64 {
    60.0
}
fn default_min_bouts() -> usize {
    3
}
fn default_max_bouts() -> usize {
    6
}
fn default_span() -> f64 {
    150.0
}
fn default_f_min() -> f64 {
    300.0
}
fn default_f_max() -> f64 {
    16_000.0
}
fn default_folds() -> usize {
    5
}

impl SynthSpec {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    /// Four classes in two pairs; each pair shares one motif at a low and a
    /// high band.
    pub fn shared_motif(seed: u64, recordings_per_class: usize) -> Self {
        let class = |name: &str, pitch, repetition, band_hz| ClassSpec {
            name: name.into(),
            pitch,
            repetition,
            band_hz,
            silent: false,
        };
        Self {
            seed,
            sample_rate: CANONICAL_SAMPLE_RATE,
            recordings_per_class,
            noise_level: 0.02,
            hum_level: 0.05,
            min_duration_secs: default_min_duration(),
            max_duration_secs: default_max_duration(),
            min_bouts: default_min_bouts(),
            max_bouts: default_max_bouts(),
            motif_span_mel: default_span(),
            f_min: default_f_min(),
            f_max: default_f_max(),
            k_folds: default_folds(),
            classes: vec![
                class("series_low", PitchPattern::Upslurred, Repetition::Series, 1000.0),
                class("series_high", PitchPattern::Upslurred, Repetition::Series, 6000.0),
                class("warble_low", PitchPattern::Overslurred, Repetition::Warble, 1500.0),
                class("warble_high", PitchPattern::Overslurred, Repetition::Warble, 8000.0),
            ],
        }
    }

    /// Largest pitch excursion from the band centre, in mel.
    pub fn max_excursion_mel(&self, class: &ClassSpec) -> f64 {
        let jitter = 0.1 * self.motif_span_mel;
        let offsets = if class.repetition.distinct_notes() {
            DISTINCT_NOTE_OFFSETS.iter().fold(0.0f64, |m, o| m.max(o.abs()))
        } else {
            0.0
        };
        self.motif_span_mel * (1.0 + offsets) + jitter
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.classes.is_empty() {
            return bad("no classes".into());
        }
        if self.recordings_per_class == 0 {
            return bad("recordings_per_class must be >= 1".into());
        }
        if self.sample_rate == 0 {
            return bad("sample_rate must be > 0".into());
        }
        if !(self.noise_level >= 0.0 && self.hum_level >= 0.0) {
            return bad("noise and hum levels must be >= 0".into());
        }
        if !(self.min_duration_secs > 0.0 && self.min_duration_secs <= self.max_duration_secs) {
            return bad("need 0 < min_duration_secs <= max_duration_secs".into());
        }
        if self.min_bouts == 0 || self.min_bouts > self.max_bouts {
            return bad("need 1 <= min_bouts <= max_bouts".into());
        }
        if !(self.motif_span_mel >= 0.0) {
            return bad("motif_span_mel must be >= 0".into());
        }
        if self.k_folds < 2 {
            return bad("k_folds must be >= 2".into());
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        if !(self.f_min >= 0.0 && self.f_min < self.f_max && self.f_max <= nyquist) {
            return bad(format!("need 0 <= f_min < f_max <= {nyquist}"));
        }
        let mut names = HashSet::new();
        for c in &self.classes {
            if c.name.is_empty()
                || !c
                    .name
                    .chars()
                    .all(|ch| ch.is_ascii_alphanumeric() || ch == '_' || ch == '-')
            {
                return bad(format!("class name {:?} must be [A-Za-z0-9_-]+", c.name));
            }
            if !names.insert(&c.name) {
                return bad(format!("duplicate class {}", c.name));
            }
            let centre = hz_to_mel(c.band_hz);
            let reach = self.max_excursion_mel(c);
            let lo = mel_to_hz(centre - reach);
            let hi = mel_to_hz(centre + reach);
            if !(c.band_hz.is_finite() && lo >= self.f_min && hi <= self.f_max) {
                return bad(format!(
                    "class {} spans {lo:.0}-{hi:.0} Hz, outside [{}, {}]",
                    c.name, self.f_min, self.f_max
                ));
            }
            let longest_bout = c.repetition.bout_secs();
            if !c.silent && longest_bout * self.max_bouts as f64 > self.min_duration_secs {
                return bad(format!("class {}: bouts do not fit the shortest recording", c.name));
            }
        }
        Ok(())
    }
}

fn render_note(
    out: &mut [f64],
    sample_rate: f64,
    start: usize,
    len: usize,
    centre_mel: f64,
    span_mel: f64,
    pitch: PitchPattern,
    amplitude: f64,
) {
    let mut phase = 0.0;
    for i in 0..len {
        let Some(slot) = out.get_mut(start + i) else {
            break;
        };
        let u = i as f64 / len as f64;
        let f = mel_to_hz(centre_mel + span_mel * pitch.contour(u));
        phase += 2.0 * PI * f / sample_rate;
        let env = (PI * u).sin().powi(2);
        *slot += amplitude * env * phase.sin();
    }
}

/// One recording of `class`; deterministic in `(spec.seed, class_index, index)`.
pub fn synthesize_recording(spec: &SynthSpec, class_index: usize, index: usize) -> Result<AudioClip> {
    let class = spec
        .classes
        .get(class_index)
        .ok_or_else(|| Error::InvalidParameter(format!("no class {class_index}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(((class_index as u64) << 32) | index as u64);

    let sr = spec.sample_rate as f64;
    let duration = rng.random_range(spec.min_duration_secs..=spec.max_duration_secs);
    let n = (duration * sr).round() as usize;
    let mut samples = vec![0.0; n];
    if spec.noise_level > 0.0 {
        for s in samples.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *s = spec.noise_level * z;
        }
    }
    if spec.hum_level > 0.0 {
        let phase0 = rng.random_range(0.0..2.0 * PI);
        for (i, s) in samples.iter_mut().enumerate() {
            *s += spec.hum_level * (2.0 * PI * HUM_HZ * i as f64 / sr + phase0).sin();
        }
    }

    if !class.silent {
        let rep = class.repetition;
        let n_bouts = rng.random_range(spec.min_bouts..=spec.max_bouts);
        let segment = n / n_bouts;
        let period = (sr / rep.notes_per_sec()).round() as usize;
        let note_len = (0.7 * period as f64).round() as usize;
        let bout_len = period * rep.notes_per_bout();
        let centre = hz_to_mel(class.band_hz);
        let span = spec.motif_span_mel;
        for b in 0..n_bouts {
            let slack = segment.saturating_sub(bout_len);
            let start = b * segment + rng.random_range(0..=slack);
            let amplitude = rng.random_range(0.25..0.5);
            let jitter = rng.random_range(-0.1..=0.1) * span;
            for k in 0..rep.notes_per_bout() {
                let offset = if rep.distinct_notes() {
                    DISTINCT_NOTE_OFFSETS[k % DISTINCT_NOTE_OFFSETS.len()] * span
                } else {
                    0.0
                };
                render_note(
                    &mut samples,
                    sr,
                    start + k * period,
                    note_len,
                    centre + jitter + offset,
                    span,
                    class.pitch,
                    amplitude,
                );
            }
        }
    }
    samples.iter_mut().for_each(|s| *s = s.clamp(-1.0, 1.0));
    AudioClip::new(samples, spec.sample_rate, format!("{}_{index:03}", class.name))
}

/// Writes `out/<class>/<class>_NNN.wav` for every recording, then
/// `out/manifest.json` with a stratified fold assignment.
pub fn synthesize_dataset(spec: &SynthSpec, out: impl AsRef<Path>) -> Result<DatasetManifest> {
    spec.validate()?;
    let out = out.as_ref();
    for class in &spec.classes {
        crate::io::create_dir_all(out.join(&class.name))?;
    }
    let jobs: Vec<(usize, usize)> = (0..spec.n_classes())
        .flat_map(|c| (0..spec.recordings_per_class).map(move |i| (c, i)))
        .collect();
    jobs.par_iter().try_for_each(|&(c, i)| {
        let clip = synthesize_recording(spec, c, i)?;
        let name = &spec.classes[c].name;
        write_wav_i16(out.join(name).join(format!("{}.wav", clip.source_id)), &clip)
    })?;
    let manifest = build_manifest(out, spec.k_folds, spec.seed)?;
    manifest.save(out.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::load_wav;
    use crate::spectrogram::{mel_spectrogram, MelConfig};

    fn one_class(pitch: PitchPattern, repetition: Repetition, band_hz: f64) -> SynthSpec {
        let mut spec = SynthSpec::shared_motif(5, 2);
        spec.classes = vec![ClassSpec {
            name: "c".into(),
            pitch,
            repetition,
            band_hz,
            silent: false,
        }];
        spec
    }

    #[test]
    fn repetition_rates_respect_fast_boundary() {
        for rep in Repetition::ALL {
            let fast = matches!(rep, Repetition::Warble | Repetition::Trill);
            assert_eq!(rep.is_fast(), fast, "{rep:?}");
        }
    }

    #[test]
    fn contours_span_unit_range() {
        for p in PitchPattern::ALL {
            for k in 0..=20 {
                let v = p.contour(k as f64 / 20.0);
                assert!((-1.0..=1.0).contains(&v));
            }
        }
        assert_eq!(PitchPattern::Upslurred.contour(0.0), -1.0);
        assert_eq!(PitchPattern::Downslurred.contour(0.0), 1.0);
        assert!((PitchPattern::Overslurred.contour(0.5) - 1.0).abs() < 1e-12);
        assert!((PitchPattern::Underslurred.contour(0.5) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn preset_is_valid_and_pairs_share_motifs() {
        let spec = SynthSpec::shared_motif(0, 40);
        spec.validate().unwrap();
        assert_eq!(spec.n_classes(), 4);
        for pair in spec.classes.chunks(2) {
            assert_eq!(pair[0].pitch, pair[1].pitch);
            assert_eq!(pair[0].repetition, pair[1].repetition);
            assert!(pair[1].band_hz > pair[0].band_hz);
        }
    }

    #[test]
    fn band_outside_limits_is_rejected() {
        let spec = one_class(PitchPattern::Upslurred, Repetition::Series, 310.0);
        assert!(spec.validate().is_err());
        let spec = one_class(PitchPattern::Upslurred, Repetition::Series, 15_900.0);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn recordings_are_deterministic_and_distinct() {
        let spec = SynthSpec::shared_motif(3, 2);
        let a = synthesize_recording(&spec, 1, 0).unwrap();
        let b = synthesize_recording(&spec, 1, 0).unwrap();
        assert_eq!(a, b);
        let c = synthesize_recording(&spec, 1, 1).unwrap();
        assert_ne!(a.samples, c.samples);
        assert!((30.0..=60.0).contains(&a.duration_secs()));
    }

    #[test]
    fn silent_class_without_noise_is_zero() {
        let mut spec = one_class(PitchPattern::Monotone, Repetition::Series, 2000.0);
        spec.classes[0].silent = true;
        spec.noise_level = 0.0;
        spec.hum_level = 0.0;
        let clip = synthesize_recording(&spec, 0, 0).unwrap();
        assert!(clip.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn monotone_series_concentrates_at_band() {
        let mut spec = one_class(PitchPattern::Monotone, Repetition::Series, 2000.0);
        spec.noise_level = 0.0;
        spec.hum_level = 0.0;
        let clip = synthesize_recording(&spec, 0, 0).unwrap();
        let mel = mel_spectrogram(&clip.samples, clip.sample_rate, &MelConfig::default()).unwrap();
        let row_energy: Vec<f64> = mel.values.rows().into_iter().map(|r| r.sum()).collect();
        let peak = (0..row_energy.len())
            .max_by(|&a, &b| row_energy[a].total_cmp(&row_energy[b]))
            .unwrap();
        let centres = &mel.bin_center_freqs;
        let width = (centres[peak + 1] - centres[peak - 1]) / 2.0;
        assert!((centres[peak] - 2000.0).abs() <= width, "peak at {}", centres[peak]);
        let total: f64 = row_energy.iter().sum();
        let near: f64 = row_energy[peak - 1..=peak + 1].iter().sum();
        assert!(near / total > 0.9, "{}", near / total);
        // repeated bursts: count rising edges in the band row
        let row = mel.values.row(peak);
        let max = row.iter().cloned().fold(0.0, f64::max);
        let on: Vec<bool> = row.iter().map(|&v| v > 0.25 * max).collect();
        let bursts = on.windows(2).filter(|w| !w[0] && w[1]).count();
        assert!(bursts >= 6 * spec.min_bouts, "{bursts} bursts");
    }

    #[test]
    fn dataset_round_trips_through_wav_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = SynthSpec::shared_motif(1, 3);
        spec.min_duration_secs = 10.0;
        spec.max_duration_secs = 12.0;
        spec.k_folds = 3;
        let manifest = synthesize_dataset(&spec, dir.path()).unwrap();
        assert_eq!(manifest.entries.len(), 12);
        assert_eq!(DatasetManifest::load(dir.path().join(MANIFEST_FILE)).unwrap(), manifest);
        let e = &manifest.entries[0];
        let clip = load_wav(dir.path().join(&e.path)).unwrap();
        assert_eq!(clip.sample_rate, 32_000);
        assert!(clip.rms() > 0.0);
    }

    #[test]
    fn unwritable_output_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("file");
        std::fs::write(&file, b"x").unwrap();
        let spec = SynthSpec::shared_motif(1, 1);
        assert!(synthesize_dataset(&spec, file.join("sub")).is_err());
    }
}
