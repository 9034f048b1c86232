//! Acoustic event mining.
//!
//! A weakly labeled recording is conditioned (spectral-gating denoise, then
//! high-pass), reduced to a frame energy profile, and up to five fixed-length
//! windows are centred on the strongest energy peaks that rise above the
//! profile mean. A lower peak is only accepted when its window shares at most
//! half its length with every window accepted before it.

use std::cmp::Ordering;

use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::audio::{highpass, AudioClip};
use crate::dsp::{reflect_pad, Stft};
use crate::error::{Error, Result};

pub const DEFAULT_HIGHPASS_HZ: f64 = 300.0;

/// Parameters of the event miner. Frame and hop are in samples at the clip's rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EventConfig {
    pub frame_length: usize,
    pub hop_length: usize,
    pub max_events: usize,
    pub window_secs: f64,
    pub max_overlap: f64,
    pub highpass_hz: f64,
    pub denoise: bool,
}

impl Default for EventConfig {
    fn default() -> Self {
        Self {
            frame_length: 2048,
            hop_length: 512,
            max_events: 5,
            window_secs: 5.0,
            max_overlap: 0.5,
            highpass_hz: DEFAULT_HIGHPASS_HZ,
            denoise: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyProfile {
    pub frame_energies: Vec<f64>,
    pub frame_length: usize,
    pub hop_length: usize,
    pub mean_energy: f64,
}

impl EnergyProfile {
    /// Sample index at the centre of frame `k`.
    pub fn frame_center(&self, k: usize) -> usize {
        k * self.hop_length + self.frame_length / 2
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcousticEvent {
    pub start_sample: usize,
    pub end_sample: usize,
    pub peak_frame: usize,
    pub peak_energy: f64,
    /// Set when the recording is shorter than one window, so the event
    /// covers the whole recording instead of the full window length.
    pub clamped: bool,
    #[serde(skip)]
    pub samples: Vec<f64>,
}

impl AcousticEvent {
    pub fn len(&self) -> usize {
        self.end_sample - self.start_sample
    }

    pub fn is_empty(&self) -> bool {
        self.end_sample == self.start_sample
    }

    pub fn overlap(&self, other: &AcousticEvent) -> usize {
        span_overlap(
            (self.start_sample, self.end_sample),
            (other.start_sample, other.end_sample),
        )
    }
}

fn span_overlap(a: (usize, usize), b: (usize, usize)) -> usize {
    a.1.min(b.1).saturating_sub(a.0.max(b.0))
}

/// Per-recording events document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventsManifest {
    pub source_id: String,
    pub sample_rate: u32,
    pub events: Vec<EventRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub start_sample: usize,
    pub end_sample: usize,
    pub peak_energy: f64,
}

impl EventsManifest {
    pub fn new(clip: &AudioClip, events: &[AcousticEvent]) -> Self {
        Self {
            source_id: clip.source_id.clone(),
            sample_rate: clip.sample_rate,
            events: events
                .iter()
                .map(|e| EventRecord {
                    start_sample: e.start_sample,
                    end_sample: e.end_sample,
                    peak_energy: e.peak_energy,
                })
                .collect(),
        }
    }

    /// Re-cuts the listed windows out of `clip`.
    pub fn cut(&self, clip: &AudioClip) -> Result<Vec<AcousticEvent>> {
        self.events
            .iter()
            .map(|r| {
                if r.start_sample >= r.end_sample || r.end_sample > clip.len() {
                    return Err(Error::InvalidParameter(format!(
                        "event [{}, {}) outside clip of {} samples",
                        r.start_sample,
                        r.end_sample,
                        clip.len()
                    )));
                }
                Ok(AcousticEvent {
                    start_sample: r.start_sample,
                    end_sample: r.end_sample,
                    peak_frame: 0,
                    peak_energy: r.peak_energy,
                    clamped: false,
                    samples: clip.samples[r.start_sample..r.end_sample].to_vec(),
                })
            })
            .collect()
    }
}

// Spectral gating parameters.
const GATE_FFT: usize = 2048;
const GATE_HOP: usize = 512;
const GATE_QUIET_FRACTION: f64 = 0.10;
const GATE_N_STD: f64 = 1.5;
const GATE_SMOOTH_BINS: usize = 16;

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Stationary-noise reduction by spectral gating.
///
/// The noise floor of each frequency bin is estimated from the quietest 10%
/// of STFT frames (mean + 1.5 std of the magnitude), then median-smoothed
/// across +-16 neighbouring bins so that the floor only follows broadband
/// noise; narrowband stationary tones do not raise it. Every STFT
/// coefficient is soft-thresholded, `|Y| = max(|X| - floor, 0)` with the
/// phase kept, and the signal is rebuilt by weighted overlap-add.
pub fn denoise(clip: &AudioClip) -> Result<AudioClip> {
    let n = clip.len();
    if n < GATE_FFT {
        return Err(Error::TooShort {
            needed: GATE_FFT,
            got: n,
        });
    }
    let pad = GATE_FFT / 2;
    let padded = reflect_pad(&clip.samples, pad);
    let stft = Stft::new(GATE_FFT, GATE_HOP);
    let mut frames = stft.analyze(&padded);
    let n_freqs = stft.n_freqs();

    let energies: Vec<f64> = frames
        .iter()
        .map(|f| f.iter().map(Complex::norm_sqr).sum())
        .collect();
    let mut order: Vec<usize> = (0..frames.len()).collect();
    order.sort_by(|&a, &b| {
        energies[a]
            .partial_cmp(&energies[b])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let n_quiet = ((frames.len() as f64 * GATE_QUIET_FRACTION).ceil() as usize).max(1);
    let quiet = &order[..n_quiet];

    let floor: Vec<f64> = (0..n_freqs)
        .map(|k| {
            let mags: Vec<f64> = quiet.iter().map(|&t| frames[t][k].norm()).collect();
            let mean = mags.iter().sum::<f64>() / mags.len() as f64;
            let var = mags.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / mags.len() as f64;
            mean + GATE_N_STD * var.sqrt()
        })
        .collect();
    let smoothed: Vec<f64> = (0..n_freqs)
        .map(|k| {
            let lo = k.saturating_sub(GATE_SMOOTH_BINS);
            let hi = (k + GATE_SMOOTH_BINS + 1).min(n_freqs);
            median(&mut floor[lo..hi].to_vec())
        })
        .collect();

    for frame in frames.iter_mut() {
        for (c, &thr) in frame.iter_mut().zip(&smoothed) {
            let mag = c.norm();
            let gain = if mag > thr { 1.0 - thr / mag } else { 0.0 };
            *c *= gain;
        }
    }
    let rebuilt = stft.synthesize(&frames, padded.len());
    Ok(clip.with_samples(rebuilt[pad..pad + n].to_vec()))
}

/// Sum of squared samples over each frame.
pub fn frame_energy(clip: &AudioClip, frame_length: usize, hop_length: usize) -> Result<EnergyProfile> {
    if frame_length == 0 || hop_length == 0 {
        return Err(Error::InvalidParameter(
            "frame_length and hop_length must be at least 1".into(),
        ));
    }
    if clip.len() < frame_length {
        return Err(Error::TooShort {
            needed: frame_length,
            got: clip.len(),
        });
    }
    let n_frames = 1 + (clip.len() - frame_length) / hop_length;
    let frame_energies: Vec<f64> = (0..n_frames)
        .map(|k| {
            let start = k * hop_length;
            clip.samples[start..start + frame_length]
                .iter()
                .map(|s| s * s)
                .sum()
        })
        .collect();
    let mean_energy = frame_energies.iter().sum::<f64>() / n_frames as f64;
    Ok(EnergyProfile {
        frame_energies,
        frame_length,
        hop_length,
        mean_energy,
    })
}

/// Local maxima above the profile mean, strongest first.
///
/// A peak is a single frame or a flat run of equal frames whose left and
/// right neighbours are both strictly lower; a run reports its midpoint
/// (lower middle for even lengths). The first and last frames are never
/// peaks. Ties in energy keep the earlier frame first.
pub fn find_descending_peaks(profile: &EnergyProfile) -> Vec<(usize, f64)> {
    let e = &profile.frame_energies;
    let mut peaks = Vec::new();
    if e.len() < 3 {
        return peaks;
    }
    let mut i = 1;
    while i < e.len() - 1 {
        if e[i - 1] < e[i] {
            let mut ahead = i + 1;
            while ahead < e.len() - 1 && e[ahead] == e[i] {
                ahead += 1;
            }
            if e[ahead] < e[i] {
                let mid = (i + ahead - 1) / 2;
                if e[mid] > profile.mean_energy {
                    peaks.push((mid, e[mid]));
                }
                i = ahead;
                continue;
            }
        }
        i += 1;
    }
    peaks.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    peaks
}

/// Window of `window` samples centred on `center`, shifted inward at the
/// recording edges. Returns `(start, end, clamped)`.
fn place_window(center: usize, window: usize, len: usize) -> (usize, usize, bool) {
    if window >= len {
        return (0, len, window > len);
    }
    let start = center.saturating_sub(window / 2).min(len - window);
    (start, start + window, false)
}

/// Greedy event selection over peaks in descending-energy order.
pub fn extract_events(
    clip: &AudioClip,
    profile: &EnergyProfile,
    config: &EventConfig,
) -> Vec<AcousticEvent> {
    let window = (config.window_secs * clip.sample_rate as f64).round() as usize;
    let max_shared = config.max_overlap * window as f64;
    let mut accepted: Vec<AcousticEvent> = Vec::new();
    for (frame, energy) in find_descending_peaks(profile) {
        if accepted.len() >= config.max_events {
            break;
        }
        let (start, end, clamped) = place_window(profile.frame_center(frame), window, clip.len());
        let ok = accepted
            .iter()
            .all(|e| span_overlap((start, end), (e.start_sample, e.end_sample)) as f64 <= max_shared);
        if ok {
            let whole_clip = clamped || (start == 0 && end == clip.len());
            accepted.push(AcousticEvent {
                start_sample: start,
                end_sample: end,
                peak_frame: frame,
                peak_energy: energy,
                clamped,
                samples: clip.samples[start..end].to_vec(),
            });
            // every further window would be this same span
            if whole_clip {
                break;
            }
        }
    }
    accepted
}

/// Denoise and high-pass a clip as configured.
pub fn condition(clip: &AudioClip, config: &EventConfig) -> Result<AudioClip> {
    let denoised = if config.denoise {
        denoise(clip)?
    } else {
        clip.clone()
    };
    highpass(&denoised, config.highpass_hz)
}

/// Full event mining path. Event samples are cut from the conditioned clip.
pub fn detect_events(clip: &AudioClip, config: &EventConfig) -> Result<Vec<AcousticEvent>> {
    let conditioned = condition(clip, config)?;
    let profile = frame_energy(&conditioned, config.frame_length, config.hop_length)?;
    Ok(extract_events(&conditioned, &profile, config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};
    use std::f64::consts::PI;

    const SR: u32 = 32_000;

    fn profile(e: &[f64]) -> EnergyProfile {
        EnergyProfile {
            frame_energies: e.to_vec(),
            frame_length: 1,
            hop_length: 1,
            mean_energy: e.iter().sum::<f64>() / e.len() as f64,
        }
    }

    /// Brute-force local maxima: every index strictly above both neighbours.
    fn brute_peaks(e: &[f64]) -> Vec<(usize, f64)> {
        let mean = e.iter().sum::<f64>() / e.len() as f64;
        let mut out: Vec<(usize, f64)> = (1..e.len().saturating_sub(1))
            .filter(|&i| e[i] > e[i - 1] && e[i] > e[i + 1] && e[i] > mean)
            .map(|i| (i, e[i]))
            .collect();
        out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        out
    }

    fn tone_burst(total_secs: f64, bursts: &[(f64, f64)], dur: f64) -> AudioClip {
        let n = (total_secs * SR as f64) as usize;
        let mut s = vec![0.0; n];
        for &(center, amp) in bursts {
            let a = ((center - dur / 2.0) * SR as f64) as usize;
            let b = ((center + dur / 2.0) * SR as f64) as usize;
            // Hann envelope: frame energy is unimodal around the centre
            for (i, v) in s.iter_mut().enumerate().take(b).skip(a) {
                let env = 0.5 - 0.5 * (2.0 * PI * (i - a) as f64 / (b - a) as f64).cos();
                *v += amp * env * (2.0 * PI * 2000.0 * i as f64 / SR as f64).sin();
            }
        }
        AudioClip::new(s, SR, "burst").unwrap()
    }

    #[test]
    fn frame_energy_examples() {
        let zeros = AudioClip::new(vec![0.0; 100], SR, "z").unwrap();
        let p = frame_energy(&zeros, 10, 5).unwrap();
        assert!(p.frame_energies.iter().all(|&e| e == 0.0));
        assert_eq!(p.mean_energy, 0.0);

        let ones = AudioClip::new(vec![1.0; 100], SR, "o").unwrap();
        let p = frame_energy(&ones, 10, 3).unwrap();
        assert!(p.frame_energies.iter().all(|&e| e == 10.0));

        let pair = AudioClip::new(vec![0.3, 0.4], SR, "p").unwrap();
        let p = frame_energy(&pair, 2, 1).unwrap();
        assert!((p.frame_energies[0] - 0.25).abs() < 1e-15);

        assert!(matches!(frame_energy(&pair, 3, 1), Err(Error::TooShort { .. })));
        assert!(frame_energy(&pair, 0, 1).is_err());
    }

    #[test]
    fn peak_examples() {
        let e = [1.0, 5.0, 1.0, 3.0, 1.0];
        assert_eq!(find_descending_peaks(&profile(&e)), brute_peaks(&e));
        assert_eq!(find_descending_peaks(&profile(&e)), vec![(1, 5.0), (3, 3.0)]);
        assert!(find_descending_peaks(&profile(&[1.0, 2.0, 3.0, 4.0])).is_empty());
        assert!(find_descending_peaks(&profile(&[4.0, 4.0, 4.0])).is_empty());
    }

    #[test]
    fn plateau_reports_midpoint() {
        let e = [0.0, 1.0, 5.0, 5.0, 5.0, 1.0, 0.0];
        assert_eq!(find_descending_peaks(&profile(&e)), vec![(3, 5.0)]);
        // plateau running into the last frame is not a peak
        let e = [0.0, 5.0, 5.0];
        assert!(find_descending_peaks(&profile(&e)).is_empty());
    }

    #[test]
    fn peaks_match_brute_force_on_random_profiles() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let n = rng.random_range(1..40);
            // continuous values: plateaus have probability zero
            let e: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            assert_eq!(find_descending_peaks(&profile(&e)), brute_peaks(&e));
        }
    }

    #[test]
    fn single_burst_is_centred() {
        let clip = tone_burst(20.0, &[(10.0, 0.5)], 0.5);
        let cfg = EventConfig::default();
        let p = frame_energy(&clip, cfg.frame_length, cfg.hop_length).unwrap();
        let events = extract_events(&clip, &p, &cfg);
        assert_eq!(events.len(), 1);
        let ev = &events[0];
        assert_eq!(ev.len(), 5 * SR as usize);
        let start = ev.start_sample as f64 / SR as f64;
        let end = ev.end_sample as f64 / SR as f64;
        let hop = cfg.hop_length as f64 / SR as f64;
        assert!((start - 7.5).abs() <= hop, "start {start}");
        assert!((end - 12.5).abs() <= hop, "end {end}");
        assert!(!ev.clamped);
    }

    #[test]
    fn two_bursts_do_not_overlap() {
        let clip = tone_burst(30.0, &[(8.0, 0.5), (18.0, 0.5)], 0.5);
        let cfg = EventConfig::default();
        let p = frame_energy(&clip, cfg.frame_length, cfg.hop_length).unwrap();
        let events = extract_events(&clip, &p, &cfg);
        assert_eq!(events.len(), 2);
        assert_eq!(events[0].overlap(&events[1]), 0);
    }

    #[test]
    fn close_bursts_respect_overlap_rule() {
        // bursts 2 s apart: a second centred window would share 3 s > 2.5 s
        let clip = tone_burst(30.0, &[(10.0, 0.6), (12.0, 0.4)], 0.3);
        let cfg = EventConfig::default();
        let p = frame_energy(&clip, cfg.frame_length, cfg.hop_length).unwrap();
        let events = extract_events(&clip, &p, &cfg);
        assert_eq!(events.len(), 1);
        // 3 s apart shares exactly 2 s, which is allowed
        let clip = tone_burst(30.0, &[(10.0, 0.6), (13.0, 0.4)], 0.3);
        let p = frame_energy(&clip, cfg.frame_length, cfg.hop_length).unwrap();
        assert_eq!(extract_events(&clip, &p, &cfg).len(), 2);
    }

    #[test]
    fn silence_has_no_events() {
        let clip = AudioClip::new(vec![0.0; 10 * SR as usize], SR, "s").unwrap();
        let events = detect_events(&clip, &EventConfig::default()).unwrap();
        assert!(events.is_empty());
    }

    #[test]
    fn boundary_windows_shift_inward_or_clamp() {
        assert_eq!(place_window(10, 100, 1000), (0, 100, false));
        assert_eq!(place_window(990, 100, 1000), (900, 1000, false));
        assert_eq!(place_window(500, 100, 1000), (450, 550, false));
        assert_eq!(place_window(5, 100, 60), (0, 60, true));
    }

    #[test]
    fn short_recording_gives_clamped_event() {
        let clip = tone_burst(3.0, &[(1.5, 0.5)], 0.3);
        let cfg = EventConfig::default();
        let p = frame_energy(&clip, cfg.frame_length, cfg.hop_length).unwrap();
        let events = extract_events(&clip, &p, &cfg);
        assert_eq!(events.len(), 1);
        assert!(events[0].clamped);
        assert_eq!(events[0].len(), clip.len());
    }

    #[test]
    fn very_short_recording_is_not_repeated() {
        // two peaks, both windows would be the whole 2 s clip
        let clip = tone_burst(2.0, &[(0.5, 0.3), (1.5, 0.3)], 0.3);
        let cfg = EventConfig::default();
        let p = frame_energy(&clip, cfg.frame_length, cfg.hop_length).unwrap();
        assert!(find_descending_peaks(&p).len() >= 2);
        assert_eq!(extract_events(&clip, &p, &cfg).len(), 1);
    }

    #[test]
    fn denoise_white_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let normal = Normal::new(0.0f64, 0.1).unwrap();
        let s: Vec<f64> = (0..2 * SR as usize)
            .map(|_| normal.sample(&mut rng).clamp(-1.0, 1.0))
            .collect();
        let clip = AudioClip::new(s, SR, "n").unwrap();
        let out = denoise(&clip).unwrap();
        assert_eq!(out.len(), clip.len());
        assert!(out.rms() <= 0.5 * clip.rms(), "{} vs {}", out.rms(), clip.rms());
    }

    #[test]
    fn denoise_keeps_clean_tone() {
        let s: Vec<f64> = (0..2 * SR as usize)
            .map(|i| 0.5 * (2.0 * PI * 2000.0 * i as f64 / SR as f64).sin())
            .collect();
        let clip = AudioClip::new(s, SR, "t").unwrap();
        let out = denoise(&clip).unwrap();
        let ratio = out.rms() / clip.rms();
        assert!((ratio - 1.0).abs() < 0.10, "ratio {ratio}");
    }

    #[test]
    fn denoise_silence_and_short_input() {
        let clip = AudioClip::new(vec![0.0; 5000], SR, "s").unwrap();
        assert!(denoise(&clip).unwrap().samples.iter().all(|&s| s == 0.0));
        let short = AudioClip::new(vec![0.0; 100], SR, "s").unwrap();
        assert!(matches!(denoise(&short), Err(Error::TooShort { .. })));
    }

    #[test]
    fn manifest_cut_round_trip() {
        let clip = tone_burst(20.0, &[(6.0, 0.5), (14.0, 0.3)], 0.5);
        let events = detect_events(&clip, &EventConfig::default()).unwrap();
        let manifest = EventsManifest::new(&clip, &events);
        let json = serde_json::to_string(&manifest).unwrap();
        let back: EventsManifest = serde_json::from_str(&json).unwrap();
        assert_eq!(back, manifest);
        let cut = back.cut(&clip).unwrap();
        assert_eq!(cut.len(), events.len());
        assert_eq!(cut[0].start_sample, events[0].start_sample);
    }
}
