//! Mel spectrogram front end and the normalise / log / normalise chain.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::audio::CANONICAL_SAMPLE_RATE;
use crate::dsp::Stft;
use crate::error::{Error, Result};

/// Compression strength of the log stage: `log(1 + beta*v) / log(1 + beta)`.
pub const DEFAULT_LOG_BETA: f64 = 10_000.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MelConfig {
    pub f_min: f64,
    pub f_max: f64,
    /// Number of mel filters; must be a multiple of 3 for colorization.
    pub total_bins: usize,
    pub fft_size: usize,
    pub hop: usize,
    pub sample_rate: u32,
    pub log_beta: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            f_min: 300.0,
            f_max: 16_000.0,
            total_bins: 126,
            fft_size: 2048,
            hop: 512,
            sample_rate: CANONICAL_SAMPLE_RATE,
            log_beta: DEFAULT_LOG_BETA,
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        let nyquist = self.sample_rate as f64 / 2.0;
        if !(self.f_min >= 0.0 && self.f_min < self.f_max && self.f_max <= nyquist) {
            return Err(Error::InvalidParameter(format!(
                "need 0 <= f_min < f_max <= {nyquist}, got f_min={} f_max={}",
                self.f_min, self.f_max
            )));
        }
        if self.total_bins == 0 || self.total_bins % 3 != 0 {
            return Err(Error::InvalidParameter(format!(
                "total_bins must be a positive multiple of 3, got {}",
                self.total_bins
            )));
        }
        if self.fft_size < 2 || self.hop == 0 {
            return Err(Error::InvalidParameter("fft_size >= 2 and hop >= 1 required".into()));
        }
        if !(self.log_beta > 0.0 && self.log_beta.is_finite()) {
            return Err(Error::InvalidParameter("log_beta must be positive".into()));
        }
        Ok(())
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn n_frames(&self, len: usize) -> usize {
        crate::dsp::frame_count(len, self.fft_size, self.hop)
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Band edges of the filterbank: `total_bins + 2` frequencies evenly spaced
/// in mel between `f_min` and `f_max`. Filter `i` rises from edge `i`, peaks
/// at edge `i + 1` and falls to zero at edge `i + 2`.
pub fn mel_band_edges(config: &MelConfig) -> Vec<f64> {
    let lo = hz_to_mel(config.f_min);
    let hi = hz_to_mel(config.f_max);
    let n = config.total_bins + 2;
    (0..n)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n - 1) as f64))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    /// `[total_bins, n_frames]`, row 0 is the lowest band.
    pub values: Array2<f64>,
    pub config: MelConfig,
    pub bin_center_freqs: Vec<f64>,
}

impl MelSpectrogram {
    pub fn n_bins(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.values.ncols()
    }

    /// NPY export of the value matrix (`<f8`, C order, shape `[bins, frames]`).
    pub fn write_npy(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        ndarray_npy::write_npy(path, &self.values).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
    }

    pub fn read_npy(path: impl AsRef<Path>, config: MelConfig) -> Result<Self> {
        let path = path.as_ref();
        let values: Array2<f64> =
            ndarray_npy::read_npy(path).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
        if values.nrows() != config.total_bins {
            return Err(Error::ShapeMismatch(format!(
                "{} has {} rows, config expects {}",
                path.display(),
                values.nrows(),
                config.total_bins
            )));
        }
        let edges = mel_band_edges(&config);
        Ok(Self {
            values,
            bin_center_freqs: edges[1..edges.len() - 1].to_vec(),
            config,
        })
    }
}

/// Precomputed STFT plan and triangular mel filterbank.
pub struct MelFrontEnd {
    config: MelConfig,
    stft: Stft,
    /// (first FFT bin, weights) per mel filter
    filters: Vec<(usize, Vec<f64>)>,
    centers: Vec<f64>,
}

impl MelFrontEnd {
    pub fn new(config: MelConfig) -> Result<Self> {
        config.validate()?;
        let stft = Stft::new(config.fft_size, config.hop);
        let edges = mel_band_edges(&config);
        let bin_hz = config.sample_rate as f64 / config.fft_size as f64;
        let n_freqs = stft.n_freqs();
        let filters = (0..config.total_bins)
            .map(|i| {
                let (lo, mid, hi) = (edges[i], edges[i + 1], edges[i + 2]);
                let weights: Vec<(usize, f64)> = (0..n_freqs)
                    .filter_map(|k| {
                        let f = k as f64 * bin_hz;
                        let w = ((f - lo) / (mid - lo)).min((hi - f) / (hi - mid));
                        (w > 0.0).then_some((k, w))
                    })
                    .collect();
                let first = weights.first().map_or(0, |&(k, _)| k);
                (first, weights.into_iter().map(|(_, w)| w).collect())
            })
            .collect();
        Ok(Self {
            centers: edges[1..edges.len() - 1].to_vec(),
            config,
            stft,
            filters,
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.config
    }

    /// Raw mel power of a mono signal at `config.sample_rate`.
    pub fn compute(&self, samples: &[f64]) -> Result<MelSpectrogram> {
        if samples.len() < self.config.fft_size {
            return Err(Error::TooShort {
                needed: self.config.fft_size,
                got: samples.len(),
            });
        }
        let power = self.stft.power(samples);
        let mut values = Array2::<f64>::zeros((self.config.total_bins, power.len()));
        for (t, frame) in power.iter().enumerate() {
            for (b, (first, weights)) in self.filters.iter().enumerate() {
                values[[b, t]] = weights
                    .iter()
                    .zip(&frame[*first..])
                    .map(|(w, p)| w * p)
                    .sum();
            }
        }
        Ok(MelSpectrogram {
            values,
            config: self.config.clone(),
            bin_center_freqs: self.centers.clone(),
        })
    }
}

/// Hann-windowed power STFT projected through the mel filterbank.
pub fn mel_spectrogram(samples: &[f64], sample_rate: u32, config: &MelConfig) -> Result<MelSpectrogram> {
    if sample_rate != config.sample_rate {
        return Err(Error::InvalidParameter(format!(
            "signal at {sample_rate} Hz but mel config expects {} Hz",
            config.sample_rate
        )));
    }
    MelFrontEnd::new(config.clone())?.compute(samples)
}

fn min_max_scale(values: &mut Array2<f64>) {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if values.is_empty() || hi <= lo {
        values.fill(0.0);
        return;
    }
    let range = hi - lo;
    values.mapv_inplace(|v| ((v - lo) / range).clamp(0.0, 1.0));
}

/// Min-max scale to [0, 1], compress with `log(1 + beta*v) / log(1 + beta)`,
/// then min-max scale again. Constant input maps to all zeros.
pub fn normalize_log_normalize(spec: &MelSpectrogram) -> MelSpectrogram {
    let beta = spec.config.log_beta;
    let denom = beta.ln_1p();
    let mut values = spec.values.clone();
    min_max_scale(&mut values);
    values.mapv_inplace(|v| (beta * v).ln_1p() / denom);
    min_max_scale(&mut values);
    MelSpectrogram {
        values,
        config: spec.config.clone(),
        bin_center_freqs: spec.bin_center_freqs.clone(),
    }
}
