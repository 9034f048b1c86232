//! Loading and conditioning of raw recordings.
//!
//! Everything downstream works on mono `f64` samples in `[-1, 1]` at
//! [`CANONICAL_SAMPLE_RATE`]. Multi-channel files are averaged to mono,
//! other sample rates go through [`resample`], and [`highpass`] removes the
//! low-frequency rumble below the bird band before event mining.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sample rate every pipeline stage assumes unless configured otherwise.
pub const CANONICAL_SAMPLE_RATE: u32 = 32_000;

/// A mono recording.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub source_id: String,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32, source_id: impl Into<String>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidParameter("sample_rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::InvalidParameter("clip has no samples".into()));
        }
        if let Some(bad) = samples.iter().find(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "sample {bad} outside [-1, 1]"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
            source_id: source_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }

    /// Same metadata, new samples. Samples are clamped to `[-1, 1]`.
    pub(crate) fn with_samples(&self, samples: Vec<f64>) -> Self {
        Self {
            samples: samples.into_iter().map(|s| s.clamp(-1.0, 1.0)).collect(),
            sample_rate: self.sample_rate,
            source_id: self.source_id.clone(),
        }
    }
}

pub fn rms(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    (samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64).sqrt()
}

fn map_hound_error(path: &Path, err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(source) => Error::Unreadable {
            path: path.to_path_buf(),
            source,
        },
        hound::Error::Unsupported => Error::UnsupportedCodec {
            path: path.to_path_buf(),
            detail: "only integer PCM and 32-bit float are supported".into(),
        },
        hound::Error::InvalidSampleFormat => Error::UnsupportedCodec {
            path: path.to_path_buf(),
            detail: "invalid sample format".into(),
        },
        other => Error::MalformedWav {
            path: path.to_path_buf(),
            detail: other.to_string(),
        },
    }
}

/// Reads a PCM WAV file (8/16/24/32-bit integer or 32-bit float) and
/// averages all channels into a mono clip scaled to `[-1, 1]`.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| map_hound_error(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::MalformedWav {
            path: path.to_path_buf(),
            detail: "zero channels".into(),
        });
    }

    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound_error(path, e))?,
        (hound::SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| map_hound_error(path, e))?
        }
        (format, bits) => {
            return Err(Error::UnsupportedCodec {
                path: path.to_path_buf(),
                detail: format!("{format:?} with {bits} bits per sample"),
            })
        }
    };

    let frames = interleaved.len() / channels;
    if frames == 0 {
        return Err(Error::EmptyAudio {
            path: path.to_path_buf(),
        });
    }
    let mut samples = Vec::with_capacity(frames);
    for frame in interleaved.chunks_exact(channels) {
        let mean = frame.iter().sum::<f64>() / channels as f64;
        if !mean.is_finite() {
            return Err(Error::MalformedWav {
                path: path.to_path_buf(),
                detail: "non-finite sample".into(),
            });
        }
        samples.push(mean.clamp(-1.0, 1.0));
    }
    let source_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(AudioClip {
        samples,
        sample_rate: spec.sample_rate,
        source_id,
    })
}

/// Writes a mono 16-bit PCM WAV.
pub fn write_wav_i16(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_err = |e: hound::Error| match e {
        hound::Error::IoError(source) => Error::io(path, source),
        other => Error::MalformedWav {
            path: path.to_path_buf(),
            detail: other.to_string(),
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(to_err)?;
    for &s in &clip.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(to_err)?;
    }
    writer.finalize().map_err(to_err)
}

// Resampler quality: Kaiser-windowed sinc, 32 zero crossings on each side of
// the kernel centre, Kaiser beta 9.0 (stopband around -90 dB), cutoff at 95%
// of the lower of the two Nyquist frequencies.
const SINC_ZERO_CROSSINGS: f64 = 32.0;
const KAISER_BETA: f64 = 9.0;
const ROLLOFF: f64 = 0.95;

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn kaiser(u: f64) -> f64 {
    // u in [-1, 1]
    if u.abs() >= 1.0 {
        return 0.0;
    }
    bessel_i0(KAISER_BETA * (1.0 - u * u).sqrt()) / bessel_i0(KAISER_BETA)
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Band-limited sample-rate conversion. The output has
/// `round(len * target / source)` samples, so duration is preserved to
/// within half an output sample period. Samples closer to the clip edges
/// than the kernel half-width see the signal as zero-extended.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(Error::InvalidParameter("target_rate must be positive".into()));
    }
    if target_rate == clip.sample_rate {
        return Ok(clip.clone());
    }
    let src_rate = clip.sample_rate as f64;
    let ratio = target_rate as f64 / src_rate;
    let out_len = ((clip.len() as f64) * ratio).round().max(1.0) as usize;
    // cutoff in cycles per input sample, relative to the input Nyquist
    let cutoff = ROLLOFF * ratio.min(1.0);
    let half_width = SINC_ZERO_CROSSINGS / cutoff;
    let x = &clip.samples;

    let out: Vec<f64> = (0..out_len)
        .map(|n| {
            let pos = n as f64 / ratio;
            let lo = (pos - half_width).ceil().max(0.0) as usize;
            let hi = ((pos + half_width).floor() as isize).min(x.len() as isize - 1);
            if hi < lo as isize {
                return 0.0;
            }
            let mut acc = 0.0;
            for (k, &xk) in x.iter().enumerate().take(hi as usize + 1).skip(lo) {
                let d = pos - k as f64;
                acc += xk * cutoff * sinc(cutoff * d) * kaiser(d / half_width);
            }
            acc
        })
        .collect();

    Ok(AudioClip {
        samples: out.into_iter().map(|s| s.clamp(-1.0, 1.0)).collect(),
        sample_rate: target_rate,
        source_id: clip.source_id.clone(),
    })
}

/// Second-order section in transposed direct form II, normalised so a0 = 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (self.a[0] + self.a[1] + self.a[2])
    }

    /// State that makes the section's response to a constant input `x` constant.
    fn steady_state(&self, x: f64) -> [f64; 2] {
        let y = self.dc_gain() * x;
        [y - self.b[0] * x, self.b[2] * x - self.a[2] * y]
    }

    fn run(&self, signal: &mut [f64], mut z: [f64; 2]) {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        for s in signal.iter_mut() {
            let x = *s;
            let y = b0 * x + z[0];
            z[0] = b1 * x - a1 * y + z[1];
            z[1] = b2 * x - a2 * y;
            *s = y;
        }
    }
}

/// Butterworth high-pass as a cascade of biquads (bilinear transform with
/// frequency prewarping). `order` must be even.
pub fn butterworth_highpass(order: usize, cutoff: f64, sample_rate: f64) -> Result<Vec<Biquad>> {
    if order == 0 || order % 2 != 0 {
        return Err(Error::InvalidParameter(format!(
            "filter order must be even and positive, got {order}"
        )));
    }
    if !(cutoff > 0.0 && cutoff < sample_rate / 2.0) {
        return Err(Error::InvalidParameter(format!(
            "cutoff {cutoff} Hz must lie in (0, {})",
            sample_rate / 2.0
        )));
    }
    let k = (PI * cutoff / sample_rate).tan();
    let sections = (0..order / 2)
        .map(|i| {
            let theta = PI * (2 * i + 1) as f64 / (2 * order) as f64;
            let q = 1.0 / (2.0 * theta.cos());
            let norm = 1.0 / (1.0 + k / q + k * k);
            Biquad {
                b: [norm, -2.0 * norm, norm],
                a: [1.0, 2.0 * (k * k - 1.0) * norm, (1.0 - k / q + k * k) * norm],
            }
        })
        .collect();
    Ok(sections)
}

fn sos_run_with_steady_state(sections: &[Biquad], signal: &mut [f64]) {
    let x0 = signal[0];
    let mut scale = x0;
    for section in sections {
        let z = section.steady_state(scale);
        section.run(signal, z);
        scale *= section.dc_gain();
    }
}

/// Zero-phase forward-backward filtering through a cascade of biquads.
///
/// The signal is extended at both ends by odd reflection about its end
/// points, and each pass starts from the steady state for its first sample,
/// which suppresses start-up transients.
pub fn sos_filtfilt(sections: &[Biquad], x: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let n = x.len();
    let padlen = (3 * (2 * sections.len() + 1)).min(n - 1);
    let first = x[0];
    let last = x[n - 1];
    let mut ext = Vec::with_capacity(n + 2 * padlen);
    ext.extend((1..=padlen).rev().map(|i| 2.0 * first - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=padlen).map(|i| 2.0 * last - x[n - 1 - i]));

    sos_run_with_steady_state(sections, &mut ext);
    ext.reverse();
    sos_run_with_steady_state(sections, &mut ext);
    ext.reverse();
    ext[padlen..padlen + n].to_vec()
}

/// Order of the Butterworth prototype used by [`highpass`]. Forward-backward
/// application doubles the effective attenuation slope.
pub const HIGHPASS_ORDER: usize = 4;

/// Zero-phase 4th-order Butterworth high-pass. Output has the input's length.
pub fn highpass(clip: &AudioClip, cutoff: f64) -> Result<AudioClip> {
    let sections = butterworth_highpass(HIGHPASS_ORDER, cutoff, clip.sample_rate as f64)?;
    Ok(clip.with_samples(sos_filtfilt(&sections, &clip.samples)))
}
