//! Short-time Fourier transform helpers shared by the denoiser and the
//! mel front end.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

/// Periodic Hann window of length `n`.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Number of full frames of `frame_len` samples spaced `hop` apart.
pub fn frame_count(len: usize, frame_len: usize, hop: usize) -> usize {
    if len < frame_len {
        0
    } else {
        1 + (len - frame_len) / hop
    }
}

pub struct Stft {
    fft_size: usize,
    hop: usize,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(fft_size: usize, hop: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            fft_size,
            hop,
            window: hann(fft_size),
            forward: planner.plan_fft_forward(fft_size),
            inverse: planner.plan_fft_inverse(fft_size),
        }
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    pub fn n_freqs(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Half spectra (`fft_size / 2 + 1` bins) of every full frame, no padding.
    pub fn analyze(&self, signal: &[f64]) -> Vec<Vec<Complex<f64>>> {
        let n = frame_count(signal.len(), self.fft_size, self.hop);
        let mut buf = vec![Complex::new(0.0, 0.0); self.fft_size];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.forward.get_inplace_scratch_len()];
        (0..n)
            .map(|f| {
                let start = f * self.hop;
                for (i, slot) in buf.iter_mut().enumerate() {
                    *slot = Complex::new(signal[start + i] * self.window[i], 0.0);
                }
                self.forward.process_with_scratch(&mut buf, &mut scratch);
                buf[..self.n_freqs()].to_vec()
            })
            .collect()
    }

    /// Power spectra `|X|^2` of every full frame.
    pub fn power(&self, signal: &[f64]) -> Vec<Vec<f64>> {
        self.analyze(signal)
            .into_iter()
            .map(|frame| frame.iter().map(|c| c.norm_sqr()).collect())
            .collect()
    }

    /// Weighted overlap-add inverse of [`Stft::analyze`] for a signal of
    /// `len` samples. Samples not covered by any window come out as zero.
    pub fn synthesize(&self, frames: &[Vec<Complex<f64>>], len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        let mut norm = vec![0.0; len];
        let mut buf = vec![Complex::new(0.0, 0.0); self.fft_size];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.inverse.get_inplace_scratch_len()];
        let half = self.n_freqs();
        for (f, frame) in frames.iter().enumerate() {
            buf[..half].copy_from_slice(frame);
            for k in half..self.fft_size {
                buf[k] = frame[self.fft_size - k].conj();
            }
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            let start = f * self.hop;
            for i in 0..self.fft_size {
                let idx = start + i;
                if idx >= len {
                    break;
                }
                let w = self.window[i];
                out[idx] += buf[i].re / self.fft_size as f64 * w;
                norm[idx] += w * w;
            }
        }
        for (o, n) in out.iter_mut().zip(&norm) {
            if *n > 1e-10 {
                *o /= n;
            } else {
                *o = 0.0;
            }
        }
        out
    }
}

/// Reflect-pads `x` by `pad` samples on both sides (edge sample not repeated).
pub fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    debug_assert!(pad < n);
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|i| x[i]));
    out.extend_from_slice(x);
    out.extend((1..=pad).map(|i| x[n - 1 - i]));
    out
}
