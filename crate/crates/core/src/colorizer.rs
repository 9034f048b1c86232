//! Frequency embedding by primary-colour additives.
//!
//! The mel bins are split into three equal regions. Inside a region the bin
//! colour crossfades between two primaries: red to green in the lowest
//! region, green to blue in the middle one and blue to red in the top one.
//! Each grayscale pixel is multiplied by its row colour, so the three
//! channels always sum back to the grayscale value while the hue carries the
//! absolute frequency position.

use std::path::Path;

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectrogram::{MelConfig, MelSpectrogram};

/// How a normalised spectrogram is turned into a 3-channel model input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorMode {
    Colorized,
    /// Grayscale replicated into three identical channels.
    Grayscale,
}

impl std::fmt::Display for ColorMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ColorMode::Colorized => write!(f, "colorized"),
            ColorMode::Grayscale => write!(f, "grayscale"),
        }
    }
}

impl std::str::FromStr for ColorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "colorized" | "color" => Ok(ColorMode::Colorized),
            "grayscale" | "gray" => Ok(ColorMode::Grayscale),
            other => Err(Error::InvalidParameter(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ColorizedSpectrogram {
    /// `[3, total_bins, n_frames]` in R, G, B order; bin row 0 is `f_min`.
    pub channels: Array3<f64>,
    pub config: MelConfig,
}

impl ColorizedSpectrogram {
    pub fn n_bins(&self) -> usize {
        self.channels.len_of(Axis(1))
    }

    pub fn n_frames(&self) -> usize {
        self.channels.len_of(Axis(2))
    }

    /// Per-pixel channel sum.
    pub fn channel_sum(&self) -> Array2<f64> {
        self.channels.sum_axis(Axis(0))
    }

    /// NPY export of the channel stack (`<f8`, C order, shape `[3, bins, frames]`).
    pub fn write_npy(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        ndarray_npy::write_npy(path, &self.channels).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
    }
}

/// Colour of mel bin `bin_index` (counted from `f_min`).
///
/// With `n = total_bins / 3`, the bin sits in region `bin_index / n` at
/// position `t = (bin_index % n) / n`, so `t` runs over `[0, 1 - 1/n]`.
pub fn region_color(bin_index: usize, total_bins: usize) -> Result<[f64; 3]> {
    if total_bins == 0 || total_bins % 3 != 0 {
        return Err(Error::InvalidParameter(format!(
            "total_bins must be a positive multiple of 3, got {total_bins}"
        )));
    }
    if bin_index >= total_bins {
        return Err(Error::InvalidParameter(format!(
            "bin index {bin_index} out of range for {total_bins} bins"
        )));
    }
    let n_bins = total_bins / 3;
    let t = (bin_index % n_bins) as f64 / n_bins as f64;
    Ok(match bin_index / n_bins {
        0 => [1.0 - t, t, 0.0],
        1 => [0.0, 1.0 - t, t],
        _ => [t, 0.0, 1.0 - t],
    })
}

pub fn colorize(spec: &MelSpectrogram) -> Result<ColorizedSpectrogram> {
    let (bins, frames) = spec.values.dim();
    let mut channels = Array3::<f64>::zeros((3, bins, frames));
    for (b, row) in spec.values.rows().into_iter().enumerate() {
        let rgb = region_color(b, bins)?;
        for (c, weight) in rgb.iter().enumerate() {
            if *weight == 0.0 {
                continue;
            }
            channels
                .index_axis_mut(Axis(0), c)
                .row_mut(b)
                .zip_mut_with(&row, |dst, &v| *dst = weight * v);
        }
    }
    Ok(ColorizedSpectrogram {
        channels,
        config: spec.config.clone(),
    })
}

/// Three identical copies of the grayscale values.
pub fn grayscale(spec: &MelSpectrogram) -> ColorizedSpectrogram {
    let (bins, frames) = spec.values.dim();
    let mut channels = Array3::<f64>::zeros((3, bins, frames));
    for mut c in channels.outer_iter_mut() {
        c.assign(&spec.values);
    }
    ColorizedSpectrogram {
        channels,
        config: spec.config.clone(),
    }
}

pub fn render(spec: &MelSpectrogram, mode: ColorMode) -> Result<ColorizedSpectrogram> {
    match mode {
        ColorMode::Colorized => colorize(spec),
        ColorMode::Grayscale => Ok(grayscale(spec)),
    }
}

/// Writes an 8-bit RGB PNG, width = frames, height = bins, `f_min` on the
/// bottom row. Values map to `round(255 * v)`.
pub fn export_png(img: &ColorizedSpectrogram, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bins = img.n_bins();
    let frames = img.n_frames();
    let mut buf = image::RgbImage::new(frames as u32, bins as u32);
    for (x, y, px) in buf.enumerate_pixels_mut() {
        let bin = bins - 1 - y as usize;
        let t = x as usize;
        for c in 0..3 {
            px.0[c] = (255.0 * img.channels[[c, bin, t]].clamp(0.0, 1.0)).round() as u8;
        }
    }
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(source) => Error::io(path, source),
            other => Error::Image(other.to_string()),
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(values: Array2<f64>) -> MelSpectrogram {
        let config = MelConfig {
            total_bins: values.nrows(),
            ..MelConfig::default()
        };
        MelSpectrogram {
            values,
            config,
            bin_center_freqs: vec![],
        }
    }

    #[test]
    fn region_color_examples() {
        assert_eq!(region_color(0, 126).unwrap(), [1.0, 0.0, 0.0]);
        assert_eq!(region_color(42, 126).unwrap(), [0.0, 1.0, 0.0]);
        assert_eq!(region_color(84, 126).unwrap(), [0.0, 0.0, 1.0]);
        assert_eq!(region_color(21, 126).unwrap(), [0.5, 0.5, 0.0]);
        let c = region_color(125, 126).unwrap();
        assert!((c[0] - 41.0 / 42.0).abs() < 1e-15);
        assert_eq!(c[1], 0.0);
        assert!((c[2] - 1.0 / 42.0).abs() < 1e-15);
    }

    #[test]
    fn region_color_errors() {
        assert!(region_color(126, 126).is_err());
        assert!(region_color(0, 128).is_err());
        assert!(region_color(0, 0).is_err());
    }

    #[test]
    fn zero_spectrogram_stays_black() {
        let out = colorize(&spec(Array2::zeros((9, 4)))).unwrap();
        assert!(out.channels.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_pixel_at_bin_zero_is_red() {
        let mut v = Array2::zeros((126, 5));
        v[[0, 2]] = 1.0;
        let out = colorize(&spec(v)).unwrap();
        assert_eq!(out.channels[[0, 0, 2]], 1.0);
        let nonzero = out.channels.iter().filter(|&&x| x != 0.0).count();
        assert_eq!(nonzero, 1);
    }

    #[test]
    fn shifted_motif_differs_only_in_colour() {
        let motif = [[0.2, 0.9, 0.4], [0.7, 0.1, 0.6], [0.3, 0.8, 0.5]];
        let place = |base: usize| {
            let mut v = Array2::zeros((126, 3));
            for (r, row) in motif.iter().enumerate() {
                for (c, &x) in row.iter().enumerate() {
                    v[[base + r, c]] = x;
                }
            }
            v
        };
        let a = colorize(&spec(place(10))).unwrap();
        let b = colorize(&spec(place(94))).unwrap();
        // grayscale sums agree after vertical alignment
        let sa = a.channel_sum();
        let sb = b.channel_sum();
        for r in 0..3 {
            for c in 0..3 {
                assert!((sa[[10 + r, c]] - sb[[94 + r, c]]).abs() < 1e-12);
            }
        }
        // channel-wise content does not
        let diff = (0..3).any(|ch| {
            (0..3).any(|r| (0..3).any(|c| (a.channels[[ch, 10 + r, c]] - b.channels[[ch, 94 + r, c]]).abs() > 1e-6))
        });
        assert!(diff);
    }

    #[test]
    fn at_most_two_channels_per_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = Array2::from_shape_fn((126, 7), |_| rng.random_range(0.01..1.0));
        let out = colorize(&spec(v)).unwrap();
        for b in 0..126 {
            let active = (0..3).filter(|&c| out.channels[[c, b, 0]] != 0.0).count();
            assert!(active <= 2 && active >= 1);
        }
    }

    #[test]
    fn grayscale_replicates() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = Array2::from_shape_fn((6, 3), |_| rng.random::<f64>());
        let out = grayscale(&spec(v.clone()));
        for c in 0..3 {
            assert_eq!(out.channels.index_axis(Axis(0), c), v);
        }
    }

    #[test]
    fn png_export_orientation_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut v = Array2::from_shape_fn((12, 8), |_| rng.random::<f64>());
        v[[0, 0]] = 1.0;
        let img = colorize(&spec(v)).unwrap();
        let path = dir.path().join("c.png");
        export_png(&img, &path).unwrap();
        let decoded = image::open(&path).unwrap().to_rgb8();
        assert_eq!(decoded.dimensions(), (8, 12));
        let bottom_left = decoded.get_pixel(0, 11);
        assert_eq!(bottom_left.0, [255, 0, 0]);
        for (x, y, px) in decoded.enumerate_pixels() {
            let bin = 11 - y as usize;
            for c in 0..3 {
                let src = img.channels[[c, bin, x as usize]];
                assert!((px.0[c] as f64 / 255.0 - src).abs() <= 1.0 / 255.0);
            }
        }
    }

    #[test]
    fn png_export_black_and_bad_path() {
        let dir = tempfile::tempdir().unwrap();
        let img = colorize(&spec(Array2::zeros((3, 2)))).unwrap();
        let path = dir.path().join("z.png");
        export_png(&img, &path).unwrap();
        let decoded = image::open(&path).unwrap().to_rgb8();
        assert!(decoded.pixels().all(|p| p.0 == [0, 0, 0]));
        assert!(export_png(&img, dir.path().join("missing/dir/z.png")).is_err());
    }
}
