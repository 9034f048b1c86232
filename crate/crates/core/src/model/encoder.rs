//! Instance encoders: image in, per-class logits out.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The part of the MIL model that maps one instance image to class logits.
///
/// Parameters live in a flat slice owned by the caller; `backward`
/// accumulates into a gradient slice of the same length.
pub trait InstanceEncoder: Send + Sync {
    type Cache: Send;

    fn n_params(&self) -> usize;
    fn n_classes(&self) -> usize;
    /// `(channels, bins, frames)`
    fn input_shape(&self) -> (usize, usize, usize);
    fn init_params<R: Rng>(&self, rng: &mut R) -> Vec<f64>;
    /// Which parameters receive decoupled weight decay.
    fn decay_mask(&self) -> Vec<bool>;
    fn forward(&self, params: &[f64], input: ArrayView3<f64>) -> Result<(Array1<f64>, Self::Cache)>;
    /// Accumulates parameter gradients into `grad`; returns the input
    /// gradient when `want_input` is set.
    fn backward(
        &self,
        params: &[f64],
        cache: &Self::Cache,
        d_logits: ArrayView1<f64>,
        grad: &mut [f64],
        want_input: bool,
    ) -> Option<Array3<f64>>;
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub in_channels: usize,
    /// Output channels of each 3x3 conv block.
    pub widths: Vec<usize>,
    pub n_classes: usize,
    pub input_bins: usize,
    pub input_frames: usize,
}

impl EncoderConfig {
    pub fn new(n_classes: usize, input_bins: usize, input_frames: usize) -> Self {
        Self {
            in_channels: 3,
            widths: vec![8, 16, 32],
            n_classes,
            input_bins,
            input_frames,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvSlot {
    w: usize,
    b: usize,
    c_in: usize,
    c_out: usize,
}

/// Compact CNN: `[conv3x3 (pad 1) -> SiLU -> 2x2 average pool]` per width,
/// global average pooling, linear head.
///
/// SiLU and average pooling keep the whole encoder smooth, which lets
/// analytic gradients be checked against finite differences without kinks.
#[derive(Clone, Debug)]
pub struct ConvEncoder {
    config: EncoderConfig,
    convs: Vec<ConvSlot>,
    head_w: usize,
    head_b: usize,
    n_params: usize,
}

pub struct ConvCache {
    blocks: Vec<BlockCache>,
    /// Spatial dims of the last pooled map.
    final_hw: (usize, usize),
    features: Array1<f64>,
}

struct BlockCache {
    cols: Array2<f64>,
    pre: Array2<f64>,
    h: usize,
    w: usize,
}

impl ConvEncoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        if config.widths.is_empty() || config.widths.contains(&0) {
            return Err(Error::InvalidParameter("encoder needs non-zero widths".into()));
        }
        if config.n_classes == 0 || config.in_channels == 0 {
            return Err(Error::InvalidParameter("encoder needs classes and input channels".into()));
        }
        let min_side = 1usize << config.widths.len();
        if config.input_bins < min_side || config.input_frames < min_side {
            return Err(Error::InvalidParameter(format!(
                "input {}x{} too small for {} pooling stages",
                config.input_bins,
                config.input_frames,
                config.widths.len()
            )));
        }
        let mut offset = 0;
        let mut c_in = config.in_channels;
        let mut convs = Vec::new();
        for &c_out in &config.widths {
            let w = offset;
            offset += c_out * c_in * 9;
            let b = offset;
            offset += c_out;
            convs.push(ConvSlot { w, b, c_in, c_out });
            c_in = c_out;
        }
        let head_w = offset;
        offset += config.n_classes * c_in;
        let head_b = offset;
        offset += config.n_classes;
        Ok(Self {
            config,
            convs,
            head_w,
            head_b,
            n_params: offset,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    fn feature_dim(&self) -> usize {
        *self.config.widths.last().expect("validated non-empty")
    }

    /// Offset and length of the head weight block, `[n_classes, features]` row-major.
    pub fn head_weight_range(&self) -> std::ops::Range<usize> {
        self.head_w..self.head_b
    }

    pub fn head_bias_range(&self) -> std::ops::Range<usize> {
        self.head_b..self.n_params
    }

    fn conv_w<'a>(&self, params: &'a [f64], slot: &ConvSlot) -> ArrayView2<'a, f64> {
        let len = slot.c_out * slot.c_in * 9;
        ArrayView2::from_shape((slot.c_out, slot.c_in * 9), &params[slot.w..slot.w + len])
            .expect("layout")
    }

    fn head<'a>(&self, params: &'a [f64]) -> (ArrayView2<'a, f64>, ArrayView1<'a, f64>) {
        let f = self.feature_dim();
        let c = self.config.n_classes;
        (
            ArrayView2::from_shape((c, f), &params[self.head_w..self.head_b]).expect("layout"),
            ArrayView1::from(&params[self.head_b..self.n_params]),
        )
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn im2col(x: &ArrayView3<f64>) -> Array2<f64> {
    let (c, h, w) = x.dim();
    let mut cols = Array2::zeros((c * 9, h * w));
    for ci in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let mut row = cols.row_mut(ci * 9 + ky * 3 + kx);
                let row = row.as_slice_mut().expect("contiguous");
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = x.slice(s![ci, sy as usize, ..]);
                    let dst = &mut row[y * w..(y + 1) * w];
                    for xx in 0..w {
                        let sx = xx as isize + kx as isize - 1;
                        if sx >= 0 && sx < w as isize {
                            dst[xx] = src[sx as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &Array2<f64>, c: usize, h: usize, w: usize) -> Array3<f64> {
    let mut x = Array3::zeros((c, h, w));
    for ci in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = cols.row(ci * 9 + ky * 3 + kx);
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for xx in 0..w {
                        let sx = xx as isize + kx as isize - 1;
                        if sx >= 0 && sx < w as isize {
                            x[[ci, sy as usize, sx as usize]] += row[y * w + xx];
                        }
                    }
                }
            }
        }
    }
    x
}

fn avg_pool2(x: &Array2<f64>, c: usize, h: usize, w: usize) -> Array3<f64> {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Array3::zeros((c, ho, wo));
    for ci in 0..c {
        let row = x.row(ci);
        for y in 0..ho {
            for xx in 0..wo {
                let a = (2 * y) * w + 2 * xx;
                let b = a + w;
                out[[ci, y, xx]] = 0.25 * (row[a] + row[a + 1] + row[b] + row[b + 1]);
            }
        }
    }
    out
}

impl InstanceEncoder for ConvEncoder {
    type Cache = ConvCache;

    fn n_params(&self) -> usize {
        self.n_params
    }

    fn n_classes(&self) -> usize {
        self.config.n_classes
    }

    fn input_shape(&self) -> (usize, usize, usize) {
        (self.config.in_channels, self.config.input_bins, self.config.input_frames)
    }

    fn init_params<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut params = vec![0.0; self.n_params];
        for slot in &self.convs {
            let fan_in = (slot.c_in * 9) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("finite std");
            for p in &mut params[slot.w..slot.b] {
                *p = normal.sample(rng);
            }
        }
        let normal = Normal::new(0.0, (1.0 / self.feature_dim() as f64).sqrt()).expect("finite std");
        for p in &mut params[self.head_w..self.head_b] {
            *p = normal.sample(rng);
        }
        params
    }

    fn decay_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.n_params];
        for slot in &self.convs {
            mask[slot.w..slot.b].iter_mut().for_each(|m| *m = true);
        }
        mask[self.head_w..self.head_b].iter_mut().for_each(|m| *m = true);
        mask
    }

    fn forward(&self, params: &[f64], input: ArrayView3<f64>) -> Result<(Array1<f64>, ConvCache)> {
        if params.len() != self.n_params {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters, encoder expects {}",
                params.len(),
                self.n_params
            )));
        }
        if input.dim() != self.input_shape() {
            return Err(Error::ShapeMismatch(format!(
                "instance of shape {:?}, encoder expects {:?}",
                input.dim(),
                self.input_shape()
            )));
        }
        let mut blocks = Vec::with_capacity(self.convs.len());
        let mut x: Array3<f64> = input.to_owned();
        for slot in &self.convs {
            let (_, h, w) = x.dim();
            let cols = im2col(&x.view());
            let weight = self.conv_w(params, slot);
            let bias = ArrayView1::from(&params[slot.b..slot.b + slot.c_out]);
            let mut pre = Array2::zeros((slot.c_out, h * w));
            general_mat_mul(1.0, &weight, &cols, 0.0, &mut pre);
            for (mut row, &b) in pre.outer_iter_mut().zip(bias.iter()) {
                row += b;
            }
            let act = pre.mapv(|z| z * sigmoid(z));
            x = avg_pool2(&act, slot.c_out, h, w);
            blocks.push(BlockCache { cols, pre, h, w });
        }
        let (_, hf, wf) = x.dim();
        let features = x
            .mean_axis(Axis(2))
            .and_then(|m| m.mean_axis(Axis(1)))
            .expect("non-empty spatial dims");
        let (head_w, head_b) = self.head(params);
        let logits = head_w.dot(&features) + head_b;
        Ok((
            logits,
            ConvCache {
                blocks,
                final_hw: (hf, wf),
                features,
            },
        ))
    }

    fn backward(
        &self,
        params: &[f64],
        cache: &ConvCache,
        d_logits: ArrayView1<f64>,
        grad: &mut [f64],
        want_input: bool,
    ) -> Option<Array3<f64>> {
        let (head_w, _) = self.head(params);
        let f = self.feature_dim();
        let c = self.config.n_classes;
        {
            let mut g_head = ArrayViewMut2::from_shape((c, f), &mut grad[self.head_w..self.head_b]).expect("layout");
            for (j, &dl) in d_logits.iter().enumerate() {
                g_head.row_mut(j).scaled_add(dl, &cache.features);
            }
        }
        {
            let mut g_bias = ArrayViewMut1::from(&mut grad[self.head_b..self.n_params]);
            g_bias += &d_logits;
        }
        let d_features = head_w.t().dot(&d_logits);

        // gradient w.r.t. the last pooled map (before global averaging)
        let (hf, wf) = cache.final_hw;
        let scale = 1.0 / (hf * wf) as f64;
        let mut d_pooled = Array3::from_shape_fn((f, hf, wf), |(ci, _, _)| d_features[ci] * scale);

        for (l, (slot, block)) in self.convs.iter().zip(&cache.blocks).enumerate().rev() {
            let (h, w) = (block.h, block.w);
            // average-pool backward, then SiLU backward
            let mut d_pre = Array2::zeros((slot.c_out, h * w));
            let (ho, wo) = (h / 2, w / 2);
            for ci in 0..slot.c_out {
                let mut row = d_pre.row_mut(ci);
                for y in 0..ho {
                    for xx in 0..wo {
                        let g = 0.25 * d_pooled[[ci, y, xx]];
                        let a = (2 * y) * w + 2 * xx;
                        let b = a + w;
                        row[a] += g;
                        row[a + 1] += g;
                        row[b] += g;
                        row[b + 1] += g;
                    }
                }
            }
            d_pre.zip_mut_with(&block.pre, |d, &z| {
                let s = sigmoid(z);
                *d *= s * (1.0 + z * (1.0 - s));
            });

            {
                let mut g_w = ArrayViewMut2::from_shape((slot.c_out, slot.c_in * 9), &mut grad[slot.w..slot.b])
                    .expect("layout");
                general_mat_mul(1.0, &d_pre, &block.cols.t(), 1.0, &mut g_w);
            }
            {
                let mut g_b = ArrayViewMut1::from(&mut grad[slot.b..slot.b + slot.c_out]);
                g_b += &d_pre.sum_axis(Axis(1));
            }

            if l == 0 && !want_input {
                return None;
            }
            let weight = self.conv_w(params, slot);
            let d_cols = weight.t().dot(&d_pre);
            d_pooled = col2im(&d_cols, slot.c_in, h, w);
        }
        Some(d_pooled)
    }
}
