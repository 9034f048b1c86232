//! Multiple-instance classifier.
//!
//! A recording is a bag of up to [`BAG_SLOTS`] instance images. The
//! instance encoder turns each real instance into independent per-class
//! probabilities, [`autopool`] aggregates them per class with one shared,
//! trainable `alpha`, and the bag is scored with binary cross-entropy
//! against its multi-hot weak label.

pub mod autopool;
pub mod encoder;
pub mod loss;
pub mod train;

use std::path::Path;

use ndarray::{Array1, Array2, Array3, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use autopool::autopool;
pub use encoder::{ConvEncoder, EncoderConfig, InstanceEncoder};
pub use loss::{batch_bce_loss, bce_loss};
pub use train::{CosineSchedule, TrainConfig, TrainOutcome};

use crate::error::{Error, Result};

/// Instances per recording.
pub const BAG_SLOTS: usize = 5;

/// Starting value of the pooling parameter (soft-max pooling).
pub const ALPHA_INIT: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct RecordingBag {
    /// Always `mask.len()` images; padded slots are all zero.
    pub instances: Vec<Array3<f64>>,
    pub mask: Vec<bool>,
    /// Multi-hot, one entry per class.
    pub labels: Vec<f64>,
}

impl RecordingBag {
    /// Pads `real` with zero images up to `slots` entries.
    pub fn new(real: Vec<Array3<f64>>, labels: Vec<f64>, slots: usize) -> Result<Self> {
        if real.is_empty() {
            return Err(Error::AllMasked);
        }
        if real.len() > slots {
            return Err(Error::ShapeMismatch(format!(
                "{} instances for {slots} slots",
                real.len()
            )));
        }
        let shape = real[0].dim();
        if real.iter().any(|x| x.dim() != shape) {
            return Err(Error::ShapeMismatch("instances differ in shape".into()));
        }
        if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::InvalidParameter("labels must be 0 or 1".into()));
        }
        let n_real = real.len();
        let mut instances = real;
        instances.resize_with(slots, || Array3::zeros(shape));
        let mask = (0..slots).map(|i| i < n_real).collect();
        Ok(Self {
            instances,
            mask,
            labels,
        })
    }

    pub fn n_real(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Flat parameter vector: encoder parameters followed by `alpha`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub values: Vec<f64>,
}

impl ModelParams {
    pub fn alpha(&self) -> f64 {
        *self.values.last().expect("alpha slot")
    }

    pub fn set_alpha(&mut self, alpha: f64) {
        *self.values.last_mut().expect("alpha slot") = alpha;
    }

    pub fn encoder_values(&self) -> &[f64] {
        &self.values[..self.values.len() - 1]
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            values: vec![0.0; self.values.len()],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Gradients of one bag's loss.
#[derive(Clone, Debug)]
pub struct BagGradients {
    pub loss: f64,
    /// Same layout as [`ModelParams`]; the last entry is `dL/dalpha`.
    pub params: ModelParams,
    /// `dL/d(instance pixels)` per slot when requested; `None` for padded slots
    /// (their gradient is identically zero).
    pub inputs: Option<Vec<Option<Array3<f64>>>>,
}

#[derive(Clone, Debug)]
pub struct MilModel<E = ConvEncoder> {
    encoder: E,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn ensure_finite(values: ArrayView1<f64>, what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

impl MilModel<ConvEncoder> {
    pub fn conv(config: EncoderConfig) -> Result<Self> {
        Ok(Self::new(ConvEncoder::new(config)?))
    }
}

impl<E: InstanceEncoder> MilModel<E> {
    pub fn new(encoder: E) -> Self {
        Self { encoder }
    }

    pub fn encoder(&self) -> &E {
        &self.encoder
    }

    pub fn n_classes(&self) -> usize {
        self.encoder.n_classes()
    }

    pub fn n_params(&self) -> usize {
        self.encoder.n_params() + 1
    }

    pub fn init_params(&self, seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = self.encoder.init_params(&mut rng);
        values.push(ALPHA_INIT);
        ModelParams { values }
    }

    fn check_params(&self, params: &ModelParams) -> Result<()> {
        if params.values.len() != self.n_params() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters, model expects {}",
                params.values.len(),
                self.n_params()
            )));
        }
        Ok(())
    }

    fn check_bag(&self, bag: &RecordingBag) -> Result<()> {
        if bag.labels.len() != self.n_classes() {
            return Err(Error::ShapeMismatch(format!(
                "bag has {} labels, model has {} classes",
                bag.labels.len(),
                self.n_classes()
            )));
        }
        if bag.instances.len() != bag.mask.len() {
            return Err(Error::ShapeMismatch("mask and instances differ in length".into()));
        }
        if !bag.mask.iter().any(|&m| m) {
            return Err(Error::AllMasked);
        }
        Ok(())
    }

    /// Per-class probabilities of one instance.
    pub fn instance_probs(&self, params: &ModelParams, instance: &Array3<f64>) -> Result<Array1<f64>> {
        self.check_params(params)?;
        let (logits, _) = self.encoder.forward(params.encoder_values(), instance.view())?;
        ensure_finite(logits.view(), "instance logits")?;
        Ok(logits.mapv(sigmoid))
    }

    /// Recording-level probabilities.
    pub fn forward_bag(&self, params: &ModelParams, bag: &RecordingBag) -> Result<Array1<f64>> {
        self.check_params(params)?;
        self.check_bag(bag)?;
        let c = self.n_classes();
        let mut probs = Array2::zeros((bag.mask.len(), c));
        for (i, (x, &live)) in bag.instances.iter().zip(&bag.mask).enumerate() {
            if live {
                probs.row_mut(i).assign(&self.instance_probs(params, x)?);
            }
        }
        let pooled = autopool(probs.view(), &bag.mask, params.alpha())?;
        ensure_finite(pooled.view(), "pooled probabilities")?;
        Ok(pooled)
    }

    pub fn bag_loss(&self, params: &ModelParams, bag: &RecordingBag) -> Result<f64> {
        let pooled = self.forward_bag(params, bag)?;
        bce_loss(pooled.as_slice().expect("contiguous"), &bag.labels)
    }

    /// Exact gradients of `bce(autopool(encoder(bag)))` with respect to
    /// every parameter including `alpha`.
    pub fn compute_gradients(
        &self,
        params: &ModelParams,
        bag: &RecordingBag,
        want_inputs: bool,
    ) -> Result<BagGradients> {
        self.check_params(params)?;
        self.check_bag(bag)?;
        let c = self.n_classes();
        let slots = bag.mask.len();
        let enc_params = params.encoder_values();
        let alpha = params.alpha();

        let mut caches = Vec::with_capacity(slots);
        let mut probs = Array2::zeros((slots, c));
        for (i, (x, &live)) in bag.instances.iter().zip(&bag.mask).enumerate() {
            if live {
                let (logits, cache) = self.encoder.forward(enc_params, x.view())?;
                ensure_finite(logits.view(), "instance logits")?;
                probs.row_mut(i).assign(&logits.mapv(sigmoid));
                caches.push(Some(cache));
            } else {
                caches.push(None);
            }
        }
        let trace = autopool::autopool_trace(probs.view(), &bag.mask, alpha)?;
        ensure_finite(trace.pooled.view(), "pooled probabilities")?;
        let pooled = trace.pooled.as_slice().expect("contiguous");
        let loss = bce_loss(pooled, &bag.labels)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }

        let d_pooled = loss::bce_grad(pooled, &bag.labels);
        let (d_probs, d_alpha) = autopool::autopool_backward(probs.view(), &trace, alpha, &d_pooled);

        let mut grads = vec![0.0; self.n_params()];
        let mut inputs = want_inputs.then(|| Vec::with_capacity(slots));
        for (i, cache) in caches.iter().enumerate() {
            let Some(cache) = cache else {
                if let Some(v) = inputs.as_mut() {
                    v.push(None);
                }
                continue;
            };
            let p = probs.row(i);
            let d_logits: Array1<f64> = d_probs
                .row(i)
                .iter()
                .zip(p.iter())
                .map(|(&d, &p)| d * p * (1.0 - p))
                .collect();
            let d_x = self.encoder.backward(
                enc_params,
                cache,
                d_logits.view(),
                &mut grads[..self.encoder.n_params()],
                want_inputs,
            );
            if let Some(v) = inputs.as_mut() {
                v.push(d_x);
            }
        }
        *grads.last_mut().expect("alpha slot") = d_alpha;
        Ok(BagGradients {
            loss,
            params: ModelParams { values: grads },
            inputs,
        })
    }

    /// `[n_recordings, C]` recording-level probabilities.
    pub fn predict(&self, params: &ModelParams, bags: &[RecordingBag]) -> Result<Array2<f64>> {
        let rows: Vec<Array1<f64>> = bags
            .par_iter()
            .map(|bag| self.forward_bag(params, bag))
            .collect::<Result<_>>()?;
        let mut out = Array2::zeros((bags.len(), self.n_classes()));
        for (mut dst, row) in out.outer_iter_mut().zip(rows) {
            dst.assign(&row);
        }
        Ok(out)
    }
}

/// Serialized model: configuration plus every weight and `alpha`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub params: ModelParams,
}

impl Checkpoint {
    pub const FORMAT_VERSION: u32 = 1;

    pub fn new(encoder: EncoderConfig, train: TrainConfig, params: ModelParams) -> Self {
        Self {
            format_version: Self::FORMAT_VERSION,
            encoder,
            train,
            params,
        }
    }

    pub fn model(&self) -> Result<MilModel> {
        let model = MilModel::conv(self.encoder.clone())?;
        model.check_params(&self.params)?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_json(path, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ckpt: Self = crate::io::read_json(path)?;
        if ckpt.format_version != Self::FORMAT_VERSION {
            return Err(Error::Serde(format!(
                "unsupported checkpoint version {}",
                ckpt.format_version
            )));
        }
        Ok(ckpt)
    }
}
