//! Mini-batch AdamW training with a cosine-annealed learning rate.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BagGradients, InstanceEncoder, MilModel, ModelParams, RecordingBag};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_init: f64,
    pub lr_final: f64,
    pub epochs: usize,
    /// Recordings per optimizer step.
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Decoupled decay, applied to conv and head weights only.
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_init: 3e-3,
            lr_final: 1e-6,
            epochs: 20,
            batch_size: 16,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 1e-2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_final < self.lr_init && self.lr_final >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "need 0 <= lr_final < lr_init, got {} and {}",
                self.lr_final, self.lr_init
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParameter("epochs and batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Learning rate annealed from `lr_init` at step 0 to `lr_final` at step
/// `total_steps - 1` along half a cosine period.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CosineSchedule {
    pub lr_init: f64,
    pub lr_final: f64,
    pub total_steps: usize,
}

impl CosineSchedule {
    pub fn lr(&self, step: usize) -> f64 {
        if self.total_steps <= 1 {
            return self.lr_init;
        }
        let progress = step.min(self.total_steps - 1) as f64 / (self.total_steps - 1) as f64;
        self.lr_final + 0.5 * (self.lr_init - self.lr_final) * (1.0 + (PI * progress).cos())
    }
}

struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    decay: Vec<bool>,
}

impl AdamW {
    fn new(n: usize, decay: Vec<bool>) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            decay,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            if self.decay[i] {
                params[i] *= 1.0 - lr * cfg.weight_decay;
            }
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Mean bag loss seen during each epoch (before each step's update).
    pub epoch_losses: Vec<f64>,
    /// Learning rate used at every optimizer step.
    pub lr_trace: Vec<f64>,
}

impl<E: InstanceEncoder> MilModel<E> {
    /// Trains from a fresh initialisation seeded by `config.seed`.
    ///
    /// Bag gradients inside a batch are computed in parallel and summed in
    /// batch order, so results are bit-identical for a given seed.
    pub fn train(&self, dataset: &[RecordingBag], config: &TrainConfig) -> Result<TrainOutcome> {
        config.validate()?;
        if dataset.is_empty() {
            return Err(Error::InvalidParameter("empty training set".into()));
        }
        for bag in dataset {
            self.check_bag(bag)?;
        }
        let mut params = self.init_params(config.seed);
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
        shuffle_rng.set_stream(1);

        let mut decay = self.encoder.decay_mask();
        decay.push(false);
        let mut opt = AdamW::new(params.values.len(), decay);

        let steps_per_epoch = dataset.len().div_ceil(config.batch_size);
        let schedule = CosineSchedule {
            lr_init: config.lr_init,
            lr_final: config.lr_final,
            total_steps: steps_per_epoch * config.epochs,
        };
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        let mut epoch_losses = Vec::with_capacity(config.epochs);
        let mut lr_trace = Vec::with_capacity(schedule.total_steps);
        let mut step = 0;

        for _ in 0..config.epochs {
            order.shuffle(&mut shuffle_rng);
            let mut epoch_loss = 0.0;
            for batch in order.chunks(config.batch_size) {
                let results: Vec<BagGradients> = batch
                    .par_iter()
                    .map(|&i| self.compute_gradients(&params, &dataset[i], false))
                    .collect::<Result<_>>()
                    .map_err(|e| match e {
                        Error::NonFinite(_) => Error::Diverged {
                            step,
                            loss: f64::NAN,
                        },
                        other => other,
                    })?;
                let mut grad = vec![0.0; params.values.len()];
                let mut batch_loss = 0.0;
                for r in &results {
                    batch_loss += r.loss;
                    for (g, v) in grad.iter_mut().zip(&r.params.values) {
                        *g += v;
                    }
                }
                let scale = 1.0 / batch.len() as f64;
                grad.iter_mut().for_each(|g| *g *= scale);
                if !batch_loss.is_finite() {
                    return Err(Error::Diverged {
                        step,
                        loss: batch_loss * scale,
                    });
                }
                epoch_loss += batch_loss;

                let lr = schedule.lr(step);
                lr_trace.push(lr);
                opt.step(&mut params.values, &grad, lr, config);
                if !params.is_finite() {
                    return Err(Error::Diverged {
                        step,
                        loss: batch_loss * scale,
                    });
                }
                step += 1;
            }
            let mean = epoch_loss / dataset.len() as f64;
            log::debug!("epoch {} loss {mean:.5}", epoch_losses.len());
            epoch_losses.push(mean);
        }
        Ok(TrainOutcome {
            params,
            epoch_losses,
            lr_trace,
        })
    }
}
