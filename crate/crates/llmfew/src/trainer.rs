//! Episode training loop and test-split evaluation.
//!
//! Full-batch gradient steps over the episode (mini-batches when configured
//! for full-train runs), Adam with a step-decayed learning rate, global
//! gradient-norm clipping at 1.0, and a fixed epoch budget with no early
//! stopping.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::head::cross_entropy;
use crate::model::{argmax, Model};
use crate::nn::init::mix_seed;
use crate::nn::param::{
    clip_global_grad_norm, trainable_names, zero_grads, ParamSlot, VisitParams,
};
use crate::nn::Scalar;
use crate::sampler::Episode;

pub const GRAD_CLIP_NORM: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
    /// f32 compute with parameters rounded to bfloat16 after each step.
    Bf16,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_base_lr")]
    pub base_lr: f64,
    #[serde(default = "default_decay_factor")]
    pub decay_factor: f64,
    #[serde(default = "default_decay_every")]
    pub decay_every: usize,
    /// `None` trains on the whole episode each step.
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default = "default_precision")]
    pub precision: Precision,
    #[serde(default)]
    pub seed: u64,
}

fn default_epochs() -> usize {
    200
}
fn default_base_lr() -> f64 {
    2e-4
}
fn default_decay_factor() -> f64 {
    0.8
}
fn default_decay_every() -> usize {
    50
}
fn default_precision() -> Precision {
    Precision::F32
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            base_lr: default_base_lr(),
            decay_factor: default_decay_factor(),
            decay_every: default_decay_every(),
            batch_size: None,
            precision: default_precision(),
            seed: 0,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Argument("epochs must be >= 1".into()));
        }
        if self.base_lr <= 0.0 {
            return Err(Error::Argument("base_lr must be positive".into()));
        }
        if self.decay_factor <= 0.0 || self.decay_factor > 1.0 {
            return Err(Error::Argument("decay_factor must be in (0, 1]".into()));
        }
        if self.decay_every == 0 {
            return Err(Error::Argument("decay_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// `base_lr * decay_factor^(epoch / decay_every)` with integer division.
pub fn lr_at_epoch(sched: &TrainSchedule, epoch: usize) -> Result<f64> {
    if epoch >= sched.epochs {
        return Err(Error::Argument(format!(
            "epoch {epoch} out of range 0..{}",
            sched.epochs
        )));
    }
    Ok(sched.base_lr * sched.decay_factor.powi((epoch / sched.decay_every) as i32))
}

/// Per-epoch traces; each vector has exactly `epochs` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub loss: Vec<f64>,
    pub train_accuracy: Vec<f64>,
    pub learning_rate: Vec<f64>,
}

/// Adaptive-moment optimizer over the trainable parameters reachable from a
/// visitor. Moments are keyed by parameter name.
pub struct Adam<T> {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    moments: HashMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Scalar> Adam<T> {
    pub fn new() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn step(&mut self, model: &mut dyn VisitParams<T>, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        let (nb1, nb2) = (T::from_f64(1.0 - self.beta1), T::from_f64(1.0 - self.beta2));
        let eps = T::from_f64(self.eps);
        let lr1 = T::from_f64(lr / bc1);
        let inv_bc2 = T::from_f64(1.0 / bc2);
        let moments = &mut self.moments;
        model.visit_params("", &mut |name, p: ParamSlot<'_, T>| {
            if !*p.trainable {
                return;
            }
            let (m, v) = moments
                .entry(name)
                .or_insert_with(|| (vec![T::zero(); p.value.len()], vec![T::zero(); p.value.len()]));
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + nb1 * g;
                v[i] = b2 * v[i] + nb2 * g * g;
                let vhat = v[i] * inv_bc2;
                p.value[i] -= lr1 * m[i] / (vhat.sqrt() + eps);
            }
        });
    }
}

impl<T: Scalar> Default for Adam<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Optimize the trainable parameters on an episode. Only trainable
/// parameters move; the per-epoch loss, train accuracy and learning rate
/// are recorded. Deterministic in `(model init, episode, sched.seed)`.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    train_split: &Dataset,
    episode: &Episode,
    sched: &TrainSchedule,
) -> Result<TrainHistory> {
    sched.validate()?;
    if episode.is_empty() {
        return Err(Error::Argument("episode is empty".into()));
    }
    if let Some(&bad) = episode
        .train_indices
        .iter()
        .find(|&&i| i >= train_split.len())
    {
        return Err(Error::Argument(format!(
            "episode index {bad} out of range for train split of {}",
            train_split.len()
        )));
    }

    assert_parameter_partition(model)?;

    let labels = train_split.label_indices();
    let episode_labels: Vec<usize> = episode.train_indices.iter().map(|&i| labels[i]).collect();
    let episode_values: Vec<&ndarray::Array2<f64>> = episode
        .train_indices
        .iter()
        .map(|&i| &train_split.instances[i].values)
        .collect();

    let n = episode_values.len();
    let batch_size = sched.batch_size.unwrap_or(n).max(1).min(n);
    let mut optimizer = Adam::<T>::new();
    let mut history = TrainHistory {
        loss: Vec::with_capacity(sched.epochs),
        train_accuracy: Vec::with_capacity(sched.epochs),
        learning_rate: Vec::with_capacity(sched.epochs),
    };

    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..sched.epochs {
        let lr = lr_at_epoch(sched, epoch)?;
        if batch_size < n {
            let mut rng =
                ChaCha8Rng::seed_from_u64(mix_seed(sched.seed, 0x5eed_0000 + epoch as u64));
            for i in (1..order.len()).rev() {
                let j = rng.random_range(0..=i);
                order.swap(i, j);
            }
        }

        let mut epoch_loss = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(batch_size) {
            zero_grads(model);
            for &idx in chunk {
                let cache = model.forward_train(episode_values[idx])?;
                let loss = cross_entropy(&cache.head.probs, episode_labels[idx])?.as_f64();
                if !loss.is_finite() {
                    return Err(Error::Training {
                        epoch,
                        msg: format!("non-finite loss {loss} on episode instance {idx}"),
                    });
                }
                epoch_loss += loss;
                if argmax(&cache.head.probs) == episode_labels[idx] {
                    correct += 1;
                }
                model.backward(&cache, episode_labels[idx])?;
            }
            let scale = T::from_f64(1.0 / chunk.len() as f64);
            model.visit_params("", &mut |_, p| {
                if *p.trainable {
                    for g in p.grad.iter_mut() {
                        *g *= scale;
                    }
                }
            });
            clip_global_grad_norm(model, GRAD_CLIP_NORM);
            optimizer.step(model, lr);
            if sched.precision == Precision::Bf16 {
                model.visit_params("", &mut |_, p| {
                    if *p.trainable {
                        for v in p.value.iter_mut() {
                            *v = v.round_bf16();
                        }
                    }
                });
            }
        }

        history.loss.push(epoch_loss / n as f64);
        history.train_accuracy.push(correct as f64 / n as f64);
        history.learning_rate.push(lr);
    }
    Ok(history)
}

/// The trainable set must be exactly encoder + adapters + head; everything
/// frozen must live under the backbone.
fn assert_parameter_partition<T: Scalar>(model: &mut Model<T>) -> Result<()> {
    let names = trainable_names(model);
    if names.is_empty() {
        return Err(Error::Config("no trainable parameters".into()));
    }
    for name in &names {
        let ok = name.starts_with("encoder.") || name.starts_with("head.") || name.contains(".lora.");
        if !ok {
            return Err(Error::Config(format!(
                "parameter {name} is trainable but belongs to the frozen backbone"
            )));
        }
    }
    let mut frozen_outside_backbone = Vec::new();
    model.visit_params("", &mut |name, p| {
        if !*p.trainable && !name.starts_with("backbone.") {
            frozen_outside_backbone.push(name);
        }
    });
    if !frozen_outside_backbone.is_empty() {
        return Err(Error::Config(format!(
            "frozen parameters outside the backbone: {frozen_outside_backbone:?}"
        )));
    }
    Ok(())
}

/// Fraction of test instances whose argmax class matches the true label.
pub fn evaluate<T: Scalar>(model: &Model<T>, test_split: &Dataset) -> Result<f64> {
    if test_split.is_empty() {
        return Err(Error::Argument("test split is empty".into()));
    }
    let labels = test_split.label_indices();
    let mut predictions = Vec::with_capacity(test_split.len());
    for inst in &test_split.instances {
        predictions.push(model.predict(&inst.values)?);
    }
    Ok(accuracy_from_predictions(&predictions, &labels))
}

pub fn accuracy_from_predictions(predictions: &[usize], labels: &[usize]) -> f64 {
    assert_eq!(predictions.len(), labels.len());
    let correct = predictions
        .iter()
        .zip(labels.iter())
        .filter(|(p, l)| p == l)
        .count();
    correct as f64 / labels.len() as f64
}
