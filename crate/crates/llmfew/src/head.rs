//! Classification head: fuse encoder and decoder outputs, flatten, and map
//! to class probabilities.
//!
//! The fused representation is `ReLU(H_e + H_d)`. The head flattens it
//! position-major (token 0's features first), applies a linear map to the
//! `N` logits, a layer norm over those logits, then softmax. The layer norm
//! sits after the linear map; `LnPosition::None` disables it for ablation.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::activation::{relu, relu_backward};
use crate::nn::linear::Linear;
use crate::nn::norm::{softmax, softmax_backward, AffineLayerNorm, LnCache};
use crate::nn::param::{join, ParamSlot, VisitParams};
use crate::nn::Scalar;

/// Probabilities below this floor are clamped before the log in the loss.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LnPosition {
    /// Linear -> LayerNorm -> Softmax.
    Paper,
    /// Linear -> Softmax (identity norm).
    None,
}

/// `H_e + H_d` through an elementwise ReLU. Returns the output and the
/// pre-activation sum needed by [`fuse_backward`].
pub fn fuse<T: Scalar>(h_e: &Array2<T>, h_d: &Array2<T>) -> Result<(Array2<T>, Array2<T>)> {
    if h_e.dim() != h_d.dim() {
        return Err(Error::Config(format!(
            "fuse shapes differ: {:?} vs {:?}",
            h_e.dim(),
            h_d.dim()
        )));
    }
    let pre = h_e + h_d;
    Ok((relu(&pre), pre))
}

/// Gradient of [`fuse`] with respect to both inputs (they are equal).
pub fn fuse_backward<T: Scalar>(d_h: &Array2<T>, pre: &Array2<T>) -> Array2<T> {
    relu_backward(d_h, pre)
}

/// `-log(probs[label])` with the probability clamped at [`PROB_FLOOR`].
pub fn cross_entropy<T: Scalar>(probs: &Array1<T>, label: usize) -> Result<T> {
    if label >= probs.len() {
        return Err(Error::Argument(format!(
            "label {label} out of range for {} classes",
            probs.len()
        )));
    }
    let p = probs[label].max(T::from_f64(PROB_FLOOR));
    Ok(-p.ln())
}

#[derive(Debug, Clone)]
pub struct Head<T> {
    pub linear: Linear<T>,
    pub norm: AffineLayerNorm<T>,
    pub ln_position: LnPosition,
}

pub struct HeadCache<T> {
    flat: Array2<T>,
    ln: Option<LnCache<T>>,
    pub probs: Array1<T>,
    tokens: usize,
    d_model: usize,
}

impl<T: Scalar> Head<T> {
    pub fn new(
        n_tokens: usize,
        d_model: usize,
        num_classes: usize,
        ln_position: LnPosition,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            linear: Linear::new(n_tokens * d_model, num_classes, &mut rng, true),
            norm: AffineLayerNorm::new(num_classes, true),
            ln_position,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.linear.d_out()
    }

    /// Class probabilities for a fused `(n_tokens, d_model)` representation.
    pub fn classify(&self, h: &Array2<T>) -> Result<Array1<T>> {
        self.forward_train(h).map(|c| c.probs)
    }

    pub fn forward_train(&self, h: &Array2<T>) -> Result<HeadCache<T>> {
        let (tokens, d_model) = h.dim();
        let width = tokens * d_model;
        if width != self.linear.d_in() {
            return Err(Error::Config(format!(
                "head expects flattened width {}, got {width}",
                self.linear.d_in()
            )));
        }
        // position-major flatten: row-major over (tokens, d_model)
        let flat = h
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((1, width))
            .expect("standard layout");
        let logits = self.linear.forward(&flat);
        let (pre_softmax, ln) = match self.ln_position {
            LnPosition::Paper => {
                let (y, cache) = self.norm.forward(&logits);
                (y, Some(cache))
            }
            LnPosition::None => (logits, None),
        };
        let probs = softmax(&pre_softmax.row(0).to_owned());
        Ok(HeadCache {
            flat,
            ln,
            probs,
            tokens,
            d_model,
        })
    }

    /// Backward of `classify` composed with the cross-entropy loss for one
    /// label. Accumulates head gradients and returns the gradient with
    /// respect to the fused `(n_tokens, d_model)` input.
    pub fn backward_cross_entropy(
        &mut self,
        cache: &HeadCache<T>,
        label: usize,
    ) -> Result<Array2<T>> {
        let n = cache.probs.len();
        if label >= n {
            return Err(Error::Argument(format!(
                "label {label} out of range for {n} classes"
            )));
        }
        // d(-log max(p, floor))/dp is 0 below the clamp
        let mut d_probs = Array1::zeros(n);
        let p = cache.probs[label];
        if p.as_f64() >= PROB_FLOOR {
            d_probs[label] = -T::one() / p;
        }
        let d_pre = softmax_backward(&d_probs, &cache.probs)
            .into_shape_with_order((1, n))
            .expect("contiguous");
        let d_logits = match (&self.ln_position, &cache.ln) {
            (LnPosition::Paper, Some(ln)) => self.norm.backward(&d_pre, ln),
            _ => d_pre,
        };
        let d_flat = self.linear.backward(&cache.flat, &d_logits);
        Ok(d_flat
            .into_shape_with_order((cache.tokens, cache.d_model))
            .expect("contiguous"))
    }
}

impl<T: Scalar> VisitParams<T> for Head<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, ParamSlot<'_, T>)) {
        f(join(prefix, "linear.weight"), self.linear.weight.slot());
        f(join(prefix, "linear.bias"), self.linear.bias.slot());
        f(join(prefix, "norm.weight"), self.norm.weight.slot());
        f(join(prefix, "norm.bias"), self.norm.bias.slot());
    }
}
