//! Low-rank adaptation of frozen projections.
//!
//! A frozen weight `W0: (d_out, d_in)` is augmented with a trainable
//! rank-`r` update applied to its output: `h = W0 h0 + (alpha/r) A (B h0)`
//! with the up-projection `A: (d_out, r)` drawn from N(0, 1/sqrt(r)) and
//! the down-projection `B: (r, d_in)` starting at zero, so the adapted map
//! equals the frozen map at initialization.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::init;
use crate::nn::linear::Linear;
use crate::nn::param::{join, Param2, ParamSlot, VisitParams};
use crate::nn::Scalar;

/// Rank and scale hyperparameters. Defaults: r = 8, alpha = 16.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoraSettings {
    pub rank: usize,
    pub alpha: f64,
}

impl Default for LoraSettings {
    fn default() -> Self {
        Self {
            rank: 8,
            alpha: 16.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoraAdapter<T> {
    /// Up-projection `(d_out, r)`.
    pub a: Param2<T>,
    /// Down-projection `(r, d_in)`; all-zero right after initialization.
    pub b: Param2<T>,
    pub rank: usize,
    pub alpha: f64,
    /// Identifier of the wrapped projection, e.g. `layer.3.attn.q`.
    pub target: String,
}

/// Fresh adapter: `A ~ N(0, 1/sqrt(r))`, `B = 0`, deterministic in `seed`.
pub fn init_adapter<T: Scalar>(
    d_in: usize,
    d_out: usize,
    rank: usize,
    alpha: f64,
    seed: u64,
    target: impl Into<String>,
) -> Result<LoraAdapter<T>> {
    if rank == 0 || rank > d_in.min(d_out) {
        return Err(Error::Argument(format!(
            "LoRA rank {rank} out of range 1..={}",
            d_in.min(d_out)
        )));
    }
    if alpha <= 0.0 {
        return Err(Error::Argument("LoRA alpha must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = 1.0 / (rank as f64).sqrt();
    Ok(LoraAdapter {
        a: Param2::new(init::normal((d_out, rank), std, &mut rng), true),
        b: Param2::new(Array2::zeros((rank, d_in)), true),
        rank,
        alpha,
        target: target.into(),
    })
}

impl<T: Scalar> LoraAdapter<T> {
    pub fn d_in(&self) -> usize {
        self.b.value.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.a.value.nrows()
    }

    /// Trainable scalars added by this adapter: `r * (d_in + d_out)`.
    pub fn parameter_count(&self) -> usize {
        self.rank * (self.d_in() + self.d_out())
    }

    fn scale(&self) -> T {
        T::from_f64(self.alpha / self.rank as f64)
    }

    /// Low-rank delta for a `(tokens, d_in)` batch: `(alpha/r) (x B^T) A^T`.
    pub fn delta(&self, x: &Array2<T>) -> Array2<T> {
        let down = x.dot(&self.b.value.t());
        down.dot(&self.a.value.t()) * self.scale()
    }
}

/// Adapted forward for a `(tokens, d_in)` batch:
/// `x W0^T + (alpha/r) (x B^T) A^T`. `W0` is never modified.
pub fn apply<T: Scalar>(
    adapter: &LoraAdapter<T>,
    w0: &Array2<T>,
    x: &Array2<T>,
) -> Result<Array2<T>> {
    check_shapes(adapter, w0)?;
    if x.ncols() != adapter.d_in() {
        return Err(Error::Config(format!(
            "LoRA input width {} does not match d_in {}",
            x.ncols(),
            adapter.d_in()
        )));
    }
    Ok(x.dot(&w0.t()) + adapter.delta(x))
}

/// Fold the adapter into the frozen weight: `W0 + (alpha/r) A B`.
pub fn merge<T: Scalar>(adapter: &LoraAdapter<T>, w0: &Array2<T>) -> Result<Array2<T>> {
    check_shapes(adapter, w0)?;
    Ok(w0 + &(adapter.a.value.dot(&adapter.b.value) * adapter.scale()))
}

fn check_shapes<T: Scalar>(adapter: &LoraAdapter<T>, w0: &Array2<T>) -> Result<()> {
    if w0.dim() != (adapter.d_out(), adapter.d_in()) {
        return Err(Error::Config(format!(
            "LoRA adapter ({}, {}) does not match weight {:?}",
            adapter.d_out(),
            adapter.d_in(),
            w0.dim()
        )));
    }
    Ok(())
}

/// A dense layer with an optional LoRA adapter on its output.
#[derive(Debug, Clone)]
pub struct LoraLinear<T> {
    pub base: Linear<T>,
    pub adapter: Option<LoraAdapter<T>>,
}

/// Forward cache: the layer input and the down-projected activations.
pub struct LoraLinearCache<T> {
    x: Array2<T>,
    down: Option<Array2<T>>,
}

impl<T: Scalar> LoraLinear<T> {
    pub fn plain(base: Linear<T>) -> Self {
        Self {
            base,
            adapter: None,
        }
    }

    pub fn forward(&self, x: &Array2<T>) -> Array2<T> {
        let (y, _) = self.forward_train(x);
        y
    }

    pub fn forward_train(&self, x: &Array2<T>) -> (Array2<T>, LoraLinearCache<T>) {
        let mut y = self.base.forward(x);
        let mut down = None;
        if let Some(adapter) = &self.adapter {
            let d = x.dot(&adapter.b.value.t());
            y = y + d.dot(&adapter.a.value.t()) * adapter.scale();
            down = Some(d);
        }
        (
            y,
            LoraLinearCache {
                x: x.clone(),
                down,
            },
        )
    }

    /// Accumulates base and adapter gradients; returns `dx`.
    pub fn backward(&mut self, dy: &Array2<T>, cache: &LoraLinearCache<T>) -> Array2<T> {
        let mut dx = self.base.backward(&cache.x, dy);
        if let Some(adapter) = &mut self.adapter {
            let scale = adapter.scale();
            let down = cache.down.as_ref().expect("adapter cache present");
            // dA += s dy^T (x B^T); dB += s (dy A)^T x; dx += s dy A B
            let dy_a = dy.dot(&adapter.a.value); // (tokens, r)
            adapter.a.grad = &adapter.a.grad + &(dy.t().dot(down) * scale);
            adapter.b.grad = &adapter.b.grad + &(dy_a.t().dot(&cache.x) * scale);
            dx = dx + dy_a.dot(&adapter.b.value) * scale;
        }
        dx
    }
}

impl<T: Scalar> VisitParams<T> for LoraLinear<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, ParamSlot<'_, T>)) {
        f(join(prefix, "weight"), self.base.weight.slot());
        f(join(prefix, "bias"), self.base.bias.slot());
        if let Some(adapter) = &mut self.adapter {
            f(join(prefix, "lora.a"), adapter.a.slot());
            f(join(prefix, "lora.b"), adapter.b.slot());
        }
    }
}

/// Largest elementwise relative difference with a small absolute floor.
pub fn max_rel_diff<T: Scalar>(a: &Array2<T>, b: &Array2<T>) -> f64 {
    let mut worst = 0.0f64;
    for (x, y) in a.iter().zip(b.iter()) {
        let x = x.as_f64();
        let y = y.as_f64();
        let denom = x.abs().max(y.abs()).max(1e-6);
        worst = worst.max((x - y).abs() / denom);
    }
    worst
}

/// Infinity-norm difference relative to the larger infinity norm. The
/// whole-tensor comparison used for the 32-bit equivalence checks, where
/// elementwise relative error is dominated by cancellation.
pub fn norm_rel_diff<T: Scalar>(a: &Array2<T>, b: &Array2<T>) -> f64 {
    let inf = |m: &Array2<T>| {
        m.iter()
            .map(|v| v.as_f64().abs())
            .fold(0.0f64, f64::max)
    };
    let diff = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x.as_f64() - y.as_f64()).abs())
        .fold(0.0f64, f64::max);
    diff / inf(a).max(inf(b)).max(1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::Rng;

    #[test]
    fn fresh_adapter_is_identity() {
        let adapter = init_adapter::<f64>(4, 3, 2, 8.0, 0, "t").unwrap();
        assert!(adapter.b.value.iter().all(|&v| v == 0.0));
        let w0 = arr2(&[
            [1.0, 0.0, 2.0, 0.0],
            [0.0, 1.0, 0.0, 2.0],
            [1.0, 1.0, 1.0, 1.0],
        ]);
        let x = arr2(&[[1.0, 2.0, 3.0, 4.0]]);
        let adapted = apply(&adapter, &w0, &x).unwrap();
        let frozen = x.dot(&w0.t());
        assert_eq!(adapted, frozen);
    }

    #[test]
    fn hand_computed_rank_one_case() {
        // d_in = d_out = 2, r = 1, alpha = r, W0 = 0
        let mut adapter = init_adapter::<f64>(2, 2, 1, 1.0, 0, "t").unwrap();
        adapter.a.value = arr2(&[[1.0], [0.0]]);
        adapter.b.value = arr2(&[[1.0, 1.0]]);
        let w0 = Array2::zeros((2, 2));
        let x = arr2(&[[1.0, 1.0]]);
        let out = apply(&adapter, &w0, &x).unwrap();
        assert_eq!(out, arr2(&[[2.0, 0.0]]));
    }

    #[test]
    fn parameter_count_formula() {
        let adapter = init_adapter::<f64>(64, 64, 4, 8.0, 1, "t").unwrap();
        assert_eq!(adapter.parameter_count(), 512);
    }

    #[test]
    fn deterministic_in_seed() {
        let a = init_adapter::<f64>(16, 8, 4, 8.0, 123, "t").unwrap();
        let b = init_adapter::<f64>(16, 8, 4, 8.0, 123, "t").unwrap();
        assert_eq!(a.a.value, b.a.value);
        let c = init_adapter::<f64>(16, 8, 4, 8.0, 124, "t").unwrap();
        assert_ne!(a.a.value, c.a.value);
    }

    #[test]
    fn rank_out_of_range_is_rejected() {
        assert!(matches!(
            init_adapter::<f64>(4, 8, 0, 8.0, 0, "t"),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            init_adapter::<f64>(4, 8, 5, 8.0, 0, "t"),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn doubling_alpha_doubles_the_delta() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut adapter = init_adapter::<f64>(5, 4, 2, 8.0, 3, "t").unwrap();
        adapter.b.value = init::uniform((2, 5), 0.5, &mut rng);
        let x: Array2<f64> = init::uniform((3, 5), 1.0, &mut rng);
        let d1 = adapter.delta(&x);
        adapter.alpha *= 2.0;
        let d2 = adapter.delta(&x);
        assert!(max_rel_diff(&(d1 * 2.0), &d2) < 1e-12);
    }

    #[test]
    fn merge_equals_apply() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for seed in 0..5u64 {
            let mut adapter = init_adapter::<f32>(6, 4, 2, 16.0, seed, "t").unwrap();
            adapter.b.value = init::uniform((2, 6), 0.5, &mut rng);
            let w0: Array2<f32> = init::uniform((4, 6), 1.0, &mut rng);
            let x: Array2<f32> = init::uniform((2, 6), 1.0, &mut rng);
            let merged = merge(&adapter, &w0).unwrap();
            let via_merge = x.dot(&merged.t());
            let via_apply = apply(&adapter, &w0, &x).unwrap();
            assert!(norm_rel_diff(&via_merge, &via_apply) < 1e-6);
        }
    }

    #[test]
    fn merging_zero_adapter_is_identity() {
        let adapter = init_adapter::<f64>(3, 3, 1, 4.0, 0, "t").unwrap();
        let w0 = arr2(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]]);
        assert_eq!(merge(&adapter, &w0).unwrap(), w0);
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let adapter = init_adapter::<f64>(3, 3, 1, 4.0, 0, "t").unwrap();
        let w0 = Array2::<f64>::zeros((4, 3));
        assert!(matches!(merge(&adapter, &w0), Err(Error::Config(_))));
    }

    proptest::proptest! {
        #[test]
        fn delta_is_linear_in_b(seed in 0u64..30) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut adapter = init_adapter::<f64>(4, 4, 2, 8.0, seed, "t").unwrap();
            adapter.b.value = init::uniform((2, 4), 1.0, &mut rng);
            let x: Array2<f64> = init::uniform((3, 4), 1.0, &mut rng);
            let scale: f64 = rng.random_range(0.5..3.0);
            let d1 = adapter.delta(&x);
            adapter.b.value = adapter.b.value.mapv(|v| v * scale);
            let d2 = adapter.delta(&x);
            proptest::prop_assert!(max_rel_diff(&(d1 * scale), &d2) < 1e-9);
        }
    }
}
