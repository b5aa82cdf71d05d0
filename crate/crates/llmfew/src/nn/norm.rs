//! Layer normalization and softmax kernels.

use ndarray::{Array1, Array2, Axis};

use super::param::Param1;
use super::scalar::Scalar;

pub const LN_EPS: f64 = 1e-5;

/// Per-row standardization cache: normalized values and 1/std per row.
#[derive(Debug, Clone)]
pub struct LnCache<T> {
    pub xhat: Array2<T>,
    pub inv_std: Array1<T>,
}

/// Standardize each row to zero mean and unit variance (no affine part).
pub fn layer_norm_rows<T: Scalar>(x: &Array2<T>) -> (Array2<T>, LnCache<T>) {
    let (rows, cols) = x.dim();
    let n = T::from_f64(cols as f64);
    let eps = T::from_f64(LN_EPS);
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(rows);
    for (mut row, s) in xhat.axis_iter_mut(Axis(0)).zip(inv_std.iter_mut()) {
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let is = T::one() / (var + eps).sqrt();
        row.mapv_inplace(|v| (v - mean) * is);
        *s = is;
    }
    let cache = LnCache {
        xhat: xhat.clone(),
        inv_std,
    };
    (xhat, cache)
}

/// Backward of [`layer_norm_rows`].
pub fn layer_norm_rows_backward<T: Scalar>(dy: &Array2<T>, cache: &LnCache<T>) -> Array2<T> {
    let (rows, cols) = dy.dim();
    let n = T::from_f64(cols as f64);
    let mut dx = Array2::zeros((rows, cols));
    for r in 0..rows {
        let dyr = dy.row(r);
        let xh = cache.xhat.row(r);
        let mean_dy = dyr.iter().copied().sum::<T>() / n;
        let mean_dy_xhat = dyr
            .iter()
            .zip(xh.iter())
            .map(|(&a, &b)| a * b)
            .sum::<T>()
            / n;
        let is = cache.inv_std[r];
        for c in 0..cols {
            dx[[r, c]] = is * (dyr[c] - mean_dy - xh[c] * mean_dy_xhat);
        }
    }
    dx
}

/// Layer norm with learnable scale and shift, applied row-wise.
#[derive(Debug, Clone)]
pub struct AffineLayerNorm<T> {
    pub weight: Param1<T>,
    pub bias: Param1<T>,
}

impl<T: Scalar> AffineLayerNorm<T> {
    pub fn new(dim: usize, trainable: bool) -> Self {
        Self {
            weight: Param1::new(Array1::ones(dim), trainable),
            bias: Param1::new(Array1::zeros(dim), trainable),
        }
    }

    pub fn forward(&self, x: &Array2<T>) -> (Array2<T>, LnCache<T>) {
        let (xhat, cache) = layer_norm_rows(x);
        let mut y = xhat;
        for mut row in y.axis_iter_mut(Axis(0)) {
            for (v, (&w, &b)) in row
                .iter_mut()
                .zip(self.weight.value.iter().zip(self.bias.value.iter()))
            {
                *v = *v * w + b;
            }
        }
        (y, cache)
    }

    /// Accumulates weight/bias gradients and returns `dx`.
    pub fn backward(&mut self, dy: &Array2<T>, cache: &LnCache<T>) -> Array2<T> {
        let (rows, cols) = dy.dim();
        let mut dxhat = Array2::zeros((rows, cols));
        for r in 0..rows {
            for c in 0..cols {
                self.weight.grad[c] += dy[[r, c]] * cache.xhat[[r, c]];
                self.bias.grad[c] += dy[[r, c]];
                dxhat[[r, c]] = dy[[r, c]] * self.weight.value[c];
            }
        }
        layer_norm_rows_backward(&dxhat, cache)
    }
}

/// Numerically stable softmax of a vector.
pub fn softmax<T: Scalar>(x: &Array1<T>) -> Array1<T> {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let exps = x.mapv(|v| (v - max).exp());
    let sum = exps.iter().copied().sum::<T>();
    exps.mapv(|v| v / sum)
}

/// Backward of softmax: `dx = p .* (dy - sum(dy .* p))`.
pub fn softmax_backward<T: Scalar>(dy: &Array1<T>, probs: &Array1<T>) -> Array1<T> {
    let dot = dy
        .iter()
        .zip(probs.iter())
        .map(|(&a, &b)| a * b)
        .sum::<T>();
    let mut dx = Array1::zeros(dy.len());
    for i in 0..dy.len() {
        dx[i] = probs[i] * (dy[i] - dot);
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2};

    #[test]
    fn rows_are_standardized() {
        let x = arr2(&[[1.0f64, 2.0, 3.0], [10.0, 10.0, 10.0]]);
        let (y, _) = layer_norm_rows(&x);
        let mean: f64 = y.row(0).sum() / 3.0;
        assert!(mean.abs() < 1e-12);
        // constant row maps to zeros through the eps floor
        assert!(y.row(1).iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&arr1(&[2.0f64, 0.0, 0.0, 0.0]));
        assert!((p.sum() - 1.0).abs() < 1e-12);
        assert!((p[0] - 0.7112).abs() < 1e-3);
    }

    #[test]
    fn affine_ln_identity_at_init_scale() {
        let ln = AffineLayerNorm::<f64>::new(4, true);
        let x = arr2(&[[0.5, -1.0, 2.0, 0.0]]);
        let (y, cache) = ln.forward(&x);
        assert_eq!(y, cache.xhat);
    }
}
