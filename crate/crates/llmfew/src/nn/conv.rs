//! Causal dilated 1-D convolution, plain and weight-normalized.
//!
//! Sequences are `(channels, time)` matrices. Output position `t` reads the
//! input at `{t, t-dilation, ..., t-(k-1)*dilation}`, with implicit zeros to
//! the left, so outputs never depend on future positions and the output
//! length equals the input length.

use ndarray::{Array1, Array2, Array3};
use rand_chacha::ChaCha8Rng;

use super::init;
use super::param::{Param1, Param3};
use super::scalar::Scalar;

/// Causal convolution of `x: (C_in, T)` with `weight: (C_out, C_in, k)`.
pub fn causal_conv<T: Scalar>(
    x: &Array2<T>,
    weight: &Array3<T>,
    bias: Option<&Array1<T>>,
    dilation: usize,
) -> Array2<T> {
    let (c_in, t_len) = x.dim();
    let (c_out, w_cin, k) = weight.dim();
    assert_eq!(c_in, w_cin, "channel mismatch: input {c_in}, kernel {w_cin}");
    let mut out = Array2::zeros((c_out, t_len));
    for o in 0..c_out {
        let b = bias.map_or(T::zero(), |b| b[o]);
        for t in 0..t_len {
            let mut acc = b;
            for j in 0..k {
                let offset = (k - 1 - j) * dilation;
                if offset > t {
                    continue;
                }
                let src = t - offset;
                for i in 0..c_in {
                    acc += weight[[o, i, j]] * x[[i, src]];
                }
            }
            out[[o, t]] = acc;
        }
    }
    out
}

/// Backward of [`causal_conv`]: returns `(dx, dweight, dbias)`.
pub fn causal_conv_backward<T: Scalar>(
    x: &Array2<T>,
    weight: &Array3<T>,
    dilation: usize,
    dy: &Array2<T>,
) -> (Array2<T>, Array3<T>, Array1<T>) {
    let (c_in, t_len) = x.dim();
    let (c_out, _, k) = weight.dim();
    let mut dx = Array2::zeros((c_in, t_len));
    let mut dw = Array3::zeros((c_out, c_in, k));
    let mut db = Array1::zeros(c_out);
    for o in 0..c_out {
        for t in 0..t_len {
            let g = dy[[o, t]];
            db[o] += g;
            for j in 0..k {
                let offset = (k - 1 - j) * dilation;
                if offset > t {
                    continue;
                }
                let src = t - offset;
                for i in 0..c_in {
                    dw[[o, i, j]] += g * x[[i, src]];
                    dx[[i, src]] += g * weight[[o, i, j]];
                }
            }
        }
    }
    (dx, dw, db)
}

/// Plain causal convolution layer (used for the width-1 projections).
#[derive(Debug, Clone)]
pub struct Conv1d<T> {
    pub weight: Param3<T>,
    pub bias: Param1<T>,
    pub dilation: usize,
}

impl<T: Scalar> Conv1d<T> {
    pub fn new(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        dilation: usize,
        rng: &mut ChaCha8Rng,
        trainable: bool,
    ) -> Self {
        let bound = 1.0 / ((c_in * kernel) as f64).sqrt();
        Self {
            weight: Param3::new(init::uniform((c_out, c_in, kernel), bound, rng), trainable),
            bias: Param1::new(Array1::zeros(c_out), trainable),
            dilation,
        }
    }

    pub fn forward(&self, x: &Array2<T>) -> Array2<T> {
        causal_conv(x, &self.weight.value, Some(&self.bias.value), self.dilation)
    }

    pub fn backward(&mut self, x: &Array2<T>, dy: &Array2<T>) -> Array2<T> {
        let (dx, dw, db) = causal_conv_backward(x, &self.weight.value, self.dilation, dy);
        self.weight.grad = &self.weight.grad + &dw;
        self.bias.grad = &self.bias.grad + &db;
        dx
    }
}

/// Weight-normalized causal convolution.
///
/// The effective kernel is reconstructed per output channel as
/// `magnitude * direction / ||direction||`, so the stored parameters are the
/// direction tensor `(C_out, C_in, k)` and a per-channel magnitude.
#[derive(Debug, Clone)]
pub struct WnConv1d<T> {
    pub direction: Param3<T>,
    pub magnitude: Param1<T>,
    pub bias: Param1<T>,
    pub dilation: usize,
}

impl<T: Scalar> WnConv1d<T> {
    /// Direction from fan-in scaled uniform, magnitude 1, bias 0.
    pub fn new(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        dilation: usize,
        rng: &mut ChaCha8Rng,
        trainable: bool,
    ) -> Self {
        let bound = 1.0 / ((c_in * kernel) as f64).sqrt();
        Self {
            direction: Param3::new(init::uniform((c_out, c_in, kernel), bound, rng), trainable),
            magnitude: Param1::new(Array1::ones(c_out), trainable),
            bias: Param1::new(Array1::zeros(c_out), trainable),
            dilation,
        }
    }

    /// Effective kernel `g * v / ||v||` and the per-channel direction norms.
    pub fn effective_kernel(&self) -> (Array3<T>, Array1<T>) {
        let (c_out, c_in, k) = self.direction.value.dim();
        let mut kernel = Array3::zeros((c_out, c_in, k));
        let mut norms = Array1::zeros(c_out);
        for o in 0..c_out {
            let slice = self.direction.value.index_axis(ndarray::Axis(0), o);
            let norm = slice.iter().map(|&v| v * v).sum::<T>().sqrt();
            norms[o] = norm;
            let scale = self.magnitude.value[o] / norm;
            for i in 0..c_in {
                for j in 0..k {
                    kernel[[o, i, j]] = self.direction.value[[o, i, j]] * scale;
                }
            }
        }
        (kernel, norms)
    }

    pub fn forward(&self, x: &Array2<T>) -> Array2<T> {
        let (kernel, _) = self.effective_kernel();
        causal_conv(x, &kernel, Some(&self.bias.value), self.dilation)
    }

    /// Accumulates direction/magnitude/bias gradients and returns `dx`.
    pub fn backward(&mut self, x: &Array2<T>, dy: &Array2<T>) -> Array2<T> {
        let (kernel, norms) = self.effective_kernel();
        let (dx, dw, db) = causal_conv_backward(x, &kernel, self.dilation, dy);
        let (c_out, c_in, k) = kernel.dim();
        for o in 0..c_out {
            let n = norms[o];
            let g = self.magnitude.value[o];
            // unit direction u = v / n; dg = <dw, u>; dv = (g/n)(dw - <dw,u> u)
            let mut dot = T::zero();
            for i in 0..c_in {
                for j in 0..k {
                    dot += dw[[o, i, j]] * self.direction.value[[o, i, j]] / n;
                }
            }
            self.magnitude.grad[o] += dot;
            let scale = g / n;
            for i in 0..c_in {
                for j in 0..k {
                    let u = self.direction.value[[o, i, j]] / n;
                    self.direction.grad[[o, i, j]] += scale * (dw[[o, i, j]] - dot * u);
                }
            }
        }
        self.bias.grad = &self.bias.grad + &db;
        dx
    }
}
