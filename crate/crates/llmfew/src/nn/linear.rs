//! Dense layer over token matrices.

use ndarray::{Array1, Array2, Axis};
use rand_chacha::ChaCha8Rng;

use super::init;
use super::param::{Param1, Param2};
use super::scalar::Scalar;

/// `y = x W^T + b` applied to every row of a `(tokens, d_in)` matrix.
/// Weight shape is `(d_out, d_in)`.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub weight: Param2<T>,
    pub bias: Param1<T>,
}

impl<T: Scalar> Linear<T> {
    /// Fan-in scaled uniform init, zero bias.
    pub fn new(d_in: usize, d_out: usize, rng: &mut ChaCha8Rng, trainable: bool) -> Self {
        let bound = 1.0 / (d_in as f64).sqrt();
        Self {
            weight: Param2::new(init::uniform((d_out, d_in), bound, rng), trainable),
            bias: Param1::new(Array1::zeros(d_out), trainable),
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.value.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.weight.value.nrows()
    }

    pub fn forward(&self, x: &Array2<T>) -> Array2<T> {
        let mut y = x.dot(&self.weight.value.t());
        for mut row in y.axis_iter_mut(Axis(0)) {
            row += &self.bias.value;
        }
        y
    }

    /// Accumulates parameter gradients and returns `dx`.
    pub fn backward(&mut self, x: &Array2<T>, dy: &Array2<T>) -> Array2<T> {
        self.weight.grad = &self.weight.grad + &dy.t().dot(x);
        self.bias.grad = &self.bias.grad + &dy.sum_axis(Axis(0));
        dy.dot(&self.weight.value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::SeedableRng;

    #[test]
    fn forward_matches_hand_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut lin = Linear::<f64>::new(2, 3, &mut rng, true);
        lin.weight.value = arr2(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        lin.bias.value = ndarray::arr1(&[0.0, 0.0, 0.5]);
        let x = arr2(&[[2.0, 3.0]]);
        let y = lin.forward(&x);
        assert_eq!(y, arr2(&[[2.0, 3.0, 5.5]]));
    }

    #[test]
    fn backward_accumulates_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut lin = Linear::<f64>::new(2, 2, &mut rng, true);
        let x = arr2(&[[1.0, 2.0], [3.0, 4.0]]);
        let dy = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let dx = lin.backward(&x, &dy);
        assert_eq!(lin.weight.grad, arr2(&[[1.0, 2.0], [3.0, 4.0]]));
        assert_eq!(lin.bias.grad, ndarray::arr1(&[1.0, 1.0]));
        assert_eq!(dx.dim(), (2, 2));
    }
}
