//! Elementwise activations with their backward passes.

use ndarray::{Array, Dimension};

use super::scalar::Scalar;

pub fn leaky_relu<T: Scalar, D: Dimension>(x: &Array<T, D>, negative_slope: f64) -> Array<T, D> {
    let slope = T::from_f64(negative_slope);
    x.mapv(|v| if v > T::zero() { v } else { v * slope })
}

/// `dx` given the upstream gradient and the layer *input*.
pub fn leaky_relu_backward<T: Scalar, D: Dimension>(
    dy: &Array<T, D>,
    x: &Array<T, D>,
    negative_slope: f64,
) -> Array<T, D> {
    let slope = T::from_f64(negative_slope);
    let mut dx = dy.clone();
    ndarray::Zip::from(&mut dx).and(x).for_each(|d, &v| {
        if v <= T::zero() {
            *d *= slope;
        }
    });
    dx
}

pub fn relu<T: Scalar, D: Dimension>(x: &Array<T, D>) -> Array<T, D> {
    x.mapv(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_backward<T: Scalar, D: Dimension>(
    dy: &Array<T, D>,
    x: &Array<T, D>,
) -> Array<T, D> {
    let mut dx = dy.clone();
    ndarray::Zip::from(&mut dx).and(x).for_each(|d, &v| {
        if v <= T::zero() {
            *d = T::zero();
        }
    });
    dx
}

/// Smooth GELU (tanh form).
pub fn gelu<T: Scalar, D: Dimension>(x: &Array<T, D>) -> Array<T, D> {
    x.mapv(|v| T::from_f64(gelu_scalar(v.as_f64())))
}

pub fn gelu_backward<T: Scalar, D: Dimension>(
    dy: &Array<T, D>,
    x: &Array<T, D>,
) -> Array<T, D> {
    let mut dx = dy.clone();
    ndarray::Zip::from(&mut dx).and(x).for_each(|d, &v| {
        *d *= T::from_f64(gelu_grad_scalar(v.as_f64()));
    });
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x.powi(3))).tanh())
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let inner = GELU_C * (x + GELU_A * x.powi(3));
    let t = inner.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    #[test]
    fn leaky_relu_matches_definition() {
        let x = arr1(&[-2.0f64, 0.0, 3.0]);
        let y = leaky_relu(&x, 0.01);
        assert_eq!(y, arr1(&[-0.02, 0.0, 3.0]));
    }

    #[test]
    fn gelu_gradient_matches_finite_difference() {
        for &x in &[-2.5f64, -0.3, 0.0, 0.7, 1.9] {
            let eps = 1e-6;
            let fd = (gelu_scalar(x + eps) - gelu_scalar(x - eps)) / (2.0 * eps);
            assert!(
                (fd - gelu_grad_scalar(x)).abs() < 1e-8,
                "x={x}: fd={fd} analytic={}",
                gelu_grad_scalar(x)
            );
        }
    }

    #[test]
    fn relu_backward_gates_on_input_sign() {
        let x = arr1(&[-1.0f64, 0.0, 2.0]);
        let dy = arr1(&[1.0, 1.0, 1.0]);
        assert_eq!(relu_backward(&dy, &x), arr1(&[0.0, 0.0, 1.0]));
    }
}
