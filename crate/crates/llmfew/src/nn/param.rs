//! Trainable parameters and the visitor used by the optimizer,
//! checkpointing and the freeze/partition checks.

use ndarray::{Array, Dimension, Ix1, Ix2, Ix3};

use super::scalar::Scalar;

/// A named tensor with its gradient accumulator and a trainable flag.
///
/// Frozen parameters still participate in forward and may receive gradient
/// accumulation, but the optimizer never updates them.
#[derive(Debug, Clone)]
pub struct Param<T, D: Dimension> {
    pub value: Array<T, D>,
    pub grad: Array<T, D>,
    pub trainable: bool,
}

pub type Param1<T> = Param<T, Ix1>;
pub type Param2<T> = Param<T, Ix2>;
pub type Param3<T> = Param<T, Ix3>;

impl<T: Scalar, D: Dimension> Param<T, D> {
    pub fn new(value: Array<T, D>, trainable: bool) -> Self {
        let grad = Array::zeros(value.raw_dim());
        Self {
            value,
            grad,
            trainable,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    /// Flat mutable view handed to [`VisitParams`] callbacks.
    pub fn slot(&mut self) -> ParamSlot<'_, T> {
        let shape = self.value.shape().to_vec();
        ParamSlot {
            value: self.value.as_slice_mut().expect("params are contiguous"),
            grad: self.grad.as_slice_mut().expect("params are contiguous"),
            shape,
            trainable: &mut self.trainable,
        }
    }
}

/// Mutable flat view of one parameter, in row-major order.
pub struct ParamSlot<'a, T> {
    pub value: &'a mut [T],
    pub grad: &'a mut [T],
    pub shape: Vec<usize>,
    pub trainable: &'a mut bool,
}

/// Walk every parameter of a component, depth first, with dotted names.
pub trait VisitParams<T: Scalar> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, ParamSlot<'_, T>));
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Number of scalars in parameters currently marked trainable.
pub fn count_trainable<T: Scalar>(m: &mut dyn VisitParams<T>) -> usize {
    let mut n = 0;
    m.visit_params("", &mut |_, p| {
        if *p.trainable {
            n += p.value.len();
        }
    });
    n
}

/// Total number of parameter scalars, trainable or not.
pub fn count_total<T: Scalar>(m: &mut dyn VisitParams<T>) -> usize {
    let mut n = 0;
    m.visit_params("", &mut |_, p| n += p.value.len());
    n
}

pub fn zero_grads<T: Scalar>(m: &mut dyn VisitParams<T>) {
    m.visit_params("", &mut |_, p| {
        for g in p.grad.iter_mut() {
            *g = T::zero();
        }
    });
}

/// Names of parameters marked trainable, in visit order.
pub fn trainable_names<T: Scalar>(m: &mut dyn VisitParams<T>) -> Vec<String> {
    let mut names = Vec::new();
    m.visit_params("", &mut |name, p| {
        if *p.trainable {
            names.push(name);
        }
    });
    names
}

/// Names of frozen parameters, in visit order.
pub fn frozen_names<T: Scalar>(m: &mut dyn VisitParams<T>) -> Vec<String> {
    let mut names = Vec::new();
    m.visit_params("", &mut |name, p| {
        if !*p.trainable {
            names.push(name);
        }
    });
    names
}

/// Copy of every parameter value, keyed by name. Used by freeze checks and
/// reproducibility tests.
pub fn snapshot<T: Scalar>(m: &mut dyn VisitParams<T>) -> Vec<(String, Vec<T>)> {
    let mut out = Vec::new();
    m.visit_params("", &mut |name, p| {
        out.push((name, p.value.to_vec()));
    });
    out
}

/// Global L2 norm of the gradients of trainable parameters.
pub fn global_grad_norm<T: Scalar>(m: &mut dyn VisitParams<T>) -> f64 {
    let mut sq = 0.0;
    m.visit_params("", &mut |_, p| {
        if *p.trainable {
            for g in p.grad.iter() {
                let g = g.as_f64();
                sq += g * g;
            }
        }
    });
    sq.sqrt()
}

/// Scale trainable gradients so their global norm does not exceed
/// `max_norm`. No-op when already within bounds.
pub fn clip_global_grad_norm<T: Scalar>(m: &mut dyn VisitParams<T>, max_norm: f64) {
    let norm = global_grad_norm(m);
    if norm > max_norm && norm > 0.0 {
        let scale = T::from_f64(max_norm / norm);
        m.visit_params("", &mut |_, p| {
            if *p.trainable {
                for g in p.grad.iter_mut() {
                    *g *= scale;
                }
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    struct Two<T: Scalar> {
        a: Param1<T>,
        b: Param1<T>,
    }

    impl<T: Scalar> VisitParams<T> for Two<T> {
        fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, ParamSlot<'_, T>)) {
            f(join(prefix, "a"), self.a.slot());
            f(join(prefix, "b"), self.b.slot());
        }
    }

    #[test]
    fn counts_respect_trainable_flag() {
        let mut m = Two {
            a: Param::new(arr1(&[1.0f64, 2.0, 3.0]), true),
            b: Param::new(arr1(&[4.0, 5.0]), false),
        };
        assert_eq!(count_trainable(&mut m), 3);
        assert_eq!(count_total(&mut m), 5);
        assert_eq!(trainable_names(&mut m), vec!["a"]);
        assert_eq!(frozen_names(&mut m), vec!["b"]);
    }

    #[test]
    fn clip_scales_only_trainable_grads() {
        let mut m = Two {
            a: Param::new(arr1(&[0.0f64, 0.0]), true),
            b: Param::new(arr1(&[0.0, 0.0]), false),
        };
        m.a.grad = arr1(&[3.0, 4.0]);
        m.b.grad = arr1(&[100.0, 100.0]);
        clip_global_grad_norm(&mut m, 1.0);
        let norm = (m.a.grad[0].powi(2) + m.a.grad[1].powi(2)).sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        assert_eq!(m.b.grad[0], 100.0);
    }

    #[test]
    fn bf16_rounding_truncates_mantissa() {
        let x: f32 = 1.001;
        let r = x.round_bf16();
        assert_eq!(r.to_bits() & 0xffff, 0);
        assert!((r - x).abs() < 0.005);
    }
}
