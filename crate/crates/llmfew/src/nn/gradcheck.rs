//! Central finite-difference gradient checking.
//!
//! The caller runs one analytic forward/backward pass to populate parameter
//! gradients, then hands this module a pure-forward loss closure. Each
//! trainable scalar is perturbed by `±epsilon` and the centered difference
//! is compared against the stored analytic gradient.

use super::param::VisitParams;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// `(param name, flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tolerance
    }
}

/// Relative error with a small absolute floor so near-zero pairs compare
/// sanely.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn add_at<M: VisitParams<f64>>(m: &mut M, target: &str, idx: usize, delta: f64) {
    m.visit_params("", &mut |name, p| {
        if name == target {
            p.value[idx] += delta;
        }
    });
}

/// Compare analytic gradients (already accumulated in `grad` buffers)
/// against central finite differences of `loss` for every trainable scalar.
pub fn check_param_gradients<M: VisitParams<f64>>(
    m: &mut M,
    mut loss: impl FnMut(&mut M) -> f64,
    epsilon: f64,
) -> GradCheckReport {
    let mut coords: Vec<(String, usize)> = Vec::new();
    let mut analytic: Vec<Vec<f64>> = Vec::new();
    m.visit_params("", &mut |name, p| {
        if *p.trainable {
            coords.push((name, p.value.len()));
            analytic.push(p.grad.to_vec());
        }
    });

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    for (pi, (name, len)) in coords.iter().enumerate() {
        for i in 0..*len {
            add_at(m, name, i, epsilon);
            let plus = loss(m);
            add_at(m, name, i, -2.0 * epsilon);
            let minus = loss(m);
            add_at(m, name, i, epsilon);
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic[pi][i];
            let rel = rel_error(a, numeric);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), i, a, numeric));
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::param::{join, Param1, ParamSlot};
    use ndarray::arr1;

    struct Quadratic {
        w: Param1<f64>,
    }

    impl VisitParams<f64> for Quadratic {
        fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, ParamSlot<'_, f64>)) {
            f(join(prefix, "w"), self.w.slot());
        }
    }

    impl Quadratic {
        fn loss(&self) -> f64 {
            self.w.value.iter().map(|v| v * v).sum()
        }
    }

    #[test]
    fn detects_correct_and_incorrect_gradients() {
        let mut q = Quadratic {
            w: Param1::new(arr1(&[0.3, -0.7, 1.1]), true),
        };
        // analytic gradient of sum(w^2) is 2w
        q.w.grad = q.w.value.mapv(|v| 2.0 * v);
        let report = check_param_gradients(&mut q, |m| m.loss(), 1e-6);
        assert!(report.passes(1e-8), "rel={}", report.max_rel_error);

        // corrupt one gradient entry and expect a failure
        q.w.grad[1] += 0.5;
        let report = check_param_gradients(&mut q, |m| m.loss(), 1e-6);
        assert!(!report.passes(1e-4));
        assert_eq!(report.worst.as_ref().unwrap().1, 1);
    }
}
