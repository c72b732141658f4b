use rand::seq::index::sample;

use super::{ParamId, ParamSet};

/// A scalar function of a parameter set with an analytic gradient.
pub trait Differentiable {
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
    fn loss(&self) -> f64;
    /// Loss value; accumulates gradients into the (pre-zeroed) parameter set.
    fn loss_and_grad(&mut self) -> f64;
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Check at most this many coordinates per parameter (all if `None`).
    pub max_coords_per_param: Option<usize>,
    pub seed: u64,
    /// Denominator floor of the relative error, so that coordinates whose
    /// true gradient is ~0 are judged on absolute error.
    pub floor: f64,
    /// Relative finite-difference step.
    pub step: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            max_coords_per_param: None,
            seed: 0,
            floor: 1e-6,
            step: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: Option<String>,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coords_checked: usize,
}

/// Five-point central differences with step `step * max(1, |theta|)`
/// against the analytic gradient; returns the worst relative error,
/// `|a - n| / max(|a|, |n|, floor)`.
pub fn gradient_check<N: Differentiable>(net: &mut N, opts: GradCheckOptions) -> GradCheckReport {
    net.params_mut().zero_grad();
    net.loss_and_grad();
    let analytic: Vec<Vec<f64>> = net.params().iter().map(|p| p.grad.data().to_vec()).collect();
    let mut rng = crate::rng::stream(opts.seed, "gradient-check");
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: None,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coords_checked: 0,
    };
    for (pi, grads) in analytic.iter().enumerate() {
        let n = grads.len();
        let coords: Vec<usize> = match opts.max_coords_per_param {
            Some(k) if k < n => {
                let mut c = sample(&mut rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        for i in coords {
            let theta = net.params().get(ParamId(pi)).value.data()[i];
            let h = opts.step * theta.abs().max(1.0);
            let mut at = |offset: f64| {
                set_coord(net.params_mut(), pi, i, theta + offset);
                net.loss()
            };
            let (up2, up, down, down2) = (at(2.0 * h), at(h), at(-h), at(-2.0 * h));
            set_coord(net.params_mut(), pi, i, theta);
            let numeric = (8.0 * (up - down) - (up2 - down2)) / (12.0 * h);
            let a = grads[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            report.coords_checked += 1;
            if rel > report.max_rel_error || report.worst_param.is_none() {
                report.max_rel_error = rel;
                report.worst_param = Some(net.params().get(ParamId(pi)).name.clone());
                report.worst_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    report
}

fn set_coord(ps: &mut ParamSet, param: usize, index: usize, value: f64) {
    ps.get_mut(ParamId(param)).value.data_mut()[index] = value;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{Precision, Tensor};

    /// Loss `0.5 * |x|^2` of an identity map.
    struct Identity(ParamSet);

    impl Differentiable for Identity {
        fn params(&self) -> &ParamSet {
            &self.0
        }
        fn params_mut(&mut self) -> &mut ParamSet {
            &mut self.0
        }
        fn loss(&self) -> f64 {
            0.5 * self.0.iter().next().unwrap().value.norm_sq()
        }
        fn loss_and_grad(&mut self) -> f64 {
            let p = self.0.iter_mut().next().unwrap();
            let v = p.value.data().to_vec();
            p.grad.data_mut().copy_from_slice(&v);
            0.5 * p.value.norm_sq()
        }
    }

    #[test]
    fn identity_network_has_no_error() {
        let mut ps = ParamSet::new(Precision::Wide);
        ps.add("x", Tensor::matrix(1, 4, vec![0.5, -1.25, 2.0, 0.0]));
        let r = gradient_check(&mut Identity(ps), GradCheckOptions::default());
        assert!(r.max_rel_error < 1e-9, "{r:?}");
        assert_eq!(r.coords_checked, 4);
    }

    #[test]
    fn wrong_gradient_is_detected() {
        struct Wrong(ParamSet);
        impl Differentiable for Wrong {
            fn params(&self) -> &ParamSet {
                &self.0
            }
            fn params_mut(&mut self) -> &mut ParamSet {
                &mut self.0
            }
            fn loss(&self) -> f64 {
                self.0.iter().next().unwrap().value.data()[0].powi(3)
            }
            fn loss_and_grad(&mut self) -> f64 {
                let p = self.0.iter_mut().next().unwrap();
                let x = p.value.data()[0];
                p.grad.data_mut()[0] = 2.0 * x * x;
                x.powi(3)
            }
        }
        let mut ps = ParamSet::new(Precision::Wide);
        ps.add("x", Tensor::matrix(1, 1, vec![1.5]));
        let r = gradient_check(&mut Wrong(ps), GradCheckOptions::default());
        assert!(r.max_rel_error > 0.1);
        assert_eq!(r.worst_param.as_deref(), Some("x"));
    }
}
