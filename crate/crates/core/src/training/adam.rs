use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamTree;
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments keyed by parameter name. Moment arithmetic runs in f64
/// whatever the parameter precision.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    pub cfg: AdamConfig,
    t: u64,
    m: HashMap<String, Vec<f64>>,
    v: HashMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(cfg: AdamConfig) -> Self {
        AdamState {
            cfg,
            ..Default::default()
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, name: &str) -> Option<&[f64]> {
        self.m.get(name).map(Vec::as_slice)
    }

    pub fn second_moment(&self, name: &str) -> Option<&[f64]> {
        self.v.get(name).map(Vec::as_slice)
    }

    /// One bias-corrected update over every tensor holding a gradient; the
    /// gradients are zeroed afterwards. Tensors without a gradient buffer
    /// (frozen ones) are left alone. Any non-finite gradient aborts before a
    /// single parameter moves.
    pub fn step<T: Real, P: ParamTree<T> + ?Sized>(&mut self, params: &mut P, lr: f64) -> Result<()> {
        let mut bad = None;
        params.visit("", &mut |name, t| {
            if bad.is_none() && t.grad().is_some_and(|g| g.iter().any(|x| !x.is_finite())) {
                bad = Some(name);
            }
        });
        if let Some(name) = bad {
            return Err(Error::NonFiniteGradient(name));
        }

        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let (ms, vs) = (&mut self.m, &mut self.v);
        params.visit_mut("", &mut |name, t| {
            let Some(g) = t.grad().map(|g| g.iter().map(|x| x.as_f64()).collect::<Vec<_>>()) else {
                return;
            };
            let m = ms.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = vs.entry(name).or_insert_with(|| vec![0.0; g.len()]);
            for (i, theta) in t.data_mut().iter_mut().enumerate() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *theta = T::from_f64(theta.as_f64() - lr * m_hat / (v_hat.sqrt() + eps));
            }
            t.zero_grad();
        });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn with_grad(v: f64, g: f64) -> Tensor<f64> {
        let mut t = Tensor::scalar(v);
        t.accumulate_grad(&[g]).unwrap();
        t
    }

    #[test]
    fn two_steps_on_a_parabola_match_a_scalar_trace() {
        // hand-rolled reference for f(θ) = θ², θ₀ = 1, lr = 0.1
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.1);
        let (mut th, mut m, mut v) = (1.0f64, 0.0, 0.0);
        for t in 1..=2 {
            let g = 2.0 * th;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            th -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        }

        let mut p = Tensor::scalar(1.0f64);
        let mut opt = AdamState::default();
        for _ in 0..2 {
            let g = 2.0 * p.data()[0];
            p.accumulate_grad(&[g]).unwrap();
            opt.step(&mut p, lr).unwrap();
        }
        assert!((p.data()[0] - th).abs() <= 1e-12);
        assert_eq!(opt.steps(), 2);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = Tensor::from_f64(&[3], &[0.0, 0.0, 0.0]).unwrap();
        p.accumulate_grad(&[2.0, -0.5, 1e-3]).unwrap();
        AdamState::default().step(&mut p, 0.01).unwrap();
        for (x, g) in p.data().iter().zip([2.0f64, -0.5, 1e-3]) {
            let want = -0.01 * g / (g.abs() + 1e-8);
            assert!((x - want).abs() < 1e-12, "{x} vs {want}");
        }
        assert_eq!(p.grad(), Some(&[0.0, 0.0, 0.0][..]));
    }

    #[test]
    fn zero_gradient_and_zero_lr_are_no_ops() {
        let mut p = with_grad(0.7, 0.0);
        let mut opt = AdamState::default();
        opt.step(&mut p, 0.1).unwrap();
        assert_eq!(p.data()[0], 0.7);

        let mut q = with_grad(0.7, 3.0);
        opt.step(&mut q, 0.0).unwrap();
        assert_eq!(q.data()[0], 0.7);
        // moments decay once the gradient vanishes
        let m1 = opt.first_moment("").unwrap()[0];
        opt.step(&mut q, 0.0).unwrap();
        assert!(opt.first_moment("").unwrap()[0].abs() < m1.abs());
    }

    #[test]
    fn nan_gradient_aborts_untouched() {
        let mut p = vec![with_grad(1.0, 1.0), with_grad(2.0, f64::NAN)];
        let err = AdamState::default().step(&mut p, 0.1).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "1"));
        assert_eq!(p[0].data()[0], 1.0);
    }

    #[test]
    fn tensors_without_grad_are_skipped() {
        let mut p = vec![Tensor::scalar(1.0f64), with_grad(1.0, 1.0)];
        AdamState::default().step(&mut p, 0.1).unwrap();
        assert_eq!(p[0].data()[0], 1.0);
        assert!(p[1].data()[0] < 1.0);
    }
}
