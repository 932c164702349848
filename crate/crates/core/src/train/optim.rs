use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamVector;
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Sgd {
    /// `v ← μ·v + (g + wd·θ)`, `θ ← θ − lr·v`.
    pub fn step<T: Real>(&self, theta: &mut [T], velocity: &mut [T], grads: &[T], lr: f64) -> Result<()> {
        if theta.len() != grads.len() || theta.len() != velocity.len() {
            return Err(Error::ShapeMismatch {
                op: "sgd_step",
                left: vec![theta.len()],
                right: vec![grads.len()],
            });
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
        let (mu, wd, lr) = (T::of(self.momentum), T::of(self.weight_decay), T::of(lr));
        for ((p, v), &g) in theta.iter_mut().zip(velocity.iter_mut()).zip(grads) {
            *v = mu * *v + (g + wd * *p);
            *p -= lr * *v;
        }
        if theta.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("parameter update".into()));
        }
        Ok(())
    }
}

/// `φ ← γ·φ + (1 − γ)·θ`
pub fn ema_update<T: Real>(phi: &mut ParamVector<T>, theta: &ParamVector<T>, gamma: f64) -> Result<()> {
    if !phi.same_layout(theta) {
        return Err(Error::ShapeMismatch {
            op: "ema_update",
            left: vec![phi.len()],
            right: vec![theta.len()],
        });
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid(format!("gamma must lie in [0, 1], got {gamma}")));
    }
    let (g, h) = (T::of(gamma), T::of(1.0 - gamma));
    for (p, &t) in phi.values_mut().iter_mut().zip(theta.values()) {
        *p = g * *p + h * t;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Model, ModelSpec};

    #[test]
    fn plain_sgd_and_no_op() {
        let sgd = Sgd {
            momentum: 0.0,
            weight_decay: 0.0,
        };
        let mut th = vec![1.0f64, -2.0];
        let mut v = vec![0.0; 2];
        sgd.step(&mut th, &mut v, &[0.5, 1.0], 0.1).unwrap();
        assert_eq!(th, vec![1.0 - 0.05, -2.0 - 0.1]);
        let mut th2 = vec![3.0f64];
        sgd.step(&mut th2, &mut vec![0.0], &[0.0], 0.1).unwrap();
        assert_eq!(th2, vec![3.0]);
    }

    #[test]
    fn momentum_unrolled_twice() {
        let sgd = Sgd {
            momentum: 0.9,
            weight_decay: 0.0,
        };
        let (g, lr) = (0.7f64, 0.1);
        let mut th = vec![0.0];
        let mut v = vec![0.0];
        sgd.step(&mut th, &mut v, &[g], lr).unwrap();
        sgd.step(&mut th, &mut v, &[g], lr).unwrap();
        assert!((th[0] + lr * g * 2.9).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_shrinks_by_factor() {
        let sgd = Sgd {
            momentum: 0.9,
            weight_decay: 5e-4,
        };
        let mut th = vec![2.0f64, -4.0];
        sgd.step(&mut th, &mut vec![0.0; 2], &[0.0; 2], 0.1).unwrap();
        assert!((th[0] - 2.0 * (1.0 - 0.1 * 5e-4)).abs() < 1e-15);
        assert!((th[1] + 4.0 * (1.0 - 0.1 * 5e-4)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_rejected() {
        let sgd = Sgd {
            momentum: 0.0,
            weight_decay: 0.0,
        };
        let mut th = vec![1.0f32];
        assert!(sgd.step(&mut th, &mut vec![0.0], &[f32::NAN], 0.1).is_err());
        assert!(sgd.step(&mut th, &mut vec![0.0], &[f32::MAX], 1e10).is_err());
    }

    #[test]
    fn ema_forced_outcomes() {
        let spec = ModelSpec::mlp([1, 2, 2], vec![3], 2);
        let theta = Model::<f32>::init(spec.clone(), 1).unwrap().params().clone();
        let phi0 = Model::<f32>::init(spec, 2).unwrap().params().clone();
        let mut phi = phi0.clone();
        ema_update(&mut phi, &theta, 1.0).unwrap();
        assert_eq!(phi, phi0);
        ema_update(&mut phi, &theta, 0.0).unwrap();
        assert_eq!(phi, theta);

        let mut z = ParamVector::zeros_like(&theta);
        let mut ones = theta.clone();
        ones.values_mut().iter_mut().for_each(|v| *v = 1.0);
        ema_update(&mut z, &ones, 0.999).unwrap();
        assert!(z.values().iter().all(|&v| (v - 0.001).abs() < 1e-6));
        assert!(ema_update(&mut z, &ones, 1.5).is_err());
    }
}
