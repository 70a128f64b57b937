use serde::{Deserialize, Serialize};

use super::param::Parameter;
use crate::error::{Error, Result};

/// Adam with bias correction. Gradients are zeroed after each step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Result<Self> {
        Self::with_betas(lr, (0.9, 0.999), 1e-8)
    }

    pub fn with_betas(lr: f64, betas: (f64, f64), eps: f64) -> Result<Self> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::config(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&betas.0) || !(0.0..1.0).contains(&betas.1) {
            return Err(Error::config(format!("betas must lie in [0, 1), got {betas:?}")));
        }
        if !(eps > 0.0) {
            return Err(Error::config(format!("eps must be positive, got {eps}")));
        }
        Ok(Self {
            lr,
            beta1: betas.0,
            beta2: betas.1,
            eps,
        })
    }

    pub fn step<'a, I>(&self, params: I)
    where
        I: IntoIterator<Item = &'a mut Parameter>,
    {
        for p in params {
            p.step += 1;
            let t = p.step as i32;
            let bc1 = 1.0 - self.beta1.powi(t);
            let bc2 = 1.0 - self.beta2.powi(t);
            let value = p.value.as_mut_slice();
            let grad = p.grad.as_mut_slice();
            let m = p.adam_m.as_mut_slice();
            let v = p.adam_v.as_mut_slice();
            for i in 0..value.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                value[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                grad[i] = 0.0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RealArray;

    #[test]
    fn rejects_non_positive_lr() {
        assert!(matches!(Adam::new(0.0), Err(Error::Config(_))));
        assert!(matches!(Adam::new(-1e-3), Err(Error::Config(_))));
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = Parameter::new(RealArray::from_rows(&[[1.0, -2.0]]).unwrap());
        let before = p.value.clone();
        Adam::new(0.1).unwrap().step([&mut p]);
        assert_eq!(p.value, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Parameter::new(RealArray::scalar(0.0));
        p.grad = RealArray::scalar(1.0);
        Adam::new(0.1).unwrap().step([&mut p]);
        assert!((p.value.as_slice()[0] + 0.1).abs() < 1e-6);
        assert_eq!(p.grad.as_slice()[0], 0.0);
        assert_eq!(p.step, 1);
    }

    #[test]
    fn converges_on_convex_quadratic() {
        let mut p = Parameter::new(RealArray::scalar(0.0));
        let adam = Adam::new(0.1).unwrap();
        for _ in 0..100 {
            let w = p.value.as_slice()[0];
            p.grad = RealArray::scalar(2.0 * (w - 3.0));
            adam.step([&mut p]);
        }
        assert!((p.value.as_slice()[0] - 3.0).abs() < 0.1);
    }
}
