use std::collections::BTreeMap;

use super::params::ParamStore;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_LR: f64 = 0.0005;

/// Adam with bias correction and a constant learning rate.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub first: BTreeMap<String, Tensor>,
    pub second: BTreeMap<String, Tensor>,
}

impl Default for Adam {
    fn default() -> Self {
        Self::new(DEFAULT_LR)
    }
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    /// One update of every parameter that has a gradient. Parameters without a
    /// gradient (frozen) are left untouched. Fails before modifying anything if
    /// a gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, g) in grads {
            if !g.is_finite() {
                return Err(Error::NonFiniteGrad(name.clone()));
            }
            if !params.contains(name) {
                return Err(Error::Checkpoint(format!("gradient for unknown parameter `{name}`")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        for (name, g) in grads {
            let p = params.get_mut(name).expect("checked above");
            let m = self.first.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self.second.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
            for (i, &gi) in g.data().iter().enumerate() {
                md[i] = b1 * md[i] + (1.0 - b1) * gi;
                vd[i] = b2 * vd[i] + (1.0 - b2) * gi * gi;
                let mh = md[i] / c1;
                let vh = vd[i] / c2;
                pd[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::scalar(value));
        s
    }

    #[test]
    fn default_learning_rate() {
        assert_eq!(Adam::default().lr, 0.0005);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = single(1.25);
        let mut adam = Adam::default();
        let grads = BTreeMap::from([("x".to_string(), Tensor::scalar(0.0))]);
        adam.step(&mut s, &grads).unwrap();
        adam.step(&mut s, &grads).unwrap();
        assert_eq!(s.get("x").unwrap().item(), 1.25);
        assert_eq!(adam.first["x"].item(), 0.0);
        assert_eq!(adam.second["x"].item(), 0.0);
        assert_eq!(adam.step, 2);
    }

    #[test]
    fn two_steps_of_unit_gradient() {
        // By hand: m1=0.1, v1=0.001 -> m^=1, v^=1; m2=0.19, v2=0.001999 -> m^=1, v^=1.
        // Each step moves by lr / (1 + eps) = 0.0005 / 1.00000001.
        let mut s = single(0.0);
        let mut adam = Adam::default();
        let grads = BTreeMap::from([("x".to_string(), Tensor::scalar(1.0))]);
        adam.step(&mut s, &grads).unwrap();
        adam.step(&mut s, &grads).unwrap();
        let expected = -9.9999999e-4;
        assert!((s.get("x").unwrap().item() - expected).abs() < 1e-15);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut s = single(0.0);
        let mut adam = Adam::default();
        let grads = BTreeMap::from([("x".to_string(), Tensor::scalar(f64::NAN))]);
        match adam.step(&mut s, &grads) {
            Err(Error::NonFiniteGrad(name)) => assert_eq!(name, "x"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(adam.step, 0);
    }
}
