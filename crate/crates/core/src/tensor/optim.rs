use std::collections::BTreeMap;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates per parameter, plus the update count.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState<T> {
    pub m: BTreeMap<String, Tensor<T>>,
    pub v: BTreeMap<String, Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new() -> Self {
        Self {
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of every parameter that has a gradient.
pub fn adam_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &BTreeMap<String, Tensor<T>>,
    state: &mut AdamState<T>,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::of(cfg.beta1);
    let b2 = T::of(cfg.beta2);
    let one = T::one();
    let bc1 = T::of(1.0 - cfg.beta1.powi(t));
    let bc2 = T::of(1.0 - cfg.beta2.powi(t));
    let lr = T::of(lr);
    let eps = T::of(cfg.eps);

    for (name, g) in grads {
        let p = params
            .get_mut(name)
            .ok_or_else(|| Error::Shape(format!("gradient for unknown parameter `{}`", name)))?;
        if p.shape() != g.shape() {
            return Err(Error::Shape(format!(
                "adam: `{}` has shape {:?}, gradient {:?}",
                name,
                p.shape(),
                g.shape()
            )));
        }
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.shape()));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.shape()));
        let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
        for (i, &gi) in g.data().iter().enumerate() {
            md[i] = b1 * md[i] + (one - b1) * gi;
            vd[i] = b2 * vd[i] + (one - b2) * gi * gi;
            let m_hat = md[i] / bc1;
            let v_hat = vd[i] / bc2;
            pd[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(name: &str, v: f64) -> ParamStore<f64> {
        let mut p = ParamStore::new();
        p.insert(name, Tensor::from_vec(vec![v]));
        p
    }

    fn grad_of(name: &str, g: f64) -> BTreeMap<String, Tensor<f64>> {
        BTreeMap::from([(name.to_string(), Tensor::from_vec(vec![g]))])
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = single("x", 0.75);
        let mut st = AdamState::new();
        for _ in 0..10 {
            adam_step(&mut p, &grad_of("x", 0.0), &mut st, 0.1, &AdamConfig::default()).unwrap();
        }
        assert_eq!(p.get("x").unwrap().item(), 0.75);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m_hat = g, v_hat = g^2 -> update = lr * g / (|g| + eps)
        for g in [3.0, -0.02, 1e3] {
            let mut p = single("x", 0.0);
            let mut st = AdamState::new();
            adam_step(&mut p, &grad_of("x", g), &mut st, 1e-3, &AdamConfig::default()).unwrap();
            let expected = -1e-3 * g / (f64::abs(g) + 1e-8);
            assert!((p.get("x").unwrap().item() - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn minimizes_a_parabola() {
        let mut p = single("x", 1.0);
        let mut st = AdamState::new();
        for _ in 0..200 {
            let x = p.get("x").unwrap().item();
            adam_step(&mut p, &grad_of("x", 2.0 * x), &mut st, 0.1, &AdamConfig::default()).unwrap();
        }
        assert!(p.get("x").unwrap().item().abs() < 1e-2);
    }

    #[test]
    fn rejects_unknown_parameter() {
        let mut p = single("x", 1.0);
        let mut st = AdamState::new();
        assert!(adam_step(&mut p, &grad_of("y", 1.0), &mut st, 0.1, &AdamConfig::default()).is_err());
    }
}
