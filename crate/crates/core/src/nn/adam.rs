use super::{ParamSet, Parameter};
use crate::error::{Error, Result};
use crate::tensor::Element;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.0002,
            beta1: 0.9,
            beta2: 0.99,
            weight_decay: 0.00001,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.weight_decay >= 0.0
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid Adam settings {self:?}")))
        }
    }
}

/// One Adam update with bias correction over every unfrozen parameter.
/// Weight decay enters as an L2 term added to the gradient before the
/// moment updates. Frozen parameters are left bit-identical.
pub fn adam_step<F: Element>(params: &mut ParamSet<F>, cfg: &AdamConfig, lr_now: f64) -> Result<()> {
    if lr_now < 0.0 || !lr_now.is_finite() {
        return Err(Error::contract(format!("learning rate {lr_now} must be finite and >= 0")));
    }
    if let Some(p) = params.iter().find(|p| !p.frozen && p.value.grad().is_none()) {
        return Err(Error::contract(format!("parameter {} has no gradient", p.name)));
    }
    let b1 = F::from_f64_lossy(cfg.beta1);
    let b2 = F::from_f64_lossy(cfg.beta2);
    let one = F::one();
    let wd = F::from_f64_lossy(cfg.weight_decay);
    let eps = F::from_f64_lossy(cfg.eps);
    for p in params.iter_mut().filter(|p| !p.frozen) {
        p.step_count += 1;
        let t = p.step_count as i32;
        let c1 = F::from_f64_lossy(1.0 - cfg.beta1.powi(t));
        let c2 = F::from_f64_lossy(1.0 - cfg.beta2.powi(t));
        let lr = F::from_f64_lossy(lr_now);
        let grad = p.value.grad().expect("checked above").to_vec();
        let Parameter { value, adam_m, adam_v, .. } = p;
        for (((theta, &g), m), v) in value.data_mut().iter_mut().zip(&grad).zip(adam_m.iter_mut()).zip(adam_v.iter_mut()) {
            let g = g + wd * *theta;
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *theta = *theta - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
