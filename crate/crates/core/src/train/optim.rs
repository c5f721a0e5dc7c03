//! Adam with L2 weight decay folded into the gradient.

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            lr: 1e-4,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("train.optimizer.lr must be > 0, got {}", self.lr)));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("train.optimizer.weight_decay must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("train.optimizer betas must be in [0, 1)".into()));
        }
        Ok(())
    }
}

struct Slot {
    var: Var,
    m: Tensor,
    v: Tensor,
}

pub struct Adam {
    config: OptimizerConfig,
    slots: Vec<Slot>,
    t: i32,
}

impl Adam {
    pub fn new(vars: Vec<Var>, config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        let slots = vars
            .into_iter()
            .map(|var| {
                let m = var.zeros_like()?;
                let v = var.zeros_like()?;
                Ok(Slot { var, m, v })
            })
            .collect::<candle_core::Result<Vec<_>>>()?;
        Ok(Adam { config, slots, t: 0 })
    }

    pub fn lr(&self) -> f64 {
        self.config.lr
    }

    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        self.t += 1;
        let c = self.config;
        let bias1 = 1.0 - c.beta1.powi(self.t);
        let bias2 = 1.0 - c.beta2.powi(self.t);
        for slot in &mut self.slots {
            let Some(g) = grads.get(slot.var.as_tensor()) else {
                continue;
            };
            let theta = slot.var.as_tensor();
            let g = if c.weight_decay > 0.0 {
                (g + (theta * c.weight_decay)?)?
            } else {
                g.clone()
            };
            slot.m = ((&slot.m * c.beta1)? + (&g * (1.0 - c.beta1))?)?;
            slot.v = ((&slot.v * c.beta2)? + (g.sqr()? * (1.0 - c.beta2))?)?;
            let m_hat = (&slot.m / bias1)?;
            let v_hat = (&slot.v / bias2)?;
            let update = (m_hat / (v_hat.sqrt()? + c.eps)?)?;
            slot.var.set(&(theta - (update * c.lr)?)?)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let w = Var::new(&[1.0f64, -2.0], &Device::Cpu).unwrap();
        let mut opt = Adam::new(vec![w.clone()], OptimizerConfig { lr: 0.1, ..Default::default() }).unwrap();
        let loss = w.as_tensor().sqr().unwrap().sum_all().unwrap();
        opt.step(&loss.backward().unwrap()).unwrap();
        let got = w.as_tensor().to_vec1::<f64>().unwrap();
        assert!((got[0] - 0.9).abs() < 1e-6 && (got[1] + 1.9).abs() < 1e-6, "{got:?}");
    }

    #[test]
    fn minimizes_a_quadratic() {
        let w = Var::new(&[3.0f64], &Device::Cpu).unwrap();
        let mut opt = Adam::new(vec![w.clone()], OptimizerConfig { lr: 0.05, ..Default::default() }).unwrap();
        for _ in 0..500 {
            let loss = (w.as_tensor() - 1.0).unwrap().sqr().unwrap().sum_all().unwrap();
            opt.step(&loss.backward().unwrap()).unwrap();
        }
        assert!((w.as_tensor().to_vec1::<f64>().unwrap()[0] - 1.0).abs() < 1e-2);
    }
}
