use std::collections::BTreeMap;

use super::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-6,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("bad Adam settings {self:?}")))
        }
    }
}

/// First and second moment estimates for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Adam with decoupled weight decay (`lr · weight_decay · param`).
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    states: BTreeMap<String, AdamState>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Adam {
            config,
            step: 0,
            states: BTreeMap::new(),
        })
    }

    pub fn state(&self, name: &str) -> Option<&AdamState> {
        self.states.get(name)
    }

    /// Applies one update to every parameter in `params` that holds a
    /// gradient and is accepted by `trainable`, using learning rate `lr`.
    /// Gradients are left in place; callers zero them between steps.
    pub fn step(
        &mut self,
        params: &mut ParamStore,
        lr: f64,
        trainable: impl Fn(&str) -> bool,
    ) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::invalid(format!("learning rate {lr}")));
        }
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (name, p) in params.iter_mut() {
            if !trainable(name) {
                continue;
            }
            let Some(grad) = p.grad.as_ref() else { continue };
            if grad.len() != p.len() {
                return Err(Error::shape("adam_step", format!("`{name}` grad length")));
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite("adam_step"));
            }
            let n = p.len();
            let st = self.states.entry(name.clone()).or_insert_with(|| AdamState {
                m: vec![0.0; n],
                v: vec![0.0; n],
            });
            let grad = grad.clone();
            let data = p.data_mut();
            for i in 0..n {
                let g = grad[i];
                st.m[i] = c.beta1 * st.m[i] + (1.0 - c.beta1) * g;
                st.v[i] = c.beta2 * st.v[i] + (1.0 - c.beta2) * g * g;
                let mh = st.m[i] / bc1;
                let vh = st.v[i] / bc2;
                data[i] -= lr * (mh / (vh.sqrt() + c.eps) + c.weight_decay * data[i]);
            }
        }
        Ok(())
    }
}
