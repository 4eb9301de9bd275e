use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorcore::{ParamSet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
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

/// First/second moment estimates for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

/// One bias-corrected Adam update of `param` in place. `step` is 1-based.
pub fn adam_step(param: &mut Tensor, grad: &[f64], state: &mut Moments, lr: f64, cfg: &AdamConfig) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let data = param.data_mut();
    for i in 0..data.len() {
        let g = grad[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        data[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Adam over a named parameter set, with one moment pair per parameter.
///
/// Parameters are stepped only when listed in an update, so each keeps its
/// own step count for bias correction.
#[derive(Debug, Clone, Default)]
pub struct Adam {
    pub config: AdamConfig,
    state: HashMap<String, Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            state: HashMap::new(),
        }
    }

    /// Updates every parameter in `names` from its accumulated gradient, then clears it.
    pub fn step<'a>(&mut self, params: &mut ParamSet, names: impl IntoIterator<Item = &'a str>, lr: f64) -> Result<()> {
        for name in names {
            let t = params.get_mut(name)?;
            let grad = t
                .grad()
                .ok_or_else(|| Error::Contract(format!("parameter `{name}` has no gradient")))?
                .to_vec();
            let n = t.numel();
            let st = self.state.entry(name.to_string()).or_insert_with(|| Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
                step: 0,
            });
            adam_step(t, &grad, st, lr, &self.config);
            t.zero_grad();
        }
        Ok(())
    }

    pub fn moments(&self, name: &str) -> Option<&Moments> {
        self.state.get(name)
    }

    /// Moment tensors as a parameter-style set (`m.<name>`, `v.<name>`) plus step counts.
    pub fn export(&self) -> (ParamSet, Vec<(String, u64)>) {
        let mut set = ParamSet::new();
        let mut steps = Vec::new();
        let mut names: Vec<_> = self.state.keys().cloned().collect();
        names.sort();
        for name in names {
            let st = &self.state[&name];
            set.insert(format!("m.{name}"), Tensor::vector(st.m.clone()));
            set.insert(format!("v.{name}"), Tensor::vector(st.v.clone()));
            steps.push((name, st.step));
        }
        (set, steps)
    }

    pub fn import(config: AdamConfig, set: &ParamSet, steps: &[(String, u64)]) -> Result<Self> {
        let mut state = HashMap::new();
        for (name, step) in steps {
            let m = set.get(&format!("m.{name}"))?.data().to_vec();
            let v = set.get(&format!("v.{name}"))?.data().to_vec();
            state.insert(name.clone(), Moments { m, v, step: *step });
        }
        Ok(Self { config, state })
    }
}
