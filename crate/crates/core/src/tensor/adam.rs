use serde::{Deserialize, Serialize};

use super::ParamSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for one [`ParamSet`], slot-aligned with it.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .tensors()
            .iter()
            .map(|t| vec![0.0; t.len()])
            .collect();
        Self {
            config,
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.second
    }

    /// Rebuilds a state from saved moments, checking alignment with `params`.
    pub fn from_parts(
        params: &ParamSet,
        config: AdamConfig,
        first: Vec<Vec<f64>>,
        second: Vec<Vec<f64>>,
        step: u64,
    ) -> Result<Self> {
        let aligned = |m: &[Vec<f64>]| {
            m.len() == params.len()
                && m.iter()
                    .zip(params.tensors())
                    .all(|(m, t)| m.len() == t.len())
        };
        if !aligned(&first) || !aligned(&second) {
            return Err(Error::Archive(
                "optimizer moments do not match parameters".into(),
            ));
        }
        Ok(Self {
            config,
            first,
            second,
            step,
        })
    }

    /// One bias-corrected Adam update over every tensor in `params`, then
    /// zeroes the gradients.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        if params.len() != self.first.len() {
            return Err(Error::usage(
                "adam_step: parameter set does not match optimizer state",
            ));
        }
        if let Some(i) = params.tensors().iter().position(|t| t.grad().is_none()) {
            return Err(Error::usage(format!(
                "adam_step: parameter {} has no gradient",
                params.names()[i]
            )));
        }
        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for ((t, m), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            let g = t.grad().expect("checked above").to_vec();
            let data = t.data_mut();
            for i in 0..data.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                data[i] -= lr * mh / (vh.sqrt() + eps);
            }
            t.zero_grad();
        }
        Ok(())
    }
}
