//! Adam with global-norm clipping and a step learning-rate schedule.
//!
//! Parameters and moments are rounded to f32 after every update so that a
//! checkpoint (stored as f32) restores the exact optimiser state.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::params::{round_f32, ModelParams};
use crate::tensor::Tensor;

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

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub cfg: AdamConfig,
    /// Number of updates taken so far.
    pub t: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

pub const MOMENT1_PREFIX: &str = "adam.m/";
pub const MOMENT2_PREFIX: &str = "adam.v/";

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Apply one update to every parameter that has a gradient.
    pub fn step(&mut self, params: &mut ModelParams, grads: &BTreeMap<String, Tensor>, lr: f64) -> Result<()> {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - libm::pow(beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(beta2, self.t as f64);
        for (name, g) in grads {
            let p = params.get_mut(name)?;
            if p.shape() != g.shape() {
                bail!(Dimension, "gradient of `{name}` has shape {:?}, parameter {:?}", g.shape(), p.shape());
            }
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = round_f32(beta1 * *mi + (1.0 - beta1) * gi);
                *vi = round_f32(beta2 * *vi + (1.0 - beta2) * gi * gi);
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *pi = round_f32(*pi - lr * mhat / (libm::sqrt(vhat) + eps));
            }
        }
        Ok(())
    }

    /// Moments as named tensors for checkpointing.
    pub fn state_tensors(&self) -> ModelParams {
        let mut out = ModelParams::new();
        for (k, t) in &self.m {
            out.insert(format!("{MOMENT1_PREFIX}{k}"), t.clone());
        }
        for (k, t) in &self.v {
            out.insert(format!("{MOMENT2_PREFIX}{k}"), t.clone());
        }
        out
    }

    /// Inverse of [`Adam::state_tensors`].
    pub fn from_state(cfg: AdamConfig, t: u64, state: &ModelParams) -> Self {
        let mut adam = Self::new(cfg);
        adam.t = t;
        for (k, v) in state.iter() {
            if let Some(name) = k.strip_prefix(MOMENT1_PREFIX) {
                adam.m.insert(name.into(), v.clone());
            } else if let Some(name) = k.strip_prefix(MOMENT2_PREFIX) {
                adam.v.insert(name.into(), v.clone());
            }
        }
        adam
    }
}

/// Global L2 norm of all gradients.
pub fn global_norm(grads: &BTreeMap<String, Tensor>) -> f64 {
    libm::sqrt(
        grads
            .values()
            .flat_map(|g| g.data().iter())
            .map(|v| v * v)
            .sum(),
    )
}

/// Rescale gradients so their global norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// Base rate multiplied by `decay` at each milestone, given as fractions
/// of the total number of epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub milestones: Vec<f64>,
    pub decay: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            base: 2e-4,
            milestones: vec![0.6, 0.85],
            decay: 0.5,
        }
    }
}

impl LrSchedule {
    pub fn lr_at(&self, epoch: usize, total_epochs: usize) -> f64 {
        let passed = self
            .milestones
            .iter()
            .filter(|&&m| epoch as f64 >= m * total_epochs as f64)
            .count();
        self.base * libm::pow(self.decay, passed as f64)
    }
}
