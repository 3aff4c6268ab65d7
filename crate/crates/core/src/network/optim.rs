//! AdamW with decoupled weight decay and a step learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::{Gradients, Network};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepLr {
    /// Epochs between decays.
    pub step_size: usize,
    pub gamma: f64,
}

impl Default for StepLr {
    fn default() -> Self {
        Self {
            step_size: 10,
            gamma: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    #[serde(default = "AdamWConfig::default_lr")]
    pub lr: f64,
    #[serde(default = "AdamWConfig::default_beta1")]
    pub beta1: f64,
    #[serde(default = "AdamWConfig::default_beta2")]
    pub beta2: f64,
    #[serde(default = "AdamWConfig::default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub schedule: StepLr,
}

impl AdamWConfig {
    fn default_lr() -> f64 {
        1e-3
    }
    fn default_beta1() -> f64 {
        0.9
    }
    fn default_beta2() -> f64 {
        0.999
    }
    fn default_eps() -> f64 {
        1e-8
    }

    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.schedule.step_size > 0
            && self.schedule.gamma > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid optimizer settings {self:?}")))
        }
    }
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: Self::default_lr(),
            beta1: Self::default_beta1(),
            beta2: Self::default_beta2(),
            eps: Self::default_eps(),
            weight_decay: 0.0,
            schedule: StepLr::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub cfg: AdamWConfig,
    /// Current learning rate after scheduling.
    pub lr: f64,
    pub step: u64,
    pub epoch: usize,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl OptimState {
    /// Moments shaped like `shapes` (one length per parameter tensor).
    pub fn new(cfg: AdamWConfig, shapes: &[usize]) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            lr: cfg.lr,
            step: 0,
            epoch: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        })
    }

    pub fn for_network(cfg: AdamWConfig, net: &Network) -> Result<Self> {
        let shapes: Vec<usize> = net.parameters().iter().map(|(_, p)| p.len()).collect();
        Self::new(cfg, &shapes)
    }

    /// Advance the schedule by one epoch.
    pub fn end_epoch(&mut self) {
        self.epoch += 1;
        if self.epoch.is_multiple_of(self.cfg.schedule.step_size) {
            self.lr *= self.cfg.schedule.gamma;
        }
    }

    /// One AdamW update of every parameter of `net`.
    pub fn step_network(&mut self, net: &mut Network, grads: &Gradients) -> Result<()> {
        if let Some(layer) = grads.first_non_finite(net) {
            return Err(Error::NonFiniteGradient { layer });
        }
        let g = grads.parameters();
        let mut p = net.parameters_mut();
        adamw_step(&mut p, &g, self)
    }
}

/// `w -= lr * wd * w`, then the bias-corrected Adam step.
pub fn adamw_step(params: &mut [&mut Vec<f64>], grads: &[&[f64]], state: &mut OptimState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(format!("{} parameter tensors", state.m.len()), format!("{} params / {} grads", params.len(), grads.len())));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[i].len() {
            return Err(Error::shape(state.m[i].len(), format!("tensor {i}: {} params / {} grads", p.len(), g.len())));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient {
                layer: format!("parameter tensor {i}"),
            });
        }
    }
    state.step += 1;
    let c = state.cfg;
    let bc1 = 1.0 - c.beta1.powi(state.step as i32);
    let bc2 = 1.0 - c.beta2.powi(state.step as i32);
    let lr = state.lr;
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..p.len() {
            p[j] -= lr * c.weight_decay * p[j];
            m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
            v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
            let mh = m[j] / bc1;
            let vh = v[j] / bc2;
            p[j] -= lr * mh / (vh.sqrt() + c.eps);
        }
    }
    Ok(())
}
