//! LIF / PLIF / IF baselines in discrete time.
//!
//! Default ordering tests for a spike on the current potential before the
//! step's input is integrated; `FireOrder::IntegrateThenFire` gives the more
//! common ordering for cross-checks.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LifVariant {
    Lif,
    Plif,
    If,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FireOrder {
    #[default]
    FireThenIntegrate,
    IntegrateThenFire,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifConfig {
    pub tau: f64,
    pub threshold: f64,
    pub reset: f64,
    pub variant: LifVariant,
    /// Trainable leak parameter, PLIF only: leak factor `1 / (1 + exp(-a))`.
    pub plif_a: f64,
    #[serde(default)]
    pub order: FireOrder,
}

impl LifConfig {
    pub fn lif(tau: f64, threshold: f64, reset: f64) -> Self {
        Self {
            tau,
            threshold,
            reset,
            variant: LifVariant::Lif,
            plif_a: 0.0,
            order: FireOrder::default(),
        }
    }

    pub fn plif(a: f64, threshold: f64, reset: f64) -> Self {
        Self {
            variant: LifVariant::Plif,
            plif_a: a,
            ..Self::lif(1.0, threshold, reset)
        }
    }

    pub fn integrate_and_fire(threshold: f64) -> Self {
        Self {
            variant: LifVariant::If,
            ..Self::lif(1.0, threshold, 0.0)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::invalid(format!("tau must be > 0, got {}", self.tau)));
        }
        Ok(())
    }

    /// Fraction of the gap to `input + reset` closed per step.
    pub fn leak_factor(&self) -> f64 {
        match self.variant {
            LifVariant::Lif => 1.0 / self.tau,
            LifVariant::Plif => 1.0 / (1.0 + (-self.plif_a).exp()),
            LifVariant::If => 1.0,
        }
    }

    fn reset_potential(&self) -> f64 {
        match self.variant {
            LifVariant::If => 0.0,
            _ => self.reset,
        }
    }

    fn integrate(&self, u: f64, input: f64) -> f64 {
        match self.variant {
            // IF keeps the potential and adds the input with no leak.
            LifVariant::If => u + input,
            _ => u + self.leak_factor() * (input + self.reset - u),
        }
    }
}

/// One discrete step. Returns `(spike, next_potential)`.
pub fn lif_step(u: f64, input: f64, cfg: &LifConfig) -> Result<(u8, f64)> {
    cfg.validate()?;
    let reset = cfg.reset_potential();
    Ok(match cfg.order {
        FireOrder::FireThenIntegrate => {
            if u >= cfg.threshold {
                (1, reset)
            } else {
                (0, cfg.integrate(u, input))
            }
        }
        FireOrder::IntegrateThenFire => {
            let next = cfg.integrate(u, input);
            if next >= cfg.threshold {
                (1, reset)
            } else {
                (0, next)
            }
        }
    })
}

/// Drive a neuron from `u0` with one input per timestep; returns the spikes and
/// the final potential.
pub fn lif_run(u0: f64, inputs: &[f64], cfg: &LifConfig) -> Result<(Vec<u8>, f64)> {
    let mut u = u0;
    let mut spikes = Vec::with_capacity(inputs.len());
    for &x in inputs {
        let (s, next) = lif_step(u, x, cfg)?;
        spikes.push(s);
        u = next;
    }
    Ok((spikes, u))
}
