//! Signed FSN emulating a bounded leaky ReLU.
//!
//! Negative potentials fire `-1` spikes against the same threshold schedule;
//! decoding scales those by `beta_neg`.

use serde::{Deserialize, Serialize};

use super::{fsn_decode, fsn_encode, FsnConfig, SpikeTrain};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LReluConfig {
    pub base: FsnConfig,
    pub beta_neg: f64,
}

impl LReluConfig {
    pub fn new(base: FsnConfig, beta_neg: f64) -> Result<Self> {
        base.validate()?;
        if !(beta_neg > 0.0 && beta_neg < 1.0) {
            return Err(Error::invalid(format!("beta_neg must lie in (0, 1), got {beta_neg}")));
        }
        Ok(Self { base, beta_neg })
    }
}

pub fn fsn_lrelu_encode(u: f64, cfg: &LReluConfig) -> SpikeTrain {
    let mut bits = vec![0i8; cfg.base.k];
    let mut residual = u;
    for (i, bit) in bits.iter_mut().enumerate() {
        let th = cfg.base.threshold(i + 1);
        if residual >= th {
            *bit = 1;
            residual -= th;
        } else if residual <= -th {
            *bit = -1;
            residual += th;
        }
    }
    SpikeTrain { bits }
}

/// `sum_t d(t) * beta(t) * bits(t)` with `beta = beta_neg` on negative spikes.
pub fn fsn_lrelu_decode(train: &SpikeTrain, cfg: &LReluConfig) -> Result<f64> {
    if train.len() != cfg.base.k {
        return Err(Error::shape(
            format!("spike train of length {}", cfg.base.k),
            format!("length {}", train.len()),
        ));
    }
    Ok(train
        .bits
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            let beta = if b < 0 { cfg.beta_neg } else { 1.0 };
            cfg.base.coefficient(i + 1) * beta * f64::from(b)
        })
        .sum())
}

/// Side-by-side statistics of the unsigned and signed encoders over a sample
/// of membrane potentials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivationComparison {
    pub samples: usize,
    /// Spikes per (neuron, timestep) slot.
    pub relu_firing_rate: f64,
    pub lrelu_firing_rate: f64,
    /// Mean absolute error against the ideal bounded ReLU / leaky ReLU.
    pub relu_mean_abs_error: f64,
    pub lrelu_mean_abs_error: f64,
}

pub fn compare_relu_lrelu(potentials: &[f64], cfg: &LReluConfig) -> ActivationComparison {
    let base = &cfg.base;
    let x = base.x_max();
    let slots = (potentials.len() * base.k).max(1) as f64;
    let (mut relu_spikes, mut lrelu_spikes) = (0usize, 0usize);
    let (mut relu_err, mut lrelu_err) = (0.0, 0.0);
    for &u in potentials {
        let a = fsn_encode(u, base);
        let b = fsn_lrelu_encode(u, cfg);
        relu_spikes += a.spike_count();
        lrelu_spikes += b.spike_count();
        let ideal_relu = u.clamp(0.0, x);
        let ideal_lrelu = if u >= 0.0 {
            u.min(x)
        } else {
            cfg.beta_neg * u.max(-x)
        };
        relu_err += (fsn_decode(&a, base).unwrap_or(0.0) - ideal_relu).abs();
        lrelu_err += (fsn_lrelu_decode(&b, cfg).unwrap_or(0.0) - ideal_lrelu).abs();
    }
    let n = potentials.len().max(1) as f64;
    ActivationComparison {
        samples: potentials.len(),
        relu_firing_rate: relu_spikes as f64 / slots,
        lrelu_firing_rate: lrelu_spikes as f64 / slots,
        relu_mean_abs_error: relu_err / n,
        lrelu_mean_abs_error: lrelu_err / n,
    }
}
