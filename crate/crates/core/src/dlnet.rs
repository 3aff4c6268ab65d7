//! Discrete-level surrogate activation.
//!
//! Forward: clip to `[0, X]`, then snap to the `X_min` grid. In floor mode the
//! result is exactly the value an FSN spike train decodes to. Backward: the
//! rounding is treated as identity and the clip as a closed rectangle gate.

use serde::{Deserialize, Serialize};

use crate::neurons::FsnConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rounding {
    /// Round down to the grid; bit-equivalent to FSN encode/decode.
    #[default]
    Floor,
    /// Nearest grid level, ties to even.
    RoundHalfEven,
    /// No discretization. Used for finite-difference gradient checks.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizerConfig {
    pub fsn: FsnConfig,
    #[serde(default)]
    pub rounding: Rounding,
}

impl QuantizerConfig {
    pub fn new(fsn: FsnConfig, rounding: Rounding) -> Self {
        Self { fsn, rounding }
    }

    pub fn floor(fsn: FsnConfig) -> Self {
        Self::new(fsn, Rounding::Floor)
    }
}

pub fn clip(x: f64, cfg: &QuantizerConfig) -> f64 {
    let hi = cfg.fsn.x_max();
    if x < 0.0 {
        0.0
    } else if x > hi {
        hi
    } else {
        x
    }
}

/// Floor of `x / step` that is exact on the grid, correcting the division's
/// rounding when `x` sits within an ulp of a level.
fn floor_level(x: f64, step: f64) -> f64 {
    let mut q = (x / step).floor();
    if q * step > x {
        q -= 1.0;
    } else if (q + 1.0) * step <= x {
        q += 1.0;
    }
    q
}

/// Snap a clipped value onto the grid. `x_q` must already lie in `[0, X]`.
pub fn quantize(x_q: f64, cfg: &QuantizerConfig) -> Result<f64> {
    let hi = cfg.fsn.x_max();
    if !(0.0..=hi).contains(&x_q) {
        return Err(Error::invalid(format!(
            "quantize input {x_q} outside [0, {hi}]; clip first"
        )));
    }
    Ok(quantize_clipped(x_q, cfg))
}

#[inline]
fn quantize_clipped(x_q: f64, cfg: &QuantizerConfig) -> f64 {
    let step = cfg.fsn.x_min();
    match cfg.rounding {
        Rounding::Floor => floor_level(x_q, step) * step,
        Rounding::RoundHalfEven => (x_q / step).round_ties_even() * step,
        Rounding::Identity => x_q,
    }
}

/// Clip then quantize a single value.
#[inline]
pub fn activate(x: f64, cfg: &QuantizerConfig) -> f64 {
    quantize_clipped(clip(x, cfg), cfg)
}

/// Grid index of an activated value; its binary digits are the FSN spike train.
pub fn level_of(x_p: f64, fsn: &FsnConfig) -> u64 {
    (x_p / fsn.x_min()).round() as u64
}

/// Pre-clip inputs kept for the backward pass.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SavedActivation {
    pub pre_clip: Vec<f64>,
}

pub fn activation_forward(x: &[f64], cfg: &QuantizerConfig) -> (Vec<f64>, SavedActivation) {
    let out = x.iter().map(|&v| activate(v, cfg)).collect();
    (
        out,
        SavedActivation {
            pre_clip: x.to_vec(),
        },
    )
}

/// Pass-through gate of the clip: 1 on the closed interval `[0, X]`.
#[inline]
pub fn clip_gate(x: f64, cfg: &QuantizerConfig) -> f64 {
    if (0.0..=cfg.fsn.x_max()).contains(&x) {
        1.0
    } else {
        0.0
    }
}

pub fn activation_backward(
    upstream: &[f64],
    saved: &SavedActivation,
    cfg: &QuantizerConfig,
) -> Result<Vec<f64>> {
    if upstream.len() != saved.pre_clip.len() {
        return Err(Error::shape(
            format!("{} upstream values", saved.pre_clip.len()),
            upstream.len(),
        ));
    }
    Ok(upstream
        .iter()
        .zip(&saved.pre_clip)
        .map(|(&g, &x)| g * clip_gate(x, cfg))
        .collect())
}

/// Softmax cross-entropy against a one-hot target. The gradient with respect
/// to the logits is `softmax(x) - y`.
pub fn softmax_ce(logits: &[f64], one_hot: &[f64]) -> Result<(f64, Vec<f64>)> {
    if logits.len() != one_hot.len() || logits.is_empty() {
        return Err(Error::shape(
            format!("{} classes", logits.len()),
            format!("{} target entries", one_hot.len()),
        ));
    }
    let hot = one_hot.iter().filter(|&&v| v == 1.0).count();
    if hot != 1 || one_hot.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid("target is not a one-hot vector"));
    }
    let (imax, &m) = logits
        .iter()
        .enumerate()
        .fold((0, &f64::NEG_INFINITY), |acc, (i, v)| if *v > *acc.1 { (i, v) } else { acc });
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != imax)
        .map(|(_, &v)| (v - m).exp())
        .sum();
    let denom = 1.0 + rest;
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .zip(one_hot)
        .map(|(&x, &y)| {
            if y == 1.0 {
                // (m - x) + ln(1 + rest) without the cancellation of lse - x
                loss = (m - x) + rest.ln_1p();
            }
            (x - m).exp() / denom - y
        })
        .collect();
    Ok((loss, grad))
}

/// Softmax probabilities (max-shifted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}
