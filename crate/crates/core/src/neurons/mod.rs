//! Neuron models.
//!
//! The few-spikes neuron (FSN) with thresholds and coefficients
//! `U_th(t) = d(t) = alpha * 2^-t` turns a membrane potential into a K-bit
//! greedy binary expansion of `clip(U, 0, X)`, so decoding the train gives a
//! floor quantization on a grid of step `X_min = alpha * 2^-K`.

mod lif;
mod lrelu;

use serde::{Deserialize, Serialize};

pub use lif::{lif_run, lif_step, FireOrder, LifConfig, LifVariant};
pub use lrelu::{compare_relu_lrelu, fsn_lrelu_decode, fsn_lrelu_encode, ActivationComparison, LReluConfig};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FsnConfig {
    pub alpha: f64,
    #[serde(rename = "K")]
    pub k: usize,
}

impl FsnConfig {
    /// Largest supported window; keeps every schedule value exact in f64.
    pub const MAX_K: usize = 30;

    pub fn new(alpha: f64, k: usize) -> Result<Self> {
        let cfg = Self { alpha, k };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Input encoding layer: alpha = 1.
    pub fn input_default() -> Self {
        Self { alpha: 1.0, k: 5 }
    }

    /// Hidden layers: alpha = 3, K = 5.
    pub fn hidden_default() -> Self {
        Self { alpha: 3.0, k: 5 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::invalid(format!("FSN alpha must be > 0, got {}", self.alpha)));
        }
        if self.k == 0 || self.k > Self::MAX_K {
            return Err(Error::invalid(format!(
                "FSN window K must be in 1..={}, got {}",
                Self::MAX_K,
                self.k
            )));
        }
        Ok(())
    }

    /// `U_th(t)` for `t` in `1..=K`.
    #[inline]
    pub fn threshold(&self, t: usize) -> f64 {
        self.alpha * pow2_neg(t)
    }

    /// `d(t)`; equal to the threshold in the ReLU parameterization.
    #[inline]
    pub fn coefficient(&self, t: usize) -> f64 {
        self.threshold(t)
    }

    pub fn coefficients(&self) -> Vec<f64> {
        (1..=self.k).map(|t| self.coefficient(t)).collect()
    }

    /// Upper clip bound `X = sum_t d(t) = alpha * (1 - 2^-K)`.
    pub fn x_max(&self) -> f64 {
        (1..=self.k).map(|t| self.coefficient(t)).sum()
    }

    /// Grid step `X_min = d(K) = alpha * 2^-K`.
    pub fn x_min(&self) -> f64 {
        self.coefficient(self.k)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpikeTrain {
    /// One entry per timestep: 0/1, or -1/0/1 for the signed variant.
    pub bits: Vec<i8>,
}

impl SpikeTrain {
    pub fn zeros(k: usize) -> Self {
        Self { bits: vec![0; k] }
    }

    pub fn from_bits(bits: &[i8]) -> Self {
        Self { bits: bits.to_vec() }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn spike_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b != 0).count()
    }

    pub fn is_signed(&self) -> bool {
        self.bits.iter().any(|&b| b < 0)
    }

    /// The train read as a K-bit binary number, earliest step most significant.
    /// Only meaningful for unsigned trains.
    pub fn level(&self) -> u64 {
        self.bits
            .iter()
            .fold(0u64, |acc, &b| (acc << 1) | u64::from(b > 0))
    }
}

impl std::fmt::Display for SpikeTrain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for b in &self.bits {
            match b {
                1 => f.write_str("1")?,
                -1 => f.write_str("-")?,
                _ => f.write_str("0")?,
            }
        }
        Ok(())
    }
}

/// `2^-t`, exact for every supported window length.
#[inline]
pub fn pow2_neg(t: usize) -> f64 {
    0.5f64.powi(t as i32)
}

/// Greedy FSN encoding: at each step fire iff the residual reaches `U_th(t)`,
/// then subtract the threshold.
pub fn fsn_encode(u: f64, cfg: &FsnConfig) -> SpikeTrain {
    let mut bits = vec![0i8; cfg.k];
    let mut residual = u;
    for (i, bit) in bits.iter_mut().enumerate() {
        let th = cfg.threshold(i + 1);
        if residual >= th {
            *bit = 1;
            residual -= th;
        }
    }
    SpikeTrain { bits }
}

/// Unweighted integration `sum_t d(t) * bits(t)`.
pub fn fsn_decode(train: &SpikeTrain, cfg: &FsnConfig) -> Result<f64> {
    if train.len() != cfg.k {
        return Err(Error::shape(
            format!("spike train of length {}", cfg.k),
            format!("length {}", train.len()),
        ));
    }
    Ok(train
        .bits
        .iter()
        .enumerate()
        .map(|(i, &b)| cfg.coefficient(i + 1) * f64::from(b))
        .sum())
}

/// Number of spikes `fsn_encode(u)` would emit, without allocating.
pub fn fsn_spike_count(u: f64, cfg: &FsnConfig) -> usize {
    let mut residual = u;
    let mut n = 0;
    for t in 1..=cfg.k {
        let th = cfg.threshold(t);
        if residual >= th {
            residual -= th;
            n += 1;
        }
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(alpha: f64, k: usize) -> FsnConfig {
        FsnConfig::new(alpha, k).unwrap()
    }

    /// Step-by-step evaluation of spike-then-subtract, written out for K = 3.
    #[test]
    fn encode_0625_is_101() {
        // t=1: 0.625 >= 0.5 -> 1, residual 0.125
        // t=2: 0.125 <  0.25 -> 0
        // t=3: 0.125 >= 0.125 -> 1, residual 0
        let train = fsn_encode(0.625, &cfg(1.0, 3));
        assert_eq!(train.bits, vec![1, 0, 1]);
        assert_eq!(fsn_decode(&train, &cfg(1.0, 3)).unwrap(), 0.625);
    }

    #[test]
    fn negative_potential_is_silent() {
        for c in [cfg(1.0, 3), cfg(3.0, 5), cfg(0.7, 8)] {
            assert_eq!(fsn_encode(-0.3, &c), SpikeTrain::zeros(c.k));
        }
    }

    #[test]
    fn saturation_is_all_ones() {
        let c = cfg(1.0, 3);
        let train = fsn_encode(2.0, &c);
        assert_eq!(train.bits, vec![1, 1, 1]);
        assert_eq!(fsn_decode(&train, &c).unwrap(), 0.875);
        assert_eq!(c.x_max(), 0.875);
    }

    #[test]
    fn decode_zero_and_length_mismatch() {
        let c = cfg(1.0, 3);
        assert_eq!(fsn_decode(&SpikeTrain::zeros(3), &c).unwrap(), 0.0);
        assert!(fsn_decode(&SpikeTrain::zeros(4), &c).is_err());
    }

    #[test]
    fn schedule_constants() {
        for alpha in [1.0, 3.0, 0.5] {
            for k in [1, 3, 5, 8, 16] {
                let c = cfg(alpha, k);
                assert_eq!(c.x_max(), alpha * (1.0 - pow2_neg(k)));
                assert_eq!(c.x_min(), c.coefficient(k));
                assert_eq!(c.x_min(), alpha * pow2_neg(k));
                for t in 1..=k {
                    assert_eq!(c.threshold(t), c.coefficient(t));
                }
            }
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(FsnConfig::new(0.0, 3).is_err());
        assert!(FsnConfig::new(1.0, 0).is_err());
        assert!(FsnConfig::new(f64::NAN, 3).is_err());
    }

    #[test]
    fn bit_significance() {
        let c = cfg(3.0, 5);
        for t in 1..=5 {
            let mut train = SpikeTrain::zeros(5);
            let before = fsn_decode(&train, &c).unwrap();
            train.bits[t - 1] = 1;
            let after = fsn_decode(&train, &c).unwrap();
            assert_eq!(after - before, 3.0 * pow2_neg(t));
        }
    }

    fn floor_oracle(u: f64, c: &FsnConfig) -> f64 {
        let x = u.clamp(0.0, c.x_max());
        let mut q = (x / c.x_min()).floor();
        // guard the division against a one-ulp overshoot
        if q * c.x_min() > x {
            q -= 1.0;
        }
        q * c.x_min()
    }

    proptest! {
        #[test]
        fn decode_encode_is_floor_quantization(u in -2.0f64..5.0, alpha in prop::sample::select(vec![1.0, 3.0]), k in 1usize..12) {
            let c = cfg(alpha, k);
            let got = fsn_decode(&fsn_encode(u, &c), &c).unwrap();
            prop_assert!((got - floor_oracle(u, &c)).abs() <= 1e-12);
            if (0.0..=c.x_max()).contains(&u) {
                prop_assert!((u - got).abs() < c.x_min());
            }
        }

        #[test]
        fn encode_is_monotone(a in -1.0f64..4.0, b in -1.0f64..4.0) {
            let c = cfg(3.0, 5);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let dl = fsn_decode(&fsn_encode(lo, &c), &c).unwrap();
            let dh = fsn_decode(&fsn_encode(hi, &c), &c).unwrap();
            prop_assert!(dl <= dh);
        }

        #[test]
        fn spike_count_matches_train(u in -1.0f64..4.0) {
            let c = cfg(3.0, 5);
            prop_assert_eq!(fsn_spike_count(u, &c), fsn_encode(u, &c).spike_count());
        }
    }

    #[test]
    fn earlier_bits_weigh_more() {
        let c = cfg(1.0, 8);
        for t in 1..8 {
            assert!(c.coefficient(t) > c.coefficient(t + 1));
        }
    }
}
