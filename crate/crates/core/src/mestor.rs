//! Multi-scale event integration into a 3-channel frame.
//!
//! A clip is split into `N` equal time bins (polarity ignored). Three channels
//! are produced:
//!
//! * `ST`: binary continuity map. Each pixel runs an FSN for `K` steps, driven
//!   by the 3x3 zero-padded convolution of bin `t` at step `t`. Pixels firing
//!   at least `keep_threshold` times are kept.
//! * `S`: sum of all bins, normalized.
//! * `T`: last bin only, normalized.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::events::EventStream;
use crate::neurons::FsnConfig;
use crate::tensor::{Shape, Tensor};
use crate::{Error, Result};

pub type Kernel = [[f64; 3]; 3];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Normalization {
    /// Divide by the channel maximum (1 when the channel is empty).
    #[default]
    Max,
    /// Cap counts at `cap`, then divide by `cap`.
    Clamp { cap: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MestorConfig {
    #[serde(rename = "N", default = "MestorConfig::default_n")]
    pub n_bins: usize,
    /// Bin length in microseconds; `duration / N` when unset.
    #[serde(default)]
    pub dt_us: Option<f64>,
    #[serde(default = "FsnConfig::input_default")]
    pub continuity: FsnConfig,
    #[serde(default = "MestorConfig::mean_kernel")]
    pub kernel: Kernel,
    /// Minimum spike count for a pixel to survive; `K - 1` when unset.
    #[serde(default)]
    pub keep_threshold: Option<usize>,
    #[serde(default)]
    pub normalization: Normalization,
}

impl MestorConfig {
    fn default_n() -> usize {
        5
    }

    /// 3x3 box filter with unit gain.
    pub fn mean_kernel() -> Kernel {
        [[1.0 / 9.0; 3]; 3]
    }

    pub fn ones_kernel() -> Kernel {
        [[1.0; 3]; 3]
    }

    pub fn keep_threshold(&self) -> usize {
        self.keep_threshold
            .unwrap_or(self.continuity.k.saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        self.continuity.validate()?;
        if self.n_bins == 0 || self.n_bins < self.continuity.k {
            return Err(Error::invalid(format!(
                "MESTOR needs N >= K, got N={} K={}",
                self.n_bins, self.continuity.k
            )));
        }
        if self.kernel.iter().flatten().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid("MESTOR kernel entries must be finite and >= 0"));
        }
        if let Some(dt) = self.dt_us {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::invalid(format!("bin length must be > 0, got {dt}")));
            }
        }
        if let Normalization::Clamp { cap } = self.normalization {
            if !(cap > 0.0 && cap.is_finite()) {
                return Err(Error::invalid(format!("clamp cap must be > 0, got {cap}")));
            }
        }
        if self.keep_threshold() > self.continuity.k {
            return Err(Error::invalid(format!(
                "keep threshold {} exceeds K={}",
                self.keep_threshold(),
                self.continuity.k
            )));
        }
        Ok(())
    }
}

impl Default for MestorConfig {
    fn default() -> Self {
        Self {
            n_bins: Self::default_n(),
            dt_us: None,
            continuity: FsnConfig::input_default(),
            kernel: Self::mean_kernel(),
            keep_threshold: None,
            normalization: Normalization::Max,
        }
    }
}

/// `N` per-pixel event-count histograms, each row-major `H x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bins {
    pub width: usize,
    pub height: usize,
    pub counts: Vec<Vec<f64>>,
    /// Events past `N * dt` when an explicit bin length is configured.
    pub dropped: usize,
}

impl Bins {
    pub fn n(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().flatten().sum()
    }
}

/// Bin events relative to the first timestamp. Intervals are half-open except
/// the last, which is closed on the right.
pub fn bin_events(stream: &EventStream, cfg: &MestorConfig) -> Result<Bins> {
    if cfg.n_bins == 0 {
        return Err(Error::invalid("N must be >= 1"));
    }
    let (w, h) = (stream.width as usize, stream.height as usize);
    let n = cfg.n_bins;
    let mut counts = vec![vec![0.0; w * h]; n];
    let mut dropped = 0;
    let Some(t0) = stream.t_first() else {
        return Ok(Bins { width: w, height: h, counts, dropped });
    };
    let dt = cfg
        .dt_us
        .unwrap_or(stream.duration() as f64 / n as f64);
    let span = dt * n as f64;
    for e in &stream.events {
        let rel = (e.t - t0) as f64;
        let bin = if dt <= 0.0 {
            0
        } else if rel >= span {
            if rel > span {
                dropped += 1;
                continue;
            }
            n - 1
        } else {
            ((rel / dt).floor() as usize).min(n - 1)
        };
        counts[bin][e.y as usize * w + e.x as usize] += 1.0;
    }
    Ok(Bins { width: w, height: h, counts, dropped })
}

/// 3x3 zero-padded correlation of a single map with `kernel`.
pub fn convolve3x3(map: &[f64], width: usize, height: usize, kernel: &Kernel) -> Vec<f64> {
    let mut out = vec![0.0; width * height];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (ky, row) in kernel.iter().enumerate() {
                let yy = y as isize + ky as isize - 1;
                if yy < 0 || yy >= height as isize {
                    continue;
                }
                for (kx, &k) in row.iter().enumerate() {
                    let xx = x as isize + kx as isize - 1;
                    if xx < 0 || xx >= width as isize || k == 0.0 {
                        continue;
                    }
                    acc += k * map[yy as usize * width + xx as usize];
                }
            }
            out[y * width + x] = acc;
        }
    }
    out
}

/// Per-pixel spike counts of the continuity FSN over the first `K` bins.
pub fn continuity_spikes(bins: &Bins, cfg: &MestorConfig) -> Result<Vec<usize>> {
    let k = cfg.continuity.k;
    if bins.n() < k {
        return Err(Error::invalid(format!("need at least K={k} bins, got {}", bins.n())));
    }
    let len = bins.width * bins.height;
    let mut u = vec![0.0; len];
    let mut spikes = vec![0usize; len];
    for (step, bin) in bins.counts.iter().take(k).enumerate() {
        let drive = convolve3x3(bin, bins.width, bins.height, &cfg.kernel);
        let th = cfg.continuity.threshold(step + 1);
        for i in 0..len {
            u[i] += drive[i];
            if u[i] >= th {
                u[i] -= th;
                spikes[i] += 1;
            }
        }
    }
    Ok(spikes)
}

pub fn continuity_map(bins: &Bins, cfg: &MestorConfig) -> Result<Vec<f64>> {
    let keep = cfg.keep_threshold();
    Ok(continuity_spikes(bins, cfg)?
        .into_iter()
        .map(|s| if s >= keep { 1.0 } else { 0.0 })
        .collect())
}

/// Raw (unnormalized) spatial channel: sum of all bins.
pub fn spatial_raw(bins: &Bins) -> Vec<f64> {
    let mut out = vec![0.0; bins.width * bins.height];
    for bin in &bins.counts {
        for (o, v) in out.iter_mut().zip(bin) {
            *o += v;
        }
    }
    out
}

/// Raw temporal channel: the last bin.
pub fn temporal_raw(bins: &Bins) -> Vec<f64> {
    bins.counts.last().cloned().unwrap_or_default()
}

pub fn normalize(raw: &[f64], mode: Normalization) -> Vec<f64> {
    match mode {
        Normalization::Max => {
            let m = raw.iter().copied().fold(0.0, f64::max);
            let m = if m > 0.0 { m } else { 1.0 };
            raw.iter().map(|v| v / m).collect()
        }
        Normalization::Clamp { cap } => raw.iter().map(|v| v.min(cap) / cap).collect(),
    }
}

pub fn spatial_channel(bins: &Bins, cfg: &MestorConfig) -> Vec<f64> {
    normalize(&spatial_raw(bins), cfg.normalization)
}

pub fn temporal_channel(bins: &Bins, cfg: &MestorConfig) -> Vec<f64> {
    normalize(&temporal_raw(bins), cfg.normalization)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MestorStats {
    pub event_count: usize,
    pub binned_events: usize,
    pub kept_pixels: usize,
    pub event_pixels: usize,
    pub s_max: f64,
    pub t_max: f64,
    pub st_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MestorFrame {
    pub width: usize,
    pub height: usize,
    pub st: Vec<f64>,
    pub s: Vec<f64>,
    pub t: Vec<f64>,
    /// Raw accumulated histogram, kept for density-based losses.
    pub s_raw: Vec<f64>,
    pub stats: MestorStats,
}

impl MestorFrame {
    /// Channels stacked as `[ST, S, T]`.
    pub fn to_tensor(&self) -> Tensor {
        let mut data = Vec::with_capacity(3 * self.st.len());
        data.extend_from_slice(&self.st);
        data.extend_from_slice(&self.s);
        data.extend_from_slice(&self.t);
        Tensor {
            shape: Shape::new(3, self.height, self.width),
            data,
        }
    }

    pub fn channels(&self) -> [(&'static str, &[f64]); 3] {
        [("st", &self.st), ("s", &self.s), ("t", &self.t)]
    }
}

pub fn encode(stream: &EventStream, cfg: &MestorConfig) -> Result<MestorFrame> {
    cfg.validate()?;
    let bins = bin_events(stream, cfg)?;
    let st = continuity_map(&bins, cfg)?;
    let s_raw = spatial_raw(&bins);
    let t_raw = temporal_raw(&bins);
    let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    let stats = MestorStats {
        event_count: stream.len(),
        binned_events: stream.len() - bins.dropped,
        kept_pixels: st.iter().filter(|&&v| v > 0.0).count(),
        event_pixels: s_raw.iter().filter(|&&v| v > 0.0).count(),
        s_max: max(&s_raw),
        t_max: max(&t_raw),
        st_max: max(&st),
    };
    Ok(MestorFrame {
        width: bins.width,
        height: bins.height,
        s: normalize(&s_raw, cfg.normalization),
        t: normalize(&t_raw, cfg.normalization),
        st,
        s_raw,
        stats,
    })
}

/// ASCII PGM (P2) with maxval 255; values in `[0, 1]` are scaled and rounded.
pub fn pgm_string(values: &[f64], width: usize, height: usize) -> String {
    let mut out = format!("P2\n{width} {height}\n255\n");
    for row in values.chunks(width.max(1)).take(height) {
        let line: Vec<String> = row
            .iter()
            .map(|v| ((v.clamp(0.0, 1.0) * 255.0).round() as u8).to_string())
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_pgm(path: &Path, values: &[f64], width: usize, height: usize) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(pgm_string(values, width, height).as_bytes())
        .map_err(|e| Error::io(path, e))
}
