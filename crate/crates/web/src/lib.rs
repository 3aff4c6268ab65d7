//! Browser bindings for the demo page in `www/`.
//!
//! Each export has a plain Rust twin returning `Result<_, String>` so the
//! logic is testable off the browser.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use fsnet_core::energy::{check_row, EnergyModel, EnergyRow, Verdict};
use fsnet_core::events::{generate_scene, ShapeKind, SyntheticSceneSpec};
use fsnet_core::mestor::{self, MestorConfig};
use fsnet_core::neurons::{fsn_decode, fsn_encode, FsnConfig};

#[derive(Debug, Serialize)]
pub struct FsnView {
    pub spikes: Vec<i8>,
    pub thresholds: Vec<f64>,
    pub decoded: f64,
    pub x_max: f64,
    pub x_min: f64,
    pub error: f64,
}

pub fn fsn_view(value: f64, alpha: f64, k: usize) -> Result<FsnView, String> {
    let cfg = FsnConfig::new(alpha, k).map_err(|e| e.to_string())?;
    if !value.is_finite() {
        return Err(format!("value must be finite, got {value}"));
    }
    let train = fsn_encode(value, &cfg);
    let decoded = fsn_decode(&train, &cfg).map_err(|e| e.to_string())?;
    Ok(FsnView {
        spikes: train.bits.clone(),
        thresholds: (1..=k).map(|t| cfg.threshold(t)).collect(),
        decoded,
        x_max: cfg.x_max(),
        x_min: cfg.x_min(),
        error: value.clamp(0.0, cfg.x_max()) - decoded,
    })
}

/// Spike train, thresholds and decoded value of `value` as JSON.
#[wasm_bindgen]
pub fn fsn_json(value: f64, alpha: f64, k: usize) -> Result<String, JsError> {
    let view = fsn_view(value, alpha, k).map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&view).map_err(|e| JsError::new(&e.to_string()))
}

/// A synthetic clip passed through MESTOR.
#[wasm_bindgen]
pub struct Scene {
    width: usize,
    height: usize,
    frame: mestor::MestorFrame,
    noise_events: usize,
}

fn parse_kind(kind: &str) -> Result<ShapeKind, String> {
    match kind {
        "moving-bar" => Ok(ShapeKind::MovingBar),
        "moving-disk" => Ok(ShapeKind::MovingDisk),
        "expanding-square" => Ok(ShapeKind::ExpandingSquare),
        _ => Err(format!("unknown shape {kind:?}")),
    }
}

impl Scene {
    pub fn build(kind: &str, seed: u64, velocity: f64, noise_rate: f64, size: usize) -> Result<Scene, String> {
        let size = u32::try_from(size).map_err(|_| "size too large".to_string())?;
        let spec = SyntheticSceneSpec {
            velocity,
            noise_rate,
            size: 5.0,
            ..SyntheticSceneSpec::new(parse_kind(kind)?, size, size, seed)
        };
        let clip = generate_scene(&spec).map_err(|e| e.to_string())?;
        let frame = mestor::encode(&clip.stream, &MestorConfig::default()).map_err(|e| e.to_string())?;
        Ok(Scene {
            width: frame.width,
            height: frame.height,
            noise_events: clip.truth.noise.iter().filter(|&&n| n).count(),
            frame,
        })
    }

    pub fn channel(&self, name: &str) -> Result<&[f64], String> {
        self.frame
            .channels()
            .into_iter()
            .find(|(n, _)| *n == name)
            .map(|(_, v)| v)
            .ok_or_else(|| format!("unknown channel {name:?} (st | s | t)"))
    }

    pub fn rgba_of(&self, name: &str) -> Result<Vec<u8>, String> {
        Ok(to_rgba(self.channel(name)?))
    }
}

#[wasm_bindgen]
impl Scene {
    #[wasm_bindgen(constructor)]
    pub fn new(kind: &str, seed: u64, velocity: f64, noise_rate: f64, size: usize) -> Result<Scene, JsError> {
        Scene::build(kind, seed, velocity, noise_rate, size).map_err(|e| JsError::new(&e))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Channel `st`, `s` or `t` as RGBA bytes for an `ImageData`.
    pub fn rgba(&self, name: &str) -> Result<Vec<u8>, JsError> {
        self.rgba_of(name).map_err(|e| JsError::new(&e))
    }

    pub fn stats_json(&self) -> String {
        let mut v = serde_json::to_value(&self.frame.stats).unwrap_or_default();
        v["noise_events"] = self.noise_events.into();
        v.to_string()
    }
}

/// Grey ramp with a warm tint so zero stays black.
fn to_rgba(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for &v in values {
        let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        out.extend_from_slice(&[g, (f64::from(g) * 0.85) as u8, (f64::from(g) * 0.6) as u8, 255]);
    }
    out
}

#[derive(Debug, Serialize)]
pub struct EnergyView {
    pub ann_mj: f64,
    pub lif_mj: f64,
    pub fsn_mj: f64,
    pub chosen_mj: f64,
    pub rel_err: Option<f64>,
    pub verdict: Verdict,
}

pub fn energy_view(model: &str, op_giga: f64, rate: f64, k: usize, expected_mj: Option<f64>) -> Result<EnergyView, String> {
    let model = match model {
        "ann" => EnergyModel::Ann,
        "lif" => EnergyModel::Lif,
        "fsn" => EnergyModel::Fsn,
        _ => return Err(format!("unknown model {model:?}")),
    };
    let row_for = |m: EnergyModel| EnergyRow {
        name: String::new(),
        op_giga,
        fr_or_sp: rate,
        k: (m != EnergyModel::Ann).then_some(k),
        model: m,
        expected_mj: None,
        self_implemented: false,
        table: None,
    };
    row_for(model).validate().map_err(|e| e.to_string())?;
    let check = check_row(
        &EnergyRow {
            expected_mj,
            ..row_for(model)
        },
        0.05,
    );
    Ok(EnergyView {
        ann_mj: row_for(EnergyModel::Ann).energy_mj(),
        lif_mj: row_for(EnergyModel::Lif).energy_mj(),
        fsn_mj: row_for(EnergyModel::Fsn).energy_mj(),
        chosen_mj: check.computed_mj,
        rel_err: check.rel_err,
        verdict: check.verdict,
    })
}

/// Energy of one table row under all three models; `expected_mj` below zero
/// means no reference value.
#[wasm_bindgen]
pub fn energy_json(model: &str, op_giga: f64, rate: f64, k: usize, expected_mj: f64) -> Result<String, JsError> {
    let expected = (expected_mj >= 0.0).then_some(expected_mj);
    let view = energy_view(model, op_giga, rate, k, expected).map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&view).map_err(|e| JsError::new(&e.to_string()))
}
