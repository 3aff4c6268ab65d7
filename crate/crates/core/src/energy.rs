//! Operation counting and the three inference-energy models.
//!
//! * ANN: `OP_MAC * sp * E_MAC`
//! * LIF SNN: `K * OP_AC * (fr * E_AC + (1 - fr) * E_MAC)`; the second term
//!   is the per-step membrane decay multiply.
//! * FSN SNN: `K * OP_AC * fr * E_AC`
//!
//! `E_AC = 0.9 pJ`, `E_MAC = 4.6 pJ`. Energies are in joules unless a name
//! says otherwise.

use serde::{Deserialize, Serialize};

use crate::network::{ForwardMode, Network, SpikeStats};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const E_AC: f64 = 0.9e-12;
pub const E_MAC: f64 = 4.6e-12;

pub fn energy_ann(op_mac: f64, sp: f64) -> f64 {
    op_mac * sp * E_MAC
}

pub fn energy_lif(op_ac: f64, fr: f64, k: usize) -> f64 {
    let k = k as f64;
    k * op_ac * fr * E_AC + k * op_ac * (1.0 - fr) * E_MAC
}

pub fn energy_fsn(op_ac: f64, fr: f64, k: usize) -> f64 {
    k as f64 * op_ac * fr * E_AC
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpCounts {
    /// Synaptic connections per inference (equal to the dense MAC count).
    pub op_ac: u64,
    /// Mean firing rate over input-encoding and hidden neurons.
    pub fr: f64,
    /// Fraction of those neurons emitting at least one spike.
    pub sp: f64,
    #[serde(rename = "K")]
    pub k: usize,
    /// Dense MACs per inference in surrogate mode.
    pub mac_dlnet: u64,
    /// Accumulates actually performed per inference in spike mode.
    pub ac_measured: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub counts: OpCounts,
    pub ann_j: f64,
    pub lif_j: f64,
    pub fsn_j: f64,
    pub e_ac: f64,
    pub e_mac: f64,
}

impl EnergyReport {
    pub fn from_counts(counts: OpCounts) -> Self {
        let op = counts.op_ac as f64;
        Self {
            ann_j: energy_ann(counts.mac_dlnet as f64, counts.sp),
            lif_j: energy_lif(op, counts.fr, counts.k),
            fsn_j: energy_fsn(op, counts.fr, counts.k),
            counts,
            e_ac: E_AC,
            e_mac: E_MAC,
        }
    }
}

/// Run the batch in spike mode and derive the counts the energy models need.
/// `K` is the largest window among the spiking layers.
pub fn count_ops(net: &Network, batch: &[Tensor]) -> Result<OpCounts> {
    if batch.is_empty() {
        return Err(Error::invalid("count_ops needs at least one input"));
    }
    let mut stats = SpikeStats::default();
    let mut active = 0usize;
    let mut neurons = 0usize;
    for x in batch {
        let (_, s) = net.forward(x, ForwardMode::Spike)?;
        stats.merge(&s);
        // a nonzero quantized level is a neuron with at least one spike
        let (_, trace, _) = net.forward_with_trace(x)?;
        let q = net.input_quantizer();
        active += x.data.iter().filter(|&&v| crate::dlnet::activate(v, &q) > 0.0).count();
        neurons += x.len();
        for (layer, z) in net.layers.iter().zip(&trace.pre_activations) {
            if let Some(q) = &layer.activation {
                active += z.iter().filter(|&&v| crate::dlnet::activate(v, q) > 0.0).count();
                neurons += z.len();
            }
        }
    }
    let k = stats.layers.iter().map(|l| l.k).max().unwrap_or(0);
    Ok(OpCounts {
        op_ac: net.synaptic_ops(),
        fr: stats.firing_rate(),
        sp: if neurons == 0 { 0.0 } else { active as f64 / neurons as f64 },
        k,
        mac_dlnet: net.synaptic_ops(),
        ac_measured: stats.ops as f64 / batch.len() as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnergyModel {
    Ann,
    Lif,
    Fsn,
}

/// One row of an energy table: printed operation count, rate and window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyRow {
    pub name: String,
    /// Operations in units of 1e9 (AC for SNNs, MAC for ANNs).
    pub op_giga: f64,
    /// Firing rate for SNN models, sparsity factor for ANNs.
    pub fr_or_sp: f64,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub model: EnergyModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_mj: Option<f64>,
    /// The source reported this row from its own re-implementation.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub self_implemented: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<String>,
}

impl EnergyRow {
    pub fn validate(&self) -> Result<()> {
        let ctx = |m: String| Error::invalid(format!("row {:?}: {m}", self.name));
        if !(self.op_giga >= 0.0 && self.op_giga.is_finite()) {
            return Err(ctx(format!("op_giga must be >= 0, got {}", self.op_giga)));
        }
        if !(0.0..=1.0).contains(&self.fr_or_sp) {
            return Err(ctx(format!("fr_or_sp must be in [0, 1], got {}", self.fr_or_sp)));
        }
        if self.model == EnergyModel::Ann && self.fr_or_sp == 0.0 {
            return Err(ctx("ANN sparsity factor must be > 0".into()));
        }
        match (self.model, self.k) {
            (EnergyModel::Ann, _) => {}
            (_, Some(k)) if k > 0 => {}
            _ => return Err(ctx("SNN rows need K >= 1".into())),
        }
        if let Some(e) = self.expected_mj {
            if !(e >= 0.0 && e.is_finite()) {
                return Err(ctx(format!("expected_mj must be >= 0, got {e}")));
            }
        }
        Ok(())
    }

    fn energy_j(&self, op_giga: f64, rate: f64) -> f64 {
        let op = op_giga * 1e9;
        match self.model {
            EnergyModel::Ann => energy_ann(op, rate),
            EnergyModel::Lif => energy_lif(op, rate, self.k.unwrap_or(0)),
            EnergyModel::Fsn => energy_fsn(op, rate, self.k.unwrap_or(0)),
        }
    }

    pub fn energy_mj(&self) -> f64 {
        self.energy_j(self.op_giga, self.fr_or_sp) * 1e3
    }
}

pub fn parse_rows(json: &str) -> Result<Vec<EnergyRow>> {
    let rows: Vec<EnergyRow> = serde_json::from_str(json)?;
    for r in &rows {
        r.validate()?;
    }
    Ok(rows)
}

/// Published energy rows shipped with the crate.
pub fn bundled_rows() -> Vec<EnergyRow> {
    parse_rows(include_str!("../data/energy_tables.json")).expect("bundled energy table is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    /// Relative error within the tolerance.
    Within,
    /// Outside the tolerance, but consistent once every printed input and
    /// the printed result are widened by half a unit in their last digit.
    WithinPrintedPrecision,
    Outside,
    NoReference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowCheck {
    pub name: String,
    pub computed_mj: f64,
    pub expected_mj: Option<f64>,
    pub rel_err: Option<f64>,
    pub verdict: Verdict,
    pub self_implemented: bool,
}

/// Half a unit in the last printed digit of `v`.
fn half_unit(v: f64) -> f64 {
    let s = format!("{v}");
    let decimals = s.split_once('.').map(|(_, d)| d.len()).unwrap_or(0);
    0.5 * 10f64.powi(-(decimals as i32))
}

pub fn check_row(row: &EnergyRow, tolerance: f64) -> RowCheck {
    let computed = row.energy_mj();
    let (rel_err, verdict) = match row.expected_mj {
        None => (None, Verdict::NoReference),
        Some(expected) => {
            let rel = if expected == 0.0 {
                if computed == 0.0 { 0.0 } else { f64::INFINITY }
            } else {
                (computed - expected).abs() / expected
            };
            let verdict = if rel <= tolerance {
                Verdict::Within
            } else if printed_interval_overlaps(row, expected, tolerance) {
                Verdict::WithinPrintedPrecision
            } else {
                Verdict::Outside
            };
            (Some(rel), verdict)
        }
    };
    RowCheck {
        name: row.name.clone(),
        computed_mj: computed,
        expected_mj: row.expected_mj,
        rel_err,
        verdict,
        self_implemented: row.self_implemented,
    }
}

/// The energy is monotone in both inputs, so the extremes over the printed
/// input box sit at its corners.
fn printed_interval_overlaps(row: &EnergyRow, expected: f64, tolerance: f64) -> bool {
    let (dop, dr) = (half_unit(row.op_giga), half_unit(row.fr_or_sp));
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for op in [row.op_giga - dop, row.op_giga + dop] {
        for r in [row.fr_or_sp - dr, row.fr_or_sp + dr] {
            let e = row.energy_j(op.max(0.0), r.clamp(0.0, 1.0)) * 1e3;
            lo = lo.min(e);
            hi = hi.max(e);
        }
    }
    let de = half_unit(expected);
    let (elo, ehi) = ((expected - de) * (1.0 - tolerance), (expected + de) * (1.0 + tolerance));
    lo <= ehi && hi >= elo
}

/// Fixed-width text table.
pub fn render_table(checks: &[RowCheck]) -> String {
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(4).max(4);
    let mut out = format!(
        "{:<width$}  {:>12}  {:>12}  {:>8}  {}\n",
        "name", "computed_mJ", "expected_mJ", "rel_err", "verdict"
    );
    for c in checks {
        let exp = c.expected_mj.map(|e| format!("{e:.2}")).unwrap_or_else(|| "-".into());
        let rel = c.rel_err.map(|r| format!("{:.2}%", r * 100.0)).unwrap_or_else(|| "-".into());
        let mut verdict = serde_json::to_value(c.verdict)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        if c.self_implemented {
            verdict.push_str(" (self-implemented source)");
        }
        out.push_str(&format!(
            "{:<width$}  {:>12.4}  {:>12}  {:>8}  {verdict}\n",
            c.name, c.computed_mj, exp, rel
        ));
    }
    out
}

/// CSV with a header line.
pub fn render_csv(checks: &[RowCheck]) -> String {
    let mut out = String::from("name,computed_mj,expected_mj,rel_err,verdict,self_implemented\n");
    for c in checks {
        let verdict = serde_json::to_value(c.verdict)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        out.push_str(&format!(
            "\"{}\",{},{},{},{},{}\n",
            c.name.replace('"', "\"\""),
            c.computed_mj,
            c.expected_mj.map(|e| e.to_string()).unwrap_or_default(),
            c.rel_err.map(|r| r.to_string()).unwrap_or_default(),
            verdict,
            c.self_implemented
        ));
    }
    out
}
