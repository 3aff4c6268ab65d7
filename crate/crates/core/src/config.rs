//! The JSON run configuration shared by the CLI subcommands.
//!
//! Every section is optional and falls back to module defaults; unknown keys
//! are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{DataConfig, SpikeMapSource};
use crate::dlnet::Rounding;
use crate::losses::StIouConfig;
use crate::mestor::MestorConfig;
use crate::network::{Architecture, LayerSpec, Task, TrainConfig};
use crate::neurons::FsnConfig;
use crate::tensor::Shape;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    #[default]
    ConvTiny,
    Mlp2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    #[serde(default)]
    pub preset: Preset,
    /// Replaces the preset's layer list. The last layer must produce the
    /// task's output count.
    #[serde(default)]
    pub layers: Option<Vec<LayerSpec>>,
    #[serde(default = "FsnConfig::input_default")]
    pub input_encoding: FsnConfig,
    #[serde(default = "FsnConfig::hidden_default")]
    pub hidden: FsnConfig,
    #[serde(default)]
    pub rounding: Rounding,
    /// Weight-init seed; the run seed when unset.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            preset: Preset::ConvTiny,
            layers: None,
            input_encoding: FsnConfig::input_default(),
            hidden: FsnConfig::hidden_default(),
            rounding: Rounding::Floor,
            seed: None,
        }
    }
}

impl NetworkConfig {
    pub fn architecture(&self, input: Shape, outputs: usize) -> Result<Architecture> {
        let mut arch = match self.preset {
            Preset::ConvTiny => Architecture::conv_tiny(input, outputs),
            Preset::Mlp2 => Architecture::mlp2(input, outputs),
        };
        if let Some(layers) = &self.layers {
            arch.layers = layers.clone();
        }
        arch.input_encoding = self.input_encoding;
        arch.hidden = self.hidden;
        arch.rounding = self.rounding;
        if arch.output_len()? != outputs {
            return Err(Error::invalid(format!(
                "network produces {} outputs, the task needs {outputs}",
                arch.output_len()?
            )));
        }
        Ok(arch)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    #[serde(default = "StIouConfig::default_a")]
    pub a: f64,
    #[serde(default = "StIouConfig::default_b")]
    pub b: f64,
    #[serde(default = "StIouConfig::default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub literal: bool,
    #[serde(default)]
    pub spike_map: SpikeMapSource,
}

impl LossConfig {
    pub fn st_iou(&self) -> StIouConfig {
        StIouConfig {
            a: self.a,
            b: self.b,
            eps: self.eps,
            literal: self.literal,
        }
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        let d = StIouConfig::default();
        Self {
            a: d.a,
            b: d.b,
            eps: d.eps,
            literal: d.literal,
            spike_map: SpikeMapSource::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyConfig {
    /// Inputs used to measure op counts and firing rates of a trained net.
    #[serde(default = "EnergyConfig::default_samples")]
    pub samples: usize,
    /// Table rows to replay; the bundled tables when unset.
    #[serde(default)]
    pub rows: Option<PathBuf>,
    /// Relative tolerance of the replay check.
    #[serde(default = "EnergyConfig::default_tolerance")]
    pub tolerance: f64,
}

impl EnergyConfig {
    fn default_samples() -> usize {
        32
    }
    fn default_tolerance() -> f64 {
        0.05
    }
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            samples: Self::default_samples(),
            rows: None,
            tolerance: Self::default_tolerance(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub mestor: MestorConfig,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub energy: EnergyConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Network outputs for the configured task.
    pub fn outputs(&self) -> usize {
        match self.train.task {
            Task::Classification => 3,
            Task::BoxRegression => 4,
        }
    }

    /// MESTOR frames are three channels at the data geometry.
    pub fn input_shape(&self) -> Shape {
        Shape::new(3, self.data.height as usize, self.data.width as usize)
    }

    pub fn architecture(&self) -> Result<Architecture> {
        self.network.architecture(self.input_shape(), self.outputs())
    }

    /// Set every seed in the document at once.
    pub fn set_seed(&mut self, seed: u64) {
        self.data.seed = seed;
        self.train.seed = seed;
        self.network.seed = Some(seed);
    }

    pub fn network_seed(&self) -> u64 {
        self.network.seed.unwrap_or(self.train.seed)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.mestor.validate()?;
        self.train.validate()?;
        self.loss.st_iou().validate()?;
        self.architecture()?.shapes()?;
        if self.energy.tolerance.is_nan() || self.energy.tolerance < 0.0 {
            return Err(Error::invalid("energy.tolerance must be >= 0"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_all_defaults() {
        let c = RunConfig::from_json("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        c.validate().unwrap();
        assert_eq!(c.architecture().unwrap().output_len().unwrap(), 3);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"trian": {}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"train": {"epoch": 3}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"loss": {"alpha": 1}}"#).is_err());
    }

    #[test]
    fn sections_parse() {
        let c = RunConfig::from_json(
            r#"{"train": {"task": "box-regression", "epochs": 2},
                "loss": {"a": 0.0, "spike_map": "st-channel"},
                "network": {"preset": "mlp2", "rounding": "round-half-even"},
                "mestor": {"N": 6}}"#,
        )
        .unwrap();
        c.validate().unwrap();
        assert_eq!(c.outputs(), 4);
        assert_eq!(c.loss.a, 0.0);
        assert_eq!(c.mestor.n_bins, 6);
        assert_eq!(c.architecture().unwrap().rounding, Rounding::RoundHalfEven);
    }

    #[test]
    fn custom_layers_must_fit_the_task() {
        let c = RunConfig::from_json(
            r#"{"network": {"layers": [{"kind": "flatten"}, {"kind": "dense", "out_features": 5}]}}"#,
        )
        .unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn roundtrip() {
        let c = RunConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), c);
    }
}
