//! Desk-scale datasets built from the synthetic scene generator, plus the
//! on-disk layout written by `gen-data` (EVT1 clips and a JSON manifest).

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::events::{
    generate_scene, load_events, save_events, EventFormat, EventStream, LabeledClip, LoadOptions, ShapeKind,
    SyntheticSceneSpec,
};
use crate::losses::{BBox, SpikeMap};
use crate::mestor::{encode, MestorConfig};
use crate::network::{Sample, Target, Task};
use crate::{Error, Result};

/// Where the spike map for the density term of the box loss comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpikeMapSource {
    /// Accumulated event histogram before normalization.
    #[default]
    RawHistogram,
    /// The binary continuity channel.
    StChannel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default = "DataConfig::default_clips")]
    pub clips: usize,
    #[serde(default = "DataConfig::default_side")]
    pub width: u32,
    #[serde(default = "DataConfig::default_side")]
    pub height: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "DataConfig::default_duration")]
    pub duration_ms: f64,
    #[serde(default = "DataConfig::default_object_rate")]
    pub object_rate: f64,
    #[serde(default = "DataConfig::default_noise_rate")]
    pub noise_rate: f64,
    /// Load clips from a `gen-data` directory instead of generating them.
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

impl DataConfig {
    fn default_clips() -> usize {
        300
    }
    fn default_side() -> u32 {
        32
    }
    fn default_duration() -> f64 {
        50.0
    }
    fn default_object_rate() -> f64 {
        0.5
    }
    fn default_noise_rate() -> f64 {
        0.002
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 16 || self.height < 16 || self.width > 1024 || self.height > 1024 {
            return Err(Error::invalid("dataset geometry must be within 16..=1024 per side"));
        }
        let finite_pos = |v: f64, strict: bool| v.is_finite() && if strict { v > 0.0 } else { v >= 0.0 };
        if !finite_pos(self.duration_ms, true) || !finite_pos(self.object_rate, false) || !finite_pos(self.noise_rate, false) {
            return Err(Error::invalid("duration must be > 0 and rates >= 0"));
        }
        Ok(())
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            clips: Self::default_clips(),
            width: Self::default_side(),
            height: Self::default_side(),
            seed: 0,
            duration_ms: Self::default_duration(),
            object_rate: Self::default_object_rate(),
            noise_rate: Self::default_noise_rate(),
            dir: None,
        }
    }
}

/// A clip with its labels, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipRecord {
    pub stream: EventStream,
    pub label: usize,
    pub bbox: BBox,
}

impl From<LabeledClip> for ClipRecord {
    fn from(c: LabeledClip) -> Self {
        Self {
            stream: c.stream,
            label: c.label,
            bbox: c.bbox,
        }
    }
}

/// Per-clip seed: a SplitMix-style mix of the dataset seed and the index.
pub fn clip_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Scene for clip `index`: classes cycle bar, disk, square; size and speed
/// vary with the clip seed.
pub fn scene_spec(cfg: &DataConfig, task: Task, index: usize) -> SyntheticSceneSpec {
    let seed = clip_seed(cfg.seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    let kind = match task {
        Task::Classification => ShapeKind::ALL[index % 3],
        Task::BoxRegression => ShapeKind::ALL[rng.random_range(0..3)],
    };
    let mut spec = SyntheticSceneSpec {
        object_rate: cfg.object_rate,
        noise_rate: cfg.noise_rate,
        duration_ms: cfg.duration_ms,
        ..SyntheticSceneSpec::new(kind, cfg.width, cfg.height, seed)
    };
    let detect = task == Task::BoxRegression;
    match kind {
        ShapeKind::MovingBar => {
            spec.size = rng.random_range(2.0..3.5);
            spec.bar_length = Some(rng.random_range(9.0..13.0));
            spec.velocity = rng.random_range(0.02..0.08);
        }
        ShapeKind::MovingDisk => {
            spec.size = rng.random_range(if detect { 7.0..10.0 } else { 5.0..8.0 });
            spec.velocity = rng.random_range(0.02..0.08);
        }
        ShapeKind::ExpandingSquare => {
            spec.size = rng.random_range(if detect { 6.0..8.0 } else { 3.0..5.0 });
            spec.velocity = rng.random_range(0.02..0.05);
        }
    }
    spec
}

pub fn generate_clips(cfg: &DataConfig, task: Task) -> Result<Vec<ClipRecord>> {
    cfg.validate()?;
    (0..cfg.clips)
        .map(|i| generate_scene(&scene_spec(cfg, task, i)).map(ClipRecord::from))
        .collect()
}

/// Clips from `cfg.dir` when set, otherwise freshly generated.
pub fn obtain_clips(cfg: &DataConfig, task: Task) -> Result<Vec<ClipRecord>> {
    match &cfg.dir {
        Some(dir) => load_dataset(dir),
        None => generate_clips(cfg, task),
    }
}

/// Encode clips with MESTOR and attach training targets.
pub fn to_samples(clips: &[ClipRecord], mestor: &MestorConfig, task: Task, source: SpikeMapSource) -> Result<Vec<Sample>> {
    clips
        .iter()
        .map(|c| {
            let frame = encode(&c.stream, mestor)?;
            let target = match task {
                Task::Classification => Target::Class(c.label),
                Task::BoxRegression => {
                    let counts = match source {
                        SpikeMapSource::RawHistogram => frame.s_raw.clone(),
                        SpikeMapSource::StChannel => frame.st.clone(),
                    };
                    Target::Box {
                        bbox: c.bbox,
                        spike_map: SpikeMap::new(frame.width, frame.height, counts)?,
                    }
                }
            };
            Ok(Sample {
                input: frame.to_tensor(),
                target,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// File name relative to the manifest's directory.
    pub file: String,
    pub class: usize,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn clip_file_name(index: usize) -> String {
    format!("clip_{index:05}.evt1")
}

/// Write clips as EVT1 files plus `manifest.json` into `dir`.
pub fn write_dataset(dir: &Path, clips: &[ClipRecord]) -> Result<Vec<ManifestEntry>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = Vec::with_capacity(clips.len());
    for (i, c) in clips.iter().enumerate() {
        let file = clip_file_name(i);
        save_events(&c.stream, &dir.join(&file), EventFormat::Evt1)?;
        manifest.push(ManifestEntry {
            file,
            class: c.label,
            bbox: c.bbox,
        });
    }
    let path = dir.join(MANIFEST_NAME);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn load_dataset(dir: &Path) -> Result<Vec<ClipRecord>> {
    let path = dir.join(MANIFEST_NAME);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Vec<ManifestEntry> = serde_json::from_str(&text)?;
    manifest
        .into_iter()
        .map(|m| {
            let stream = load_events(&dir.join(&m.file), EventFormat::Evt1, &LoadOptions::default())?;
            m.bbox.validate()?;
            Ok(ClipRecord {
                stream,
                label: m.class,
                bbox: m.bbox,
            })
        })
        .collect()
}
