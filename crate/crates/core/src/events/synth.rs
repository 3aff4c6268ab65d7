//! Parameterized synthetic scenes: a single shape moving (or growing) over a
//! uniformly noisy sensor.
//!
//! Object events are drawn per time slice from the pixels whose centers lie
//! inside the shape at the slice midpoint. Noise events are uniform over
//! sensor and clip time. The RNG is seeded from `SyntheticSceneSpec::seed` only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::{Event, EventStream, LabeledClip};
use crate::losses::BBox;
use crate::{Error, Result};

/// Object events are sampled on slices of this length (µs).
const SLICE_US: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeKind {
    MovingBar,
    MovingDisk,
    ExpandingSquare,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [
        ShapeKind::MovingBar,
        ShapeKind::MovingDisk,
        ShapeKind::ExpandingSquare,
    ];

    pub fn class_index(self) -> usize {
        match self {
            ShapeKind::MovingBar => 0,
            ShapeKind::MovingDisk => 1,
            ShapeKind::ExpandingSquare => 2,
        }
    }
}

fn default_size() -> f64 {
    4.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSceneSpec {
    pub kind: ShapeKind,
    /// Pixels per millisecond. For the expanding square this is the growth
    /// rate of its half-side.
    pub velocity: f64,
    /// Object events per covered pixel per millisecond.
    pub object_rate: f64,
    /// Background events per pixel per millisecond, uniform over the sensor.
    pub noise_rate: f64,
    pub duration_ms: f64,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
    /// Bar thickness, disk diameter or initial square side, in pixels.
    #[serde(default = "default_size")]
    pub size: f64,
    /// Bar length in pixels; defaults to three times `size`.
    #[serde(default)]
    pub bar_length: Option<f64>,
    /// Initial shape center. Drawn from the seed when absent.
    #[serde(default)]
    pub start: Option<(f64, f64)>,
    /// Direction of motion in radians. Drawn from the seed when absent.
    #[serde(default)]
    pub direction: Option<f64>,
}

impl SyntheticSceneSpec {
    pub fn new(kind: ShapeKind, width: u32, height: u32, seed: u64) -> Self {
        Self {
            kind,
            velocity: 0.05,
            object_rate: 0.5,
            noise_rate: 0.002,
            duration_ms: 50.0,
            width,
            height,
            seed,
            size: default_size(),
            bar_length: None,
            start: None,
            direction: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: f64, name: &str| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")))
            }
        };
        finite_nonneg(self.velocity, "velocity")?;
        finite_nonneg(self.object_rate, "object_rate")?;
        finite_nonneg(self.noise_rate, "noise_rate")?;
        if !(self.duration_ms.is_finite() && self.duration_ms > 0.0) {
            return Err(Error::invalid("duration_ms must be > 0"));
        }
        if !(self.size.is_finite() && self.size > 0.0) {
            return Err(Error::invalid("size must be > 0"));
        }
        if let Some(len) = self.bar_length {
            if !(len.is_finite() && len > 0.0) {
                return Err(Error::invalid("bar_length must be > 0"));
            }
        }
        if self.width == 0 || self.height == 0 || self.width > 65536 || self.height > 65536 {
            return Err(Error::invalid("sensor geometry outside 1..=65536"));
        }
        Ok(())
    }

    fn bar_length(&self) -> f64 {
        self.bar_length.unwrap_or(3.0 * self.size)
    }

    /// Half extents (x, y) of the shape at time `ms`.
    fn half_extent(&self, ms: f64) -> (f64, f64) {
        match self.kind {
            ShapeKind::MovingBar => (self.size / 2.0, self.bar_length() / 2.0),
            ShapeKind::MovingDisk => (self.size / 2.0, self.size / 2.0),
            ShapeKind::ExpandingSquare => {
                let half = self.size / 2.0 + self.velocity * ms;
                (half, half)
            }
        }
    }
}

/// Generator-side labels that are not part of the event stream itself.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneTruth {
    /// `height x width` row-major mask of pixels covered by the shape at any
    /// sampled instant.
    pub trajectory: Vec<bool>,
    /// Parallel to the stream's events: true for background noise events.
    pub noise: Vec<bool>,
}

struct Motion<'a> {
    spec: &'a SyntheticSceneSpec,
    start: (f64, f64),
    dir: (f64, f64),
}

impl Motion<'_> {
    fn center(&self, ms: f64) -> (f64, f64) {
        match self.spec.kind {
            ShapeKind::ExpandingSquare => self.start,
            _ => (
                self.start.0 + self.dir.0 * self.spec.velocity * ms,
                self.start.1 + self.dir.1 * self.spec.velocity * ms,
            ),
        }
    }

    fn inside_sensor(&self, ms: f64) -> bool {
        let (cx, cy) = self.center(ms);
        let (hx, hy) = self.spec.half_extent(ms);
        cx - hx >= 0.0
            && cy - hy >= 0.0
            && cx + hx <= f64::from(self.spec.width)
            && cy + hy <= f64::from(self.spec.height)
    }

    fn covers(&self, ms: f64, px: f64, py: f64) -> bool {
        let (cx, cy) = self.center(ms);
        let (hx, hy) = self.spec.half_extent(ms);
        match self.spec.kind {
            ShapeKind::MovingDisk => (px - cx).powi(2) + (py - cy).powi(2) <= hx * hx,
            _ => (px - cx).abs() <= hx && (py - cy).abs() <= hy,
        }
    }

    /// Pixels whose centers lie inside the shape at `ms`.
    fn covered_pixels(&self, ms: f64, out: &mut Vec<(u16, u16)>) {
        out.clear();
        let (cx, cy) = self.center(ms);
        let (hx, hy) = self.spec.half_extent(ms);
        let x0 = (cx - hx - 1.0).floor().max(0.0) as u32;
        let y0 = (cy - hy - 1.0).floor().max(0.0) as u32;
        let x1 = ((cx + hx + 1.0).ceil().max(0.0) as u32).min(self.spec.width);
        let y1 = ((cy + hy + 1.0).ceil().max(0.0) as u32).min(self.spec.height);
        for y in y0..y1 {
            for x in x0..x1 {
                if self.covers(ms, f64::from(x) + 0.5, f64::from(y) + 0.5) {
                    out.push((x as u16, y as u16));
                }
            }
        }
    }
}

fn poisson(rng: &mut ChaCha8Rng, lambda: f64) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).map(|d| d.sample(rng) as u64).unwrap_or(0)
}

/// Render a clip from `spec`. Identical specs yield identical clips.
///
/// If the shape would leave the sensor, the clip ends at the last slice where
/// it was fully inside and `truncated_at` records that time.
pub fn generate_scene(spec: &SyntheticSceneSpec) -> Result<LabeledClip> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = (f64::from(spec.width), f64::from(spec.height));
    let duration_us = (spec.duration_ms * 1000.0).round().max(1.0) as u64;
    let duration_ms = duration_us as f64 / 1000.0;

    let angle = match spec.direction {
        Some(a) => a,
        None => rng.random_range(0.0..std::f64::consts::TAU),
    };
    let dir = (angle.cos(), angle.sin());
    let start = match spec.start {
        Some(s) => s,
        None => {
            // Choose a start that keeps the whole path on the sensor when possible.
            let (hx0, hy0) = spec.half_extent(0.0);
            let (hx1, hy1) = spec.half_extent(duration_ms);
            let travel = match spec.kind {
                ShapeKind::ExpandingSquare => (0.0, 0.0),
                _ => (dir.0 * spec.velocity * duration_ms, dir.1 * spec.velocity * duration_ms),
            };
            let pick = |rng: &mut ChaCha8Rng, half0: f64, half1: f64, delta: f64, extent: f64| {
                let lo = half0.max(half1 - delta);
                let hi = (extent - half0).min(extent - half1 - delta);
                if lo < hi {
                    rng.random_range(lo..hi)
                } else {
                    extent / 2.0
                }
            };
            let sx = pick(&mut rng, hx0, hx1, travel.0, w);
            let sy = pick(&mut rng, hy0, hy1, travel.1, h);
            (sx, sy)
        }
    };
    let motion = Motion { spec, start, dir };

    let mut trajectory = vec![false; (spec.width * spec.height) as usize];
    let mut tagged: Vec<(Event, bool)> = Vec::new();
    let mut covered = Vec::new();
    let mut end_us = duration_us;
    let mut truncated_at = None;
    let slice_ms = SLICE_US as f64 / 1000.0;

    let mut t0 = 0u64;
    while t0 < duration_us {
        let t1 = (t0 + SLICE_US).min(duration_us);
        let mid_ms = (t0 + t1) as f64 / 2000.0;
        if !motion.inside_sensor(mid_ms) {
            truncated_at = Some(t0);
            end_us = t0;
            break;
        }
        motion.covered_pixels(mid_ms, &mut covered);
        let lambda = spec.object_rate * slice_ms * (t1 - t0) as f64 / SLICE_US as f64;
        for &(x, y) in &covered {
            trajectory[y as usize * spec.width as usize + x as usize] = true;
            for _ in 0..poisson(&mut rng, lambda) {
                let t = rng.random_range(t0..t1);
                let p = rng.random_range(0..2u8);
                tagged.push((Event::new(t, x, y, p), false));
            }
        }
        t0 = t1;
    }

    if end_us > 0 {
        let n_noise = poisson(&mut rng, spec.noise_rate * w * h * end_us as f64 / 1000.0);
        for _ in 0..n_noise {
            let t = rng.random_range(0..end_us);
            let x = rng.random_range(0..spec.width) as u16;
            let y = rng.random_range(0..spec.height) as u16;
            let p = rng.random_range(0..2u8);
            tagged.push((Event::new(t, x, y, p), true));
        }
    }
    tagged.sort_by_key(|(e, _)| e.t);
    let (events, noise): (Vec<Event>, Vec<bool>) = tagged.into_iter().unzip();

    let mid_ms = end_us as f64 / 2000.0;
    let (cx, cy) = motion.center(mid_ms);
    let (hx, hy) = spec.half_extent(mid_ms);
    let bbox = BBox::from_corners(
        (cx - hx).clamp(0.0, w),
        (cy - hy).clamp(0.0, h),
        (cx + hx).clamp(0.0, w),
        (cy + hy).clamp(0.0, h),
    );
    if !(bbox.w > 0.0 && bbox.h > 0.0) {
        return Err(Error::invalid("shape starts outside the sensor"));
    }

    Ok(LabeledClip {
        stream: EventStream::new(spec.width, spec.height, events),
        label: spec.kind.class_index(),
        bbox,
        truncated_at,
        truth: SceneTruth { trajectory, noise },
    })
}
