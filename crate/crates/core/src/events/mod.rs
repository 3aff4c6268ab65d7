//! DVS event data model, file formats and the synthetic scene generator.
//!
//! Timestamps are microseconds throughout. Polarity is carried through I/O but
//! the encoders downstream ignore it.

mod io;
mod synth;

use serde::{Deserialize, Serialize};

pub use io::{
    decode_evt1, encode_evt1, load_events, parse_csv, save_events, write_csv, EventFormat,
    LoadOptions, EVT1_HEADER_LEN, EVT1_MAGIC, EVT1_RECORD_LEN,
};
pub use synth::{generate_scene, SceneTruth, ShapeKind, SyntheticSceneSpec};

use crate::losses::BBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Event {
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub p: u8,
}

impl Event {
    pub const fn new(t: u64, x: u16, y: u16, p: u8) -> Self {
        Self { t, x, y, p }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventStream {
    pub width: u32,
    pub height: u32,
    pub events: Vec<Event>,
}

impl EventStream {
    pub fn new(width: u32, height: u32, events: Vec<Event>) -> Self {
        Self {
            width,
            height,
            events,
        }
    }

    pub fn empty(width: u32, height: u32) -> Self {
        Self::new(width, height, Vec::new())
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn t_first(&self) -> Option<u64> {
        self.events.first().map(|e| e.t)
    }

    /// `t_last - t_first`, or 0 for an empty stream.
    pub fn duration(&self) -> u64 {
        match (self.events.first(), self.events.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0,
        }
    }

    pub fn is_sorted(&self) -> bool {
        self.events.windows(2).all(|w| w[0].t <= w[1].t)
    }
}

/// A generated or loaded clip with its class and ground-truth box.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledClip {
    pub stream: EventStream,
    pub label: usize,
    pub bbox: BBox,
    /// Set when the shape left the sensor and the clip was cut short (µs).
    pub truncated_at: Option<u64>,
    pub truth: SceneTruth,
}
