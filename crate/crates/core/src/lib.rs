//! Few-spikes neuron (FSN) networks with conjoint dual-mode training.
//!
//! The crate is organised around the data path of an event-based
//! recognition/detection pipeline:
//!
//! * [`events`]: DVS event streams, CSV/EVT1 I/O and a synthetic scene generator.
//! * [`mestor`]: multi-scale event integration into a 3-channel frame.
//! * [`neurons`]: FSN encode/decode, the signed leaky-ReLU variant and LIF baselines.
//! * [`dlnet`]: the clip/discretize surrogate activation and its gradient.
//! * [`network`]: layer graph, spike-mode and surrogate-mode forward passes,
//!   backpropagation, AdamW training and checkpoints.
//! * [`losses`]: CIoU, spiking-density IoU and the composite detection loss.
//! * [`energy`]: operation counting and AC/MAC energy models.

pub mod config;
pub mod dataset;
pub mod dlnet;
pub mod energy;
pub mod error;
pub mod events;
pub mod losses;
pub mod mestor;
pub mod network;
pub mod neurons;
pub mod tensor;

pub use error::{Error, Result};
