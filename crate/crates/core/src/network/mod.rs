//! Layer graph with one weight store shared by two forward passes.
//!
//! * Spike mode encodes each activation layer's membrane potential into an
//!   FSN spike train and integrates `sum_t d(t) * spike(t) * w` into the next
//!   layer, skipping silent inputs.
//! * Surrogate mode clips and quantizes the potential and does a dense
//!   multiply-accumulate. It is the mode used for backpropagation.
//!
//! With floor rounding both passes agree to floating-point reassociation. The
//! last layer never spikes: it emits raw potentials.

mod backward;
mod checkpoint;
mod kernels;
mod optim;
mod train;
mod verify;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use backward::{backward, Gradients, LayerGrad, Trace};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointHeader, TensorEntry};
pub use optim::{adamw_step, AdamWConfig, OptimState, StepLr};
pub use train::{
    accuracy, decode_box, evaluate, train, EpochRecord, Evaluation, Sample, Target, Task, TrainConfig,
    TrainOutcome,
};
pub use verify::{
    gradient_check, gradient_check_sample, gradient_check_sample_strided, gradient_check_strided, verify_equivalence,
    GradientCheckReport,
};

use crate::dlnet::{activate, level_of, QuantizerConfig, Rounding};
use crate::neurons::{fsn_encode, FsnConfig};
use crate::tensor::{Shape, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv2d {
        out_channels: usize,
        #[serde(default = "default_kernel")]
        kernel: usize,
        #[serde(default = "default_stride")]
        stride: usize,
        #[serde(default)]
        padding: usize,
        /// Activation schedule; the architecture's hidden default when unset.
        #[serde(default)]
        fsn: Option<FsnConfig>,
    },
    Dense {
        out_features: usize,
        #[serde(default)]
        fsn: Option<FsnConfig>,
    },
    Flatten,
    #[serde(rename = "pool-avg")]
    PoolAvg { size: usize },
}

fn default_kernel() -> usize {
    3
}

fn default_stride() -> usize {
    1
}

impl LayerSpec {
    pub fn conv(out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        LayerSpec::Conv2d {
            out_channels,
            kernel,
            stride,
            padding,
            fsn: None,
        }
    }

    pub fn dense(out_features: usize) -> Self {
        LayerSpec::Dense {
            out_features,
            fsn: None,
        }
    }

    pub fn has_weights(&self) -> bool {
        matches!(self, LayerSpec::Conv2d { .. } | LayerSpec::Dense { .. })
    }

    fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Flatten => "flatten",
            LayerSpec::PoolAvg { .. } => "pool-avg",
        }
    }

    fn fsn(&self) -> Option<FsnConfig> {
        match self {
            LayerSpec::Conv2d { fsn, .. } | LayerSpec::Dense { fsn, .. } => *fsn,
            _ => None,
        }
    }

    fn output_shape(&self, input: Shape) -> Result<Shape> {
        match *self {
            LayerSpec::Conv2d {
                out_channels,
                kernel,
                stride,
                padding,
                ..
            } => {
                if kernel != 1 && kernel != 3 {
                    return Err(Error::invalid(format!("conv kernel must be 1 or 3, got {kernel}")));
                }
                if stride == 0 || out_channels == 0 {
                    return Err(Error::invalid("conv stride and channels must be >= 1"));
                }
                let span = |n: usize| -> Result<usize> {
                    let padded = n + 2 * padding;
                    if padded < kernel {
                        return Err(Error::invalid(format!("conv kernel {kernel} larger than input {n}")));
                    }
                    Ok((padded - kernel) / stride + 1)
                };
                Ok(Shape::new(out_channels, span(input.h)?, span(input.w)?))
            }
            LayerSpec::Dense { out_features, .. } => {
                if input.h != 1 || input.w != 1 {
                    return Err(Error::invalid(format!("dense layer needs a flat input, got {input}; add a flatten layer")));
                }
                if out_features == 0 {
                    return Err(Error::invalid("dense layer needs >= 1 output"));
                }
                Ok(Shape::flat(out_features))
            }
            LayerSpec::Flatten => Ok(Shape::flat(input.len())),
            LayerSpec::PoolAvg { size } => {
                if size == 0 || !input.h.is_multiple_of(size) || !input.w.is_multiple_of(size) {
                    return Err(Error::invalid(format!("pool size {size} must divide {input}")));
                }
                Ok(Shape::new(input.c, input.h / size, input.w / size))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input: Shape,
    #[serde(default = "FsnConfig::input_default")]
    pub input_encoding: FsnConfig,
    #[serde(default = "FsnConfig::hidden_default")]
    pub hidden: FsnConfig,
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub rounding: Rounding,
}

impl Architecture {
    /// Flatten, dense 128, dense `classes`.
    pub fn mlp2(input: Shape, classes: usize) -> Self {
        Self {
            input,
            input_encoding: FsnConfig::input_default(),
            hidden: FsnConfig::hidden_default(),
            layers: vec![LayerSpec::Flatten, LayerSpec::dense(128), LayerSpec::dense(classes)],
            rounding: Rounding::Floor,
        }
    }

    /// conv16 stride 2, conv32 stride 2, flatten, dense `classes`.
    pub fn conv_tiny(input: Shape, classes: usize) -> Self {
        Self {
            input,
            input_encoding: FsnConfig::input_default(),
            hidden: FsnConfig::hidden_default(),
            layers: vec![
                LayerSpec::conv(16, 3, 2, 1),
                LayerSpec::conv(32, 3, 2, 1),
                LayerSpec::Flatten,
                LayerSpec::dense(classes),
            ],
            rounding: Rounding::Floor,
        }
    }

    pub fn with_rounding(mut self, rounding: Rounding) -> Self {
        self.rounding = rounding;
        self
    }

    /// Validates the graph and returns the per-layer output shapes.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        self.input_encoding.validate()?;
        self.hidden.validate()?;
        if self.input_encoding.alpha != 1.0 {
            return Err(Error::invalid(format!(
                "input encoding alpha must be 1 for inputs in [0, 1], got {}",
                self.input_encoding.alpha
            )));
        }
        if self.input.is_empty() {
            return Err(Error::invalid("input shape must be non-empty"));
        }
        match self.layers.last() {
            Some(l) if l.has_weights() => {}
            _ => return Err(Error::invalid("the last layer must be dense or conv2d (it emits potentials)")),
        }
        let mut shape = self.input;
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            if let Some(f) = l.fsn() {
                f.validate()?;
                if i + 1 == self.layers.len() {
                    return Err(Error::invalid("the readout layer does not take an activation schedule"));
                }
            }
            shape = l
                .output_shape(shape)
                .map_err(|e| Error::invalid(format!("layer {i} ({}): {e}", l.kind())))?;
            out.push(shape);
        }
        Ok(out)
    }

    pub fn output_len(&self) -> Result<usize> {
        Ok(self.shapes()?.last().map(Shape::len).unwrap_or(0))
    }
}

/// One layer with its parameters. Weight layouts: conv `[oc][ic][ky][kx]`,
/// dense `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub in_shape: Shape,
    pub out_shape: Shape,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    /// `None` for parameterless layers and the readout.
    pub activation: Option<QuantizerConfig>,
}

impl Layer {
    pub fn name(&self, index: usize) -> String {
        format!("{index}.{}", self.spec.kind())
    }

    pub fn fan_in(&self) -> usize {
        match self.spec {
            LayerSpec::Conv2d { kernel, .. } => self.in_shape.c * kernel * kernel,
            LayerSpec::Dense { .. } => self.in_shape.len(),
            _ => 0,
        }
    }

    /// Synaptic connections: output size times fan-in.
    pub fn synapses(&self) -> u64 {
        if self.spec.has_weights() {
            (self.out_shape.len() * self.fan_in()) as u64
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForwardMode {
    Spike,
    Surrogate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpikes {
    pub layer: String,
    pub neurons: usize,
    pub k: usize,
    pub spikes: u64,
}

/// Spike bookkeeping for one or more forward passes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SpikeStats {
    /// Input encoding first, then every hidden activation layer.
    pub layers: Vec<LayerSpikes>,
    /// Accumulates actually performed (spike mode) or dense MACs (surrogate).
    pub ops: u64,
    pub samples: usize,
}

impl SpikeStats {
    pub fn total_spikes(&self) -> u64 {
        self.layers.iter().map(|l| l.spikes).sum()
    }

    /// Neuron-timestep slots.
    pub fn total_slots(&self) -> u64 {
        self.layers.iter().map(|l| (l.neurons * l.k) as u64).sum()
    }

    /// Spikes over neuron-timestep slots, neuron-weighted across layers.
    pub fn firing_rate(&self) -> f64 {
        let slots = self.total_slots();
        if slots == 0 {
            0.0
        } else {
            self.total_spikes() as f64 / slots as f64
        }
    }

    pub fn layer_rates(&self) -> Vec<(String, f64)> {
        self.layers
            .iter()
            .map(|l| (l.layer.clone(), l.spikes as f64 / (l.neurons * l.k).max(1) as f64))
            .collect()
    }

    /// Accumulate another pass; layer lists must come from the same network.
    pub fn merge(&mut self, other: &SpikeStats) {
        if self.layers.is_empty() {
            self.layers = other.layers.clone();
        } else {
            for (a, b) in self.layers.iter_mut().zip(&other.layers) {
                a.neurons += b.neurons;
                a.spikes += b.spikes;
            }
        }
        self.ops += other.ops;
        self.samples += other.samples;
    }

    fn record(&mut self, layer: String, fsn: &FsnConfig, neurons: usize, spikes: u64) {
        self.layers.push(LayerSpikes {
            layer,
            neurons,
            k: fsn.k,
            spikes,
        });
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub arch: Architecture,
    pub layers: Vec<Layer>,
}

/// Spike-domain tensor: one plane per timestep plus the coefficients `d(t)`
/// that weight them. Planes hold 0/1 spikes, or spike averages after pooling.
#[derive(Debug, Clone)]
struct SpikePlanes {
    coeffs: Vec<f64>,
    planes: Vec<Vec<f64>>,
}

impl SpikePlanes {
    fn encode(values: &[f64], fsn: &FsnConfig) -> (Self, u64) {
        let k = fsn.k;
        let mut planes = vec![vec![0.0; values.len()]; k];
        let mut spikes = 0;
        for (i, &v) in values.iter().enumerate() {
            for (t, &b) in fsn_encode(v, fsn).bits.iter().enumerate() {
                if b != 0 {
                    planes[t][i] = 1.0;
                    spikes += 1;
                }
            }
        }
        (
            Self {
                coeffs: fsn.coefficients(),
                planes,
            },
            spikes,
        )
    }

    /// Per-timestep sparse lists of `(index, d(t) * value)`.
    fn events(&self) -> Vec<Vec<(usize, f64)>> {
        self.coeffs
            .iter()
            .zip(&self.planes)
            .map(|(&d, plane)| {
                plane
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(i, &v)| (i, d * v))
                    .collect()
            })
            .collect()
    }
}

enum Signal {
    Dense(Vec<f64>),
    Spikes(SpikePlanes),
}

impl Network {
    /// He-uniform weights (`U(-b, b)`, `b = sqrt(6 / fan_in)`), zero biases.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        let shapes = arch.shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(arch.layers.len());
        let mut in_shape = arch.input;
        let n = arch.layers.len();
        for (i, (spec, out_shape)) in arch.layers.iter().zip(shapes).enumerate() {
            let mut layer = Layer {
                spec: *spec,
                in_shape,
                out_shape,
                weight: Vec::new(),
                bias: Vec::new(),
                activation: None,
            };
            if spec.has_weights() {
                let fan_in = layer.fan_in();
                let bound = (6.0 / fan_in as f64).sqrt();
                let count = match spec {
                    LayerSpec::Conv2d { .. } => out_shape.c * fan_in,
                    _ => out_shape.len() * fan_in,
                };
                layer.weight = (0..count).map(|_| rng.random_range(-bound..bound)).collect();
                layer.bias = vec![0.0; out_shape.c];
                if i + 1 < n {
                    let fsn = spec.fsn().unwrap_or(arch.hidden);
                    layer.activation = Some(QuantizerConfig::new(fsn, arch.rounding));
                }
            }
            layers.push(layer);
            in_shape = out_shape;
        }
        Ok(Self { arch, layers })
    }

    /// The same weights under another rounding mode.
    pub fn with_rounding(&self, rounding: Rounding) -> Self {
        let mut net = self.clone();
        net.arch.rounding = rounding;
        for q in net.layers.iter_mut().filter_map(|l| l.activation.as_mut()) {
            q.rounding = rounding;
        }
        net
    }

    pub fn input_quantizer(&self) -> QuantizerConfig {
        QuantizerConfig::new(self.arch.input_encoding, self.arch.rounding)
    }

    pub fn output_shape(&self) -> Shape {
        self.layers.last().map(|l| l.out_shape).unwrap_or(self.arch.input)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Synaptic connections per inference over all weight layers.
    pub fn synaptic_ops(&self) -> u64 {
        self.layers.iter().map(Layer::synapses).sum()
    }

    /// Spiking neurons per inference: input encoding plus hidden activations.
    pub fn spiking_neurons(&self) -> usize {
        self.arch.input.len()
            + self
                .layers
                .iter()
                .filter(|l| l.activation.is_some())
                .map(|l| l.out_shape.len())
                .sum::<usize>()
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.shape != self.arch.input {
            return Err(Error::shape(self.arch.input, input.shape));
        }
        if input.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("input contains non-finite values"));
        }
        Ok(())
    }

    pub fn forward(&self, input: &Tensor, mode: ForwardMode) -> Result<(Tensor, SpikeStats)> {
        match mode {
            ForwardMode::Surrogate => {
                let (out, _, stats) = self.forward_surrogate(input, false)?;
                Ok((out, stats))
            }
            ForwardMode::Spike => self.forward_spike(input),
        }
    }

    /// Surrogate forward that also records what backpropagation needs.
    pub fn forward_with_trace(&self, input: &Tensor) -> Result<(Tensor, Trace, SpikeStats)> {
        let (out, trace, stats) = self.forward_surrogate(input, true)?;
        Ok((out, trace.expect("trace requested"), stats))
    }

    fn forward_surrogate(&self, input: &Tensor, keep: bool) -> Result<(Tensor, Option<Trace>, SpikeStats)> {
        self.check_input(input)?;
        let mut stats = SpikeStats {
            samples: 1,
            ..Default::default()
        };
        let q_in = self.input_quantizer();
        let mut x: Vec<f64> = input.data.iter().map(|&v| activate(v, &q_in)).collect();
        stats.record("input".into(), &q_in.fsn, x.len(), popcount(&x, &q_in.fsn));
        let mut trace = keep.then(|| Trace::with_capacity(self.layers.len()));
        for (i, layer) in self.layers.iter().enumerate() {
            let z = match layer.spec {
                LayerSpec::Conv2d { kernel, stride, padding, .. } => {
                    stats.ops += layer.synapses();
                    kernels::conv_forward(&x, layer.in_shape, &layer.weight, &layer.bias, kernel, stride, padding, layer.out_shape)
                }
                LayerSpec::Dense { .. } => {
                    stats.ops += layer.synapses();
                    kernels::dense_forward(&x, &layer.weight, &layer.bias)
                }
                LayerSpec::Flatten => x.clone(),
                LayerSpec::PoolAvg { size } => kernels::pool_forward(&x, layer.in_shape, size),
            };
            let out = match &layer.activation {
                Some(q) => {
                    let a: Vec<f64> = z.iter().map(|&v| activate(v, q)).collect();
                    stats.record(layer.name(i), &q.fsn, a.len(), popcount(&a, &q.fsn));
                    a
                }
                None => z.clone(),
            };
            if let Some(t) = trace.as_mut() {
                t.push(std::mem::take(&mut x), if layer.activation.is_some() { z } else { Vec::new() });
            }
            x = out;
        }
        Ok((Tensor::from_vec(self.output_shape(), x)?, trace, stats))
    }

    fn forward_spike(&self, input: &Tensor) -> Result<(Tensor, SpikeStats)> {
        self.check_input(input)?;
        let mut stats = SpikeStats {
            samples: 1,
            ..Default::default()
        };
        let fsn_in = self.arch.input_encoding;
        let (planes, spikes) = SpikePlanes::encode(&input.data, &fsn_in);
        stats.record("input".into(), &fsn_in, input.len(), spikes);
        let mut signal = Signal::Spikes(planes);
        for (i, layer) in self.layers.iter().enumerate() {
            let Signal::Spikes(planes) = signal else {
                return Err(Error::invalid("only the last layer may emit potentials"));
            };
            signal = match layer.spec {
                LayerSpec::Conv2d { kernel, stride, padding, .. } => {
                    let (u, ops) = kernels::conv_spike(&planes.events(), layer.in_shape, &layer.weight, &layer.bias, kernel, stride, padding, layer.out_shape);
                    stats.ops += ops;
                    self.fire(i, layer, u, &mut stats)
                }
                LayerSpec::Dense { .. } => {
                    let (u, ops) = kernels::dense_spike(&planes.events(), &layer.weight, &layer.bias);
                    stats.ops += ops;
                    self.fire(i, layer, u, &mut stats)
                }
                LayerSpec::Flatten => Signal::Spikes(planes),
                LayerSpec::PoolAvg { size } => Signal::Spikes(SpikePlanes {
                    planes: planes
                        .planes
                        .iter()
                        .map(|p| kernels::pool_forward(p, layer.in_shape, size))
                        .collect(),
                    coeffs: planes.coeffs,
                }),
            };
        }
        match signal {
            Signal::Dense(u) => Ok((Tensor::from_vec(self.output_shape(), u)?, stats)),
            Signal::Spikes(_) => Err(Error::invalid("network ended without a readout layer")),
        }
    }

    fn fire(&self, index: usize, layer: &Layer, u: Vec<f64>, stats: &mut SpikeStats) -> Signal {
        match &layer.activation {
            Some(q) => {
                let (planes, spikes) = SpikePlanes::encode(&u, &q.fsn);
                stats.record(layer.name(index), &q.fsn, u.len(), spikes);
                Signal::Spikes(planes)
            }
            None => Signal::Dense(u),
        }
    }

    /// All parameter tensors in layer order: weight then bias per weight layer.
    pub fn parameters(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            if l.spec.has_weights() {
                out.push((format!("{}.weight", l.name(i)), l.weight.as_slice()));
                out.push((format!("{}.bias", l.name(i)), l.bias.as_slice()));
            }
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for l in self.layers.iter_mut() {
            if l.spec.has_weights() {
                out.push(&mut l.weight);
                out.push(&mut l.bias);
            }
        }
        out
    }
}

/// Spike count implied by quantized activations: the popcount of each grid level.
fn popcount(values: &[f64], fsn: &FsnConfig) -> u64 {
    values
        .iter()
        .map(|&v| u64::from(level_of(v, fsn).count_ones()))
        .sum()
}

/// Uniform random frame in `[0, 1)`.
pub fn random_input(shape: Shape, rng: &mut impl Rng) -> Tensor {
    Tensor {
        shape,
        data: (0..shape.len()).map(|_| rng.random::<f64>()).collect(),
    }
}
