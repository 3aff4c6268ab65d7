//! Dual-mode agreement and finite-difference gradient checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{backward, random_input, ForwardMode, Network, Trace};
use crate::dlnet::softmax_ce;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Max `|spike - surrogate|` over all outputs of `n_samples` random inputs.
pub fn verify_equivalence(net: &Network, n_samples: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..n_samples {
        let x = random_input(net.arch.input, &mut rng);
        let (a, _) = net.forward(&x, ForwardMode::Spike)?;
        let (b, _) = net.forward(&x, ForwardMode::Surrogate)?;
        worst = worst.max(a.max_abs_diff(&b));
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheckReport {
    /// `|a - n| / max(|a|, |n|, 1e-6)` over every compared parameter.
    pub max_rel_err: f64,
    pub worst_parameter: String,
    pub parameters_checked: usize,
    /// Parameters whose difference stencil moved a potential across a clip
    /// edge; the loss is not differentiable there, so they are not compared.
    pub skipped: usize,
    pub samples: usize,
}

impl GradientCheckReport {
    fn merge(&mut self, other: GradientCheckReport) {
        if other.max_rel_err > self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            self.worst_parameter = other.worst_parameter;
        }
        self.parameters_checked += other.parameters_checked;
        self.skipped += other.skipped;
        self.samples += other.samples;
    }
}

const REL_FLOOR: f64 = 1e-6;

/// Which side of the clip window each activation-layer potential is on.
fn clip_regions(net: &Network, trace: &Trace) -> Vec<i8> {
    let mut r = Vec::new();
    for (layer, z) in net.layers.iter().zip(&trace.pre_activations) {
        if let Some(q) = &layer.activation {
            let hi = q.fsn.x_max();
            r.extend(z.iter().map(|&v| if v < 0.0 { -1 } else if v > hi { 1 } else { 0 }));
        }
    }
    r
}

fn ce_loss(net: &Network, x: &Tensor, y: &[f64]) -> Result<(f64, Vec<i8>)> {
    let (out, trace, _) = net.forward_with_trace(x)?;
    Ok((softmax_ce(&out.data, y)?.0, clip_regions(net, &trace)))
}

/// Compare analytic weight gradients of the softmax cross-entropy loss with
/// central differences of step `h`, for every parameter. Only meaningful on
/// networks whose rounding is the identity. Parameters whose stencil crosses
/// a clip edge are counted in `skipped` instead.
pub fn gradient_check_sample(net: &Network, input: &Tensor, label: usize, h: f64) -> Result<GradientCheckReport> {
    gradient_check_sample_strided(net, input, label, h, 1)
}

/// As [`gradient_check_sample`], comparing only every `stride`-th parameter
/// (counted across all tensors).
pub fn gradient_check_sample_strided(
    net: &Network,
    input: &Tensor,
    label: usize,
    h: f64,
    stride: usize,
) -> Result<GradientCheckReport> {
    let stride = stride.max(1);
    let mut y = vec![0.0; net.output_shape().len()];
    *y.get_mut(label)
        .ok_or_else(|| Error::invalid(format!("label {label} out of range")))? = 1.0;
    let (out, trace, _) = net.forward_with_trace(input)?;
    let (_, g_out) = softmax_ce(&out.data, &y)?;
    let base = clip_regions(net, &trace);
    let grads = backward(net, &trace, &g_out)?;
    let analytic = grads.parameters();
    let names: Vec<String> = net.parameters().into_iter().map(|(n, _)| n).collect();

    let mut probe = net.clone();
    let mut report = GradientCheckReport {
        max_rel_err: 0.0,
        worst_parameter: String::new(),
        parameters_checked: 0,
        skipped: 0,
        samples: 1,
    };
    let mut index = 0usize;
    for (t, (name, g)) in names.iter().zip(&analytic).enumerate() {
        for (j, &a) in g.iter().enumerate() {
            index += 1;
            if !(index - 1).is_multiple_of(stride) {
                continue;
            }
            let orig = probe.parameters_mut()[t][j];
            probe.parameters_mut()[t][j] = orig + h;
            let (up, r_up) = ce_loss(&probe, input, &y)?;
            probe.parameters_mut()[t][j] = orig - h;
            let (down, r_down) = ce_loss(&probe, input, &y)?;
            probe.parameters_mut()[t][j] = orig;
            if r_up != base || r_down != base {
                report.skipped += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_parameter = format!("{name}[{j}]");
            }
            report.parameters_checked += 1;
        }
    }
    Ok(report)
}

/// Smallest distance of any activation-layer potential to a clip edge.
fn kink_margin(net: &Network, x: &Tensor) -> Result<f64> {
    let (_, trace, _) = net.forward_with_trace(x)?;
    let mut m = f64::INFINITY;
    for (layer, z) in net.layers.iter().zip(&trace.pre_activations) {
        if let Some(q) = &layer.activation {
            let hi = q.fsn.x_max();
            for &v in z {
                m = m.min(v.abs()).min((v - hi).abs());
            }
        }
    }
    Ok(m)
}

/// Gradient check over `n_inputs` random inputs and labels. Inputs whose
/// potentials come within `margin` of a clip edge are redrawn; a zero margin
/// disables redrawing.
pub fn gradient_check(net: &Network, n_inputs: usize, seed: u64, h: f64, margin: f64) -> Result<GradientCheckReport> {
    gradient_check_strided(net, n_inputs, seed, h, margin, 1)
}

/// As [`gradient_check`], comparing every `stride`-th parameter per input.
pub fn gradient_check_strided(
    net: &Network,
    n_inputs: usize,
    seed: u64,
    h: f64,
    margin: f64,
    stride: usize,
) -> Result<GradientCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = net.output_shape().len();
    let mut report = GradientCheckReport {
        max_rel_err: 0.0,
        worst_parameter: String::new(),
        parameters_checked: 0,
        skipped: 0,
        samples: 0,
    };
    for _ in 0..n_inputs {
        let mut tries = 0;
        let x = loop {
            let x = random_input(net.arch.input, &mut rng);
            if margin <= 0.0 || kink_margin(net, &x)? > margin {
                break x;
            }
            tries += 1;
            if tries > 10_000 {
                return Err(Error::invalid("could not draw an input away from the clip edges; lower the margin"));
            }
        };
        let label = rng.random_range(0..classes);
        report.merge(gradient_check_sample_strided(net, &x, label, h, stride)?);
    }
    Ok(report)
}
