//! Backpropagation through the surrogate pass.
//!
//! Per layer: the error on the activation output is gated by the clip
//! (`0 <= z <= X`, rounding treated as identity), then pushed through the
//! weights: `dL/dw = err * input`, and `err_prev = W^T err`.

use super::{kernels, LayerSpec, Network};
use crate::dlnet::clip_gate;
use crate::{Error, Result};

/// Values recorded by the surrogate forward pass.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    /// Input to every layer (the quantized output of the previous one).
    pub layer_inputs: Vec<Vec<f64>>,
    /// Pre-clip potentials of activation layers; empty for the others.
    pub pre_activations: Vec<Vec<f64>>,
}

impl Trace {
    pub(super) fn with_capacity(n: usize) -> Self {
        Self {
            layer_inputs: Vec::with_capacity(n),
            pre_activations: Vec::with_capacity(n),
        }
    }

    pub(super) fn push(&mut self, input: Vec<f64>, pre: Vec<f64>) {
        self.layer_inputs.push(input);
        self.pre_activations.push(pre);
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerGrad {
    /// Same layout as the layer weight; empty for parameterless layers.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    /// Error passed to the previous layer (gradient w.r.t. this layer's input).
    pub upstream: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weight: vec![0.0; l.weight.len()],
                    bias: vec![0.0; l.bias.len()],
                    upstream: Vec::new(),
                })
                .collect(),
        }
    }

    /// Parameter gradients in the order of [`Network::parameters`].
    pub fn parameters(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.layers {
            if !l.weight.is_empty() {
                out.push(l.weight.as_slice());
                out.push(l.bias.as_slice());
            }
        }
        out
    }

    /// `self += other` on parameter gradients.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weight.iter_mut().zip(&b.weight) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for l in &mut self.layers {
            l.weight.iter_mut().chain(l.bias.iter_mut()).for_each(|v| *v *= c);
        }
    }

    /// Name of the first layer holding a non-finite parameter gradient.
    pub fn first_non_finite(&self, net: &Network) -> Option<String> {
        self.layers.iter().enumerate().find_map(|(i, l)| {
            let bad = l.weight.iter().chain(&l.bias).any(|v| !v.is_finite());
            bad.then(|| net.layers[i].name(i))
        })
    }
}

/// Gradients of all weights given `dL/d(output)` and the trace of a surrogate
/// forward pass on the same network.
pub fn backward(net: &Network, trace: &Trace, loss_grad: &[f64]) -> Result<Gradients> {
    let n = net.layers.len();
    if trace.layer_inputs.len() != n || trace.pre_activations.len() != n {
        return Err(Error::invalid("backward needs the trace of a surrogate forward pass on this network"));
    }
    if loss_grad.len() != net.output_shape().len() {
        return Err(Error::shape(net.output_shape(), format!("{} gradient entries", loss_grad.len())));
    }
    let mut layers = vec![LayerGrad::default(); n];
    let mut g = loss_grad.to_vec();
    for i in (0..n).rev() {
        let layer = &net.layers[i];
        let x = &trace.layer_inputs[i];
        if x.len() != layer.in_shape.len() {
            return Err(Error::shape(layer.in_shape, format!("{} traced inputs", x.len())));
        }
        if let Some(q) = &layer.activation {
            let z = &trace.pre_activations[i];
            if z.len() != g.len() {
                return Err(Error::shape(g.len(), format!("{} traced potentials", z.len())));
            }
            for (gi, &zi) in g.iter_mut().zip(z) {
                *gi *= clip_gate(zi, q);
            }
        }
        let grad = match layer.spec {
            LayerSpec::Conv2d { kernel, stride, padding, .. } => {
                let (weight, bias, upstream) = kernels::conv_backward(x, &g, layer.in_shape, &layer.weight, kernel, stride, padding, layer.out_shape);
                LayerGrad { weight, bias, upstream }
            }
            LayerSpec::Dense { .. } => {
                let (weight, bias, upstream) = kernels::dense_backward(x, &g, &layer.weight);
                LayerGrad { weight, bias, upstream }
            }
            LayerSpec::Flatten => LayerGrad {
                upstream: g.clone(),
                ..Default::default()
            },
            LayerSpec::PoolAvg { size } => LayerGrad {
                upstream: kernels::pool_backward(&g, layer.in_shape, size),
                ..Default::default()
            },
        };
        g = grad.upstream.clone();
        layers[i] = grad;
    }
    Ok(Gradients { layers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{random_input, Architecture, LayerSpec};
    use crate::tensor::{Shape, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let net = Network::new(Architecture::conv_tiny(Shape::new(3, 8, 8), 3), 0).unwrap();
        let x = random_input(net.arch.input, &mut ChaCha8Rng::seed_from_u64(0));
        let (_, trace, _) = net.forward_with_trace(&x).unwrap();
        let g = backward(&net, &trace, &[0.0; 3]).unwrap();
        assert!(g.parameters().iter().all(|p| p.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn backward_without_forward_fails() {
        let net = Network::new(Architecture::mlp2(Shape::new(1, 4, 4), 2), 0).unwrap();
        assert!(backward(&net, &Trace::default(), &[1.0, 0.0]).is_err());
    }

    #[test]
    fn clipped_low_input_blocks_first_layer() {
        // All first-layer potentials negative: the gate zeroes every error.
        let mut a = Architecture::mlp2(Shape::flat(3), 2);
        a.layers = vec![LayerSpec::dense(4), LayerSpec::dense(2)];
        let mut net = Network::new(a, 0).unwrap();
        net.layers[0].weight.iter_mut().for_each(|w| *w = -1.0);
        let x = Tensor::flat(vec![0.5, 0.25, 0.75]);
        let (_, trace, _) = net.forward_with_trace(&x).unwrap();
        let g = backward(&net, &trace, &[1.0, -1.0]).unwrap();
        assert!(g.layers[0].weight.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_weight_matches_finite_difference() {
        let mut a = Architecture::mlp2(Shape::flat(1), 1).with_rounding(crate::dlnet::Rounding::Identity);
        a.layers = vec![LayerSpec::dense(1), LayerSpec::dense(1)];
        let mut net = Network::new(a, 0).unwrap();
        net.layers[0].weight = vec![0.8];
        net.layers[1].weight = vec![1.3];
        let x = Tensor::flat(vec![0.6875]);
        let loss = |n: &Network| {
            let (y, _) = n.forward(&x, crate::network::ForwardMode::Surrogate).unwrap();
            0.5 * y.data[0] * y.data[0]
        };
        let (y, trace, _) = net.forward_with_trace(&x).unwrap();
        let g = backward(&net, &trace, &y.data).unwrap();
        let h = 1e-6;
        let mut p = net.clone();
        p.layers[0].weight[0] += h;
        let mut m = net.clone();
        m.layers[0].weight[0] -= h;
        let fd = (loss(&p) - loss(&m)) / (2.0 * h);
        assert!((g.layers[0].weight[0] - fd).abs() < 1e-6);
    }
}
