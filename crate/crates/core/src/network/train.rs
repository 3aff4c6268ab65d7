//! Mini-batch training loop on the surrogate pass.
//!
//! Determinism: the shuffle comes from a seeded ChaCha stream and per-sample
//! gradients are folded in sample order, so results do not depend on how many
//! worker threads computed them.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{backward, AdamWConfig, ForwardMode, Gradients, Network, OptimState, SpikeStats};
use crate::dlnet::softmax_ce;
use crate::losses::{ciou, st_iou_loss_with_grad, BBox, SpikeMap, StIouConfig};
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Class(usize),
    /// Ground-truth box plus the spike map its density term is measured on.
    Box { bbox: BBox, spike_map: SpikeMap },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Tensor,
    pub target: Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    #[default]
    Classification,
    BoxRegression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub task: Task,
    #[serde(default = "TrainConfig::default_epochs")]
    pub epochs: usize,
    #[serde(default = "TrainConfig::default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: AdamWConfig,
    #[serde(default)]
    pub seed: u64,
}

impl TrainConfig {
    fn default_epochs() -> usize {
        30
    }
    fn default_batch() -> usize {
        16
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        self.optimizer.validate()
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            task: Task::Classification,
            epochs: Self::default_epochs(),
            batch_size: Self::default_batch(),
            optimizer: AdamWConfig::default(),
            seed: 0,
        }
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_iou: Option<f64>,
    pub firing_rate: f64,
    pub lr: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Final weights, or the last good ones after a divergence.
    pub net: Network,
    pub log: Vec<EpochRecord>,
    /// Set when training stopped on a non-finite loss or gradient.
    pub diverged: Option<String>,
}

/// Map network outputs to a box: each coordinate is a sigmoid scaled by the
/// frame size. Returns the box and `d(box)/d(output)` per coordinate.
pub fn decode_box(out: &[f64], width: f64, height: f64) -> (BBox, [f64; 4]) {
    let s: Vec<f64> = out.iter().take(4).map(|&v| 1.0 / (1.0 + (-v).exp())).collect();
    let scale = [width, height, width, height];
    let b = BBox::new(s[0] * width, s[1] * height, s[2] * width, s[3] * height);
    let mut jac = [0.0; 4];
    for i in 0..4 {
        jac[i] = scale[i] * s[i] * (1.0 - s[i]);
    }
    (b, jac)
}

struct SampleResult {
    loss: f64,
    /// 1/0 for classification, CIoU for boxes.
    score: f64,
    grads: Option<Gradients>,
    stats: SpikeStats,
}

fn sample_loss(net: &Network, s: &Sample, cfg: &StIouConfig, with_grad: bool) -> Result<SampleResult> {
    let (out, trace, stats) = net.forward_with_trace(&s.input)?;
    let (loss, score, g_out) = match &s.target {
        Target::Class(label) => {
            let mut y = vec![0.0; out.len()];
            *y.get_mut(*label)
                .ok_or_else(|| Error::invalid(format!("label {label} out of range for {} outputs", out.len())))? = 1.0;
            let (loss, g) = softmax_ce(&out.data, &y)?;
            (loss, f64::from(u8::from(out.argmax() == *label)), g)
        }
        Target::Box { bbox, spike_map } => {
            if out.len() != 4 {
                return Err(Error::shape("4 box outputs", out.len()));
            }
            let (pred, jac) = decode_box(&out.data, s.input.shape.w as f64, s.input.shape.h as f64);
            let (loss, g) = st_iou_loss_with_grad(&pred, bbox, spike_map, cfg);
            (loss, ciou(&pred, bbox), (0..4).map(|i| g[i] * jac[i]).collect())
        }
    };
    let grads = if with_grad {
        Some(backward(net, &trace, &g_out)?)
    } else {
        None
    };
    Ok(SampleResult {
        loss,
        score,
        grads,
        stats,
    })
}

fn map_ordered<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    /// Accuracy (classification) or mean CIoU (boxes).
    pub score: f64,
    pub stats: SpikeStats,
}

/// Mean loss and score over a dataset with the current weights.
pub fn evaluate(net: &Network, data: &[Sample], loss_cfg: &StIouConfig) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    let results = map_ordered(data, |s| sample_loss(net, s, loss_cfg, false));
    let mut loss = 0.0;
    let mut score = 0.0;
    let mut stats = SpikeStats::default();
    for r in results {
        let r = r?;
        loss += r.loss;
        score += r.score;
        stats.merge(&r.stats);
    }
    let n = data.len() as f64;
    Ok(Evaluation {
        loss: loss / n,
        score: score / n,
        stats,
    })
}

fn check_targets(net: &Network, data: &[Sample], task: Task) -> Result<()> {
    let outputs = net.output_shape().len();
    for (i, s) in data.iter().enumerate() {
        match (&s.target, task) {
            (Target::Class(l), Task::Classification) if *l < outputs => {}
            (Target::Box { .. }, Task::BoxRegression) if outputs == 4 => {}
            _ => {
                return Err(Error::invalid(format!(
                    "sample {i}: target does not fit a {task:?} network with {outputs} outputs"
                )))
            }
        }
    }
    Ok(())
}

/// Train with AdamW + StepLR. `on_epoch` sees every record as it is produced.
pub fn train(
    mut net: Network,
    data: &[Sample],
    cfg: &TrainConfig,
    loss_cfg: &StIouConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    loss_cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    check_targets(&net, data, cfg.task)?;
    let mut optim = OptimState::for_network(cfg.optimizer, &net)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let start = Instant::now();

    for epoch in 1..=cfg.epochs {
        let last_good = net.clone();
        order.shuffle(&mut rng);
        let mut failure = None;
        for batch in order.chunks(cfg.batch_size) {
            let samples: Vec<&Sample> = batch.iter().map(|&i| &data[i]).collect();
            let results = map_ordered(&samples, |s| sample_loss(&net, s, loss_cfg, true));
            let mut total = Gradients::zeros_like(&net);
            let mut loss = 0.0;
            for r in results {
                let r = r?;
                loss += r.loss;
                total.accumulate(r.grads.as_ref().expect("gradients requested"));
            }
            if !loss.is_finite() {
                failure = Some(format!("non-finite loss in epoch {epoch}"));
                break;
            }
            total.scale(1.0 / batch.len() as f64);
            match optim.step_network(&mut net, &total) {
                Ok(()) => {}
                Err(Error::NonFiniteGradient { layer }) => {
                    failure = Some(format!("non-finite gradient in layer {layer} during epoch {epoch}"));
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if failure.is_none() {
            let eval = evaluate(&net, data, loss_cfg)?;
            if !eval.loss.is_finite() {
                failure = Some(format!("non-finite loss after epoch {epoch}"));
            } else {
                let (accuracy, mean_iou) = match cfg.task {
                    Task::Classification => (Some(eval.score), None),
                    Task::BoxRegression => (None, Some(eval.score)),
                };
                let record = EpochRecord {
                    epoch,
                    loss: eval.loss,
                    accuracy,
                    mean_iou,
                    firing_rate: eval.stats.firing_rate(),
                    lr: optim.lr,
                    wall_time_s: start.elapsed().as_secs_f64(),
                };
                on_epoch(&record);
                log.push(record);
            }
        }
        if let Some(reason) = failure {
            return Ok(TrainOutcome {
                net: last_good,
                log,
                diverged: Some(reason),
            });
        }
        optim.end_epoch();
    }
    Ok(TrainOutcome {
        net,
        log,
        diverged: None,
    })
}

/// Classification accuracy under a given forward mode.
pub fn accuracy(net: &Network, data: &[Sample], mode: ForwardMode) -> Result<f64> {
    let hits = map_ordered(data, |s| -> Result<bool> {
        let (out, _) = net.forward(&s.input, mode)?;
        Ok(matches!(s.target, Target::Class(l) if l == out.argmax()))
    });
    let mut n = 0usize;
    for h in hits {
        n += usize::from(h?);
    }
    Ok(n as f64 / data.len().max(1) as f64)
}
