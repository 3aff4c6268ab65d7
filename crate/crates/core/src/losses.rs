//! Box regression losses: CIoU, spike-density IoU and their combination.
//!
//! Every loss here comes with an analytic gradient with respect to the
//! predicted box `(cx, cy, w, h)`. Spike counts inside a box are rasterized
//! and treated as constants, so the density gradient only flows through the
//! (clipped) box area.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Axis-aligned box in center format, pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self {
            cx: (x1 + x2) / 2.0,
            cy: (y1 + y2) / 2.0,
            w: x2 - x1,
            h: y2 - y1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.cx, self.cy, self.w, self.h].iter().all(|v| v.is_finite());
        if !finite || self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::invalid(format!("invalid box {self:?}")));
        }
        Ok(())
    }

    pub fn x1(&self) -> f64 {
        self.cx - self.w / 2.0
    }
    pub fn x2(&self) -> f64 {
        self.cx + self.w / 2.0
    }
    pub fn y1(&self) -> f64 {
        self.cy - self.h / 2.0
    }
    pub fn y2(&self) -> f64 {
        self.cy + self.h / 2.0
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let iw = (self.x2().min(other.x2()) - self.x1().max(other.x1())).max(0.0);
        let ih = (self.y2().min(other.y2()) - self.y1().max(other.y1())).max(0.0);
        let inter = iw * ih;
        inter / (self.area() + other.area() - inter)
    }
}

/// Gradient with respect to `(cx, cy, w, h)`.
pub type BoxGrad = [f64; 4];

fn scale(g: BoxGrad, s: f64) -> BoxGrad {
    g.map(|v| v * s)
}

fn add(a: BoxGrad, b: BoxGrad) -> BoxGrad {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]]
}

/// Derivatives of the predicted box's low/high edges along one axis with
/// respect to (center, size).
const LOW_EDGE: [f64; 2] = [1.0, -0.5];
const HIGH_EDGE: [f64; 2] = [1.0, 0.5];
const NO_EDGE: [f64; 2] = [0.0, 0.0];

fn axis(g: [f64; 2], horizontal: bool) -> BoxGrad {
    if horizontal {
        [g[0], 0.0, g[1], 0.0]
    } else {
        [0.0, g[0], 0.0, g[1]]
    }
}

/// Overlap and enclosing extent along one axis with their gradients.
fn axis_terms(lo: f64, hi: f64, glo: f64, ghi: f64, horizontal: bool) -> (f64, BoxGrad, f64, BoxGrad) {
    let (min_hi, d_min_hi) = if hi <= ghi { (hi, HIGH_EDGE) } else { (ghi, NO_EDGE) };
    let (max_lo, d_max_lo) = if lo >= glo { (lo, LOW_EDGE) } else { (glo, NO_EDGE) };
    let raw = min_hi - max_lo;
    let (overlap, d_overlap) = if raw > 0.0 {
        (raw, axis([d_min_hi[0] - d_max_lo[0], d_min_hi[1] - d_max_lo[1]], horizontal))
    } else {
        (0.0, [0.0; 4])
    };
    let (max_hi, d_max_hi) = if hi >= ghi { (hi, HIGH_EDGE) } else { (ghi, NO_EDGE) };
    let (min_lo, d_min_lo) = if lo <= glo { (lo, LOW_EDGE) } else { (glo, NO_EDGE) };
    let enclose = max_hi - min_lo;
    let d_enclose = axis([d_max_hi[0] - d_min_lo[0], d_max_hi[1] - d_min_lo[1]], horizontal);
    (overlap, d_overlap, enclose, d_enclose)
}

/// IoU with its gradient with respect to the predicted box.
pub fn iou_with_grad(pred: &BBox, gt: &BBox) -> (f64, BoxGrad) {
    let (iw, d_iw, _, _) = axis_terms(pred.x1(), pred.x2(), gt.x1(), gt.x2(), true);
    let (ih, d_ih, _, _) = axis_terms(pred.y1(), pred.y2(), gt.y1(), gt.y2(), false);
    let inter = iw * ih;
    let d_inter = add(scale(d_iw, ih), scale(d_ih, iw));
    let union = pred.area() + gt.area() - inter;
    let d_union = add([0.0, 0.0, pred.h, pred.w], scale(d_inter, -1.0));
    let iou = inter / union;
    let d_iou = add(scale(d_inter, 1.0 / union), scale(d_union, -inter / (union * union)));
    (iou, d_iou)
}

/// Complete IoU: `IoU - rho^2 / c^2 - alpha * v`.
pub fn ciou(pred: &BBox, gt: &BBox) -> f64 {
    ciou_with_grad(pred, gt).0
}

/// CIoU and its exact gradient with respect to the predicted box, including
/// the dependence of the trade-off weight `alpha` on IoU and `v`.
pub fn ciou_with_grad(pred: &BBox, gt: &BBox) -> (f64, BoxGrad) {
    let (iou, d_iou) = iou_with_grad(pred, gt);

    let (_, _, cw, d_cw) = axis_terms(pred.x1(), pred.x2(), gt.x1(), gt.x2(), true);
    let (_, _, ch, d_ch) = axis_terms(pred.y1(), pred.y2(), gt.y1(), gt.y2(), false);
    let c2 = cw * cw + ch * ch;
    let d_c2 = add(scale(d_cw, 2.0 * cw), scale(d_ch, 2.0 * ch));
    let (dx, dy) = (pred.cx - gt.cx, pred.cy - gt.cy);
    let rho2 = dx * dx + dy * dy;
    let d_rho2 = [2.0 * dx, 2.0 * dy, 0.0, 0.0];
    let dist = rho2 / c2;
    let d_dist = add(scale(d_rho2, 1.0 / c2), scale(d_c2, -rho2 / (c2 * c2)));

    let k = 4.0 / (PI * PI);
    let delta = (gt.w / gt.h).atan() - (pred.w / pred.h).atan();
    let v = k * delta * delta;
    let norm = pred.w * pred.w + pred.h * pred.h;
    let d_v = [
        0.0,
        0.0,
        -2.0 * k * delta * pred.h / norm,
        2.0 * k * delta * pred.w / norm,
    ];
    // alpha * v = v^2 / ((1 - IoU) + v); zero when v == 0
    let s = (1.0 - iou) + v;
    let (aspect, d_aspect) = if v > 0.0 && s > 0.0 {
        let d_s = add(scale(d_iou, -1.0), d_v);
        let val = v * v / s;
        let grad = add(scale(d_v, 2.0 * v / s), scale(d_s, -v * v / (s * s)));
        (val, grad)
    } else {
        (0.0, [0.0; 4])
    };

    let value = iou - dist - aspect;
    let grad = add(d_iou, scale(add(d_dist, d_aspect), -1.0));
    (value, grad)
}

/// Non-negative spike counts on an `H x W` grid with a summed-area table for
/// O(1) box sums.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeMap {
    pub width: usize,
    pub height: usize,
    pub counts: Vec<f64>,
    integral: Vec<f64>,
}

impl SpikeMap {
    pub fn new(width: usize, height: usize, counts: Vec<f64>) -> Result<Self> {
        if counts.len() != width * height {
            return Err(Error::shape(format!("{height}x{width} map"), counts.len()));
        }
        if counts.iter().any(|&c| !(c >= 0.0 && c.is_finite())) {
            return Err(Error::invalid("spike map counts must be finite and non-negative"));
        }
        let mut integral = vec![0.0; (width + 1) * (height + 1)];
        for y in 0..height {
            let mut row = 0.0;
            for x in 0..width {
                row += counts[y * width + x];
                integral[(y + 1) * (width + 1) + x + 1] = integral[y * (width + 1) + x + 1] + row;
            }
        }
        Ok(Self {
            width,
            height,
            counts,
            integral,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![0.0; width * height]).expect("zero map is valid")
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.width, self.height, self.counts.iter().map(|v| v * c).collect())
    }

    /// Pixel index range `[first, last)` whose centers fall in `[lo, hi)`.
    fn covered(lo: f64, hi: f64, n: usize) -> (usize, usize) {
        let first = (lo - 0.5).ceil().max(0.0);
        let last = (hi - 0.5).ceil().min(n as f64);
        if last <= first {
            (0, 0)
        } else {
            (first as usize, last as usize)
        }
    }

    /// Sum of counts over pixels whose centers lie inside the box.
    pub fn box_sum(&self, b: &BBox) -> f64 {
        let (x0, x1) = Self::covered(b.x1(), b.x2(), self.width);
        let (y0, y1) = Self::covered(b.y1(), b.y2(), self.height);
        if x1 <= x0 || y1 <= y0 {
            return 0.0;
        }
        let s = self.width + 1;
        self.integral[y1 * s + x1] - self.integral[y0 * s + x1] - self.integral[y1 * s + x0]
            + self.integral[y0 * s + x0]
    }

    /// Box extent clipped to the map, with the gradient of the clipped area.
    fn clipped_area(&self, b: &BBox) -> (f64, BoxGrad) {
        let (w, h) = (self.width as f64, self.height as f64);
        let (x1, x2, y1, y2) = (b.x1(), b.x2(), b.y1(), b.y2());
        let cw = x2.min(w) - x1.max(0.0);
        let ch = y2.min(h) - y1.max(0.0);
        if cw <= 0.0 || ch <= 0.0 {
            return (0.0, [0.0; 4]);
        }
        let hi_x = if x2 < w { 1.0 } else { 0.0 };
        let lo_x = if x1 > 0.0 { 1.0 } else { 0.0 };
        let hi_y = if y2 < h { 1.0 } else { 0.0 };
        let lo_y = if y1 > 0.0 { 1.0 } else { 0.0 };
        let d_cw = [hi_x - lo_x, 0.0, 0.5 * (hi_x + lo_x), 0.0];
        let d_ch = [0.0, hi_y - lo_y, 0.0, 0.5 * (hi_y + lo_y)];
        (cw * ch, add(scale(d_cw, ch), scale(d_ch, cw)))
    }

    /// In-box spike density over the clipped area, and its gradient with the
    /// count held fixed.
    pub fn density_with_grad(&self, b: &BBox) -> (f64, BoxGrad) {
        let (area, d_area) = self.clipped_area(b);
        if area <= 0.0 {
            return (0.0, [0.0; 4]);
        }
        let count = self.box_sum(b);
        let rho = count / area;
        (rho, scale(d_area, -count / (area * area)))
    }

    pub fn density(&self, b: &BBox) -> f64 {
        self.density_with_grad(b).0
    }
}

/// Absolute difference of in-box spike densities.
pub fn spiking_iou(pred: &BBox, gt: &BBox, map: &SpikeMap) -> f64 {
    (map.density(gt) - map.density(pred)).abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StIouConfig {
    /// Weight of the density-mismatch term.
    #[serde(default = "StIouConfig::default_a")]
    pub a: f64,
    /// Weight of the CIoU term.
    #[serde(default = "StIouConfig::default_b")]
    pub b: f64,
    #[serde(default = "StIouConfig::default_eps")]
    pub eps: f64,
    /// `1 - (a * mismatch + b * CIoU)`: rewards density mismatch. Ablation only.
    #[serde(default)]
    pub literal: bool,
}

impl StIouConfig {
    pub(crate) fn default_a() -> f64 {
        0.5
    }
    pub(crate) fn default_b() -> f64 {
        1.0
    }
    pub(crate) fn default_eps() -> f64 {
        1e-6
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a >= 0.0 && self.b >= 0.0 && self.a + self.b > 0.0) {
            return Err(Error::invalid(format!(
                "ST-IoU weights need a, b >= 0 and a + b > 0, got a={}, b={}",
                self.a, self.b
            )));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::invalid("ST-IoU eps must be > 0"));
        }
        Ok(())
    }
}

impl Default for StIouConfig {
    fn default() -> Self {
        Self {
            a: Self::default_a(),
            b: Self::default_b(),
            eps: Self::default_eps(),
            literal: false,
        }
    }
}

/// `|rho_gt - rho_pred| / max(rho_gt, rho_pred, eps)` in `[0, 1]` (for
/// `eps` below both densities), with its gradient.
pub fn density_mismatch_with_grad(pred: &BBox, gt: &BBox, map: &SpikeMap, eps: f64) -> (f64, BoxGrad) {
    let rho_gt = map.density(gt);
    let (rho_p, d_rho_p) = map.density_with_grad(pred);
    let diff = rho_gt - rho_p;
    if rho_gt >= rho_p && rho_gt >= eps {
        let sign = if diff > 0.0 { 1.0 } else { 0.0 };
        (diff / rho_gt, scale(d_rho_p, -sign / rho_gt))
    } else if rho_p > rho_gt && rho_p >= eps {
        (1.0 - rho_gt / rho_p, scale(d_rho_p, rho_gt / (rho_p * rho_p)))
    } else {
        let sign = diff.signum();
        (diff.abs() / eps, scale(d_rho_p, -sign / eps))
    }
}

/// Regression loss `1 - b * CIoU + a * mismatch` with its gradient.
pub fn st_iou_loss_with_grad(pred: &BBox, gt: &BBox, map: &SpikeMap, cfg: &StIouConfig) -> (f64, BoxGrad) {
    let (c, d_c) = ciou_with_grad(pred, gt);
    let (m, d_m) = if cfg.a > 0.0 {
        density_mismatch_with_grad(pred, gt, map, cfg.eps)
    } else {
        (0.0, [0.0; 4])
    };
    let sign = if cfg.literal { -1.0 } else { 1.0 };
    let loss = 1.0 - cfg.b * c + sign * cfg.a * m;
    let grad = add(scale(d_c, -cfg.b), scale(d_m, sign * cfg.a));
    (loss, grad)
}

pub fn st_iou_loss(pred: &BBox, gt: &BBox, map: &SpikeMap, cfg: &StIouConfig) -> f64 {
    st_iou_loss_with_grad(pred, gt, map, cfg).0
}

/// A single-object detection output.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionOutput {
    pub bbox: BBox,
    /// Objectness probability in (0, 1].
    pub objectness: f64,
    /// Class logits; only used in multi-class configurations.
    pub class_logits: Option<Vec<f64>>,
}

/// `L_obj + L_cls + L_reg` for one object that is known to be present.
pub fn detection_loss(
    pred: &DetectionOutput,
    gt: &BBox,
    gt_label: usize,
    map: &SpikeMap,
    cfg: &StIouConfig,
) -> Result<f64> {
    let reg = st_iou_loss(&pred.bbox, gt, map, cfg);
    let obj = -pred.objectness.clamp(1e-12, 1.0).ln();
    let cls = match &pred.class_logits {
        Some(logits) if logits.len() > 1 => {
            let mut y = vec![0.0; logits.len()];
            *y.get_mut(gt_label)
                .ok_or_else(|| Error::invalid(format!("label {gt_label} out of range")))? = 1.0;
            crate::dlnet::softmax_ce(logits, &y)?.0
        }
        _ => 0.0,
    };
    Ok(obj + cls + reg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ciou_identical_is_one() {
        let b = BBox::new(3.0, 4.0, 2.0, 5.0);
        assert_eq!(ciou(&b, &b), 1.0);
    }

    #[test]
    fn ciou_disjoint_example() {
        // IoU 0, rho^2 = 16, enclosing 6 x 2 so c^2 = 40, same aspect
        let gt = BBox::new(0.0, 0.0, 2.0, 2.0);
        let pred = BBox::new(4.0, 0.0, 2.0, 2.0);
        assert!((ciou(&pred, &gt) + 0.4).abs() < 1e-15);
    }

    #[test]
    fn ciou_half_size_same_center() {
        let gt = BBox::new(5.0, 5.0, 4.0, 2.0);
        let pred = BBox::new(5.0, 5.0, 2.0, 1.0);
        let c = ciou(&pred, &gt);
        assert!(c > 0.0 && c < 1.0);
        assert!((c - 0.25).abs() < 1e-12);
    }

    fn map_with(width: usize, height: usize, fill: &[(usize, usize, f64)]) -> SpikeMap {
        let mut counts = vec![0.0; width * height];
        for &(x, y, v) in fill {
            counts[y * width + x] = v;
        }
        SpikeMap::new(width, height, counts).unwrap()
    }

    #[test]
    fn density_example() {
        // gt 10x10 holding 50 spikes; pred 20x10 holding the same 50
        let mut fill = Vec::new();
        for i in 0..50 {
            fill.push((i % 10, i / 10, 1.0));
        }
        let map = map_with(40, 20, &fill);
        let gt = BBox::from_corners(0.0, 0.0, 10.0, 10.0);
        let pred = BBox::from_corners(0.0, 0.0, 20.0, 10.0);
        assert_eq!(map.density(&gt), 0.5);
        assert_eq!(map.density(&pred), 0.25);
        assert_eq!(spiking_iou(&pred, &gt, &map), 0.25);
        assert_eq!(spiking_iou(&gt, &gt, &map), 0.0);
    }

    #[test]
    fn empty_map_gives_zero() {
        let map = SpikeMap::zeros(16, 16);
        let a = BBox::new(4.0, 4.0, 3.0, 3.0);
        let b = BBox::new(10.0, 9.0, 5.0, 2.0);
        assert_eq!(spiking_iou(&a, &b, &map), 0.0);
    }

    #[test]
    fn box_outside_map_has_zero_density() {
        let map = map_with(8, 8, &[(1, 1, 5.0)]);
        let outside = BBox::new(-10.0, -10.0, 2.0, 2.0);
        assert_eq!(map.density(&outside), 0.0);
        assert_eq!(map.box_sum(&outside), 0.0);
    }

    #[test]
    fn box_sum_matches_brute_force() {
        let counts: Vec<f64> = (0..12 * 9).map(|i| ((i * 7) % 5) as f64).collect();
        let map = SpikeMap::new(12, 9, counts.clone()).unwrap();
        let b = BBox::from_corners(1.3, 2.5, 8.7, 7.49);
        let mut brute = 0.0;
        for y in 0..9 {
            for x in 0..12 {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                if px >= b.x1() && px < b.x2() && py >= b.y1() && py < b.y2() {
                    brute += counts[y * 12 + x];
                }
            }
        }
        assert_eq!(map.box_sum(&b), brute);
    }

    #[test]
    fn st_iou_identical_and_degenerate() {
        let map = map_with(16, 16, &[(4, 4, 3.0), (5, 5, 1.0)]);
        let gt = BBox::new(5.0, 5.0, 4.0, 4.0);
        assert_eq!(st_iou_loss(&gt, &gt, &map, &StIouConfig::default()), 0.0);
        let pred = BBox::new(6.0, 5.5, 3.0, 5.0);
        let cfg = StIouConfig {
            a: 0.0,
            ..Default::default()
        };
        assert_eq!(st_iou_loss(&pred, &gt, &map, &cfg), 1.0 - ciou(&pred, &gt));
    }

    #[test]
    fn st_iou_grows_with_density_mismatch() {
        // Same pred/gt geometry, less and less activity inside the prediction.
        let gt = BBox::from_corners(0.0, 0.0, 4.0, 4.0);
        let pred = BBox::from_corners(4.0, 0.0, 8.0, 4.0);
        let cfg = StIouConfig::default();
        let mut last = f64::NEG_INFINITY;
        for inside_pred in [8.0, 6.0, 4.0, 2.0, 0.0] {
            let map = map_with(8, 4, &[(1, 1, 8.0), (5, 1, inside_pred)]);
            let loss = st_iou_loss(&pred, &gt, &map, &cfg);
            assert!(loss > last);
            last = loss;
        }
    }

    #[test]
    fn detection_loss_examples() {
        let map = map_with(16, 16, &[(4, 4, 3.0)]);
        let gt = BBox::new(5.0, 5.0, 4.0, 4.0);
        let perfect = DetectionOutput {
            bbox: gt,
            objectness: 1.0,
            class_logits: None,
        };
        assert_eq!(detection_loss(&perfect, &gt, 0, &map, &StIouConfig::default()).unwrap(), 0.0);

        let cfg = StIouConfig {
            a: 0.0,
            b: 1.0,
            ..Default::default()
        };
        let half = DetectionOutput {
            objectness: 0.5,
            ..perfect.clone()
        };
        let l = detection_loss(&half, &gt, 0, &map, &cfg).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);

        let worse = DetectionOutput {
            bbox: BBox::new(7.0, 6.0, 4.0, 3.0),
            ..half.clone()
        };
        assert!(detection_loss(&worse, &gt, 0, &map, &cfg).unwrap() > l);

        let with_cls = DetectionOutput {
            class_logits: Some(vec![0.0, 0.0]),
            ..perfect
        };
        let l = detection_loss(&with_cls, &gt, 1, &map, &cfg).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(detection_loss(&with_cls, &gt, 5, &map, &cfg).is_err());
    }

    fn central_diff(f: impl Fn(&BBox) -> f64, b: &BBox, h: f64) -> BoxGrad {
        let mut g = [0.0; 4];
        for (i, gi) in g.iter_mut().enumerate() {
            let mut lo = [b.cx, b.cy, b.w, b.h];
            let mut hi = lo;
            lo[i] -= h;
            hi[i] += h;
            let mk = |a: [f64; 4]| BBox::new(a[0], a[1], a[2], a[3]);
            *gi = (f(&mk(hi)) - f(&mk(lo))) / (2.0 * h);
        }
        g
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (2.0f64..30.0, 2.0f64..30.0, 1.0f64..12.0, 1.0f64..12.0).prop_map(|(cx, cy, w, h)| BBox::new(cx, cy, w, h))
    }

    /// Keep every edge comparison at least `margin` away from a tie so that a
    /// finite-difference step never crosses a kink.
    fn edges_separated(a: &BBox, b: &BBox, margin: f64) -> bool {
        let xs = [a.x1(), a.x2(), b.x1(), b.x2()];
        let ys = [a.y1(), a.y2(), b.y1(), b.y2()];
        let ok = |v: &[f64; 4]| {
            (0..4).all(|i| (0..4).all(|j| i == j || (v[i] - v[j]).abs() > margin))
        };
        ok(&xs) && ok(&ys)
    }

    proptest! {
        #[test]
        fn spiking_iou_symmetric(a in arb_box(), b in arb_box(), seed in 0u64..1000) {
            let counts: Vec<f64> = (0..32 * 32).map(|i| ((i as u64 * 2654435761 + seed) % 7) as f64).collect();
            let map = SpikeMap::new(32, 32, counts).unwrap();
            prop_assert_eq!(spiking_iou(&a, &b, &map), spiking_iou(&b, &a, &map));
        }

        #[test]
        fn spiking_iou_scales_and_mismatch_invariant(a in arb_box(), b in arb_box(), c in 0.1f64..20.0) {
            let counts: Vec<f64> = (0..32 * 32).map(|i| (i % 5) as f64).collect();
            let map = SpikeMap::new(32, 32, counts).unwrap();
            let scaled = map.scaled(c).unwrap();
            let raw = spiking_iou(&a, &b, &map);
            prop_assert!((spiking_iou(&a, &b, &scaled) - c * raw).abs() <= 1e-9 * (1.0 + c * raw));
            let m1 = density_mismatch_with_grad(&a, &b, &map, 1e-6).0;
            let m2 = density_mismatch_with_grad(&a, &b, &scaled, 1e-6).0;
            prop_assert!((m1 - m2).abs() < 1e-9);
        }

        #[test]
        fn ciou_bounded_by_iou(a in arb_box(), b in arb_box()) {
            let c = ciou(&a, &b);
            prop_assert!(c <= a.iou(&b) + 1e-15);
            prop_assert!(c > -1.0 && c <= 1.0);
        }

        #[test]
        fn ciou_gradient_matches_finite_difference(a in arb_box(), b in arb_box()) {
            prop_assume!(edges_separated(&a, &b, 1e-3));
            let (_, g) = ciou_with_grad(&a, &b);
            let fd = central_diff(|p| ciou(p, &b), &a, 1e-6);
            for i in 0..4 {
                prop_assert!((g[i] - fd[i]).abs() < 1e-6, "component {} analytic {} fd {}", i, g[i], fd[i]);
            }
        }

        #[test]
        fn st_iou_gradient_matches_finite_difference(
            a in arb_box(), b in arb_box(),
            fx in 0.0f64..1.0, fy in 0.0f64..1.0,
        ) {
            prop_assume!(edges_separated(&a, &b, 1e-3));
            let counts: Vec<f64> = (0..32 * 32).map(|i| ((i * 13) % 4) as f64).collect();
            let map = SpikeMap::new(32, 32, counts).unwrap();
            // Stay inside a raster cell: no pixel center within 1e-3 of an edge.
            let cell_safe = |v: f64| ((v - 0.5) - (v - 0.5).round()).abs() > 1e-3;
            prop_assume!([a.x1(), a.x2(), a.y1(), a.y2(), b.x1(), b.x2(), b.y1(), b.y2()].iter().all(|&v| cell_safe(v)));
            let _ = (fx, fy);
            let cfg = StIouConfig::default();
            let (_, g) = st_iou_loss_with_grad(&a, &b, &map, &cfg);
            prop_assert!(g.iter().all(|v| v.is_finite()));
            let fd = central_diff(|p| st_iou_loss(p, &b, &map, &cfg), &a, 1e-6);
            for i in 0..4 {
                prop_assert!((g[i] - fd[i]).abs() < 1e-5, "component {} analytic {} fd {}", i, g[i], fd[i]);
            }
        }
    }
}
