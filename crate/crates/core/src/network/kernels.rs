//! Dense and spike-driven layer kernels.

use crate::tensor::Shape;

/// Calls `f(input_index, weight_offset)` for every tap of output `(oy, ox)`
/// in one input channel plane, skipping padding.
#[inline]
fn taps(
    in_shape: Shape,
    kernel: usize,
    stride: usize,
    padding: usize,
    oy: usize,
    ox: usize,
    mut f: impl FnMut(usize, usize),
) {
    for ky in 0..kernel {
        let iy = (oy * stride + ky) as isize - padding as isize;
        if iy < 0 || iy >= in_shape.h as isize {
            continue;
        }
        for kx in 0..kernel {
            let ix = (ox * stride + kx) as isize - padding as isize;
            if ix < 0 || ix >= in_shape.w as isize {
                continue;
            }
            f(iy as usize * in_shape.w + ix as usize, ky * kernel + kx);
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn conv_forward(
    x: &[f64],
    in_shape: Shape,
    weight: &[f64],
    bias: &[f64],
    kernel: usize,
    stride: usize,
    padding: usize,
    out_shape: Shape,
) -> Vec<f64> {
    let plane = in_shape.h * in_shape.w;
    let kk = kernel * kernel;
    let mut out = vec![0.0; out_shape.len()];
    for oc in 0..out_shape.c {
        for oy in 0..out_shape.h {
            for ox in 0..out_shape.w {
                let mut acc = bias[oc];
                for ic in 0..in_shape.c {
                    let w = &weight[(oc * in_shape.c + ic) * kk..][..kk];
                    let xs = &x[ic * plane..][..plane];
                    taps(in_shape, kernel, stride, padding, oy, ox, |i, k| acc += w[k] * xs[i]);
                }
                out[out_shape.index(oc, oy, ox)] = acc;
            }
        }
    }
    out
}

/// Weight, bias and input gradients of a convolution.
#[allow(clippy::too_many_arguments)]
pub(super) fn conv_backward(
    x: &[f64],
    gz: &[f64],
    in_shape: Shape,
    weight: &[f64],
    kernel: usize,
    stride: usize,
    padding: usize,
    out_shape: Shape,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let plane = in_shape.h * in_shape.w;
    let kk = kernel * kernel;
    let mut gw = vec![0.0; weight.len()];
    let mut gb = vec![0.0; out_shape.c];
    let mut gx = vec![0.0; x.len()];
    for oc in 0..out_shape.c {
        for oy in 0..out_shape.h {
            for ox in 0..out_shape.w {
                let g = gz[out_shape.index(oc, oy, ox)];
                if g == 0.0 {
                    continue;
                }
                gb[oc] += g;
                for ic in 0..in_shape.c {
                    let base = (oc * in_shape.c + ic) * kk;
                    let off = ic * plane;
                    taps(in_shape, kernel, stride, padding, oy, ox, |i, k| {
                        gw[base + k] += g * x[off + i];
                        gx[off + i] += g * weight[base + k];
                    });
                }
            }
        }
    }
    (gw, gb, gx)
}

/// Potentials from per-timestep spike events `(index, d(t) * spike)`.
/// Returns the potentials and the number of accumulates performed.
#[allow(clippy::too_many_arguments)]
pub(super) fn conv_spike(
    events: &[Vec<(usize, f64)>],
    in_shape: Shape,
    weight: &[f64],
    bias: &[f64],
    kernel: usize,
    stride: usize,
    padding: usize,
    out_shape: Shape,
) -> (Vec<f64>, u64) {
    // Scatter each spike into the outputs whose receptive field holds it.
    let plane = in_shape.h * in_shape.w;
    let kk = kernel * kernel;
    let out_plane = out_shape.h * out_shape.w;
    let mut u = vec![0.0; out_shape.len()];
    for oc in 0..out_shape.c {
        u[oc * out_plane..(oc + 1) * out_plane].fill(bias[oc]);
    }
    let mut ops = 0u64;
    for step in events {
        for &(idx, s) in step {
            let ic = idx / plane;
            let iy = (idx % plane) / in_shape.w;
            let ix = idx % in_shape.w;
            for ky in 0..kernel {
                let ny = iy + padding;
                if ny < ky || !(ny - ky).is_multiple_of(stride) {
                    continue;
                }
                let oy = (ny - ky) / stride;
                if oy >= out_shape.h {
                    continue;
                }
                for kx in 0..kernel {
                    let nx = ix + padding;
                    if nx < kx || !(nx - kx).is_multiple_of(stride) {
                        continue;
                    }
                    let ox = (nx - kx) / stride;
                    if ox >= out_shape.w {
                        continue;
                    }
                    let k = ky * kernel + kx;
                    for oc in 0..out_shape.c {
                        u[oc * out_plane + oy * out_shape.w + ox] += s * weight[(oc * in_shape.c + ic) * kk + k];
                    }
                    ops += out_shape.c as u64;
                }
            }
        }
    }
    (u, ops)
}

pub(super) fn dense_forward(x: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let n = x.len();
    bias.iter()
        .enumerate()
        .map(|(o, &b)| {
            let row = &weight[o * n..][..n];
            b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        })
        .collect()
}

pub(super) fn dense_backward(x: &[f64], gz: &[f64], weight: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = x.len();
    let mut gw = vec![0.0; weight.len()];
    let mut gx = vec![0.0; n];
    for (o, &g) in gz.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let row = &weight[o * n..][..n];
        let grow = &mut gw[o * n..][..n];
        for i in 0..n {
            grow[i] = g * x[i];
            gx[i] += g * row[i];
        }
    }
    (gw, gz.to_vec(), gx)
}

pub(super) fn dense_spike(events: &[Vec<(usize, f64)>], weight: &[f64], bias: &[f64]) -> (Vec<f64>, u64) {
    let n = weight.len() / bias.len().max(1);
    let mut ops = 0u64;
    let u = bias
        .iter()
        .enumerate()
        .map(|(o, &b)| {
            let row = &weight[o * n..][..n];
            let mut acc = b;
            for step in events {
                for &(i, s) in step {
                    acc += s * row[i];
                }
                ops += step.len() as u64;
            }
            acc
        })
        .collect();
    (u, ops)
}

pub(super) fn pool_forward(x: &[f64], in_shape: Shape, size: usize) -> Vec<f64> {
    let (oh, ow) = (in_shape.h / size, in_shape.w / size);
    let norm = 1.0 / (size * size) as f64;
    let mut out = vec![0.0; in_shape.c * oh * ow];
    for c in 0..in_shape.c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for dy in 0..size {
                    for dx in 0..size {
                        acc += x[in_shape.index(c, oy * size + dy, ox * size + dx)];
                    }
                }
                out[(c * oh + oy) * ow + ox] = acc * norm;
            }
        }
    }
    out
}

pub(super) fn pool_backward(gy: &[f64], in_shape: Shape, size: usize) -> Vec<f64> {
    let (oh, ow) = (in_shape.h / size, in_shape.w / size);
    let norm = 1.0 / (size * size) as f64;
    let mut gx = vec![0.0; in_shape.len()];
    for c in 0..in_shape.c {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = gy[(c * oh + oy) * ow + ox] * norm;
                for dy in 0..size {
                    for dx in 0..size {
                        gx[in_shape.index(c, oy * size + dy, ox * size + dx)] = g;
                    }
                }
            }
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_spike_matches_dense_conv() {
        let in_shape = Shape::new(2, 5, 6);
        for (kernel, stride, padding) in [(3, 1, 1), (3, 2, 1), (1, 1, 0), (3, 2, 0), (1, 2, 0)] {
            let oh = (5 + 2 * padding - kernel) / stride + 1;
            let ow = (6 + 2 * padding - kernel) / stride + 1;
            let out_shape = Shape::new(3, oh, ow);
            let weight: Vec<f64> = (0..3 * 2 * kernel * kernel).map(|i| (i as f64 * 0.37).sin()).collect();
            let bias = vec![0.1, -0.2, 0.3];
            let x: Vec<f64> = (0..in_shape.len()).map(|i| if i % 3 == 0 { 0.0 } else { (i % 7) as f64 * 0.25 }).collect();
            let events = vec![x.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(i, &v)| (i, v)).collect::<Vec<_>>()];
            let dense = conv_forward(&x, in_shape, &weight, &bias, kernel, stride, padding, out_shape);
            let (spike, _) = conv_spike(&events, in_shape, &weight, &bias, kernel, stride, padding, out_shape);
            for (a, b) in dense.iter().zip(&spike) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_matches_finite_difference() {
        let in_shape = Shape::new(2, 4, 4);
        let out_shape = Shape::new(2, 2, 2);
        let (k, s, p) = (3, 2, 1);
        let weight: Vec<f64> = (0..2 * 2 * 9).map(|i| (i as f64 * 0.71).cos()).collect();
        let bias = vec![0.0, 0.5];
        let x: Vec<f64> = (0..in_shape.len()).map(|i| (i as f64 * 0.3).sin()).collect();
        let gz: Vec<f64> = (0..out_shape.len()).map(|i| 1.0 + i as f64).collect();
        let f = |w: &[f64], x: &[f64]| -> f64 {
            conv_forward(x, in_shape, w, &bias, k, s, p, out_shape).iter().zip(&gz).map(|(a, b)| a * b).sum()
        };
        let (gw, gb, gx) = conv_backward(&x, &gz, in_shape, &weight, k, s, p, out_shape);
        let h = 1e-6;
        for i in 0..weight.len() {
            let mut wp = weight.clone();
            wp[i] += h;
            let mut wm = weight.clone();
            wm[i] -= h;
            assert!(((f(&wp, &x) - f(&wm, &x)) / (2.0 * h) - gw[i]).abs() < 1e-6);
        }
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            assert!(((f(&weight, &xp) - f(&weight, &xm)) / (2.0 * h) - gx[i]).abs() < 1e-6);
        }
        assert_eq!(gb, vec![1.0 + 2.0 + 3.0 + 4.0, 5.0 + 6.0 + 7.0 + 8.0]);
    }

    #[test]
    fn pool_roundtrip() {
        let s = Shape::new(1, 2, 4);
        let x = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        assert_eq!(pool_forward(&x, s, 2), vec![3.5, 5.5]);
        assert_eq!(pool_backward(&[4.0, 8.0], s, 2), vec![1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
    }
}
