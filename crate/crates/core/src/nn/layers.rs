//! Forward and backward passes for one sample.
//!
//! Activations are flat row-major `[channel, row, column]` buffers.

use super::model::{Architecture, ModelParams, KERNEL};

/// Probability floor used by the cross-entropy loss.
pub const PROB_FLOOR: f64 = 1e-12;

/// Zero-padded 3x3 convolution, stride 1, output overwritten.
fn conv3x3_forward(
    input: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    bias: &[f64],
    out: &mut [f64],
) {
    let plane = h * w;
    for (o, out_o) in out.chunks_exact_mut(plane).enumerate() {
        out_o.fill(bias[o]);
        for c in 0..cin {
            let in_c = &input[c * plane..(c + 1) * plane];
            for dy in 0..KERNEL {
                let (ylo, yhi) = (1usize.saturating_sub(dy), (h + 1 - dy).min(h));
                for dx in 0..KERNEL {
                    let wv = weights[((o * cin + c) * KERNEL + dy) * KERNEL + dx];
                    let (xlo, xhi) = (1usize.saturating_sub(dx), (w + 1 - dx).min(w));
                    for y in ylo..yhi {
                        let iy = y + dy - 1;
                        let orow = &mut out_o[y * w + xlo..y * w + xhi];
                        let irow = &in_c[iy * w + xlo + dx - 1..iy * w + xhi + dx - 1];
                        for (a, b) in orow.iter_mut().zip(irow) {
                            *a += wv * b;
                        }
                    }
                }
            }
        }
    }
}

/// Accumulate weight/bias gradients and, if requested, the input gradient.
#[allow(clippy::too_many_arguments)]
fn conv3x3_backward(
    input: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    grad_out: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    mut grad_in: Option<&mut [f64]>,
) {
    let plane = h * w;
    for (o, g_o) in grad_out.chunks_exact(plane).enumerate() {
        grad_b[o] += g_o.iter().sum::<f64>();
        for c in 0..cin {
            let in_c = &input[c * plane..(c + 1) * plane];
            for dy in 0..KERNEL {
                let (ylo, yhi) = (1usize.saturating_sub(dy), (h + 1 - dy).min(h));
                for dx in 0..KERNEL {
                    let idx = ((o * cin + c) * KERNEL + dy) * KERNEL + dx;
                    let wv = weights[idx];
                    let (xlo, xhi) = (1usize.saturating_sub(dx), (w + 1 - dx).min(w));
                    let mut acc = 0.0;
                    for y in ylo..yhi {
                        let iy = y + dy - 1;
                        let grow = &g_o[y * w + xlo..y * w + xhi];
                        let irange = iy * w + xlo + dx - 1..iy * w + xhi + dx - 1;
                        acc += grow.iter().zip(&in_c[irange.clone()]).map(|(a, b)| a * b).sum::<f64>();
                        if let Some(gi) = grad_in.as_deref_mut() {
                            let gi_row = &mut gi[c * plane..(c + 1) * plane][irange];
                            for (a, b) in gi_row.iter_mut().zip(grow) {
                                *a += wv * b;
                            }
                        }
                    }
                    grad_w[idx] += acc;
                }
            }
        }
    }
}

/// In-place ReLU.
fn relu(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// 2x2 max pooling; `arg` receives the input index of each maximum (first
/// one wins ties).
fn maxpool2(input: &[f64], channels: usize, h: usize, w: usize, out: &mut [f64], arg: &mut [usize]) {
    let (oh, ow) = (h / 2, w / 2);
    for c in 0..channels {
        for y in 0..oh {
            for x in 0..ow {
                let base = c * h * w + 2 * y * w + 2 * x;
                let mut best = base;
                for cand in [base + 1, base + w, base + w + 1] {
                    if input[cand] > input[best] {
                        best = cand;
                    }
                }
                let o = (c * oh + y) * ow + x;
                out[o] = input[best];
                arg[o] = best;
            }
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Cross-entropy `-ln p[label]`, with `p` clamped to at least 1e-12.
pub fn loss(probs: &[f64], label: usize) -> f64 {
    -probs[label].max(PROB_FLOOR).ln()
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    a1: Vec<f64>,
    p1: Vec<f64>,
    arg1: Vec<usize>,
    a2: Vec<f64>,
    p2: Vec<f64>,
    arg2: Vec<usize>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Activations {
    pub fn new(arch: &Architecture) -> Self {
        let (h, w) = (arch.height, arch.width);
        let n1 = arch.conv1_filters * h * w;
        let n2 = arch.conv2_filters * (h / 2) * (w / 2);
        Self {
            a1: vec![0.0; n1],
            p1: vec![0.0; n1 / 4],
            arg1: vec![0; n1 / 4],
            a2: vec![0.0; n2],
            p2: vec![0.0; n2 / 4],
            arg2: vec![0; n2 / 4],
            logits: vec![0.0; arch.classes],
            probs: vec![0.0; arch.classes],
        }
    }
}

/// Full forward pass; `input` is `[C, H, W]` row-major.
pub fn forward_into(params: &ModelParams, input: &[f64], act: &mut Activations) {
    let arch = params.architecture();
    let (h, w) = (arch.height, arch.width);
    conv3x3_forward(input, arch.channels, h, w, params.tensor(0), params.tensor(1), &mut act.a1);
    relu(&mut act.a1);
    maxpool2(&act.a1, arch.conv1_filters, h, w, &mut act.p1, &mut act.arg1);
    let (h2, w2) = (h / 2, w / 2);
    conv3x3_forward(&act.p1, arch.conv1_filters, h2, w2, params.tensor(2), params.tensor(3), &mut act.a2);
    relu(&mut act.a2);
    maxpool2(&act.a2, arch.conv2_filters, h2, w2, &mut act.p2, &mut act.arg2);
    let dense = params.tensor(4);
    let flat = act.p2.len();
    for (j, z) in act.logits.iter_mut().enumerate() {
        let row = &dense[j * flat..(j + 1) * flat];
        *z = params.tensor(5)[j] + row.iter().zip(&act.p2).map(|(a, b)| a * b).sum::<f64>();
    }
    act.probs = softmax(&act.logits);
}

/// Gradient of `loss(probs, label)` for the sample whose forward pass is in
/// `act`, written over `grad` (same layout as the parameters).
pub fn backward(params: &ModelParams, input: &[f64], act: &Activations, label: usize, grad: &mut [f64]) {
    let arch = params.architecture();
    let (h, w) = (arch.height, arch.width);
    let (h2, w2) = (h / 2, w / 2);
    let offsets = arch.offsets();
    grad.fill(0.0);
    let (g_conv1w, rest) = grad.split_at_mut(offsets[1]);
    let (g_conv1b, rest) = rest.split_at_mut(offsets[2] - offsets[1]);
    let (g_conv2w, rest) = rest.split_at_mut(offsets[3] - offsets[2]);
    let (g_conv2b, rest) = rest.split_at_mut(offsets[4] - offsets[3]);
    let (g_densew, g_denseb) = rest.split_at_mut(offsets[5] - offsets[4]);

    let flat = act.p2.len();
    let dense = params.tensor(4);
    let mut g_p2 = vec![0.0; flat];
    for j in 0..arch.classes {
        let d = act.probs[j] - if j == label { 1.0 } else { 0.0 };
        g_denseb[j] = d;
        let row_g = &mut g_densew[j * flat..(j + 1) * flat];
        for (g, x) in row_g.iter_mut().zip(&act.p2) {
            *g = d * x;
        }
        for (g, wv) in g_p2.iter_mut().zip(&dense[j * flat..(j + 1) * flat]) {
            *g += d * wv;
        }
    }

    // unpool into conv2 output, then mask by ReLU
    let mut g_a2 = vec![0.0; act.a2.len()];
    for (g, &src) in g_p2.iter().zip(&act.arg2) {
        g_a2[src] += g;
    }
    for (g, &a) in g_a2.iter_mut().zip(&act.a2) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
    let mut g_p1 = vec![0.0; act.p1.len()];
    conv3x3_backward(
        &act.p1,
        arch.conv1_filters,
        h2,
        w2,
        params.tensor(2),
        &g_a2,
        g_conv2w,
        g_conv2b,
        Some(&mut g_p1),
    );

    let mut g_a1 = vec![0.0; act.a1.len()];
    for (g, &src) in g_p1.iter().zip(&act.arg1) {
        g_a1[src] += g;
    }
    for (g, &a) in g_a1.iter_mut().zip(&act.a1) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
    conv3x3_backward(input, arch.channels, h, w, params.tensor(0), &g_a1, g_conv1w, g_conv1b, None);
}
