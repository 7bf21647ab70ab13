//! Test-side reference implementations. Written independently of the
//! library kernels: plain f64 loops, exhaustive searches.
#![allow(dead_code)]

pub mod checks;

use aecz_core::nn::{Activation, Layer, LayerKind};
use aecz_core::AutoencoderModel;

pub fn act(a: Activation, v: f64) -> f64 {
    match a {
        Activation::Relu => v.max(0.0),
        Activation::Tanh => v.tanh(),
        Activation::Identity => v,
    }
}

/// Pre-activation of one layer for one sample, from explicit parameters.
/// `x` is channel-major `[c_in, t_in]`, output `[c_out, t_out]` (dense:
/// flat).
pub fn layer_pre(layer: &Layer, w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let s = &layer.spec;
    let (t_in, t_out) = (layer.in_shape.1, layer.out_shape.1);
    match s.kind {
        LayerKind::Dense => {
            let n_in = x.len();
            (0..s.out_channels)
                .map(|o| b[o] + (0..n_in).map(|i| w[o * n_in + i] * x[i]).sum::<f64>())
                .collect()
        }
        LayerKind::Conv1d => {
            let k = s.kernel_size;
            let mut y = vec![0.0; s.out_channels * t_out];
            for o in 0..s.out_channels {
                for t in 0..t_out {
                    let mut acc = b[o];
                    for i in 0..s.in_channels {
                        for j in 0..k {
                            let pos = (t * s.stride + j) as i64 - s.padding as i64;
                            if pos >= 0 && (pos as usize) < t_in {
                                acc += w[(o * s.in_channels + i) * k + j] * x[i * t_in + pos as usize];
                            }
                        }
                    }
                    y[o * t_out + t] = acc;
                }
            }
            y
        }
        LayerKind::Conv1dTransposed => {
            // scatter form: every input position spreads a kernel-sized patch
            let k = s.kernel_size;
            let mut y = vec![0.0; s.out_channels * t_out];
            for o in 0..s.out_channels {
                for t in 0..t_out {
                    y[o * t_out + t] = b[o];
                }
            }
            for i in 0..s.in_channels {
                for t in 0..t_in {
                    for o in 0..s.out_channels {
                        for j in 0..k {
                            let pos = (t * s.stride + j) as i64 - s.padding as i64;
                            if pos >= 0 && (pos as usize) < t_out {
                                y[o * t_out + pos as usize] += w[(i * s.out_channels + o) * k + j] * x[i * t_in + t];
                            }
                        }
                    }
                }
            }
            y
        }
    }
}

pub fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Parameters of a model as f64 vectors: weight, bias per layer.
pub fn model_params(model: &AutoencoderModel) -> Vec<Vec<f64>> {
    model
        .layers()
        .flat_map(|l| [to_f64(l.weight.data()), to_f64(l.bias.data())])
        .collect()
}

pub fn model_forward(model: &AutoencoderModel, params: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    let mut cur = x.to_vec();
    for (l, layer) in model.layers().enumerate() {
        let pre = layer_pre(layer, &params[2 * l], &params[2 * l + 1], &cur);
        cur = pre.into_iter().map(|v| act(layer.spec.activation, v)).collect();
    }
    cur
}

/// Batch mean of the per-window L2 reconstruction error.
pub fn model_loss(model: &AutoencoderModel, params: &[Vec<f64>], batch: &[f64], batch_size: usize) -> f64 {
    let f = batch.len() / batch_size;
    let mut total = 0.0;
    for s in 0..batch_size {
        let x = &batch[s * f..(s + 1) * f];
        let y = model_forward(model, params, x);
        total += x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    }
    total / batch_size as f64
}

/// Relative agreement with a small absolute floor for components that are
/// numerically zero.
pub fn grad_close(analytic: f64, numeric: f64, rel: f64, abs_floor: f64) -> bool {
    (analytic - numeric).abs() <= rel * analytic.abs().max(numeric.abs()) + abs_floor
}

/// Lowest within-cluster SSE over every assignment of `values` to at most
/// `k` clusters (exhaustive, `k^n` labelings).
pub fn brute_force_kmeans_sse(values: &[f64], k: usize) -> f64 {
    let n = values.len();
    let mut labels = vec![0usize; n];
    let mut best = f64::INFINITY;
    loop {
        let mut sum = vec![0.0; k];
        let mut cnt = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            sum[l] += values[i];
            cnt[l] += 1;
        }
        let sse: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| (values[i] - sum[l] / cnt[l] as f64).powi(2))
            .sum();
        best = best.min(sse);
        let mut pos = 0;
        loop {
            if pos == n {
                return best;
            }
            labels[pos] += 1;
            if labels[pos] < k {
                break;
            }
            labels[pos] = 0;
            pos += 1;
        }
    }
}

/// `(tp, fp, fn, tn)` for `score > tau`.
pub fn confusion(scores: &[f64], labels: &[u8], tau: f64) -> (usize, usize, usize, usize) {
    let mut c = (0, 0, 0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s > tau, l == 1) {
            (true, true) => c.0 += 1,
            (true, false) => c.1 += 1,
            (false, true) => c.2 += 1,
            (false, false) => c.3 += 1,
        }
    }
    c
}

pub fn f1_from(tp: usize, fp: usize, fn_: usize) -> f64 {
    let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Best F1 over every threshold that can change the prediction: each
/// distinct score and one value below all of them. Ties go to the smallest
/// threshold.
pub fn brute_force_best_f1(scores: &[f64], labels: &[u8]) -> (f64, f64) {
    let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut taus: Vec<f64> = scores.to_vec();
    taus.push(if min - 1.0 < min { min - 1.0 } else { min.next_down() });
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    let mut best = (-1.0, f64::NAN);
    for tau in taus {
        let (tp, fp, fn_, _) = confusion(scores, labels, tau);
        let f1 = f1_from(tp, fp, fn_);
        if f1 > best.0 {
            best = (f1, tau);
        }
    }
    best
}
