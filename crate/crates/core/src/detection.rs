//! Reconstruction-error scoring and threshold-swept F1.

use serde::{Deserialize, Serialize};

use crate::autoencoder::AutoencoderModel;
use crate::data::{window, LabeledSeries, WindowConfig};
use crate::error::{Error, Result};
use crate::exec::Exec;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    /// Credit a whole labeled segment once any of its points is flagged.
    pub point_adjust: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

impl EvalResult {
    fn from_counts(threshold: f64, tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let precision = ratio(tp as f64, (tp + fp) as f64);
        let recall = ratio(tp as f64, (tp + fn_) as f64);
        let f1 = ratio(2.0 * precision * recall, precision + recall);
        EvalResult {
            threshold,
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
            tn,
        }
    }
}

/// Per-timestep anomaly scores: the squared reconstruction error of every
/// window, averaged over channels, then averaged over all windows covering
/// the timestep. Timesteps covered by no window score 0.
pub fn anomaly_scores(
    model: &AutoencoderModel,
    series: &LabeledSeries,
    cfg: &WindowConfig,
    exec: Exec,
) -> Result<Vec<f64>> {
    if cfg.length != model.input.length || series.channels() != model.input.channels {
        return Err(Error::Config(format!(
            "model expects windows of {}x{}, got {}x{}",
            model.input.channels,
            model.input.length,
            series.channels(),
            cfg.length
        )));
    }
    let windows = window(series, cfg)?;
    let recon = model.reconstruct_with(&windows.data, exec)?;
    let (c, w) = (model.input.channels, model.input.length);
    let t = series.len();
    let mut sum = vec![0.0f64; t];
    let mut count = vec![0u32; t];
    for (k, &start) in windows.starts.iter().enumerate() {
        let x = &windows.data.data()[k * c * w..(k + 1) * c * w];
        let y = &recon.data()[k * c * w..(k + 1) * c * w];
        for step in 0..w {
            let mut e = 0.0f64;
            for ch in 0..c {
                let d = (x[ch * w + step] - y[ch * w + step]) as f64;
                e += d * d;
            }
            sum[start + step] += e / c as f64;
            count[start + step] += 1;
        }
    }
    Ok(sum
        .into_iter()
        .zip(count)
        .map(|(s, n)| if n == 0 { 0.0 } else { s / n as f64 })
        .collect())
}

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::dim(
            "evaluation",
            format!("{} scores vs {} labels", scores.len(), labels.len()),
        ));
    }
    if scores.is_empty() {
        return Err(Error::Config("cannot evaluate an empty series".into()));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::Data("labels must be 0 or 1".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("anomaly score is NaN".into()));
    }
    Ok(())
}

/// Extends every prediction hit inside a labeled segment to the whole segment.
fn point_adjust(pred: &mut [bool], labels: &[u8]) {
    let mut i = 0;
    while i < labels.len() {
        if labels[i] == 0 {
            i += 1;
            continue;
        }
        let start = i;
        while i < labels.len() && labels[i] == 1 {
            i += 1;
        }
        if pred[start..i].iter().any(|&p| p) {
            pred[start..i].iter_mut().for_each(|p| *p = true);
        }
    }
}

fn confusion(pred: &[bool], labels: &[u8]) -> (usize, usize, usize, usize) {
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&p, &l) in pred.iter().zip(labels) {
        match (p, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    (tp, fp, fn_, tn)
}

/// Point-wise metrics when flagging every timestep with `score > threshold`.
pub fn f1_at(scores: &[f64], labels: &[u8], threshold: f64, opts: EvalOptions) -> Result<EvalResult> {
    check_inputs(scores, labels)?;
    let mut pred: Vec<bool> = scores.iter().map(|&s| s > threshold).collect();
    if opts.point_adjust {
        point_adjust(&mut pred, labels);
    }
    let (tp, fp, fn_, tn) = confusion(&pred, labels);
    Ok(EvalResult::from_counts(threshold, tp, fp, fn_, tn))
}

/// Candidate thresholds in increasing order: one below every score (flag
/// everything) followed by each distinct score value (the largest flags
/// nothing).
/// A threshold under which every score is positive: `min - 1`, or the next
/// float down when the subtraction rounds back to `min`.
fn below(min: f64) -> f64 {
    if min - 1.0 < min {
        min - 1.0
    } else {
        min.next_down()
    }
}

pub fn candidate_thresholds(scores: &[f64]) -> Vec<f64> {
    let mut v = scores.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    let mut out = Vec::with_capacity(v.len() + 1);
    out.push(below(v[0]));
    out.extend(v);
    out
}

/// Sweeps all candidate thresholds and returns the best F1; ties go to the
/// smallest threshold.
pub fn best_f1(scores: &[f64], labels: &[u8], opts: EvalOptions) -> Result<EvalResult> {
    check_inputs(scores, labels)?;
    let thresholds = candidate_thresholds(scores);
    if opts.point_adjust {
        let mut best: Option<EvalResult> = None;
        for &tau in &thresholds {
            let r = f1_at(scores, labels, tau, opts)?;
            if best.is_none_or(|b| r.f1 > b.f1) {
                best = Some(r);
            }
        }
        return Ok(best.expect("at least one threshold"));
    }

    // Walk thresholds upwards over the score-sorted points: everything strictly
    // above tau is flagged.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    let (mut below_pos, mut below_neg) = (0usize, 0usize);
    let mut cursor = 0;
    let mut best: Option<EvalResult> = None;
    for &tau in &thresholds {
        while cursor < order.len() && scores[order[cursor]] <= tau {
            if labels[order[cursor]] == 1 {
                below_pos += 1;
            } else {
                below_neg += 1;
            }
            cursor += 1;
        }
        let r = EvalResult::from_counts(
            tau,
            positives - below_pos,
            negatives - below_neg,
            below_pos,
            below_neg,
        );
        if best.is_none_or(|b| r.f1 > b.f1) {
            best = Some(r);
        }
    }
    Ok(best.expect("at least one threshold"))
}

/// Scores `series` with `model` and returns the scores with the best-F1
/// result.
pub fn evaluate(
    model: &AutoencoderModel,
    series: &LabeledSeries,
    cfg: &WindowConfig,
    opts: EvalOptions,
    exec: Exec,
) -> Result<(Vec<f64>, EvalResult)> {
    let scores = anomaly_scores(model, series, cfg, exec)?;
    let result = best_f1(&scores, &series.labels, opts)?;
    Ok((scores, result))
}
