//! Labeled multivariate series, normalization and windowing.

mod csv_io;
mod synth;

pub use csv_io::{load_csv, write_csv};
pub use synth::{generate_synthetic, AnomalySpec, SignalParams, SynthConfig, SyntheticSplits};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// `T x C` values with a 0/1 label per timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSeries {
    pub values: Tensor,
    pub labels: Vec<u8>,
    pub channel_names: Vec<String>,
    pub split: Split,
}

impl LabeledSeries {
    pub fn new(values: Tensor, labels: Vec<u8>, channel_names: Vec<String>, split: Split) -> Result<Self> {
        let [t, c] = values.shape() else {
            return Err(Error::dim("series", format!("values must be [T, C], got {:?}", values.shape())));
        };
        if labels.len() != *t || channel_names.len() != *c {
            return Err(Error::dim(
                "series",
                format!(
                    "{t} timesteps and {c} channels but {} labels and {} names",
                    labels.len(),
                    channel_names.len()
                ),
            ));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::Data("labels must be 0 or 1".into()));
        }
        if !values.all_finite() {
            return Err(Error::Data("series contains non-finite values".into()));
        }
        Ok(LabeledSeries {
            values,
            labels,
            channel_names,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn anomaly_rate(&self) -> f64 {
        self.labels.iter().filter(|&&l| l == 1).count() as f64 / self.len() as f64
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    #[default]
    Minmax,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowConfig {
    pub length: usize,
    pub stride: usize,
    pub normalization: Normalization,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            length: 12,
            stride: 1,
            normalization: Normalization::Minmax,
        }
    }
}

/// Per-channel min/max fitted on the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMaxStats {
    pub min: Vec<f32>,
    pub max: Vec<f32>,
}

impl MinMaxStats {
    pub fn fit(train: &LabeledSeries) -> Self {
        let c = train.channels();
        let mut min = vec![f32::INFINITY; c];
        let mut max = vec![f32::NEG_INFINITY; c];
        for row in train.values.data().chunks(c) {
            for (j, &v) in row.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        MinMaxStats { min, max }
    }

    /// `(x - min) / (max - min)` per channel, without clipping. Constant
    /// channels map to 0.
    pub fn apply(&self, series: &LabeledSeries) -> Result<LabeledSeries> {
        let c = series.channels();
        if c != self.min.len() {
            return Err(Error::dim(
                "normalize",
                format!("stats for {} channels, series has {c}", self.min.len()),
            ));
        }
        let mut out = series.clone();
        for row in out.values.data_mut().chunks_mut(c) {
            for (j, v) in row.iter_mut().enumerate() {
                let range = self.max[j] - self.min[j];
                *v = if range > 0.0 { (*v - self.min[j]) / range } else { 0.0 };
            }
        }
        Ok(out)
    }

    /// Inverse of [`MinMaxStats::apply`] for non-constant channels.
    pub fn invert(&self, series: &LabeledSeries) -> LabeledSeries {
        let c = series.channels();
        let mut out = series.clone();
        for row in out.values.data_mut().chunks_mut(c) {
            for (j, v) in row.iter_mut().enumerate() {
                let range = self.max[j] - self.min[j];
                *v = if range > 0.0 { *v * range + self.min[j] } else { self.min[j] };
            }
        }
        out
    }
}

/// Normalizes `series` with statistics from `train`.
pub fn normalize(series: &LabeledSeries, train: &LabeledSeries) -> Result<LabeledSeries> {
    MinMaxStats::fit(train).apply(series)
}

/// Windows in `[n, C, W]` layout with the first timestep of each window.
#[derive(Clone, Debug, PartialEq)]
pub struct Windows {
    pub data: Tensor,
    pub starts: Vec<usize>,
}

/// Cuts `floor((T - W) / stride) + 1` windows.
pub fn window(series: &LabeledSeries, cfg: &WindowConfig) -> Result<Windows> {
    let (t, c, w) = (series.len(), series.channels(), cfg.length);
    if w == 0 || cfg.stride == 0 {
        return Err(Error::Config("window length and stride must be positive".into()));
    }
    if w > t {
        return Err(Error::Config(format!("window length {w} exceeds series length {t}")));
    }
    let n = (t - w) / cfg.stride + 1;
    let starts: Vec<usize> = (0..n).map(|k| k * cfg.stride).collect();
    let src = series.values.data();
    let mut data = Vec::with_capacity(n * c * w);
    for &s in &starts {
        for ch in 0..c {
            data.extend((s..s + w).map(|i| src[i * c + ch]));
        }
    }
    Ok(Windows {
        data: Tensor::new(vec![n, c, w], data)?,
        starts,
    })
}
