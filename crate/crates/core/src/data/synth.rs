//! Deterministic synthetic benchmark: correlated sinusoids with noise, split
//! into train/val/test, with labeled anomaly segments injected into val and
//! test.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{LabeledSeries, Split};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::tensor::Tensor;

/// Counts, magnitudes and lengths of injected anomaly segments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnomalySpec {
    pub spikes: usize,
    pub level_shifts: usize,
    pub noise_bursts: usize,
    pub spike_magnitude: f64,
    pub shift_magnitude: f64,
    pub burst_std: f64,
    pub spike_length: [usize; 2],
    pub shift_length: [usize; 2],
    pub burst_length: [usize; 2],
    /// At most this many channels are perturbed by one segment.
    pub max_channels: usize,
}

impl Default for AnomalySpec {
    fn default() -> Self {
        AnomalySpec {
            spikes: 4,
            level_shifts: 4,
            noise_bursts: 4,
            spike_magnitude: 1.5,
            shift_magnitude: 1.0,
            burst_std: 0.6,
            spike_length: [1, 3],
            shift_length: [15, 35],
            burst_length: [10, 30],
            max_channels: 3,
        }
    }
}

impl AnomalySpec {
    pub fn none() -> Self {
        AnomalySpec {
            spikes: 0,
            level_shifts: 0,
            noise_bursts: 0,
            ..Default::default()
        }
    }

    fn count(&self) -> usize {
        self.spikes + self.level_shifts + self.noise_bursts
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub channels: usize,
    /// Total length; split into train/val/test by the fractions below.
    pub length: usize,
    pub seed: u64,
    pub train_fraction: f64,
    pub val_fraction: f64,
    /// Shared sinusoidal factors mixed into every channel.
    pub latent_factors: usize,
    pub period_min: f64,
    pub period_max: f64,
    pub noise_std: f64,
    pub test_anomalies: AnomalySpec,
    pub val_anomalies: AnomalySpec,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            channels: 8,
            length: 6000,
            seed: 7,
            train_fraction: 0.5,
            val_fraction: 0.2,
            latent_factors: 3,
            period_min: 20.0,
            period_max: 150.0,
            noise_std: 0.05,
            test_anomalies: AnomalySpec::default(),
            val_anomalies: AnomalySpec {
                spikes: 3,
                level_shifts: 3,
                noise_bursts: 2,
                ..AnomalySpec::default()
            },
        }
    }
}

/// Parameters of the clean signal, drawn from the config seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalParams {
    pub factor_periods: Vec<f64>,
    pub factor_phases: Vec<f64>,
    /// `channels x latent_factors` mixing matrix.
    pub mixing: Vec<Vec<f64>>,
    pub channel_periods: Vec<f64>,
    pub channel_amplitudes: Vec<f64>,
    pub channel_phases: Vec<f64>,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.length == 0 {
            return Err(Error::Config("synthetic channels and length must be positive".into()));
        }
        let f = self.train_fraction + self.val_fraction;
        if !(self.train_fraction > 0.0 && self.val_fraction > 0.0 && f < 1.0) {
            return Err(Error::Config(
                "train_fraction and val_fraction must be positive and sum below 1".into(),
            ));
        }
        if !(self.period_min > 0.0 && self.period_min <= self.period_max) {
            return Err(Error::Config("invalid period range".into()));
        }
        if self.noise_std < 0.0 {
            return Err(Error::Config("noise_std must be non-negative".into()));
        }
        for a in [&self.test_anomalies, &self.val_anomalies] {
            for [lo, hi] in [a.spike_length, a.shift_length, a.burst_length] {
                if lo == 0 || lo > hi {
                    return Err(Error::Config(format!("invalid anomaly length range [{lo}, {hi}]")));
                }
            }
            if a.count() > 0 && (a.max_channels == 0 || a.max_channels > self.channels) {
                return Err(Error::Config("anomaly max_channels must be in 1..=channels".into()));
            }
        }
        Ok(())
    }

    pub fn split_lengths(&self) -> (usize, usize, usize) {
        let train = (self.length as f64 * self.train_fraction).round() as usize;
        let val = (self.length as f64 * self.val_fraction).round() as usize;
        (train, val, self.length - train - val)
    }

    pub fn signal_params(&self) -> SignalParams {
        let mut rng = rng_from_seed(derive_seed(self.seed, 0));
        let tau = std::f64::consts::TAU;
        let period = |rng: &mut Rng| rng.random_range(self.period_min..=self.period_max);
        let k = self.latent_factors;
        let factor_periods = (0..k).map(|_| period(&mut rng)).collect();
        let factor_phases = (0..k).map(|_| rng.random_range(0.0..tau)).collect();
        let mixing = (0..self.channels)
            .map(|_| (0..k).map(|_| rng.random_range(-1.0..=1.0)).collect())
            .collect();
        let channel_periods = (0..self.channels).map(|_| period(&mut rng)).collect();
        let channel_amplitudes = (0..self.channels).map(|_| rng.random_range(0.1..=0.4)).collect();
        let channel_phases = (0..self.channels).map(|_| rng.random_range(0.0..tau)).collect();
        SignalParams {
            factor_periods,
            factor_phases,
            mixing,
            channel_periods,
            channel_amplitudes,
            channel_phases,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSplits {
    pub train: LabeledSeries,
    pub val: LabeledSeries,
    pub test: LabeledSeries,
}

#[derive(Clone, Copy)]
enum Kind {
    Spike,
    Shift,
    Burst,
}

/// Places `spec`'s segments without overlap (at least one clean step between
/// segments) and perturbs `values` (`[len, channels]`, row-major) in place.
fn inject(values: &mut [f64], channels: usize, spec: &AnomalySpec, rng: &mut Rng) -> Result<Vec<u8>> {
    let len = values.len() / channels;
    let mut labels = vec![0u8; len];
    let mut segments: Vec<(Kind, usize)> = Vec::new();
    for (kind, n, [lo, hi]) in [
        (Kind::Spike, spec.spikes, spec.spike_length),
        (Kind::Shift, spec.level_shifts, spec.shift_length),
        (Kind::Burst, spec.noise_bursts, spec.burst_length),
    ] {
        for _ in 0..n {
            segments.push((kind, rng.random_range(lo..=hi)));
        }
    }
    let needed: usize = segments.iter().map(|s| s.1 + 1).sum();
    if needed > len {
        return Err(Error::Config(format!(
            "anomaly segments need {needed} timesteps but the split has {len}"
        )));
    }
    let burst = Normal::new(0.0, spec.burst_std.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let mut taken = vec![false; len];
    for (kind, seg_len) in segments {
        let mut placed = None;
        for _ in 0..10_000 {
            let start = rng.random_range(0..=len - seg_len);
            let lo = start.saturating_sub(1);
            let hi = (start + seg_len + 1).min(len);
            if !taken[lo..hi].iter().any(|&t| t) {
                placed = Some(start);
                break;
            }
        }
        let start = placed.ok_or_else(|| {
            Error::Config(format!("could not place an anomaly segment of length {seg_len}"))
        })?;
        let n_ch = rng.random_range(1..=spec.max_channels);
        let mut chans: Vec<usize> = (0..channels).collect();
        for i in 0..n_ch {
            let j = rng.random_range(i..channels);
            chans.swap(i, j);
        }
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        for t in start..start + seg_len {
            taken[t] = true;
            labels[t] = 1;
            for &ch in &chans[..n_ch] {
                let delta = match kind {
                    Kind::Spike => sign * spec.spike_magnitude,
                    Kind::Shift => sign * spec.shift_magnitude,
                    Kind::Burst => burst.sample(rng),
                };
                values[t * channels + ch] += delta;
            }
        }
    }
    Ok(labels)
}

/// Generates the train/val/test splits. Train is anomaly free; val and test
/// get independently seeded anomaly injections.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SyntheticSplits> {
    cfg.validate()?;
    let (n_train, n_val, n_test) = cfg.split_lengths();
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::Config("every split must be non-empty".into()));
    }
    let p = cfg.signal_params();
    let c = cfg.channels;
    let tau = std::f64::consts::TAU;
    let mut noise_rng = rng_from_seed(derive_seed(cfg.seed, 1));
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let mut values = Vec::with_capacity(cfg.length * c);
    for t in 0..cfg.length {
        let tf = t as f64;
        let factors: Vec<f64> = p
            .factor_periods
            .iter()
            .zip(&p.factor_phases)
            .map(|(per, ph)| (tau * tf / per + ph).sin())
            .collect();
        for ch in 0..c {
            let mixed: f64 = p.mixing[ch].iter().zip(&factors).map(|(m, f)| m * f).sum();
            let own = p.channel_amplitudes[ch] * (tau * tf / p.channel_periods[ch] + p.channel_phases[ch]).sin();
            values.push(mixed + own + noise.sample(&mut noise_rng));
        }
    }

    let names: Vec<String> = (0..c).map(|i| format!("ch{i}")).collect();
    let mut val_values = values[n_train * c..(n_train + n_val) * c].to_vec();
    let mut test_values = values[(n_train + n_val) * c..].to_vec();
    let val_labels = inject(
        &mut val_values,
        c,
        &cfg.val_anomalies,
        &mut rng_from_seed(derive_seed(cfg.seed, 2)),
    )?;
    let test_labels = inject(
        &mut test_values,
        c,
        &cfg.test_anomalies,
        &mut rng_from_seed(derive_seed(cfg.seed, 3)),
    )?;

    let build = |v: &[f64], labels: Vec<u8>, split| {
        let t = labels.len();
        LabeledSeries::new(
            Tensor::new(vec![t, c], v.iter().map(|&x| x as f32).collect())?,
            labels,
            names.clone(),
            split,
        )
    };
    Ok(SyntheticSplits {
        train: build(&values[..n_train * c], vec![0; n_train], Split::Train)?,
        val: build(&val_values, val_labels, Split::Val)?,
        test: build(&test_values, test_labels, Split::Test)?,
    })
}
