//! Magnitude pruning with a population-based lottery-ticket search.
//!
//! Naming: the *density* of a layer is the fraction of its weights that are
//! retained; *sparsity* is `1 - density`. Only weight tensors are pruned,
//! never biases.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autoencoder::{AutoencoderModel, TrainConfig, TrainSession};
use crate::data::{LabeledSeries, WindowConfig};
use crate::detection::{evaluate, EvalOptions};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::tensor::Tensor;

/// Binary keep-mask for one weight tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub shape: Vec<usize>,
    pub keep: Vec<bool>,
}

impl Mask {
    pub fn ones(shape: &[usize]) -> Self {
        Mask {
            shape: shape.to_vec(),
            keep: vec![true; shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    pub fn retained(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    /// Achieved retained fraction.
    pub fn density(&self) -> f64 {
        self.retained() as f64 / self.len() as f64
    }

    /// The mask as a 0/1 tensor.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.keep.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect();
        Tensor::new(self.shape.clone(), data).expect("mask shape matches its length")
    }
}

/// One mask per layer (encoder then decoder) and the densities they were
/// generated for.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSet {
    pub masks: Vec<Mask>,
    /// Target density per layer (the sampled level).
    pub levels: Vec<f64>,
}

impl MaskSet {
    pub fn ones(model: &AutoencoderModel) -> Self {
        MaskSet {
            masks: model.layers().map(|l| Mask::ones(l.weight.shape())).collect(),
            levels: vec![1.0; model.num_layers()],
        }
    }

    /// Magnitude masks for the given per-layer densities.
    pub fn from_densities(model: &AutoencoderModel, densities: &[f64]) -> Result<Self> {
        if densities.len() != model.num_layers() {
            return Err(Error::Config(format!(
                "{} densities for {} layers",
                densities.len(),
                model.num_layers()
            )));
        }
        let masks = model
            .layers()
            .zip(densities)
            .map(|(l, &d)| select_mask(&l.weight, d))
            .collect::<Result<Vec<_>>>()?;
        Ok(MaskSet {
            masks,
            levels: densities.to_vec(),
        })
    }

    pub fn check_model(&self, model: &AutoencoderModel) -> Result<()> {
        if self.masks.len() != model.num_layers() {
            return Err(Error::dim(
                "mask set",
                format!("{} masks for {} layers", self.masks.len(), model.num_layers()),
            ));
        }
        for (i, (m, l)) in self.masks.iter().zip(model.layers()).enumerate() {
            if m.shape != l.weight.shape() {
                return Err(Error::dim(
                    format!("mask {i}"),
                    format!("mask {:?} vs weight {:?}", m.shape, l.weight.shape()),
                ));
            }
        }
        Ok(())
    }

    /// `theta_l <- theta_l * M_l` for every layer. Pruned entries are set to
    /// `+0.0` so they stay bit-exact zeros.
    pub fn apply(&self, model: &mut AutoencoderModel) -> Result<()> {
        self.check_model(model)?;
        for (m, l) in self.masks.iter().zip(model.layers_mut()) {
            for (w, &k) in l.weight.data_mut().iter_mut().zip(&m.keep) {
                if !k {
                    *w = 0.0;
                }
            }
        }
        Ok(())
    }

    pub fn achieved_densities(&self) -> Vec<f64> {
        self.masks.iter().map(Mask::density).collect()
    }

    /// Size-weighted global density: `sum_l |theta_l| * density_l / |Theta|`.
    pub fn weighted_density(&self) -> f64 {
        weighted_density(
            &self
                .masks
                .iter()
                .map(|m| (m.len(), m.density()))
                .collect::<Vec<_>>(),
        )
    }
}

/// Applies `masks` to `model`. Idempotent.
pub fn apply_mask(model: &mut AutoencoderModel, masks: &MaskSet) -> Result<()> {
    masks.apply(model)
}

/// `sum_l size_l * density_l / sum_l size_l` over `(size, density)` pairs.
pub fn weighted_density(layers: &[(usize, f64)]) -> f64 {
    let total: usize = layers.iter().map(|l| l.0).sum();
    if total == 0 {
        return 0.0;
    }
    layers.iter().map(|&(n, d)| n as f64 * d).sum::<f64>() / total as f64
}

/// Draws one density per layer from `Normal(mid, (max - min) / 6)` clamped to
/// `[min, max]`, where `mid` is the centre of the interval.
pub fn sample_densities(min: &[f64], max: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
    if min.len() != max.len() {
        return Err(Error::Config("density bounds have different lengths".into()));
    }
    min.iter()
        .zip(max)
        .map(|(&lo, &hi)| {
            if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
                return Err(Error::Config(format!("invalid density bounds [{lo}, {hi}]")));
            }
            if lo == hi {
                return Ok(lo);
            }
            let mean = lo + (hi - lo) / 2.0;
            let std = (hi - lo) / 6.0;
            let normal = Normal::new(mean, std).map_err(|e| Error::Config(e.to_string()))?;
            Ok(normal.sample(rng).clamp(lo, hi))
        })
        .collect()
}

fn retained_count(n: usize, density: f64) -> usize {
    ((density * n as f64).round() as usize).min(n)
}

/// Indices sorted by decreasing magnitude, lower index first among ties.
fn magnitude_order(weights: &[f32]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        weights[b]
            .abs()
            .total_cmp(&weights[a].abs())
            .then(a.cmp(&b))
    });
    order
}

/// Magnitude cutoff for keeping a `density` fraction of `weights`.
///
/// Keeping `k = round(density * n)` weights, the threshold is the midpoint
/// between the smallest kept and the largest pruned magnitude. With
/// `density == 1` it is `-1` (below every magnitude) and with `density == 0`
/// it is the largest magnitude.
pub fn compute_threshold(weights: &Tensor, density: f64) -> f32 {
    let w = weights.data();
    let k = retained_count(w.len(), density.clamp(0.0, 1.0));
    if k == w.len() {
        return -1.0;
    }
    let order = magnitude_order(w);
    let pruned_max = w[order[k]].abs();
    if k == 0 {
        return pruned_max;
    }
    let kept_min = w[order[k - 1]].abs();
    ((kept_min as f64 + pruned_max as f64) / 2.0) as f32
}

/// `M_j = 1` iff `|theta_j| > threshold`; a weight equal to the threshold is
/// pruned.
pub fn generate_mask(weights: &Tensor, threshold: f32) -> Mask {
    Mask {
        shape: weights.shape().to_vec(),
        keep: weights.data().iter().map(|w| w.abs() > threshold).collect(),
    }
}

/// Keeps exactly `round(density * n)` weights of largest magnitude, breaking
/// ties at the cutoff by lower flat index. Equals
/// `generate_mask(w, compute_threshold(w, density))` whenever no tie straddles
/// the cutoff.
pub fn select_mask(weights: &Tensor, density: f64) -> Result<Mask> {
    if !(0.0..=1.0).contains(&density) {
        return Err(Error::Config(format!("density {density} outside [0, 1]")));
    }
    let w = weights.data();
    let k = retained_count(w.len(), density);
    let mut keep = vec![false; w.len()];
    for &i in magnitude_order(w).iter().take(k) {
        keep[i] = true;
    }
    Ok(Mask {
        shape: weights.shape().to_vec(),
        keep,
    })
}

/// Which labeled split scores the candidates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionSplit {
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PruneConfig {
    pub population_size: usize,
    pub density_min: Vec<f64>,
    pub density_max: Vec<f64>,
    /// Epochs of masked retraining per candidate.
    pub short_epochs: usize,
    /// Epochs of masked retraining for the selected candidate.
    pub final_epochs: usize,
    /// Batch size, optimizer and batches per epoch; `epochs` is ignored.
    pub train: TrainConfig,
    pub eval: EvalOptions,
    pub seed: u64,
}

impl PruneConfig {
    pub fn validate(&self, num_layers: usize) -> Result<()> {
        if self.population_size == 0 {
            return Err(Error::Config("population size must be at least 1".into()));
        }
        if self.density_min.len() != num_layers || self.density_max.len() != num_layers {
            return Err(Error::Config(format!(
                "density bounds need one entry per layer ({num_layers}), got {} and {}",
                self.density_min.len(),
                self.density_max.len()
            )));
        }
        for (l, (lo, hi)) in self.density_min.iter().zip(&self.density_max).enumerate() {
            if !(0.0..=1.0).contains(lo) || !(0.0..=1.0).contains(hi) || lo > hi {
                return Err(Error::Config(format!("layer {l}: invalid density bounds [{lo}, {hi}]")));
            }
        }
        self.train.validate()
    }

    /// Seed of the optimizer/shuffle stream used by candidate `index`.
    pub fn candidate_train_seed(&self, index: usize) -> u64 {
        derive_seed(derive_seed(self.seed, index as u64), 1)
    }

    fn candidate_sampling_seed(&self, index: usize) -> u64 {
        derive_seed(derive_seed(self.seed, index as u64), 0)
    }
}

/// A model paired with the mask that zeroes its pruned weights.
#[derive(Clone, Debug, PartialEq)]
pub struct PrunedModel {
    pub model: AutoencoderModel,
    pub masks: MaskSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub index: usize,
    pub train_seed: u64,
    pub sampled_density: Vec<f64>,
    pub achieved_density: Vec<f64>,
    pub weighted_density: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub threshold: f64,
    pub loss_curve: Vec<f64>,
    pub diverged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub population_size: usize,
    pub eval_split: String,
    pub candidates: Vec<CandidateReport>,
    pub selected: usize,
    pub final_loss_curve: Vec<f64>,
    pub weighted_density: f64,
    pub weighted_sparsity: f64,
}

struct Candidate {
    model: AutoencoderModel,
    session: TrainSession,
    masks: MaskSet,
    report: CandidateReport,
}

fn run_candidate(
    index: usize,
    pretrained: &AutoencoderModel,
    train_windows: &Tensor,
    eval_set: &LabeledSeries,
    window: &WindowConfig,
    cfg: &PruneConfig,
) -> Result<Candidate> {
    let mut rng = rng_from_seed(cfg.candidate_sampling_seed(index));
    let sampled = sample_densities(&cfg.density_min, &cfg.density_max, &mut rng)?;
    let masks = MaskSet::from_densities(pretrained, &sampled)?;
    let mut model = pretrained.clone();
    masks.apply(&mut model)?;
    let train_cfg = TrainConfig {
        seed: cfg.candidate_train_seed(index),
        ..cfg.train.clone()
    };
    let mut session = TrainSession::new(&model, &train_cfg)?;
    let mut report = CandidateReport {
        index,
        train_seed: train_cfg.seed,
        achieved_density: masks.achieved_densities(),
        weighted_density: masks.weighted_density(),
        sampled_density: sampled,
        f1: 0.0,
        precision: 0.0,
        recall: 0.0,
        threshold: 0.0,
        loss_curve: Vec::new(),
        diverged: false,
    };
    match session.run(&mut model, train_windows, cfg.short_epochs, Some(&masks)) {
        Ok(curve) => {
            report.loss_curve = curve;
            // single-threaded inside a candidate; the population is the
            // parallel axis
            let (_, res) = evaluate(&model, eval_set, window, cfg.eval, Exec::Sequential)?;
            report.f1 = res.f1;
            report.precision = res.precision;
            report.recall = res.recall;
            report.threshold = res.threshold;
        }
        Err(Error::NonFinite(_)) => report.diverged = true,
        Err(e) => return Err(e),
    }
    Ok(Candidate {
        model,
        session,
        masks,
        report,
    })
}

/// Index of the largest score, the first one among ties.
pub fn argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Population-based lottery-ticket search.
///
/// Every candidate samples per-layer densities, builds magnitude masks from
/// the pretrained weights, retrains for `short_epochs` with the mask
/// re-applied after every batch, and is scored by best-threshold F1 on
/// `eval_set`. The best candidate keeps training (same optimizer state and
/// mask) for `final_epochs`. Candidates use independent seed streams, so the
/// result does not depend on `exec`.
pub fn lottery_search(
    pretrained: &AutoencoderModel,
    train_windows: &Tensor,
    eval_set: &LabeledSeries,
    window: &WindowConfig,
    cfg: &PruneConfig,
    exec: Exec,
) -> Result<(PrunedModel, SearchReport)> {
    cfg.validate(pretrained.num_layers())?;
    let results = exec.map_range(cfg.population_size, |i| {
        run_candidate(i, pretrained, train_windows, eval_set, window, cfg)
    });
    let mut candidates = results.into_iter().collect::<Result<Vec<_>>>()?;
    let scores: Vec<f64> = candidates.iter().map(|c| c.report.f1).collect();
    let selected = argmax(&scores).expect("population is non-empty");
    let reports: Vec<CandidateReport> = candidates.iter().map(|c| c.report.clone()).collect();

    let Candidate {
        mut model,
        mut session,
        masks,
        ..
    } = candidates.swap_remove(selected);
    let final_loss_curve = session.run(&mut model, train_windows, cfg.final_epochs, Some(&masks))?;
    let weighted = masks.weighted_density();
    Ok((
        PrunedModel { model, masks },
        SearchReport {
            population_size: cfg.population_size,
            eval_split: eval_set.split.as_str().to_string(),
            candidates: reports,
            selected,
            final_loss_curve,
            weighted_density: weighted,
            weighted_sparsity: 1.0 - weighted,
        },
    ))
}
