//! MAC and storage accounting for float, pruned and quantized models.
//!
//! Two capacity conventions are reported. *Dense-math* capacity counts only
//! the bits of retained weights (plus codebook tables). *Deployable* capacity
//! also charges one bit per weight for the pruning bitmap. Biases are not
//! counted in either.

use serde::{Deserialize, Serialize};

use crate::autoencoder::AutoencoderModel;
use crate::error::{Error, Result};
use crate::nn::{LayerKind, LayerSpec};
use crate::pruning::MaskSet;
use crate::quantization::{QuantizedModel, WeightPayload};

/// Bits of the float reference representation.
pub const FLOAT_BITS: u64 = 32;

/// Work and storage of one dense float layer.
///
/// `macs = p * c * d * h * w`; unused dims are 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub p: u64,
    pub c: u64,
    pub d: u64,
    pub h: u64,
    pub w: u64,
    pub macs: u64,
    pub weights: u64,
    pub capacity_bits: u64,
}

impl LayerCost {
    /// How many MACs each weight takes part in.
    pub fn uses_per_weight(&self) -> u64 {
        self.macs / self.weights
    }
}

pub fn layer_cost(spec: &LayerSpec, input: (usize, usize)) -> Result<LayerCost> {
    let (_, t_out) = spec.output_shape(input)?;
    let (c_in, c_out, k) = (
        spec.in_channels as u64,
        spec.out_channels as u64,
        spec.kernel_size as u64,
    );
    let (p, c, w) = match spec.kind {
        LayerKind::Dense => (c_out, 1, c_in),
        LayerKind::Conv1d => (c_out * t_out as u64, c_in, k),
        // each input position scatters a C_out x K patch
        LayerKind::Conv1dTransposed => (c_in * input.1 as u64, c_out, k),
    };
    let weights = spec.weight_count() as u64;
    Ok(LayerCost {
        p,
        c,
        d: 1,
        h: 1,
        w,
        macs: p * c * w,
        weights,
        capacity_bits: weights * FLOAT_BITS,
    })
}

/// How a layer's weights are stored.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightRepr {
    Float32,
    Linear { bits: u32 },
    Codebook { entries: u64, index_bits: u32, psi: u32 },
}

impl WeightRepr {
    /// Relative cost of one MAC against float32: `(b/8)/9` for b-bit
    /// fixed point.
    pub fn mac_factor(&self) -> f64 {
        let bits = match self {
            WeightRepr::Float32 => return 1.0,
            WeightRepr::Linear { bits } => *bits,
            WeightRepr::Codebook { psi, .. } => *psi,
        };
        (bits as f64 / 8.0) / 9.0
    }

    /// Dense-math bits for `retained` stored weights.
    pub fn capacity_bits(&self, retained: u64) -> u64 {
        match *self {
            WeightRepr::Float32 => retained * FLOAT_BITS,
            WeightRepr::Linear { bits } => retained * bits as u64,
            WeightRepr::Codebook {
                entries,
                index_bits,
                psi,
            } => retained * index_bits as u64 + entries * psi as u64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub cost: LayerCost,
    pub retained: u64,
    pub repr: WeightRepr,
    pub capacity_bits: u64,
    pub macs: u64,
    pub mac_cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    pub baseline_capacity_bits: u64,
    pub baseline_macs: u64,
    pub capacity_bits: u64,
    pub deployable_capacity_bits: u64,
    /// MACs on retained weights.
    pub macs: u64,
    /// Retained MACs weighted by the per-representation hardware factor.
    pub mac_cost: f64,
    pub capacity_ratio: f64,
    pub mac_ratio: f64,
    pub reduction_percent: f64,
    pub deployable_reduction_percent: f64,
    pub layers: Vec<LayerReport>,
}

fn reduction(base: u64, comp: u64) -> f64 {
    if comp > base {
        return -((100 * (comp - base)) as f64 / base as f64);
    }
    (100 * (base - comp)) as f64 / base as f64
}

/// Cost of `model` as stored under the given mask and quantization, against
/// the dense float32 model of the same architecture.
pub fn compression_report(
    model: &AutoencoderModel,
    masks: Option<&MaskSet>,
    quant: Option<&QuantizedModel>,
) -> Result<CompressionReport> {
    if let Some(m) = masks {
        m.check_model(model)?;
    }
    if let Some(q) = quant {
        if q.layers.len() != model.num_layers() {
            return Err(Error::dim(
                "compression report",
                format!("{} quantized layers for {} model layers", q.layers.len(), model.num_layers()),
            ));
        }
    }
    let mut layers = Vec::with_capacity(model.num_layers());
    for (i, layer) in model.layers().enumerate() {
        let cost = layer_cost(&layer.spec, layer.in_shape)?;
        let retained = masks.map_or(cost.weights, |m| m.masks[i].retained() as u64);
        let repr = match quant.map(|q| &q.layers[i].weights) {
            None => WeightRepr::Float32,
            Some(WeightPayload::Linear { params, .. }) => WeightRepr::Linear {
                bits: params.total_bits,
            },
            Some(WeightPayload::Codebook(cb)) => WeightRepr::Codebook {
                entries: cb.entries() as u64,
                index_bits: cb.index_bits(),
                psi: cb.params.total_bits,
            },
        };
        let macs = retained * cost.uses_per_weight();
        layers.push(LayerReport {
            cost,
            retained,
            repr,
            capacity_bits: repr.capacity_bits(retained),
            macs,
            mac_cost: macs as f64 * repr.mac_factor(),
        });
    }
    let baseline_capacity_bits: u64 = layers.iter().map(|l| l.cost.capacity_bits).sum();
    let baseline_macs: u64 = layers.iter().map(|l| l.cost.macs).sum();
    let capacity_bits: u64 = layers.iter().map(|l| l.capacity_bits).sum();
    let bitmap: u64 = if masks.is_some() {
        layers.iter().map(|l| l.cost.weights).sum()
    } else {
        0
    };
    let deployable_capacity_bits = capacity_bits + bitmap;
    let macs = layers.iter().map(|l| l.macs).sum();
    let mac_cost: f64 = layers.iter().map(|l| l.mac_cost).sum();
    Ok(CompressionReport {
        baseline_capacity_bits,
        baseline_macs,
        capacity_bits,
        deployable_capacity_bits,
        macs,
        mac_cost,
        capacity_ratio: capacity_bits as f64 / baseline_capacity_bits as f64,
        mac_ratio: mac_cost / baseline_macs as f64,
        reduction_percent: reduction(baseline_capacity_bits, capacity_bits),
        deployable_reduction_percent: reduction(baseline_capacity_bits, deployable_capacity_bits),
        layers,
    })
}
