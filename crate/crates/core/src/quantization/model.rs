use serde::{Deserialize, Serialize};

use super::fixed_point::{compute_linear_params, FixedPointParams};
use super::kmeans::{quantize_layer_nonlinear, Codebook};
use crate::autoencoder::{build_autoencoder, AutoencoderModel, InputShape};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::nn::LayerSpec;
use crate::pruning::MaskSet;
use crate::rng::derive_seed;
use crate::tensor::Tensor;

/// Output activations are always quantized at this width.
pub const ACTIVATION_BITS: u32 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantScheme {
    Linear,
    Nonlinear,
}

impl QuantScheme {
    pub fn as_str(self) -> &'static str {
        match self {
            QuantScheme::Linear => "linear",
            QuantScheme::Nonlinear => "nonlinear",
        }
    }
}

/// What to quantize and how. For the nonlinear scheme `omega` defaults to
/// `2^bits` clusters and `psi` to `bits`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantSpec {
    pub scheme: QuantScheme,
    pub bits: u32,
    #[serde(default)]
    pub omega: Option<usize>,
    #[serde(default)]
    pub psi: Option<u32>,
    #[serde(default = "default_true")]
    pub quantize_biases: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

impl QuantSpec {
    pub fn linear(bits: u32) -> Self {
        QuantSpec {
            scheme: QuantScheme::Linear,
            bits,
            omega: None,
            psi: None,
            quantize_biases: true,
            seed: 0,
        }
    }

    pub fn nonlinear(bits: u32) -> Self {
        QuantSpec {
            scheme: QuantScheme::Nonlinear,
            ..QuantSpec::linear(bits)
        }
    }

    pub fn omega(&self) -> usize {
        self.omega.unwrap_or(1usize << self.bits.min(31))
    }

    pub fn psi(&self) -> u32 {
        self.psi.unwrap_or(self.bits)
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=16).contains(&self.bits) {
            return Err(Error::Config(format!(
                "quantization width must be in 2..=16 bits, got {}",
                self.bits
            )));
        }
        if self.scheme == QuantScheme::Nonlinear {
            if self.omega() == 0 {
                return Err(Error::Config("omega must be at least 1".into()));
            }
            if !(2..=32).contains(&self.psi()) {
                return Err(Error::Config(format!("psi must be in 2..=32, got {}", self.psi())));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightPayload {
    Linear { params: FixedPointParams, codes: Vec<i32> },
    Codebook(Codebook),
}

impl WeightPayload {
    pub fn len(&self) -> usize {
        match self {
            WeightPayload::Linear { codes, .. } => codes.len(),
            WeightPayload::Codebook(cb) => cb.indices.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Dequantized values.
    pub fn values(&self) -> Vec<f32> {
        match self {
            WeightPayload::Linear { params, codes } => codes.iter().map(|&c| params.value(c)).collect(),
            WeightPayload::Codebook(cb) => cb.values(),
        }
    }

    fn validate(&self, expected: usize) -> Result<()> {
        match self {
            WeightPayload::Linear { params, codes } => check_codes(params, codes, expected),
            WeightPayload::Codebook(cb) => cb.validate(expected),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasPayload {
    Float(Vec<f32>),
    Linear { params: FixedPointParams, codes: Vec<i32> },
}

impl BiasPayload {
    pub fn values(&self) -> Vec<f32> {
        match self {
            BiasPayload::Float(v) => v.clone(),
            BiasPayload::Linear { params, codes } => codes.iter().map(|&c| params.value(c)).collect(),
        }
    }

    fn validate(&self, expected: usize) -> Result<()> {
        match self {
            BiasPayload::Float(v) if v.len() == expected => Ok(()),
            BiasPayload::Float(v) => Err(Error::Format(format!(
                "bias holds {} values, layer has {expected}",
                v.len()
            ))),
            BiasPayload::Linear { params, codes } => check_codes(params, codes, expected),
        }
    }
}

fn check_codes(params: &FixedPointParams, codes: &[i32], expected: usize) -> Result<()> {
    params.validate()?;
    if codes.len() != expected {
        return Err(Error::Format(format!(
            "payload holds {} codes, expected {expected}",
            codes.len()
        )));
    }
    let (lo, hi) = (params.min_code(), params.max_code());
    if let Some(c) = codes.iter().find(|&&c| (c as i64) < lo || (c as i64) > hi) {
        return Err(Error::Format(format!(
            "code {c} does not fit in {} bits",
            params.total_bits
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizedLayer {
    pub weights: WeightPayload,
    pub bias: BiasPayload,
}

/// A model whose weights exist only as quantized payloads.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedModel {
    pub input: InputShape,
    pub latent_dim: usize,
    pub encoder: Vec<LayerSpec>,
    pub layers: Vec<QuantizedLayer>,
    pub activation_quant: Vec<FixedPointParams>,
    /// Mask of the pruned model this was derived from, if any.
    pub masks: Option<MaskSet>,
    pub spec: QuantSpec,
}

impl QuantizedModel {
    /// Architecture with freshly initialised parameters.
    pub fn skeleton(&self) -> Result<AutoencoderModel> {
        build_autoencoder(self.input, &self.encoder, self.latent_dim, 0)
    }
}

/// Per-layer max-abs output activation, turned into 8-bit fixed-point
/// quantizers. Activation quantizers already present on `model` are ignored.
pub fn calibrate_activations(
    model: &AutoencoderModel,
    calibration: &Tensor,
    exec: Exec,
) -> Result<Vec<FixedPointParams>> {
    if calibration.is_empty() || calibration.shape()[0] == 0 {
        return Err(Error::Config("calibration set is empty".into()));
    }
    let f = model.input.features();
    if calibration.shape().len() < 2 || calibration.len() / calibration.shape()[0] != f {
        return Err(Error::dim(
            "calibration batch",
            format!("expected [n, {}, {}], got {:?}", model.input.channels, model.input.length, calibration.shape()),
        ));
    }
    let n = calibration.shape()[0];
    const CHUNK: usize = 64;
    let per_chunk = exec.map_range(n.div_ceil(CHUNK), |ci| {
        let mut maxima = vec![0.0f32; model.num_layers()];
        for s in ci * CHUNK..((ci + 1) * CHUNK).min(n) {
            let mut cur = calibration.data()[s * f..(s + 1) * f].to_vec();
            for (l, layer) in model.layers().enumerate() {
                let mut out = vec![0.0; layer.out_features()];
                layer.forward_sample(&cur, &mut out);
                layer.spec.activation.apply(&mut out);
                let m = out.iter().fold(0.0f32, |a, v| a.max(v.abs()));
                maxima[l] = maxima[l].max(m);
                cur = out;
            }
        }
        maxima
    });
    let mut maxima = vec![0.0f32; model.num_layers()];
    for chunk in per_chunk {
        for (m, c) in maxima.iter_mut().zip(chunk) {
            *m = m.max(c);
        }
    }
    if maxima.iter().any(|m| !m.is_finite()) {
        return Err(Error::NonFinite("non-finite activation during calibration".into()));
    }
    maxima
        .iter()
        .map(|&m| compute_linear_params(&[m], ACTIVATION_BITS))
        .collect()
}

fn quantize_linear_vec(values: &[f32], bits: u32) -> Result<(FixedPointParams, Vec<i32>)> {
    let params = compute_linear_params(values, bits)?;
    Ok((params, values.iter().map(|&v| params.code(v)).collect()))
}

/// Quantizes every layer independently, then calibrates activation
/// quantizers on the dequantized network.
///
/// Pruned weights are exact zeros and stay zero in both schemes.
pub fn quantize_model(
    model: &AutoencoderModel,
    masks: Option<&MaskSet>,
    spec: &QuantSpec,
    calibration: &Tensor,
    exec: Exec,
) -> Result<QuantizedModel> {
    spec.validate()?;
    if let Some(m) = masks {
        m.check_model(model)?;
        for (i, (mask, layer)) in m.masks.iter().zip(model.layers()).enumerate() {
            if mask.keep.iter().zip(layer.weight.data()).any(|(&k, &w)| !k && w != 0.0) {
                return Err(Error::State(format!("layer {i} has non-zero weights outside its mask")));
            }
        }
    }
    let layers: Vec<&crate::nn::Layer> = model.layers().collect();
    let quantized = exec
        .map_range(layers.len(), |l| -> Result<QuantizedLayer> {
            let layer = layers[l];
            let weights = match spec.scheme {
                QuantScheme::Linear => {
                    let (params, codes) = quantize_linear_vec(layer.weight.data(), spec.bits)?;
                    WeightPayload::Linear { params, codes }
                }
                QuantScheme::Nonlinear => WeightPayload::Codebook(quantize_layer_nonlinear(
                    layer.weight.data(),
                    spec.omega(),
                    spec.psi(),
                    derive_seed(spec.seed, l as u64),
                )?),
            };
            let bias = if spec.quantize_biases {
                let (params, codes) = quantize_linear_vec(layer.bias.data(), spec.bits)?;
                BiasPayload::Linear { params, codes }
            } else {
                BiasPayload::Float(layer.bias.data().to_vec())
            };
            Ok(QuantizedLayer { weights, bias })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let mut q = QuantizedModel {
        input: model.input,
        latent_dim: model.latent_dim,
        encoder: model.encoder_specs(),
        layers: quantized,
        activation_quant: Vec::new(),
        masks: masks.cloned(),
        spec: *spec,
    };
    let mut deq = load_weights(&q, model.clone())?;
    deq.activation_quant = None;
    q.activation_quant = calibrate_activations(&deq, calibration, exec)?;
    Ok(q)
}

pub fn quantize_model_linear(
    model: &AutoencoderModel,
    masks: Option<&MaskSet>,
    bits: u32,
    calibration: &Tensor,
    exec: Exec,
) -> Result<QuantizedModel> {
    quantize_model(model, masks, &QuantSpec::linear(bits), calibration, exec)
}

pub fn quantize_model_nonlinear(
    model: &AutoencoderModel,
    masks: Option<&MaskSet>,
    omega: usize,
    psi: u32,
    seed: u64,
    calibration: &Tensor,
    exec: Exec,
) -> Result<QuantizedModel> {
    let spec = QuantSpec {
        omega: Some(omega),
        psi: Some(psi),
        seed,
        ..QuantSpec::nonlinear(psi.min(16))
    };
    quantize_model(model, masks, &spec, calibration, exec)
}

fn load_weights(q: &QuantizedModel, mut model: AutoencoderModel) -> Result<AutoencoderModel> {
    if q.layers.len() != model.num_layers() {
        return Err(Error::Format(format!(
            "{} quantized layers for a {}-layer model",
            q.layers.len(),
            model.num_layers()
        )));
    }
    for (i, (ql, layer)) in q.layers.iter().zip(model.layers_mut()).enumerate() {
        ql.weights
            .validate(layer.weight.len())
            .and_then(|_| ql.bias.validate(layer.bias.len()))
            .map_err(|e| Error::Format(format!("layer {i}: {e}")))?;
        layer.weight.data_mut().copy_from_slice(&ql.weights.values());
        layer.bias.data_mut().copy_from_slice(&ql.bias.values());
    }
    Ok(model)
}

/// Float model carrying exactly the dequantized weights and the activation
/// quantizers used at inference.
pub fn dequantize(q: &QuantizedModel) -> Result<AutoencoderModel> {
    let mut model = load_weights(q, q.skeleton()?)?;
    if q.activation_quant.len() != model.num_layers() {
        return Err(Error::Format(format!(
            "{} activation quantizers for {} layers",
            q.activation_quant.len(),
            model.num_layers()
        )));
    }
    for p in &q.activation_quant {
        p.validate().map_err(|e| Error::Format(e.to_string()))?;
    }
    model.activation_quant = Some(q.activation_quant.clone());
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, LayerSpec};
    use crate::rng::rng_from_seed;
    use rand::Rng as _;

    fn model() -> AutoencoderModel {
        let enc = [
            LayerSpec::conv1d(2, 4, 3, 1, 1, Activation::Relu),
            LayerSpec::dense(32, 6, Activation::Relu),
        ];
        build_autoencoder(InputShape { channels: 2, length: 8 }, &enc, 6, 3).unwrap()
    }

    fn calib(n: usize) -> Tensor {
        let mut rng = rng_from_seed(1);
        Tensor::new(vec![n, 2, 8], (0..n * 16).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn linear_error_bound_and_idempotence() {
        let m = model();
        for bits in [4, 5, 8, 16] {
            let q = quantize_model_linear(&m, None, bits, &calib(8), Exec::Sequential).unwrap();
            let d = dequantize(&q).unwrap();
            for (ql, (orig, deq)) in q.layers.iter().zip(m.layers().zip(d.layers())) {
                let WeightPayload::Linear { params, codes } = &ql.weights else { panic!() };
                for (w, v) in orig.weight.data().iter().zip(deq.weight.data()) {
                    if params.in_range(*w) {
                        assert!(((w - v).abs() as f64) <= params.scale() / 2.0 + 1e-12);
                    }
                }
                let again: Vec<i32> = deq.weight.data().iter().map(|&v| params.code(v)).collect();
                assert_eq!(&again, codes);
            }
        }
    }

    #[test]
    fn nonlinear_respects_omega_and_mask() {
        let mut m = model();
        let masks = MaskSet::from_densities(&m, &[0.5; 4]).unwrap();
        masks.apply(&mut m).unwrap();
        let q = quantize_model(&m, Some(&masks), &QuantSpec::nonlinear(2), &calib(4), Exec::Sequential).unwrap();
        let d = dequantize(&q).unwrap();
        for (mask, layer) in masks.masks.iter().zip(d.layers()) {
            let mut distinct: Vec<u32> = layer.weight.data().iter().map(|v| v.to_bits()).collect();
            distinct.sort_unstable();
            distinct.dedup();
            assert!(distinct.len() <= 4);
            for (&k, &w) in mask.keep.iter().zip(layer.weight.data()) {
                if !k {
                    assert_eq!(w.to_bits(), 0);
                }
            }
        }
    }

    #[test]
    fn calibration_is_deterministic_and_parallel_safe() {
        let m = model();
        let a = calibrate_activations(&m, &calib(100), Exec::Sequential).unwrap();
        let b = calibrate_activations(&m, &calib(100), Exec::Parallel).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|p| p.total_bits == 8));
    }

    #[test]
    fn one_bit_rejected() {
        let m = model();
        assert!(matches!(
            quantize_model_linear(&m, None, 1, &calib(1), Exec::Sequential),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn corrupt_payload_is_format_error() {
        let m = model();
        let mut q = quantize_model_linear(&m, None, 8, &calib(4), Exec::Sequential).unwrap();
        if let WeightPayload::Linear { codes, .. } = &mut q.layers[0].weights {
            codes.pop();
        }
        assert!(matches!(dequantize(&q), Err(Error::Format(_))));
    }
}
