//! Versioned binary container for baseline, pruned and quantized models.
//!
//! Layout: `b"AECZ"`, u16 LE format version, u32 LE header length, a compact
//! JSON header, then the binary sections listed in the header in order.
//! Float arrays are little-endian f32. Masks are packed one bit per weight;
//! integer codes are packed at their declared width. Every packed row (the
//! leading dimension of the weight tensor) is padded to a whole byte.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autoencoder::{build_autoencoder, AutoencoderModel, InputShape};
use crate::bitpack;
use crate::error::{Error, Result};
use crate::nn::LayerSpec;
use crate::pruning::{Mask, MaskSet};
use crate::quantization::{
    dequantize, BiasPayload, Codebook, FixedPointParams, QuantSpec, QuantizedLayer, QuantizedModel, WeightPayload,
};

pub const MAGIC: &[u8; 4] = b"AECZ";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Baseline,
    Pruned,
    Quantized,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Baseline => "baseline",
            Stage::Pruned => "pruned",
            Stage::Quantized => "quantized",
        }
    }
}

/// A model plus everything needed to evaluate and cost it.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    pub stage: Stage,
    /// Float (or dequantized) weights used for evaluation.
    pub model: AutoencoderModel,
    pub masks: Option<MaskSet>,
    pub quant: Option<QuantizedModel>,
    /// Hash of the file this one was derived from.
    pub source_hash: Option<String>,
    pub metrics: Option<serde_json::Value>,
}

impl ModelFile {
    pub fn baseline(model: AutoencoderModel) -> Self {
        ModelFile {
            stage: Stage::Baseline,
            model,
            masks: None,
            quant: None,
            source_hash: None,
            metrics: None,
        }
    }

    pub fn pruned(model: AutoencoderModel, masks: MaskSet) -> Result<Self> {
        masks.check_model(&model)?;
        Ok(ModelFile {
            stage: Stage::Pruned,
            masks: Some(masks),
            ..ModelFile::baseline(model)
        })
    }

    pub fn quantized(q: QuantizedModel) -> Result<Self> {
        Ok(ModelFile {
            stage: Stage::Quantized,
            model: dequantize(&q)?,
            masks: q.masks.clone(),
            quant: Some(q),
            source_hash: None,
            metrics: None,
        })
    }

    pub fn with_source(mut self, hash: impl Into<String>) -> Self {
        self.source_hash = Some(hash.into());
        self
    }

    pub fn with_metrics(mut self, metrics: serde_json::Value) -> Self {
        self.metrics = Some(metrics);
        self
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Hex SHA-256 of `bytes`.
pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum WeightDesc {
    Float,
    Linear { params: FixedPointParams },
    Codebook { params: FixedPointParams, entries: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum BiasDesc {
    Float,
    Linear { params: FixedPointParams },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDesc {
    weight_shape: Vec<usize>,
    bias_len: usize,
    weights: WeightDesc,
    bias: BiasDesc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Encoding {
    F32le,
    Bits,
    Signed,
    Unsigned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SectionDesc {
    name: String,
    encoding: Encoding,
    width: u32,
    count: usize,
    row_len: usize,
    byte_len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Provenance {
    source_hash: Option<String>,
    payload_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    stage: Stage,
    input: InputShape,
    latent_dim: usize,
    encoder: Vec<LayerSpec>,
    decoder: Vec<LayerSpec>,
    layers: Vec<LayerDesc>,
    mask_levels: Option<Vec<f64>>,
    activation_quant: Option<Vec<FixedPointParams>>,
    quant_spec: Option<QuantSpec>,
    sections: Vec<SectionDesc>,
    provenance: Provenance,
    metrics: Option<serde_json::Value>,
}

struct Section {
    desc: SectionDesc,
    bytes: Vec<u8>,
}

impl Section {
    fn f32s(name: String, values: &[f32], row_len: usize) -> Self {
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        Section {
            desc: SectionDesc {
                name,
                encoding: Encoding::F32le,
                width: 32,
                count: values.len(),
                row_len,
                byte_len: bytes.len(),
            },
            bytes,
        }
    }

    fn packed(name: String, encoding: Encoding, width: u32, count: usize, row_len: usize, bytes: Vec<u8>) -> Self {
        Section {
            desc: SectionDesc {
                name,
                encoding,
                width,
                count,
                row_len,
                byte_len: bytes.len(),
            },
            bytes,
        }
    }
}

fn row_len(shape: &[usize]) -> usize {
    shape.iter().skip(1).product::<usize>().max(1)
}

impl ModelFile {
    fn check_consistency(&self) -> Result<()> {
        let expected = match (self.masks.is_some(), self.quant.is_some()) {
            (_, true) => Stage::Quantized,
            (true, false) => Stage::Pruned,
            (false, false) => Stage::Baseline,
        };
        if self.stage != expected {
            return Err(Error::State(format!(
                "stage {} does not match the stored payloads",
                self.stage.as_str()
            )));
        }
        if let Some(m) = &self.masks {
            m.check_model(&self.model)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.check_consistency()?;
        let model = &self.model;
        let mut sections = Vec::new();
        let mut layers = Vec::with_capacity(model.num_layers());
        for (i, layer) in model.layers().enumerate() {
            let shape = layer.weight.shape().to_vec();
            let rl = row_len(&shape);
            let n = layer.weight.len();
            let ql = self.quant.as_ref().map(|q| &q.layers[i]);
            let weights = match ql.map(|q| &q.weights) {
                None => {
                    sections.push(Section::f32s(format!("layer{i}.weight"), layer.weight.data(), rl));
                    WeightDesc::Float
                }
                Some(WeightPayload::Linear { params, codes }) => {
                    let bytes = bitpack::pack_signed(codes, params.total_bits, rl)?;
                    sections.push(Section::packed(
                        format!("layer{i}.weight"),
                        Encoding::Signed,
                        params.total_bits,
                        n,
                        rl,
                        bytes,
                    ));
                    WeightDesc::Linear { params: *params }
                }
                Some(WeightPayload::Codebook(cb)) => {
                    let w = cb.params.total_bits;
                    let entries = cb.entries();
                    sections.push(Section::packed(
                        format!("layer{i}.centroids"),
                        Encoding::Signed,
                        w,
                        entries,
                        entries,
                        bitpack::pack_signed(&cb.codes, w, entries)?,
                    ));
                    let ib = cb.index_bits();
                    sections.push(Section::packed(
                        format!("layer{i}.indices"),
                        Encoding::Unsigned,
                        ib,
                        n,
                        rl,
                        bitpack::pack_unsigned(&cb.indices, ib, rl)?,
                    ));
                    WeightDesc::Codebook {
                        params: cb.params,
                        entries,
                    }
                }
            };
            let bias = match ql.map(|q| &q.bias) {
                None | Some(BiasPayload::Float(_)) => {
                    let values = ql.map_or_else(|| layer.bias.data().to_vec(), |q| q.bias.values());
                    sections.push(Section::f32s(format!("layer{i}.bias"), &values, values.len()));
                    BiasDesc::Float
                }
                Some(BiasPayload::Linear { params, codes }) => {
                    let bytes = bitpack::pack_signed(codes, params.total_bits, codes.len())?;
                    sections.push(Section::packed(
                        format!("layer{i}.bias"),
                        Encoding::Signed,
                        params.total_bits,
                        codes.len(),
                        codes.len(),
                        bytes,
                    ));
                    BiasDesc::Linear { params: *params }
                }
            };
            layers.push(LayerDesc {
                weight_shape: shape,
                bias_len: layer.bias.len(),
                weights,
                bias,
            });
        }
        if let Some(masks) = &self.masks {
            for (i, m) in masks.masks.iter().enumerate() {
                let rl = row_len(&m.shape);
                sections.push(Section::packed(
                    format!("layer{i}.mask"),
                    Encoding::Bits,
                    1,
                    m.len(),
                    rl,
                    bitpack::pack_bools(&m.keep, rl)?,
                ));
            }
        }

        let mut hasher = Sha256::new();
        for s in &sections {
            hasher.update(&s.bytes);
        }
        let header = Header {
            stage: self.stage,
            input: model.input,
            latent_dim: model.latent_dim,
            encoder: model.encoder_specs(),
            decoder: model.decoder_specs(),
            layers,
            mask_levels: self.masks.as_ref().map(|m| m.levels.clone()),
            activation_quant: self.quant.as_ref().map(|q| q.activation_quant.clone()),
            quant_spec: self.quant.as_ref().map(|q| q.spec),
            sections: sections.iter().map(|s| s.desc.clone()).collect(),
            provenance: Provenance {
                source_hash: self.source_hash.clone(),
                payload_hash: hex::encode(hasher.finalize()),
            },
            metrics: self.metrics.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
        let header_len = u32::try_from(json.len()).map_err(|_| Error::Format("header too large".into()))?;
        let mut out = Vec::with_capacity(10 + json.len() + sections.iter().map(|s| s.bytes.len()).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&header_len.to_le_bytes());
        out.extend_from_slice(&json);
        for s in &sections {
            out.extend_from_slice(&s.bytes);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 10 || &bytes[..4] != MAGIC {
            return Err(Error::Format("not a model file (bad magic)".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {version}")));
        }
        let header_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let body = &bytes[10..];
        if body.len() < header_len {
            return Err(Error::Format("truncated header".into()));
        }
        let header: Header =
            serde_json::from_slice(&body[..header_len]).map_err(|e| Error::Format(format!("header: {e}")))?;

        let mut rest = &body[header_len..];
        let mut hasher = Sha256::new();
        let mut sections: HashMap<&str, (&SectionDesc, &[u8])> = HashMap::new();
        for desc in &header.sections {
            if rest.len() < desc.byte_len {
                return Err(Error::Format(format!("section {} is truncated", desc.name)));
            }
            let (data, tail) = rest.split_at(desc.byte_len);
            hasher.update(data);
            if sections.insert(&desc.name, (desc, data)).is_some() {
                return Err(Error::Format(format!("duplicate section {}", desc.name)));
            }
            rest = tail;
        }
        if !rest.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes after last section", rest.len())));
        }
        if hex::encode(hasher.finalize()) != header.provenance.payload_hash {
            return Err(Error::Format("payload hash mismatch".into()));
        }
        if sections.len() != expected_sections(&header) {
            return Err(Error::Format("unexpected sections in file".into()));
        }

        let mut model = build_autoencoder(header.input, &header.encoder, header.latent_dim, 0)
            .map_err(|e| Error::Format(format!("architecture: {e}")))?;
        if model.decoder_specs() != header.decoder {
            return Err(Error::Format("decoder does not mirror the encoder".into()));
        }
        if header.layers.len() != model.num_layers() {
            return Err(Error::Format("layer table does not match the architecture".into()));
        }

        let mut quantized = Vec::new();
        for (i, (desc, layer)) in header.layers.iter().zip(model.layers_mut()).enumerate() {
            if desc.weight_shape != layer.weight.shape() || desc.bias_len != layer.bias.len() {
                return Err(Error::Format(format!("layer {i} shape does not match the architecture")));
            }
            let n = layer.weight.len();
            let rl = row_len(&desc.weight_shape);
            let get = |name: &str, enc: Encoding, width: u32, count: usize, row: usize| -> Result<&[u8]> {
                let key = format!("layer{i}.{name}");
                let (d, data) = sections
                    .get(key.as_str())
                    .ok_or_else(|| Error::Format(format!("missing section {key}")))?;
                if d.encoding != enc || d.width != width || d.count != count || d.row_len != row {
                    return Err(Error::Format(format!("section {key} has an unexpected layout")));
                }
                Ok(data)
            };
            let weights = match &desc.weights {
                WeightDesc::Float => {
                    let v = read_f32s(get("weight", Encoding::F32le, 32, n, rl)?, n)?;
                    layer.weight.data_mut().copy_from_slice(&v);
                    None
                }
                WeightDesc::Linear { params } => {
                    let w = params.total_bits;
                    let codes = bitpack::unpack_signed(get("weight", Encoding::Signed, w, n, rl)?, n, w, rl)?;
                    Some(WeightPayload::Linear { params: *params, codes })
                }
                WeightDesc::Codebook { params, entries } => {
                    let w = params.total_bits;
                    let e = *entries;
                    let codes = bitpack::unpack_signed(get("centroids", Encoding::Signed, w, e, e)?, e, w, e)?;
                    let cb = Codebook {
                        params: *params,
                        codes,
                        indices: Vec::new(),
                    };
                    let ib = cb.index_bits();
                    let indices =
                        bitpack::unpack_unsigned(get("indices", Encoding::Unsigned, ib, n, rl)?, n, ib, rl)?;
                    Some(WeightPayload::Codebook(Codebook { indices, ..cb }))
                }
            };
            let nb = desc.bias_len;
            let bias = match &desc.bias {
                BiasDesc::Float => BiasPayload::Float(read_f32s(get("bias", Encoding::F32le, 32, nb, nb)?, nb)?),
                BiasDesc::Linear { params } => {
                    let w = params.total_bits;
                    BiasPayload::Linear {
                        params: *params,
                        codes: bitpack::unpack_signed(get("bias", Encoding::Signed, w, nb, nb)?, nb, w, nb)?,
                    }
                }
            };
            match weights {
                None => layer.bias.data_mut().copy_from_slice(&bias.values()),
                Some(weights) => quantized.push(QuantizedLayer { weights, bias }),
            }
        }

        let masks = match &header.mask_levels {
            None => None,
            Some(levels) => {
                let mut masks = Vec::with_capacity(model.num_layers());
                for (i, layer) in model.layers().enumerate() {
                    let shape = layer.weight.shape().to_vec();
                    let n = layer.weight.len();
                    let rl = row_len(&shape);
                    let key = format!("layer{i}.mask");
                    let (d, data) = sections
                        .get(key.as_str())
                        .ok_or_else(|| Error::Format(format!("missing section {key}")))?;
                    if d.encoding != Encoding::Bits || d.width != 1 || d.count != n || d.row_len != rl {
                        return Err(Error::Format(format!("section {key} has an unexpected layout")));
                    }
                    masks.push(Mask {
                        shape,
                        keep: bitpack::unpack_bools(data, n, rl)?,
                    });
                }
                if levels.len() != masks.len() {
                    return Err(Error::Format("mask levels do not match layer count".into()));
                }
                Some(MaskSet {
                    masks,
                    levels: levels.clone(),
                })
            }
        };

        let file = match header.stage {
            Stage::Quantized => {
                if quantized.len() != model.num_layers() {
                    return Err(Error::Format("quantized file mixes float and quantized layers".into()));
                }
                let q = QuantizedModel {
                    input: header.input,
                    latent_dim: header.latent_dim,
                    encoder: header.encoder.clone(),
                    layers: quantized,
                    activation_quant: header
                        .activation_quant
                        .clone()
                        .ok_or_else(|| Error::Format("quantized file lacks activation quantizers".into()))?,
                    masks: masks.clone(),
                    spec: header
                        .quant_spec
                        .ok_or_else(|| Error::Format("quantized file lacks its quantization spec".into()))?,
                };
                ModelFile::quantized(q)?
            }
            stage => {
                if !quantized.is_empty() || header.activation_quant.is_some() || header.quant_spec.is_some() {
                    return Err(Error::Format(format!("{} file carries quantized payloads", stage.as_str())));
                }
                if (stage == Stage::Pruned) != masks.is_some() {
                    return Err(Error::Format(format!("{} file has inconsistent masks", stage.as_str())));
                }
                ModelFile {
                    stage,
                    model,
                    masks,
                    quant: None,
                    source_hash: None,
                    metrics: None,
                }
            }
        };
        Ok(ModelFile {
            source_hash: header.provenance.source_hash,
            metrics: header.metrics,
            ..file
        })
    }
}

fn expected_sections(header: &Header) -> usize {
    let per_layer: usize = header
        .layers
        .iter()
        .map(|l| match l.weights {
            WeightDesc::Codebook { .. } => 3,
            _ => 2,
        })
        .sum();
    per_layer + header.mask_levels.as_ref().map_or(0, |_| header.layers.len())
}

fn read_f32s(data: &[u8], n: usize) -> Result<Vec<f32>> {
    if data.len() != 4 * n {
        return Err(Error::Format(format!("expected {} bytes of f32 data, got {}", 4 * n, data.len())));
    }
    Ok(data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}
