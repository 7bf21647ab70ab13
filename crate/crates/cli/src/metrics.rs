//! Metrics rows shared by every command. Columns are only ever appended;
//! readers should select by header name.

use std::fs::OpenOptions;
use std::path::Path;

use serde::{Deserialize, Serialize};

use aecz_core::cost::{compression_report, CompressionReport};
use aecz_core::detection::EvalResult;
use aecz_core::modelfile::{content_hash, ModelFile};
use aecz_core::quantization::{QuantScheme, WeightPayload};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub model_id: String,
    pub stage: String,
    pub dataset: String,
    pub sparsity: f64,
    pub density: f64,
    pub scheme: String,
    pub bits: u32,
    pub omega: Option<usize>,
    pub psi: Option<u32>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub threshold: f64,
    pub capacity_bits: u64,
    pub macs: u64,
    pub reduction_percent: f64,
}

/// First 16 hex digits of the file's SHA-256.
pub fn model_id(bytes: &[u8]) -> String {
    content_hash(bytes)[..16].to_string()
}

/// Storage description of a model file: scheme, bits, omega, psi.
pub fn representation(file: &ModelFile) -> (String, u32, Option<usize>, Option<u32>) {
    match &file.quant {
        None => ("float32".into(), 32, None, None),
        Some(q) => match q.spec.scheme {
            QuantScheme::Linear => ("linear".into(), q.spec.bits, None, None),
            QuantScheme::Nonlinear => {
                let omega = q
                    .layers
                    .iter()
                    .map(|l| match &l.weights {
                        WeightPayload::Codebook(cb) => cb.entries(),
                        WeightPayload::Linear { .. } => 0,
                    })
                    .max();
                ("nonlinear".into(), q.spec.bits, omega, Some(q.spec.psi()))
            }
        },
    }
}

pub fn density(file: &ModelFile) -> f64 {
    file.masks.as_ref().map_or(1.0, |m| m.weighted_density())
}

pub fn cost(file: &ModelFile) -> Result<CompressionReport, CliError> {
    Ok(compression_report(&file.model, file.masks.as_ref(), file.quant.as_ref())?)
}

pub fn row(file: &ModelFile, bytes: &[u8], dataset: &str, eval: &EvalResult) -> Result<MetricsRow, CliError> {
    let (scheme, bits, omega, psi) = representation(file);
    let report = cost(file)?;
    let density = density(file);
    Ok(MetricsRow {
        model_id: model_id(bytes),
        stage: file.stage.as_str().into(),
        dataset: dataset.into(),
        sparsity: 1.0 - density,
        density,
        scheme,
        bits,
        omega,
        psi,
        precision: eval.precision,
        recall: eval.recall,
        f1: eval.f1,
        threshold: eval.threshold,
        capacity_bits: report.capacity_bits,
        macs: report.macs,
        reduction_percent: report.reduction_percent,
    })
}

/// Appends `row` to the CSV at `path`, writing the header for a new file.
pub fn append_csv(path: &Path, row: &MetricsRow) -> Result<(), CliError> {
    let fresh = !path.exists() || std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    w.serialize(row).map_err(|e| CliError::Data(e.to_string()))?;
    w.flush().map_err(|e| CliError::Data(e.to_string()))?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricsRow>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .collect::<Result<Vec<MetricsRow>, _>>()
        .map_err(|e| CliError::Data(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> MetricsRow {
        MetricsRow {
            model_id: "00ff".into(),
            stage: "quantized".into(),
            dataset: "synthetic".into(),
            sparsity: 0.25,
            density: 0.75,
            scheme: "nonlinear".into(),
            bits: 4,
            omega: Some(16),
            psi: Some(4),
            precision: 0.5,
            recall: 1.0,
            f1: 2.0 / 3.0,
            threshold: 0.125,
            capacity_bits: 1234,
            macs: 99,
            reduction_percent: 87.5,
        }
    }

    #[test]
    fn csv_append_and_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let mut linear = sample();
        linear.omega = None;
        linear.psi = None;
        append_csv(&path, &sample()).unwrap();
        append_csv(&path, &linear).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(
            "model_id,stage,dataset,sparsity,density,scheme,bits,omega,psi,precision,recall,f1,threshold,capacity_bits,macs,reduction_percent\n"
        ));
        assert_eq!(read_csv(&path).unwrap(), vec![sample(), linear]);
    }
}
