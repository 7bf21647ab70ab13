//! Run file: a TOML document with a fixed key set. Unknown keys are
//! rejected and every section falls back to its defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use aecz_core::data::{SynthConfig, WindowConfig};
use aecz_core::nn::{Activation, LayerSpec, OptimizerConfig};
use aecz_core::pruning::SelectionSplit;
use aecz_core::quantization::{QuantScheme, QuantSpec};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seeds model init, training, the pruning search and k-means.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub window: WindowConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub prune: PruneSection,
    pub quantize: QuantizeSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            output_dir: PathBuf::from("runs"),
            dataset: DatasetConfig::default(),
            window: WindowConfig::default(),
            model: ModelConfig::default(),
            train: TrainSection::default(),
            prune: PruneSection::default(),
            quantize: QuantizeSection::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Label written to the metrics CSV.
    pub name: String,
    pub source: DataSource,
    pub synthetic: SynthConfig,
    pub train_path: Option<PathBuf>,
    pub val_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub label_column: String,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            name: "synthetic".into(),
            source: DataSource::Synthetic,
            synthetic: SynthConfig::default(),
            train_path: None,
            val_path: None,
            test_path: None,
            label_column: "label".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub encoder: Vec<LayerSpec>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            latent_dim: 24,
            encoder: vec![
                LayerSpec::conv1d(8, 16, 3, 1, 1, Activation::Relu),
                LayerSpec::conv1d(16, 16, 3, 2, 1, Activation::Relu),
                LayerSpec::conv1d(16, 8, 3, 2, 1, Activation::Relu),
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    /// Omitted: one pass over the windows per epoch.
    pub batches_per_epoch: Option<usize>,
    pub optimizer: OptimizerConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: 30,
            batch_size: 64,
            batches_per_epoch: None,
            optimizer: OptimizerConfig::default(),
        }
    }
}

/// A single value for every layer or one value per layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerLayer {
    All(f64),
    Each(Vec<f64>),
}

impl PerLayer {
    pub fn expand(&self, layers: usize, key: &str) -> Result<Vec<f64>, CliError> {
        match self {
            PerLayer::All(v) => Ok(vec![*v; layers]),
            PerLayer::Each(v) if v.len() == layers => Ok(v.clone()),
            PerLayer::Each(v) => Err(CliError::Config(format!(
                "{key} lists {} values but the model has {layers} layers",
                v.len()
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PruneSection {
    pub population_size: usize,
    pub density_min: PerLayer,
    pub density_max: PerLayer,
    pub short_epochs: usize,
    /// Omitted: `train.epochs`.
    pub final_epochs: Option<usize>,
    pub selection_split: SelectionSplit,
}

impl Default for PruneSection {
    fn default() -> Self {
        PruneSection {
            population_size: 16,
            density_min: PerLayer::All(0.2),
            density_max: PerLayer::All(0.8),
            short_epochs: 3,
            final_epochs: None,
            selection_split: SelectionSplit::Val,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantizeSection {
    pub scheme: QuantScheme,
    pub bits: u32,
    pub omega: Option<usize>,
    pub psi: Option<u32>,
    pub quantize_biases: bool,
}

impl Default for QuantizeSection {
    fn default() -> Self {
        QuantizeSection {
            scheme: QuantScheme::Linear,
            bits: 8,
            omega: None,
            psi: None,
            quantize_biases: true,
        }
    }
}

impl QuantizeSection {
    pub fn spec(&self, seed: u64) -> QuantSpec {
        QuantSpec {
            scheme: self.scheme,
            bits: self.bits,
            omega: self.omega,
            psi: self.psi,
            quantize_biases: self.quantize_biases,
            seed,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub point_adjust: bool,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("run file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read run file {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.dataset.source == DataSource::Csv {
            for (key, path) in [
                ("dataset.train_path", &self.dataset.train_path),
                ("dataset.val_path", &self.dataset.val_path),
                ("dataset.test_path", &self.dataset.test_path),
            ] {
                match path {
                    None => return Err(CliError::Config(format!("{key} is required for csv datasets"))),
                    Some(p) if !p.is_file() => {
                        return Err(CliError::Config(format!("{key}: no such file {}", p.display())))
                    }
                    Some(_) => {}
                }
            }
        }
        if self.model.encoder.is_empty() {
            return Err(CliError::Config("model.encoder needs at least one layer".into()));
        }
        if self.train.epochs == 0 {
            return Err(CliError::Config("train.epochs must be positive".into()));
        }
        if self.prune.population_size == 0 {
            return Err(CliError::Config("prune.population_size must be positive".into()));
        }
        if ![4, 5, 8, 16].contains(&self.quantize.bits) {
            return Err(CliError::Config(format!(
                "quantize.bits must be one of 4, 5, 8, 16; got {}",
                self.quantize.bits
            )));
        }
        Ok(())
    }
}
