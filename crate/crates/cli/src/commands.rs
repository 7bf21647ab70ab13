use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use aecz_core::autoencoder::{build_autoencoder, train, InputShape, TrainConfig};
use aecz_core::cost::CompressionReport;
use aecz_core::data::{
    generate_synthetic, load_csv, window, write_csv, LabeledSeries, MinMaxStats, Normalization, Split,
};
use aecz_core::detection::{anomaly_scores, best_f1, EvalOptions, EvalResult};
use aecz_core::modelfile::{content_hash, ModelFile, Stage};
use aecz_core::pruning::{lottery_search, PruneConfig, SearchReport, SelectionSplit};
use aecz_core::quantization::{quantize_model, QuantScheme};
use aecz_core::{AutoencoderModel, Exec, Tensor};

use crate::config::{DataSource, RunConfig};
use crate::error::CliError;
use crate::metrics::{self, MetricsRow};

/// Normalized splits plus the training windows.
pub struct Dataset {
    pub train: LabeledSeries,
    pub val: LabeledSeries,
    pub test: LabeledSeries,
    pub train_windows: Tensor,
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let (train, val, test) = match cfg.dataset.source {
        DataSource::Synthetic => {
            let s = generate_synthetic(&cfg.dataset.synthetic)?;
            (s.train, s.val, s.test)
        }
        DataSource::Csv => {
            let label = Some(cfg.dataset.label_column.as_str());
            let path = |key: &str, p: &Option<PathBuf>| {
                p.clone().ok_or_else(|| CliError::Config(format!("{key} is required for csv datasets")))
            };
            (
                load_csv(path("dataset.train_path", &cfg.dataset.train_path)?, label, Split::Train)?,
                load_csv(path("dataset.val_path", &cfg.dataset.val_path)?, label, Split::Val)?,
                load_csv(path("dataset.test_path", &cfg.dataset.test_path)?, label, Split::Test)?,
            )
        }
    };
    if train.labels.iter().any(|&l| l != 0) {
        return Err(CliError::Data("training split must not contain labeled anomalies".into()));
    }
    let (train, val, test) = match cfg.window.normalization {
        Normalization::Minmax => {
            let stats = MinMaxStats::fit(&train);
            (stats.apply(&train)?, stats.apply(&val)?, stats.apply(&test)?)
        }
        Normalization::None => (train, val, test),
    };
    let train_windows = window(&train, &cfg.window)?.data;
    Ok(Dataset {
        train,
        val,
        test,
        train_windows,
    })
}

/// Shared per-invocation settings.
pub struct Context {
    pub cfg: RunConfig,
    pub exec: Exec,
    pub command: &'static str,
}

impl Context {
    pub fn out_dir(&self) -> Result<&Path, CliError> {
        let dir = self.cfg.output_dir.as_path();
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Config(format!("output_dir {}: {e}", dir.display())))?;
        Ok(dir)
    }

    /// Writes the resolved run file and a timestamped log line.
    pub fn record_start(&self, detail: &str) -> Result<(), CliError> {
        let dir = self.out_dir()?;
        std::fs::write(dir.join(format!("{}.resolved.toml", self.command)), self.cfg.to_toml())?;
        let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        let mut log = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join("run.log"))?;
        writeln!(log, "{stamp} {} {detail}", self.command)?;
        Ok(())
    }

    fn eval_opts(&self) -> EvalOptions {
        EvalOptions {
            point_adjust: self.cfg.eval.point_adjust,
        }
    }

    fn evaluate(&self, model: &AutoencoderModel, series: &LabeledSeries) -> Result<(Vec<f64>, EvalResult), CliError> {
        let scores = anomaly_scores(model, series, &self.cfg.window, self.exec)?;
        let result = best_f1(&scores, &series.labels, self.eval_opts())?;
        Ok((scores, result))
    }

    /// Saves `file`, then writes its metrics JSON and appends the CSV row.
    fn finish(&self, file: ModelFile, path: &Path, eval: &EvalResult) -> Result<Outcome, CliError> {
        let file = file.with_metrics(serde_json::json!({
            "split": "test",
            "f1": eval.f1,
            "precision": eval.precision,
            "recall": eval.recall,
            "threshold": eval.threshold,
        }));
        let bytes = file.to_bytes()?;
        std::fs::write(path, &bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        self.emit(&file, &bytes, path, eval)
    }

    fn emit(&self, file: &ModelFile, bytes: &[u8], path: &Path, eval: &EvalResult) -> Result<Outcome, CliError> {
        let row = metrics::row(file, bytes, &self.cfg.dataset.name, eval)?;
        let report = metrics::cost(file)?;
        let doc = MetricsDoc {
            schema_version: metrics::SCHEMA_VERSION,
            row: &row,
            eval,
            compression: &report,
        };
        let json_path = path.with_extension(format!("{}.json", self.command));
        std::fs::write(&json_path, serde_json::to_string_pretty(&doc).expect("metrics serialize"))?;
        metrics::append_csv(&self.out_dir()?.join("metrics.csv"), &row)?;
        Ok(Outcome {
            model_path: path.to_path_buf(),
            row,
            eval: *eval,
            report,
        })
    }

    fn input_shape(&self, data: &Dataset) -> InputShape {
        InputShape {
            channels: data.train.channels(),
            length: self.cfg.window.length,
        }
    }
}

#[derive(Serialize)]
struct MetricsDoc<'a> {
    schema_version: u32,
    row: &'a MetricsRow,
    eval: &'a EvalResult,
    compression: &'a CompressionReport,
}

/// What a model-producing or evaluating command leaves behind.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub model_path: PathBuf,
    pub row: MetricsRow,
    pub eval: EvalResult,
    pub report: CompressionReport,
}

fn load_model(path: &Path) -> Result<(ModelFile, Vec<u8>), CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Config(format!("model {}: {e}", path.display())))?;
    Ok((ModelFile::from_bytes(&bytes)?, bytes))
}

fn train_config(cfg: &RunConfig) -> TrainConfig {
    TrainConfig {
        epochs: cfg.train.epochs,
        batch_size: cfg.train.batch_size,
        batches_per_epoch: cfg.train.batches_per_epoch,
        optimizer: cfg.train.optimizer,
        seed: cfg.seed,
    }
}

pub fn cmd_train(ctx: &Context, output: Option<PathBuf>) -> Result<Outcome, CliError> {
    ctx.cfg.validate()?;
    ctx.record_start("")?;
    let data = load_dataset(&ctx.cfg)?;
    let cfg = &ctx.cfg;
    let mut model = build_autoencoder(ctx.input_shape(&data), &cfg.model.encoder, cfg.model.latent_dim, cfg.seed)?;
    train(&mut model, &data.train_windows, &train_config(cfg), None)?;
    let (_, eval) = ctx.evaluate(&model, &data.test)?;
    let path = output.unwrap_or_else(|| cfg.output_dir.join("baseline.aecz"));
    ctx.out_dir()?;
    ctx.finish(ModelFile::baseline(model), &path, &eval)
}

pub struct PruneOutcome {
    pub outcome: Outcome,
    pub search: SearchReport,
}

pub fn cmd_prune(ctx: &Context, input: &Path, output: Option<PathBuf>) -> Result<PruneOutcome, CliError> {
    ctx.cfg.validate()?;
    ctx.record_start(&input.display().to_string())?;
    let (base, base_bytes) = load_model(input)?;
    if base.stage != Stage::Baseline {
        return Err(CliError::Config(format!(
            "prune expects a baseline model, {} is {}",
            input.display(),
            base.stage.as_str()
        )));
    }
    let data = load_dataset(&ctx.cfg)?;
    let cfg = &ctx.cfg;
    let layers = base.model.num_layers();
    let prune = PruneConfig {
        population_size: cfg.prune.population_size,
        density_min: cfg.prune.density_min.expand(layers, "prune.density_min")?,
        density_max: cfg.prune.density_max.expand(layers, "prune.density_max")?,
        short_epochs: cfg.prune.short_epochs,
        final_epochs: cfg.prune.final_epochs.unwrap_or(cfg.train.epochs),
        train: train_config(cfg),
        eval: ctx.eval_opts(),
        seed: cfg.seed,
    };
    let select_on = match cfg.prune.selection_split {
        SelectionSplit::Val => &data.val,
        SelectionSplit::Test => &data.test,
    };
    let (pruned, search) = lottery_search(&base.model, &data.train_windows, select_on, &cfg.window, &prune, ctx.exec)?;
    let (_, eval) = ctx.evaluate(&pruned.model, &data.test)?;
    let path = output.unwrap_or_else(|| cfg.output_dir.join("pruned.aecz"));
    ctx.out_dir()?;
    let file = ModelFile::pruned(pruned.model, pruned.masks)?.with_source(content_hash(&base_bytes));
    let outcome = ctx.finish(file, &path, &eval)?;
    std::fs::write(
        path.with_extension("search.json"),
        serde_json::to_string_pretty(&search).expect("search report serializes"),
    )?;
    Ok(PruneOutcome { outcome, search })
}

pub fn cmd_quantize(ctx: &Context, input: &Path, output: Option<PathBuf>) -> Result<Outcome, CliError> {
    ctx.cfg.validate()?;
    ctx.record_start(&input.display().to_string())?;
    let (src, src_bytes) = load_model(input)?;
    if src.stage == Stage::Quantized {
        return Err(CliError::Config(format!("{} is already quantized", input.display())));
    }
    let data = load_dataset(&ctx.cfg)?;
    let cfg = &ctx.cfg;
    let spec = cfg.quantize.spec(cfg.seed);
    let q = quantize_model(&src.model, src.masks.as_ref(), &spec, &data.train_windows, ctx.exec)?;
    let file = ModelFile::quantized(q)?.with_source(content_hash(&src_bytes));
    let (_, eval) = ctx.evaluate(&file.model, &data.test)?;
    let path = output.unwrap_or_else(|| {
        let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
        let scheme = match spec.scheme {
            QuantScheme::Linear => "linear",
            QuantScheme::Nonlinear => "nonlinear",
        };
        cfg.output_dir.join(format!("{stem}.{scheme}{}.aecz", spec.bits))
    });
    ctx.out_dir()?;
    ctx.finish(file, &path, &eval)
}

/// Evaluates a saved model on the test split. With `scores_out`, the score
/// series is written as one value per line.
pub fn cmd_eval(ctx: &Context, input: &Path, scores_out: Option<&Path>) -> Result<Outcome, CliError> {
    ctx.cfg.validate()?;
    ctx.record_start(&input.display().to_string())?;
    let (file, bytes) = load_model(input)?;
    let data = load_dataset(&ctx.cfg)?;
    let (scores, eval) = ctx.evaluate(&file.model, &data.test)?;
    if let Some(p) = scores_out {
        let text: String = scores.iter().map(|s| format!("{s}\n")).collect();
        std::fs::write(p, text)?;
    }
    ctx.out_dir()?;
    ctx.emit(&file, &bytes, input, &eval)
}

#[derive(Clone, Debug, Serialize)]
pub struct ReportEntry {
    pub file: String,
    pub stage: String,
    pub scheme: String,
    pub bits: u32,
    pub density: f64,
    #[serde(flatten)]
    pub report: CompressionReport,
}

/// Compression of each file against the dense float32 model of the same
/// architecture. Reads nothing but the files.
pub fn cmd_report(files: &[PathBuf]) -> Result<Vec<ReportEntry>, CliError> {
    files
        .iter()
        .map(|p| {
            let (file, _) = load_model(p)?;
            let (scheme, bits, _, _) = metrics::representation(&file);
            Ok(ReportEntry {
                file: p.display().to_string(),
                stage: file.stage.as_str().into(),
                scheme,
                bits,
                density: metrics::density(&file),
                report: metrics::cost(&file)?,
            })
        })
        .collect()
}

pub fn render_report(entries: &[ReportEntry]) -> String {
    let mut out = format!(
        "{:<32} {:<9} {:<9} {:>4} {:>8} {:>14} {:>14} {:>10} {:>12} {:>10}\n",
        "file", "stage", "scheme", "bits", "density", "capacity_bits", "float_bits", "reduction%", "deployable%", "mac_ratio"
    );
    for e in entries {
        let r = &e.report;
        out.push_str(&format!(
            "{:<32} {:<9} {:<9} {:>4} {:>8.4} {:>14} {:>14} {:>10.3} {:>12.3} {:>10.5}\n",
            e.file,
            e.stage,
            e.scheme,
            e.bits,
            e.density,
            r.capacity_bits,
            r.baseline_capacity_bits,
            r.reduction_percent,
            r.deployable_reduction_percent,
            r.mac_ratio
        ));
    }
    out
}

/// Dumps the raw (unnormalized) synthetic splits as CSV.
pub fn cmd_synth_data(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    ctx.record_start("")?;
    let s = generate_synthetic(&ctx.cfg.dataset.synthetic)?;
    let dir = ctx.out_dir()?;
    let mut written = Vec::new();
    for series in [&s.train, &s.val, &s.test] {
        let path = dir.join(format!("{}.csv", series.split.as_str()));
        write_csv(series, &path)?;
        written.push(path);
    }
    Ok(written)
}
