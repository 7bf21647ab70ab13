use std::path::Path;

use super::{LabeledSeries, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reads a rectangular numeric CSV with a header row, one timestep per row.
///
/// The column named `label_column` (default `label`) holds 0/1 labels when
/// present; without it all labels are 0. Every other column is a channel.
pub fn load_csv(path: impl AsRef<Path>, label_column: Option<&str>, split: Split) -> Result<LabeledSeries> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: cannot read header: {e}", path.display())))?
        .clone();
    let label_name = label_column.unwrap_or("label");
    let label_idx = headers.iter().position(|h| h == label_name);
    let channel_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != label_idx)
        .map(|(_, h)| h.to_string())
        .collect();
    if channel_names.is_empty() {
        return Err(Error::Data(format!("{}: no value columns", path.display())));
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            column: 0,
            message: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                row,
                column: record.len().min(headers.len()) + 1,
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let mut label = 0u8;
        for (col, cell) in record.iter().enumerate() {
            let parsed: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: col + 1,
                message: format!("'{cell}' is not a number"),
            })?;
            if Some(col) == label_idx {
                label = match parsed {
                    0.0 => 0,
                    1.0 => 1,
                    _ => {
                        return Err(Error::Parse {
                            row,
                            column: col + 1,
                            message: format!("label '{cell}' is not 0 or 1"),
                        })
                    }
                };
            } else {
                if !parsed.is_finite() {
                    return Err(Error::Parse {
                        row,
                        column: col + 1,
                        message: format!("'{cell}' is not finite"),
                    });
                }
                values.push(parsed as f32);
            }
        }
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    let t = labels.len();
    let c = channel_names.len();
    LabeledSeries::new(Tensor::new(vec![t, c], values)?, labels, channel_names, split)
}

/// Writes `series` in the format read by [`load_csv`], with a `label` column.
pub fn write_csv(series: &LabeledSeries, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    let mut header = series.channel_names.clone();
    header.push("label".into());
    w.write_record(&header).map_err(io)?;
    let c = series.channels();
    for (row, &label) in series.values.data().chunks(c).zip(&series.labels) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(label.to_string());
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
