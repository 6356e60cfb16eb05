//! Numeric CSV inputs for the `corr`, `bound` and `hdiv` subcommands.

use std::path::Path;

use xlgap::bound::{LabeledSample, SampleSet};
use xlgap::{Error, Matrix, Result};

fn parse_error(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Reads comma-separated numeric rows. A first line with any non-numeric field is taken
/// as a header and skipped; every remaining row must have the same width. Rows come with
/// their line numbers.
pub fn read_rows(path: &Path) -> Result<Vec<(usize, Vec<f64>)>> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(idx + 1, |p| p.line() as usize);
            parse_error(path, line, e.to_string())
        })?;
        let line = record.position().map_or(idx + 1, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            record.iter().map(str::parse::<f64>).collect();
        let row = match parsed {
            Ok(row) => row,
            Err(_) if idx == 0 => continue,
            Err(_) => {
                return Err(parse_error(
                    path,
                    line,
                    format!(
                        "non-numeric field in {:?}",
                        record.iter().collect::<Vec<_>>()
                    ),
                ))
            }
        };
        if let Some(v) = row.iter().find(|v| !v.is_finite()) {
            return Err(parse_error(path, line, format!("non-finite value {v}")));
        }
        if let Some((_, first)) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_error(
                    path,
                    line,
                    format!("expected {} fields, got {}", first.len(), row.len()),
                ));
            }
        }
        rows.push((line, row));
    }
    if rows.is_empty() {
        return Err(parse_error(path, 1, "no data rows"));
    }
    Ok(rows)
}

/// Two columns `x,y`.
pub fn read_pairs(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let rows = read_rows(path)?;
    let (line, first) = &rows[0];
    if first.len() != 2 {
        return Err(parse_error(
            path,
            *line,
            format!("expected 2 columns, got {}", first.len()),
        ));
    }
    Ok(rows.iter().map(|(_, r)| (r[0], r[1])).unzip())
}

/// Rows `x1,…,xd,label` with labels 0 or 1.
pub fn read_labeled(path: &Path) -> Result<LabeledSample> {
    let rows = read_rows(path)?;
    let width = rows[0].1.len();
    if width < 2 {
        return Err(parse_error(
            path,
            rows[0].0,
            "expected at least one feature and a label column",
        ));
    }
    let mut labels = Vec::with_capacity(rows.len());
    for (line, row) in &rows {
        let label = row[width - 1];
        if label != 0.0 && label != 1.0 {
            return Err(parse_error(
                path,
                *line,
                format!("label {label} is not 0 or 1"),
            ));
        }
        labels.push(label as u8);
    }
    let features: Vec<&[f64]> = rows.iter().map(|(_, r)| &r[..width - 1]).collect();
    LabeledSample::new(Matrix::from_rows(&features)?, labels)
}

/// Rows `x1,…,xd`.
pub fn read_points(path: &Path) -> Result<SampleSet> {
    let rows: Vec<Vec<f64>> = read_rows(path)?.into_iter().map(|(_, r)| r).collect();
    SampleSet::new(Matrix::from_rows(&rows)?)
}
