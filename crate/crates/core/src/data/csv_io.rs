//! CSV task files: header `label,f0,f1,...`, one sample per row, labels
//! contiguous integers from 0.

use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| parse_err(0, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let label_col = headers
        .iter()
        .position(|h| h.trim() == "label")
        .ok_or_else(|| parse_err(1, "missing header with a \"label\" column".into()))?;
    let width = headers.len() - 1;
    if width == 0 {
        return Err(parse_err(1, "no feature columns".into()));
    }

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let mut features = Vec::with_capacity(width);
        for (col, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if col == label_col {
                let y: usize = cell.parse().map_err(|_| {
                    parse_err(
                        line,
                        format!("label {cell:?} is not a non-negative integer"),
                    )
                })?;
                labels.push(y);
            } else {
                let v: f64 = cell.parse().map_err(|_| {
                    parse_err(
                        line,
                        format!("column {:?}: {cell:?} is not numeric", &headers[col]),
                    )
                })?;
                if !v.is_finite() {
                    return Err(parse_err(line, format!("non-finite value {cell:?}")));
                }
                features.push(v);
            }
        }
        rows.push(features);
    }
    if rows.is_empty() {
        return Err(parse_err(1, "no samples".into()));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut seen = vec![false; classes];
    labels.iter().for_each(|&y| seen[y] = true);
    if let Some(gap) = seen.iter().position(|s| !s) {
        return Err(parse_err(
            0,
            format!(
                "non-contiguous labels: class {gap} missing below {}",
                classes - 1
            ),
        ));
    }
    if classes < 2 {
        return Err(parse_err(0, "need at least two classes".into()));
    }
    let name = path
        .file_stem()
        .map_or_else(|| "csv".to_string(), |s| s.to_string_lossy().into_owned());
    Dataset::new(name, Matrix::from_rows(&rows)?, labels, classes)
}

pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(|e| Error::Io(e.into()))?;
    let mut header = vec!["label".to_string()];
    header.extend((0..ds.dims()).map(|j| format!("f{j}")));
    w.write_record(&header).map_err(|e| Error::Io(e.into()))?;
    for (i, &y) in ds.labels().iter().enumerate() {
        let mut record = vec![y.to_string()];
        record.extend(ds.features().row(i).iter().map(|v| v.to_string()));
        w.write_record(&record).map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}
