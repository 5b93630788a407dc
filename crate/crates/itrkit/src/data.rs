//! Observed data triplets (covariates, treatment, outcome) and CSV I/O.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};

/// A dataset of `n` units: covariate matrix, treatment labels in {-1, +1},
/// and continuous outcomes. No missing values.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub a: Array1<f64>,
    pub y: Array1<f64>,
    pub seed: Option<u64>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, a: Array1<f64>, y: Array1<f64>, seed: Option<u64>) -> Result<Self> {
        let n = x.nrows();
        if a.len() != n {
            return Err(Error::DimensionMismatch {
                left: a.len(),
                right: n,
                context: "treatment length vs rows",
            });
        }
        if y.len() != n {
            return Err(Error::DimensionMismatch {
                left: y.len(),
                right: n,
                context: "outcome length vs rows",
            });
        }
        for (i, &ai) in a.iter().enumerate() {
            if ai != 1.0 && ai != -1.0 {
                return Err(Error::Parse {
                    row: i,
                    msg: format!("treatment must be -1 or +1, got {ai}"),
                });
            }
        }
        if x.iter().any(|v| !v.is_finite())
            || y.iter().any(|v| !v.is_finite())
        {
            return Err(Error::InvalidParameter(
                "dataset contains non-finite values".into(),
            ));
        }
        Ok(Self { x, a, y, seed })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Indices of units with the given treatment label.
    pub fn group_indices(&self, group: f64) -> Vec<usize> {
        self.a
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == group)
            .map(|(i, _)| i)
            .collect()
    }

    /// Row subset as a new dataset.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(Axis(0), idx),
            a: Array1::from_iter(idx.iter().map(|&i| self.a[i])),
            y: Array1::from_iter(idx.iter().map(|&i| self.y[i])),
            seed: self.seed,
        }
    }
}

/// Read a dataset from CSV. The header must contain columns `A` and `Y`
/// (case-insensitive); all remaining columns are covariates, kept in header
/// order. Treatment accepts -1/+1 or 0/1 (with 0 mapped to -1). Missing
/// values are an error.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let mut a_col = None;
    let mut y_col = None;
    let mut x_cols = Vec::new();
    for (j, name) in headers.iter().enumerate() {
        match name.to_ascii_lowercase().as_str() {
            "a" => a_col = Some(j),
            "y" => y_col = Some(j),
            _ => x_cols.push(j),
        }
    }
    let a_col = a_col.ok_or_else(|| Error::Config("CSV is missing treatment column 'A'".into()))?;
    let y_col = y_col.ok_or_else(|| Error::Config("CSV is missing outcome column 'Y'".into()))?;

    let mut a = Vec::new();
    let mut y = Vec::new();
    let mut x = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let raw_a = record.get(a_col).unwrap_or("");
        if raw_a.is_empty() {
            return Err(Error::MissingValue {
                row: row_idx,
                column: "A".into(),
            });
        }
        let ai = match raw_a {
            "-1" | "-1.0" => -1.0,
            "0" | "0.0" => -1.0,
            "1" | "+1" | "1.0" | "+1.0" => 1.0,
            other => {
                return Err(Error::Parse {
                    row: row_idx,
                    msg: format!("treatment value '{other}' is not one of -1, +1, 0, 1"),
                })
            }
        };
        a.push(ai);
        let raw_y = record.get(y_col).unwrap_or("");
        if raw_y.is_empty() {
            return Err(Error::MissingValue {
                row: row_idx,
                column: "Y".into(),
            });
        }
        y.push(raw_y.parse::<f64>().map_err(|e| Error::Parse {
            row: row_idx,
            msg: format!("outcome '{raw_y}': {e}"),
        })?);
        for &j in &x_cols {
            let raw = record.get(j).unwrap_or("");
            if raw.is_empty() {
                return Err(Error::MissingValue {
                    row: row_idx,
                    column: headers.get(j).unwrap_or("?").to_string(),
                });
            }
            x.push(raw.parse::<f64>().map_err(|e| Error::Parse {
                row: row_idx,
                msg: format!("covariate '{raw}': {e}"),
            })?);
        }
    }
    let n = a.len();
    let p = x_cols.len();
    let x = Array2::from_shape_vec((n, p), x)
        .map_err(|e| Error::Config(format!("covariate shape: {e}")))?;
    Dataset::new(x, Array1::from_vec(a), Array1::from_vec(y), None)
}

/// Write a dataset as CSV with header `A,Y,X1..Xp`.
pub fn save_dataset(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    let mut header = vec!["A".to_string(), "Y".to_string()];
    header.extend((1..=ds.p()).map(|j| format!("X{j}")));
    writer.write_record(&header)?;
    for i in 0..ds.n() {
        let mut record = Vec::with_capacity(2 + ds.p());
        record.push(format!("{}", ds.a[i] as i64));
        record.push(format!("{:.17e}", ds.y[i]));
        for j in 0..ds.p() {
            record.push(format!("{:.17e}", ds.x[[i, j]]));
        }
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}
