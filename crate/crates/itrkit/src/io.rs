//! File formats: CSV for tables (weights, bases, eigenvalues, replication
//! results), JSON for rules, oracle sidecars, reports, and key=value files
//! for configuration.

use std::path::Path;

use ndarray::{Array1, Array2};

use crate::balancing::{BalancingWeights, WeightsMethod};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::gkdr::SubspaceBasis;
use crate::owl::DecisionRule;
use crate::simgen::SimOracle;

/// Serde adapters for 1-d arrays.
pub mod array1_serde {
    use ndarray::Array1;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Array1<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.to_vec().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array1<f64>, D::Error> {
        Ok(Array1::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

/// Serde adapters for 2-d arrays (nested row-major lists).
pub mod array2_serde {
    use ndarray::Array2;
    use serde::de::Error as DeError;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Array2<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = v.rows().into_iter().map(|r| r.to_vec()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array2<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let nrows = rows.len();
        let ncols = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut flat = Vec::with_capacity(nrows * ncols);
        for r in &rows {
            if r.len() != ncols {
                return Err(D::Error::custom("ragged matrix"));
            }
            flat.extend_from_slice(r);
        }
        Array2::from_shape_vec((nrows, ncols), flat).map_err(D::Error::custom)
    }
}

/// Write balancing weights as CSV with columns (index, treatment, weight, method).
pub fn save_weights(path: impl AsRef<Path>, ds: &Dataset, w: &BalancingWeights) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    writer.write_record(["index", "treatment", "weight", "method"])?;
    for i in 0..ds.n() {
        writer.write_record(&[
            i.to_string(),
            format!("{}", ds.a[i] as i64),
            format!("{:.17e}", w.w[i]),
            w.method.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Read a weights CSV back into a weight vector (validated against n).
pub fn load_weights(path: impl AsRef<Path>, n: usize) -> Result<BalancingWeights> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    let mut w = vec![f64::NAN; n];
    let mut method = WeightsMethod::Kcb;
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let idx: usize = record
            .get(0)
            .unwrap_or("")
            .parse()
            .map_err(|e| Error::Parse {
                row,
                msg: format!("index: {e}"),
            })?;
        if idx >= n {
            return Err(Error::Parse {
                row,
                msg: format!("index {idx} out of range for n = {n}"),
            });
        }
        w[idx] = record
            .get(2)
            .unwrap_or("")
            .parse()
            .map_err(|e| Error::Parse {
                row,
                msg: format!("weight: {e}"),
            })?;
        method = match record.get(3).unwrap_or("") {
            "kcb" => WeightsMethod::Kcb,
            "ipw-logistic" => WeightsMethod::IpwLogistic,
            "oracle" => WeightsMethod::Oracle,
            other => {
                return Err(Error::Parse {
                    row,
                    msg: format!("unknown method '{other}'"),
                })
            }
        };
    }
    if w.iter().any(|v| v.is_nan()) {
        return Err(Error::IndexCoverage(
            "weights file does not cover every unit".into(),
        ));
    }
    Ok(BalancingWeights {
        w: Array1::from_vec(w),
        method,
        lambda1: 0.0,
        lambda2: 0.0,
        solver_iters: 0,
        final_objective: 0.0,
    })
}

/// Write a p x u basis as a plain numeric CSV (one row per covariate).
pub fn save_matrix_csv(path: impl AsRef<Path>, m: &Array2<f64>) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path.as_ref())?;
    for row in m.rows() {
        let record: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Read a numeric CSV written by `save_matrix_csv`.
pub fn load_matrix_csv(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let parsed: std::result::Result<Vec<f64>, _> =
            record.iter().map(|v| v.parse::<f64>()).collect();
        rows.push(parsed.map_err(|e| Error::Parse {
            row,
            msg: e.to_string(),
        })?);
    }
    let nrows = rows.len();
    let ncols = rows.first().map(|r| r.len()).unwrap_or(0);
    let mut flat = Vec::with_capacity(nrows * ncols);
    for r in rows {
        if r.len() != ncols {
            return Err(Error::Config("ragged matrix CSV".into()));
        }
        flat.extend(r);
    }
    Array2::from_shape_vec((nrows, ncols), flat).map_err(|e| Error::Config(e.to_string()))
}

/// Write an eigenvalue vector as a one-column CSV.
pub fn save_vector_csv(path: impl AsRef<Path>, v: &Array1<f64>) -> Result<()> {
    let m = v.view().insert_axis(ndarray::Axis(1)).to_owned();
    save_matrix_csv(path, &m)
}

/// Save a fitted rule as JSON.
pub fn save_rule(path: impl AsRef<Path>, rule: &DecisionRule) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    serde_json::to_writer(std::io::BufWriter::new(file), rule)?;
    Ok(())
}

/// Load a rule saved by `save_rule`.
pub fn load_rule(path: impl AsRef<Path>) -> Result<DecisionRule> {
    let file = std::fs::File::open(path.as_ref())?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

/// Save the oracle sidecar produced alongside a simulated dataset.
pub fn save_oracle(path: impl AsRef<Path>, oracle: &SimOracle) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    serde_json::to_writer(std::io::BufWriter::new(file), oracle)?;
    Ok(())
}

/// Load an oracle sidecar.
pub fn load_oracle(path: impl AsRef<Path>) -> Result<SimOracle> {
    let file = std::fs::File::open(path.as_ref())?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

/// Save a basis (matrix + eigenvalues as JSON) for reuse by `fit`.
pub fn save_basis(path: impl AsRef<Path>, basis: &SubspaceBasis) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    serde_json::to_writer(std::io::BufWriter::new(file), basis)?;
    Ok(())
}

/// Load a basis saved by `save_basis`.
pub fn load_basis(path: impl AsRef<Path>) -> Result<SubspaceBasis> {
    let file = std::fs::File::open(path.as_ref())?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

/// Save an evaluation report as JSON.
pub fn save_report(path: impl AsRef<Path>, report: &EvalReport) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), report)?;
    Ok(())
}

/// Parse a key=value configuration file. Blank lines and `#` comments are
/// ignored; later keys override earlier ones.
pub fn parse_config_file(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path.as_ref())?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) => out.push((k.trim().to_string(), v.trim().to_string())),
            None => {
                return Err(Error::Config(format!(
                    "line {}: expected key=value, got '{line}'",
                    lineno + 1
                )))
            }
        }
    }
    Ok(out)
}
