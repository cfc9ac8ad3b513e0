use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CausalDataset, DataError, FeatureKind};
use crate::autodiff::Tensor;

/// Names the non-feature columns of a CSV file. Every other column is a
/// covariate; its kind is inferred unless listed in `kinds`: at most two
/// distinct non-zero values → binary. Exact zeros are ignored because they
/// mark missing cells once a file has been corrupted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub treatment: String,
    pub outcome: String,
    pub mu0: Option<String>,
    pub mu1: Option<String>,
    pub kinds: BTreeMap<String, FeatureKind>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            treatment: "t".into(),
            outcome: "y".into(),
            mu0: Some("mu0".into()),
            mu1: Some("mu1".into()),
            kinds: BTreeMap::new(),
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<CausalDataset, DataError> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, schema)
}

/// Parses a dataset from any reader. Ground-truth columns named in the schema
/// are optional; treatment and outcome are required.
pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<CausalDataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| DataError::Parse(format!("line 1: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(DataError::Parse("empty file: no header row".into()));
    }
    let find = |name: &str| headers.iter().position(|h| h == name);
    let t_col = find(&schema.treatment).ok_or_else(|| DataError::MissingColumn(schema.treatment.clone()))?;
    let y_col = find(&schema.outcome).ok_or_else(|| DataError::MissingColumn(schema.outcome.clone()))?;
    let mu0_col = schema.mu0.as_deref().and_then(find);
    let mu1_col = schema.mu1.as_deref().and_then(find);
    let reserved = [Some(t_col), Some(y_col), mu0_col, mu1_col];
    let feature_cols: Vec<usize> = (0..headers.len()).filter(|i| !reserved.contains(&Some(*i))).collect();
    if feature_cols.is_empty() {
        return Err(DataError::Parse("no covariate columns".into()));
    }

    let mut x = Vec::new();
    let (mut t, mut y, mut mu0, mut mu1) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (row_no, record) in rdr.records().enumerate() {
        let line = row_no + 2;
        let record = record.map_err(|e| DataError::Parse(format!("line {line}: {e}")))?;
        if record.len() != headers.len() {
            return Err(DataError::Parse(format!(
                "line {line}: expected {} fields, found {}",
                headers.len(),
                record.len()
            )));
        }
        let cell = |col: usize| -> Result<f64, DataError> {
            let raw = record[col].trim();
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| DataError::Parse(format!("line {line}, column `{}`: cannot parse `{raw}`", headers[col])))
        };
        for &c in &feature_cols {
            x.push(cell(c)?);
        }
        let tv = cell(t_col)?;
        if tv != 0.0 && tv != 1.0 {
            return Err(DataError::Parse(format!("line {line}: treatment must be 0 or 1, got {tv}")));
        }
        t.push(tv as u8);
        y.push(cell(y_col)?);
        if let Some(c) = mu0_col {
            mu0.push(cell(c)?);
        }
        if let Some(c) = mu1_col {
            mu1.push(cell(c)?);
        }
    }
    if t.is_empty() {
        return Err(DataError::Parse("empty file: header but no data rows".into()));
    }
    let n = t.len();
    let d = feature_cols.len();
    let x = Tensor::matrix(n, d, x).map_err(|e| DataError::Invariant(e.to_string()))?;
    let feature_names: Vec<String> = feature_cols.iter().map(|&c| headers[c].clone()).collect();
    let feature_kinds = feature_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            schema.kinds.get(name).copied().unwrap_or_else(|| {
                let mut levels = x.column_values(j);
                levels.retain(|&v| v != 0.0);
                levels.sort_by(f64::total_cmp);
                levels.dedup();
                if levels.len() <= 2 {
                    FeatureKind::Binary
                } else {
                    FeatureKind::Continuous
                }
            })
        })
        .collect();
    Ok(CausalDataset {
        x,
        t,
        y,
        mu0: mu0_col.map(|_| mu0),
        mu1: mu1_col.map(|_| mu1),
        feature_kinds,
        feature_names,
    })
}

/// Writes covariates, `t`, `y` and any ground truth. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_csv<W: Write>(ds: &CausalDataset, out: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ds.feature_names.clone();
    header.extend(["t".to_string(), "y".to_string()]);
    if ds.mu0.is_some() {
        header.push("mu0".into());
    }
    if ds.mu1.is_some() {
        header.push("mu1".into());
    }
    let csv_err = |e: csv::Error| DataError::Parse(e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..ds.n_samples() {
        let mut rec: Vec<String> = ds.x.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(ds.t[i].to_string());
        rec.push(ds.y[i].to_string());
        if let Some(m) = &ds.mu0 {
            rec.push(m[i].to_string());
        }
        if let Some(m) = &ds.mu1 {
            rec.push(m[i].to_string());
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
