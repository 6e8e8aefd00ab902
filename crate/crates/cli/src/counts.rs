use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountRow {
    pub id: String,
    pub predicted: f64,
    pub actual: f64,
}

pub fn write_rows(rows: &[CountRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn rows_to_string(rows: &[CountRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// `id → value` from the named column of a headed CSV.
pub fn read_column(path: &Path, column: &str) -> Result<BTreeMap<String, f64>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let headers = r.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (Some(id), Some(col)) = (find("id"), find(column)) else {
        bail!("{}: needs `id` and `{column}` columns", path.display());
    };
    let mut out = BTreeMap::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec?;
        let key = rec.get(id).unwrap_or("").trim().to_string();
        let value: f64 = rec
            .get(col)
            .unwrap_or("")
            .trim()
            .parse()
            .with_context(|| format!("{} row {}: bad {column}", path.display(), n + 1))?;
        if out.insert(key.clone(), value).is_some() {
            bail!("{}: duplicate id {key}", path.display());
        }
    }
    Ok(out)
}

/// Rows for ids present in both tables, in id order; missing ids are an
/// error.
pub fn join(pred: &BTreeMap<String, f64>, truth: &BTreeMap<String, f64>) -> Result<Vec<CountRow>> {
    if pred.len() != truth.len() || pred.keys().any(|k| !truth.contains_key(k)) {
        bail!("predicted and true tables list different ids");
    }
    Ok(pred
        .iter()
        .map(|(id, &p)| CountRow { id: id.clone(), predicted: p, actual: truth[id] })
        .collect())
}
