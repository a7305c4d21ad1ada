//! Plot-ready data files. Nothing here renders; everything is CSV.

use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::matrix::Matrix;
use crate::pipeline::write_artifact;
use crate::stats::BoxSummary;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxRow {
    pub group: String,
    pub parameter: String,
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Five-number summaries per (group, parameter). Empty groups are left out.
pub fn box_rows(groups: &[(String, Vec<f64>)], parameter: &str) -> Vec<BoxRow> {
    groups
        .iter()
        .filter_map(|(g, v)| match BoxSummary::of(v) {
            Some(b) => Some(BoxRow {
                group: g.clone(),
                parameter: parameter.to_string(),
                n: b.n,
                min: b.min,
                q1: b.q1,
                median: b.median,
                q3: b.q3,
                max: b.max,
            }),
            None => {
                log::warn!("group '{g}' has no values for {parameter}; row omitted");
                None
            }
        })
        .collect()
}

pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<String> {
    write_artifact(path, &to_csv(rows)?)
}

/// `id,label,x0,x1,…` for a scatter of reduced points.
pub fn scatter_csv(ids: &[String], labels: &[String], points: &[Vec<f64>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let k = points.first().map_or(0, Vec::len);
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..k).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for ((id, l), p) in ids.iter().zip(labels).zip(points) {
        let mut rec = vec![id.clone(), l.clone()];
        rec.extend(p.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

/// One CSV per grid, `<prefix>_<k>.csv`, rows = cells, columns = time.
pub fn write_grids(dir: &Path, prefix: &str, grids: &[Matrix]) -> Result<Vec<String>> {
    grids
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let mut buf = Vec::new();
            g.write_csv(&mut buf)?;
            write_artifact(&dir.join(format!("{prefix}_{k:02}.csv")), &buf)
        })
        .collect()
}
