//! Cluster distance matrices: entry (i, j) is the median distance from the
//! points of group j to the centroid of group i, each row scaled to sum to 100.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{centroid, dist};
use crate::error::{Error, Result};
use crate::stats::median;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    pub groups: Vec<String>,
    /// Median distances before row normalisation.
    pub raw: Vec<Vec<f64>>,
    /// Row-normalised percentages.
    pub values: Vec<Vec<f64>>,
}

pub fn distance_matrix(points: &[Vec<f64>], labels: &[usize], groups: &[String]) -> Result<DistanceMatrix> {
    if points.len() != labels.len() {
        return Err(Error::Invalid(format!("{} labels for {} points", labels.len(), points.len())));
    }
    let g = groups.len();
    let mut members: Vec<Vec<&[f64]>> = vec![Vec::new(); g];
    for (p, &l) in points.iter().zip(labels) {
        if l >= g {
            return Err(Error::Invalid(format!("label {l} outside {g} groups")));
        }
        members[l].push(p);
    }
    if let Some(e) = members.iter().position(|m| m.is_empty()) {
        return Err(Error::Invalid(format!("group '{}' has no points", groups[e])));
    }
    let centroids: Vec<Vec<f64>> = members.iter().map(|m| centroid(m.iter().copied()).unwrap()).collect();
    let raw: Vec<Vec<f64>> =
        centroids.iter().map(|c| members.iter().map(|m| median(&m.iter().map(|p| dist(p, c)).collect::<Vec<_>>())).collect()).collect();
    let values = raw
        .iter()
        .map(|row| {
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                row.iter().map(|v| 100.0 * v / s).collect()
            } else {
                vec![100.0 / g as f64; g]
            }
        })
        .collect();
    Ok(DistanceMatrix { groups: groups.to_vec(), raw, values })
}

impl DistanceMatrix {
    /// Heatmap CSV: a `group` column followed by one column per group.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["group".to_string()];
        header.extend(self.groups.iter().cloned());
        out.write_record(&header)?;
        for (g, row) in self.groups.iter().zip(&self.values) {
            let mut rec = vec![g.clone()];
            rec.extend(row.iter().map(|v| format!("{v:?}")));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads the percentages written by [`DistanceMatrix::write_csv`]; `raw` is left empty.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let groups: Vec<String> = rd.headers()?.iter().skip(1).map(String::from).collect();
        let mut values = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            values.push(
                rec.iter()
                    .skip(1)
                    .map(|s| s.parse::<f64>().map_err(|_| Error::Schema(format!("bad distance '{s}'"))))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Ok(DistanceMatrix { groups, raw: Vec::new(), values })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("g{i}")).collect()
    }

    #[test]
    fn identical_groups_split_evenly() {
        let pts = vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![0.0, 0.0], vec![2.0, 0.0]];
        let d = distance_matrix(&pts, &[0, 0, 1, 1], &names(2)).unwrap();
        assert_eq!(d.values, vec![vec![50.0, 50.0], vec![50.0, 50.0]]);
    }

    #[test]
    fn empty_group_is_an_error() {
        assert!(distance_matrix(&[vec![0.0]], &[0], &names(2)).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let pts: Vec<Vec<f64>> = (0..9).map(|i| vec![(i * i) as f64 * 0.37, (i as f64).sin()]).collect();
        let labels: Vec<usize> = (0..9).map(|i| i % 3).collect();
        let d = distance_matrix(&pts, &labels, &names(3)).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = DistanceMatrix::read_csv(buf.as_slice()).unwrap();
        for (a, b) in back.values.iter().flatten().zip(d.values.iter().flatten()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    proptest! {
        #[test]
        fn rows_sum_to_100(pts in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 3), 6..30)) {
            let labels: Vec<usize> = (0..pts.len()).map(|i| i % 3).collect();
            let d = distance_matrix(&pts, &labels, &names(3)).unwrap();
            for row in &d.values {
                prop_assert!((row.iter().sum::<f64>() - 100.0).abs() < 1e-9);
                prop_assert!(row.iter().all(|v| *v >= 0.0));
            }
        }

        #[test]
        fn permuting_groups_permutes_matrix(pts in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 2), 6..20)) {
            let labels: Vec<usize> = (0..pts.len()).map(|i| i % 3).collect();
            let perm = [2usize, 0, 1];
            let relabeled: Vec<usize> = labels.iter().map(|&l| perm[l]).collect();
            let a = distance_matrix(&pts, &labels, &names(3)).unwrap();
            let b = distance_matrix(&pts, &relabeled, &names(3)).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    prop_assert!((a.values[i][j] - b.values[perm[i]][perm[j]]).abs() < 1e-9);
                }
            }
        }
    }
}
