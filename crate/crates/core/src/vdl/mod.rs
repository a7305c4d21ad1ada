//! The 30-dimensional landscape and the analytics run on it.

pub mod distance;
pub mod forest;
pub mod probe;
pub mod reduce;
pub mod traverse;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::PrimaryParams;
use crate::stats::MinMax;
use crate::{LATENT_DIM, N_DISCRETE, VDL_DIM};

pub use distance::{distance_matrix, DistanceMatrix};
pub use forest::{Forest, ForestConfig};
pub use reduce::{fisher_criterion, lda_reduce, pca_reduce, Method, ReducedSpace};
pub use traverse::{extrapolate_trajectory, traverse_latent, treatment_vector};

/// Min-max scaling of the discrete block, identified by a content hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteStats {
    pub id: String,
    pub scale: MinMax,
}

impl DiscreteStats {
    pub fn new(scale: MinMax) -> Result<Self> {
        if scale.dim() != N_DISCRETE {
            return Err(Error::Invalid(format!("discrete scaling has {} features, expected {N_DISCRETE}", scale.dim())));
        }
        let json = serde_json::to_vec(&scale)?;
        let id = hex::encode(&Sha256::digest(&json)[..8]);
        Ok(DiscreteStats { id, scale })
    }

    pub fn fit(params: &[PrimaryParams]) -> Result<Self> {
        let rows: Vec<[f64; 6]> = params.iter().map(|p| p.to_array()).collect();
        Self::new(MinMax::fit(rows.iter().map(|r| r.as_slice()))?)
    }

    pub fn normalize(&self, p: &PrimaryParams) -> Result<Vec<f64>> {
        self.scale.normalize(&p.to_array())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VdlVector {
    pub id: String,
    pub subject: Option<String>,
    /// Visit time, in whatever unit the caller tracks (years for follow-up).
    pub time: Option<f64>,
    pub disease: Option<String>,
    pub peristalsis: Option<u8>,
    pub augmented: bool,
    pub stats_id: String,
    pub coords: Vec<f64>,
}

impl VdlVector {
    pub fn latent(&self) -> &[f64] {
        &self.coords[..LATENT_DIM]
    }
}

/// Latent mean followed by the normalised discrete parameters.
pub fn assemble_vdl(id: &str, mu: &[f64], params: &PrimaryParams, stats: &DiscreteStats) -> Result<VdlVector> {
    if mu.len() != LATENT_DIM {
        return Err(Error::Invalid(format!("latent mean has {} values, expected {LATENT_DIM}", mu.len())));
    }
    if mu.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("latent mean is not finite".into()));
    }
    let mut coords = mu.to_vec();
    coords.extend(stats.normalize(params)?);
    Ok(VdlVector {
        id: id.to_string(),
        subject: None,
        time: None,
        disease: None,
        peristalsis: None,
        augmented: false,
        stats_id: stats.id.clone(),
        coords,
    })
}

/// Ordered class names; labels are indices into it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    pub names: Vec<String>,
}

impl LabelSet {
    /// The thirteen manometry groups of the clinical cohort, "Inconclusive" included.
    pub fn clinical() -> Self {
        let names = [
            "normal",
            "achalasia-i",
            "achalasia-ii",
            "achalasia-iii",
            "egjoo",
            "hypercontractility",
            "des",
            "iem",
            "absent-contractility",
            "eoe",
            "gerd",
            "scleroderma",
            "inconclusive",
        ];
        LabelSet { names: names.iter().map(|s| s.to_string()).collect() }
    }

    /// The distinct labels present, in first-seen order.
    pub fn observed<'a>(labels: impl IntoIterator<Item = &'a str>) -> Self {
        let mut names: Vec<String> = Vec::new();
        for l in labels {
            if !names.iter().any(|n| n == l) {
                names.push(l.to_string());
            }
        }
        LabelSet { names }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index(&self, name: &str) -> Result<usize> {
        self.names.iter().position(|n| n == name).ok_or_else(|| Error::Invalid(format!("label '{name}' is not in the label set")))
    }

    /// Removes classes that have no samples and returns the remapped labels.
    pub fn compact(&self, labels: &[usize]) -> (LabelSet, Vec<usize>) {
        let mut map = vec![usize::MAX; self.len()];
        let mut names = Vec::new();
        for (i, n) in self.names.iter().enumerate() {
            if labels.contains(&i) {
                map[i] = names.len();
                names.push(n.clone());
            }
        }
        (LabelSet { names }, labels.iter().map(|&l| map[l]).collect())
    }
}

const META_COLS: [&str; 7] = ["id", "subject", "time", "disease", "peristalsis", "augmented", "stats_id"];

/// CSV with the metadata columns followed by `v0 … v29`.
pub fn write_dataset<W: Write>(w: W, rows: &[VdlVector]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = META_COLS.iter().map(|s| s.to_string()).collect();
    header.extend((0..VDL_DIM).map(|i| format!("v{i}")));
    out.write_record(&header)?;
    for r in rows {
        if r.coords.len() != VDL_DIM {
            return Err(Error::Invalid(format!("vector {} has {} coordinates", r.id, r.coords.len())));
        }
        let mut rec = vec![
            r.id.clone(),
            r.subject.clone().unwrap_or_default(),
            r.time.map(|t| format!("{t:?}")).unwrap_or_default(),
            r.disease.clone().unwrap_or_default(),
            r.peristalsis.map(|p| p.to_string()).unwrap_or_default(),
            (r.augmented as u8).to_string(),
            r.stats_id.clone(),
        ];
        rec.extend(r.coords.iter().map(|v| format!("{v:?}")));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(r: R) -> Result<Vec<VdlVector>> {
    let mut rd = csv::Reader::from_reader(r);
    let header = rd.headers()?.clone();
    if header.len() != META_COLS.len() + VDL_DIM || header.iter().take(7).ne(META_COLS.iter().copied()) {
        return Err(Error::Schema("landscape CSV header does not match the expected columns".into()));
    }
    let opt = |s: &str| if s.is_empty() { None } else { Some(s.to_string()) };
    let num = |s: &str, what: &str| -> Result<f64> { s.parse().map_err(|_| Error::Schema(format!("bad {what} value '{s}'"))) };
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let coords = (0..VDL_DIM).map(|i| num(&rec[7 + i], "coordinate")).collect::<Result<Vec<_>>>()?;
        out.push(VdlVector {
            id: rec[0].to_string(),
            subject: opt(&rec[1]),
            time: opt(&rec[2]).map(|s| num(&s, "time")).transpose()?,
            disease: opt(&rec[3]),
            peristalsis: opt(&rec[4]).map(|s| s.parse().map_err(|_| Error::Schema(format!("bad peristalsis flag '{s}'")))).transpose()?,
            augmented: &rec[5] == "1",
            stats_id: rec[6].to_string(),
            coords,
        });
    }
    Ok(out)
}

/// Coordinates of a set of vectors.
pub fn coords(rows: &[VdlVector]) -> Vec<Vec<f64>> {
    rows.iter().map(|r| r.coords.clone()).collect()
}

/// Euclidean distance.
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Component-wise mean of equally long rows.
pub fn centroid<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Option<Vec<f64>> {
    let mut it = rows.into_iter();
    let mut acc = it.next()?.to_vec();
    let mut n = 1.0;
    for r in it {
        for (a, v) in acc.iter_mut().zip(r) {
            *a += v;
        }
        n += 1.0;
    }
    acc.iter_mut().for_each(|a| *a /= n);
    Some(acc)
}

/// Seeded shuffle split; returns (train, test) indices.
pub fn train_test_split(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut crate::synth::stream_rng(seed, 0x5350_4c49));
    let n_test = ((n as f64) * test_fraction).round() as usize;
    let test = idx.split_off(n - n_test.min(n));
    (idx, test)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats() -> DiscreteStats {
        let lo = PrimaryParams::from_array([1e7, -1000.0, 1000.0, 1.0, 3e-5, 0.5]);
        let hi = PrimaryParams::from_array([2e7, -200.0, 5000.0, 9.0, 5e-5, 1.5]);
        DiscreteStats::fit(&[lo, hi]).unwrap()
    }

    #[test]
    fn zero_latent_mid_params() {
        let s = stats();
        let mid = PrimaryParams::from_array([1.5e7, -600.0, 3000.0, 5.0, 4e-5, 1.0]);
        let v = assemble_vdl("a", &[0.0; 24], &mid, &s).unwrap();
        assert_eq!(v.coords.len(), 30);
        for x in &v.coords[24..] {
            assert!((x - 0.5).abs() < 1e-12);
        }
        assert_eq!(v, assemble_vdl("a", &[0.0; 24], &mid, &s).unwrap());
        assert!(assemble_vdl("a", &[0.0; 23], &mid, &s).is_err());
    }

    #[test]
    fn dataset_csv_round_trip() {
        let s = stats();
        let p = PrimaryParams::from_array([1.2e7, -300.0, 2000.0, 2.0, 4e-5, 0.7]);
        let mut a = assemble_vdl("s00001", &[0.1; 24], &p, &s).unwrap();
        a.disease = Some("normal".into());
        a.peristalsis = Some(1);
        a.time = Some(0.1 + 0.2);
        let mut b = a.clone();
        b.id = "s00002".into();
        b.subject = Some("p7".into());
        b.augmented = true;
        b.coords[3] = -1.0 / 3.0;
        let mut buf = Vec::new();
        write_dataset(&mut buf, &[a.clone(), b.clone()]).unwrap();
        assert_eq!(read_dataset(buf.as_slice()).unwrap(), vec![a, b]);
    }

    #[test]
    fn label_sets() {
        assert_eq!(LabelSet::clinical().len(), 13);
        let l = LabelSet::observed(["b", "a", "b"]);
        assert_eq!(l.names, vec!["b", "a"]);
        let (c, m) = LabelSet::clinical().compact(&[4, 0, 4]);
        assert_eq!(c.names, vec!["normal", "egjoo"]);
        assert_eq!(m, vec![1, 0, 1]);
    }

    #[test]
    fn split_sizes() {
        let (tr, te) = train_test_split(100, 0.25, 1);
        assert_eq!((tr.len(), te.len()), (75, 25));
        let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
        all.sort();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }
}
