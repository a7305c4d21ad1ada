//! Straight-line traversal, trajectory extrapolation and treatment vectors.

use serde::{Deserialize, Serialize};

use super::reduce::ReducedSpace;
use super::{dist, VdlVector};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::neural::{Vae, WorkPredictor};
use crate::LATENT_DIM;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraversalPoint {
    /// Position along the path, 0 at the start and 1 at the end.
    pub s: f64,
    pub coords: Vec<f64>,
    /// Decoded image (flipped, normalised θ), cells × time.
    pub image: Matrix,
    pub work_normalized: Option<Vec<f64>>,
    /// J.
    pub work: Option<Vec<f64>>,
}

/// Decodes the latent block of a landscape point.
pub fn decode_point(vae: &Vae<f32>, coords: &[f64]) -> Result<Matrix> {
    if coords.len() < LATENT_DIM {
        return Err(Error::Invalid(format!("point has {} coordinates", coords.len())));
    }
    let z: Vec<f32> = coords[..LATENT_DIM].iter().map(|&v| v as f32).collect();
    let img = vae.decode(&z)?;
    let g = vae.arch.grid;
    Matrix::from_vec(g, g, img.iter().map(|&v| v as f64).collect())
}

/// `steps` evenly spaced points from `a` to `b`, both ends included.
pub fn traverse_latent(a: &[f64], b: &[f64], steps: usize, vae: &Vae<f32>, work: Option<&WorkPredictor>) -> Result<Vec<TraversalPoint>> {
    if steps < 2 {
        return Err(Error::Invalid(format!("a traversal needs at least 2 steps, got {steps}")));
    }
    if a.len() != b.len() {
        return Err(Error::Invalid("endpoints have different dimensions".into()));
    }
    (0..steps)
        .map(|k| {
            let s = k as f64 / (steps - 1) as f64;
            let coords: Vec<f64> = if k == 0 {
                a.to_vec()
            } else if k == steps - 1 {
                b.to_vec()
            } else {
                a.iter().zip(b).map(|(x, y)| (1.0 - s) * x + s * y).collect()
            };
            let image = decode_point(vae, &coords)?;
            let (work_normalized, work) = match work {
                Some(w) => {
                    let (n, p) = w.predict(&coords)?;
                    (Some(n), Some(p))
                }
                None => (None, None),
            };
            Ok(TraversalPoint { s, coords, image, work_normalized, work })
        })
        .collect()
}

/// Mean over time of (peak − mean) across the body cells, i.e. all rows but
/// the last `junction_cells`. Larger means a sharper contraction band.
pub fn band_contrast(image: &Matrix, junction_cells: usize) -> f64 {
    let body = image.rows() - junction_cells;
    let mut acc = 0.0;
    for t in 0..image.cols() {
        let col: Vec<f64> = (0..body).map(|r| image.get(r, t)).collect();
        let peak = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        acc += peak - col.iter().sum::<f64>() / body as f64;
    }
    acc / image.cols() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extrapolation {
    pub time: f64,
    pub coords: Vec<f64>,
    /// True when `time` lies outside the observed visits.
    pub extrapolated: bool,
}

/// Least-squares line per coordinate through `(time, coords)` visits, evaluated at `at`.
pub fn extrapolate_trajectory(points: &[(f64, Vec<f64>)], at: f64) -> Result<Extrapolation> {
    if points.len() < 2 {
        return Err(Error::Invalid(format!("trajectory needs at least 2 visits, got {}", points.len())));
    }
    let d = points[0].1.len();
    if points.iter().any(|p| p.1.len() != d || !p.0.is_finite()) {
        return Err(Error::Invalid("visits must share a dimension and have finite times".into()));
    }
    let n = points.len() as f64;
    let tbar = points.iter().map(|p| p.0).sum::<f64>() / n;
    let stt: f64 = points.iter().map(|p| (p.0 - tbar).powi(2)).sum();
    if !(stt > 0.0) {
        return Err(Error::Degenerate("all visits share one time".into()));
    }
    // Fit offsets from the first visit so a stationary subject comes back exactly.
    let base = &points[0].1;
    let coords = (0..d)
        .map(|j| {
            let dbar = points.iter().map(|p| p.1[j] - base[j]).sum::<f64>() / n;
            let slope = points.iter().map(|p| (p.0 - tbar) * (p.1[j] - base[j] - dbar)).sum::<f64>() / stt;
            base[j] + dbar + slope * (at - tbar)
        })
        .collect();
    let (lo, hi) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(p.0), h.max(p.0)));
    Ok(Extrapolation { time: at, coords, extrapolated: at < lo || at > hi })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceShift {
    pub group: String,
    pub pre_distance: f64,
    pub post_distance: f64,
    pub change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentReport {
    pub pre: String,
    pub post: String,
    pub magnitude: f64,
    /// Unit vector; `None` when the two points coincide.
    pub direction: Option<Vec<f64>>,
    pub reduced_magnitude: Option<f64>,
    pub reduced_direction: Option<Vec<f64>>,
    /// Distance to a reference centroid (full space) before and after.
    pub reference: Option<ReferenceShift>,
}

fn unit(v: Vec<f64>) -> (f64, Option<Vec<f64>>) {
    let m = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if m > 0.0 {
        (m, Some(v.iter().map(|x| x / m).collect()))
    } else {
        (0.0, None)
    }
}

/// Displacement from `pre` to `post`, optionally also in a reduced space and
/// relative to a reference centroid given as (name, 30-d centroid).
pub fn treatment_vector(
    pre: &VdlVector,
    post: &VdlVector,
    reduced: Option<&ReducedSpace>,
    reference: Option<(&str, &[f64])>,
) -> Result<TreatmentReport> {
    if pre.stats_id != post.stats_id {
        return Err(Error::Invalid(format!(
            "'{}' and '{}' were normalised with different statistics ({} vs {})",
            pre.id, post.id, pre.stats_id, post.stats_id
        )));
    }
    if pre.coords.len() != post.coords.len() {
        return Err(Error::Invalid("vectors have different dimensions".into()));
    }
    let (magnitude, direction) = unit(post.coords.iter().zip(&pre.coords).map(|(b, a)| b - a).collect());
    let (reduced_magnitude, reduced_direction) = match reduced {
        Some(r) => {
            let (a, b) = (r.project(&pre.coords)?, r.project(&post.coords)?);
            let (m, d) = unit(b.iter().zip(&a).map(|(y, x)| y - x).collect());
            (Some(m), d)
        }
        None => (None, None),
    };
    let reference = reference.map(|(g, c)| {
        let (p0, p1) = (dist(&pre.coords, c), dist(&post.coords, c));
        ReferenceShift { group: g.to_string(), pre_distance: p0, post_distance: p1, change: p1 - p0 }
    });
    Ok(TreatmentReport {
        pre: pre.id.clone(),
        post: post.id.clone(),
        magnitude,
        direction,
        reduced_magnitude,
        reduced_direction,
        reference,
    })
}
