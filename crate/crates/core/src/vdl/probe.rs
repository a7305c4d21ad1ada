//! Linear probe: ridge-regularised logistic regression fitted by Newton steps
//! on standardised features.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Weights over standardised features, bias last.
    pub weights: Vec<f64>,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

impl LinearProbe {
    pub fn fit(x: &[Vec<f64>], y: &[bool], ridge: f64) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::Invalid(format!("{} samples with {} labels", x.len(), y.len())));
        }
        let d = x[0].len();
        let n = x.len();
        let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
        let scale: Vec<f64> = (0..d)
            .map(|j| {
                let v = x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n as f64;
                if v > 0.0 {
                    v.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let a = DMatrix::from_fn(n, d + 1, |i, j| if j == d { 1.0 } else { (x[i][j] - mean[j]) / scale[j] });
        let t = DVector::from_fn(n, |i, _| if y[i] { 1.0 } else { 0.0 });
        let mut w = DVector::zeros(d + 1);
        for _ in 0..50 {
            let p = (&a * &w).map(sigmoid);
            let mut g = a.transpose() * (&p - &t);
            let mut h = DMatrix::zeros(d + 1, d + 1);
            for i in 0..n {
                let s = p[i] * (1.0 - p[i]);
                let row = a.row(i);
                h += s * row.transpose() * row;
            }
            for j in 0..d {
                g[j] += ridge * w[j];
                h[(j, j)] += ridge;
            }
            h[(d, d)] += 1e-12;
            let step = h.lu().solve(&g).ok_or_else(|| Error::Degenerate("singular probe Hessian".into()))?;
            w -= &step;
            if step.amax() < 1e-10 {
                break;
            }
        }
        Ok(LinearProbe { mean, scale, weights: w.iter().copied().collect() })
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        let d = self.mean.len();
        let z: f64 = (0..d).map(|j| self.weights[j] * (x[j] - self.mean[j]) / self.scale[j]).sum::<f64>() + self.weights[d];
        sigmoid(z)
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        self.probability(x) >= 0.5
    }

    pub fn accuracy(&self, x: &[Vec<f64>], y: &[bool]) -> f64 {
        x.iter().zip(y).filter(|(r, &l)| self.predict(r) == l).count() as f64 / y.len().max(1) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separates_a_half_plane() {
        let x: Vec<Vec<f64>> = (0..200).map(|i| vec![(i as f64 * 0.731).sin() * 3.0, (i as f64 * 1.37).cos() * 3.0]).collect();
        let y: Vec<bool> = x.iter().map(|r| r[0] + 0.5 * r[1] > 0.2).collect();
        let p = LinearProbe::fit(&x, &y, 1e-3).unwrap();
        assert!(p.accuracy(&x, &y) >= 0.98);
    }
}
