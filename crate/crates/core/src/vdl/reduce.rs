//! Principal components and linear discriminants down to three dimensions.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pca,
    Lda,
}

impl Method {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pca" => Ok(Method::Pca),
            "lda" => Ok(Method::Lda),
            _ => Err(Error::Invalid(format!("unknown reduction method '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedSpace {
    pub method: Method,
    pub mean: Vec<f64>,
    /// Unit-length directions, one per output dimension.
    pub directions: Vec<Vec<f64>>,
    /// PCA: explained-variance ratio. LDA: generalised eigenvalue (Fisher ratio).
    pub explained: Vec<f64>,
    /// LDA only: per-class means in the input space.
    pub class_means: Option<Vec<Vec<f64>>>,
    /// LDA only: ridge added to the within-class scatter.
    pub lambda: Option<f64>,
}

impl ReducedSpace {
    pub fn dim_in(&self) -> usize {
        self.mean.len()
    }

    pub fn dim_out(&self) -> usize {
        self.directions.len()
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim_in() {
            return Err(Error::Invalid(format!("point has {} coordinates, space expects {}", x.len(), self.dim_in())));
        }
        Ok(self.directions.iter().map(|w| w.iter().zip(x).zip(&self.mean).map(|((w, x), m)| w * (x - m)).sum()).collect())
    }

    pub fn project_all(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        rows.iter().map(|r| self.project(r)).collect()
    }
}

fn to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let d = rows.first().map_or(0, |r| r.len());
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::Invalid("rows must be non-empty and of equal length".into()));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("non-finite coordinates".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
}

fn column_mean(x: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_fn(x.ncols(), |j, _| x.column(j).mean())
}

/// Eigenpairs sorted by decreasing eigenvalue, each vector signed so that
/// its largest-magnitude entry is positive.
fn sorted_eigen(m: DMatrix<f64>) -> Vec<(f64, DVector<f64>)> {
    let e = SymmetricEigen::new(m);
    let mut pairs: Vec<(f64, DVector<f64>)> =
        e.eigenvalues.iter().enumerate().map(|(i, &l)| (l, e.eigenvectors.column(i).into_owned())).collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    for (_, v) in pairs.iter_mut() {
        let k = v.iamax();
        if v[k] < 0.0 {
            *v = -v.clone();
        }
    }
    pairs
}

/// Sample covariance (divisor n − 1).
pub fn covariance(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let x = to_matrix(rows)?;
    let mu = column_mean(&x);
    let mut c = x.clone();
    for mut r in c.row_iter_mut() {
        r -= mu.transpose();
    }
    Ok(c.transpose() * c / (rows.len() as f64 - 1.0).max(1.0))
}

/// Top-`k` principal directions. Fewer are returned when the data rank is lower.
pub fn pca_reduce(rows: &[Vec<f64>], k: usize) -> Result<ReducedSpace> {
    if rows.len() < 4 {
        return Err(Error::Invalid(format!("PCA needs at least 4 samples, got {}", rows.len())));
    }
    let x = to_matrix(rows)?;
    let mean = column_mean(&x);
    let pairs = sorted_eigen(covariance(rows)?);
    let total: f64 = pairs.iter().map(|p| p.0.max(0.0)).sum();
    let tol = 1e-12 * pairs[0].0.abs().max(f64::MIN_POSITIVE);
    let mut directions = Vec::new();
    let mut explained = Vec::new();
    for (l, v) in pairs.into_iter().take(k) {
        if l <= tol {
            log::warn!("data rank is below {k}; keeping {} principal components", directions.len());
            break;
        }
        directions.push(v.iter().copied().collect());
        explained.push(if total > 0.0 { l / total } else { 0.0 });
    }
    if directions.is_empty() {
        return Err(Error::Degenerate("all samples are identical".into()));
    }
    Ok(ReducedSpace { method: Method::Pca, mean: mean.iter().copied().collect(), directions, explained, class_means: None, lambda: None })
}

/// Within-class scatter, between-class scatter and the class means.
pub type Scatter = (DMatrix<f64>, DMatrix<f64>, Vec<DVector<f64>>);

pub fn scatter(rows: &[Vec<f64>], labels: &[usize]) -> Result<Scatter> {
    let x = to_matrix(rows)?;
    if labels.len() != rows.len() {
        return Err(Error::Invalid(format!("{} labels for {} rows", labels.len(), rows.len())));
    }
    let d = x.ncols();
    let n_class = labels.iter().max().map_or(0, |m| m + 1);
    let mu = column_mean(&x);
    let mut means = vec![DVector::zeros(d); n_class];
    let mut counts = vec![0usize; n_class];
    for (i, &l) in labels.iter().enumerate() {
        means[l] += x.row(i).transpose();
        counts[l] += 1;
    }
    for (m, &c) in means.iter_mut().zip(&counts) {
        if c > 0 {
            *m /= c as f64;
        }
    }
    let mut sw = DMatrix::zeros(d, d);
    for (i, &l) in labels.iter().enumerate() {
        let dv = x.row(i).transpose() - &means[l];
        sw += &dv * dv.transpose();
    }
    let mut sb = DMatrix::zeros(d, d);
    for (m, &c) in means.iter().zip(&counts) {
        let dv = m - &mu;
        sb += (c as f64) * &dv * dv.transpose();
    }
    Ok((sw, sb, means))
}

/// Ratio trace of a projection: tr((Wᵀ S_w W)⁻¹ Wᵀ S_b W).
pub fn fisher_criterion(rows: &[Vec<f64>], labels: &[usize], directions: &[Vec<f64>]) -> Result<f64> {
    let (sw, sb, _) = scatter(rows, labels)?;
    let d = sw.nrows();
    let w = DMatrix::from_fn(d, directions.len(), |i, j| directions[j][i]);
    let a = w.transpose() * &sw * &w;
    let b = w.transpose() * &sb * &w;
    let inv = a.try_inverse().ok_or_else(|| Error::Degenerate("projected within-class scatter is singular".into()))?;
    Ok((inv * b).trace())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LdaOptions {
    /// Ridge λ = scale · trace(S_w) / d.
    pub ridge_scale: f64,
}

impl Default for LdaOptions {
    fn default() -> Self {
        LdaOptions { ridge_scale: 1e-6 }
    }
}

/// Top-`k` discriminant directions from S_b w = λ (S_w + λI) w.
pub fn lda_reduce(rows: &[Vec<f64>], labels: &[usize], k: usize, opts: LdaOptions) -> Result<ReducedSpace> {
    let n_class = labels.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; n_class];
    labels.iter().for_each(|&l| counts[l] += 1);
    let present = counts.iter().filter(|&&c| c > 0).count();
    if present < 2 {
        return Err(Error::Invalid("LDA needs at least two classes".into()));
    }
    if let Some(c) = counts.iter().position(|&c| c > 0 && c < 4) {
        return Err(Error::Invalid(format!("class {c} has {} samples; LDA needs at least 4 per class", counts[c])));
    }
    if present - 1 < k {
        log::warn!("{present} classes give only {} discriminant directions with non-zero spread", present - 1);
    }
    let (mut sw, sb, means) = scatter(rows, labels)?;
    let d = sw.nrows();
    let lambda = opts.ridge_scale * sw.trace() / d as f64;
    for i in 0..d {
        sw[(i, i)] += lambda;
    }
    let chol = sw.clone().cholesky().ok_or_else(|| Error::Degenerate("within-class scatter is not positive definite".into()))?;
    let l = chol.l();
    let linv = l.clone().try_inverse().ok_or_else(|| Error::Degenerate("singular scatter factor".into()))?;
    let m = &linv * &sb * linv.transpose();
    let m = (&m + m.transpose()) * 0.5;
    let mut directions = Vec::new();
    let mut explained = Vec::new();
    for (ev, v) in sorted_eigen(m).into_iter().take(k.min(d)) {
        let mut w = linv.transpose() * v;
        w /= w.norm();
        let k = w.iamax();
        if w[k] < 0.0 {
            w = -w;
        }
        directions.push(w.iter().copied().collect());
        explained.push(ev.max(0.0));
    }
    let x = to_matrix(rows)?;
    Ok(ReducedSpace {
        method: Method::Lda,
        mean: column_mean(&x).iter().copied().collect(),
        directions,
        explained,
        class_means: Some(means.iter().map(|m| m.iter().copied().collect()).collect()),
        lambda: Some(lambda),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    use crate::synth::stream_rng;

    fn gauss(rng: &mut impl Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect()).collect()
    }

    #[test]
    fn line_has_one_component() {
        let dir: Vec<f64> = (0..30).map(|i| (i as f64 + 1.0).sqrt()).collect();
        let rows: Vec<Vec<f64>> = (0..10).map(|t| dir.iter().map(|v| v * t as f64).collect()).collect();
        let r = pca_reduce(&rows, 3).unwrap();
        assert_eq!(r.dim_out(), 1);
        assert!((r.explained[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pca_directions_orthonormal_and_sorted() {
        let mut rng = stream_rng(1, 0);
        let rows = gauss(&mut rng, 50, 30);
        let r = pca_reduce(&rows, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = r.directions[i].iter().zip(&r.directions[j]).map(|(a, b)| a * b).sum();
                assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10);
            }
        }
        assert!(r.explained.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn isotropic_ratios_near_uniform() {
        let mut rng = stream_rng(2, 0);
        let rows = gauss(&mut rng, 20_000, 30);
        let r = pca_reduce(&rows, 3).unwrap();
        for e in &r.explained {
            assert!((e - 1.0 / 30.0).abs() < 0.006, "{e}");
        }
    }

    #[test]
    fn lda_aligns_with_mean_difference() {
        let mut rng = stream_rng(3, 0);
        let shift: Vec<f64> = (0..10)
            .map(|i| {
                if i == 2 {
                    6.0
                } else if i == 7 {
                    -3.0
                } else {
                    0.0
                }
            })
            .collect();
        let mut rows = gauss(&mut rng, 2000, 10);
        let mut labels = vec![0; 1000];
        labels.extend(vec![1; 1000]);
        for r in rows[1000..].iter_mut() {
            for (x, s) in r.iter_mut().zip(&shift) {
                *x += s;
            }
        }
        let r = lda_reduce(&rows, &labels, 1, LdaOptions::default()).unwrap();
        let norm = shift.iter().map(|s| s * s).sum::<f64>().sqrt();
        let cos: f64 = r.directions[0].iter().zip(&shift).map(|(a, b)| a * b).sum::<f64>() / norm;
        assert!(cos.abs() > 0.99, "cosine {cos}");
    }

    #[test]
    fn lda_rejects_single_class_and_tiny_classes() {
        let rows = vec![vec![0.0, 1.0]; 8];
        assert!(lda_reduce(&rows, &[0; 8], 1, LdaOptions::default()).is_err());
        assert!(lda_reduce(&rows, &[0, 0, 0, 0, 0, 1, 1, 1], 1, LdaOptions::default()).is_err());
    }
}
