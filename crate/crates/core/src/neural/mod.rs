//! Small neural networks with hand-written reverse-mode gradients.
//!
//! Network 1 is a convolutional VAE over normalised 16 × 16 activation
//! images; network 2 ([`WorkNet`]) regresses the four junction work metrics
//! from a landscape vector. Training runs single-threaded and is bitwise
//! reproducible under a seed.

pub mod checkpoint;
pub mod layers;
pub mod optim;
pub mod train;
pub mod vae;
pub mod worknet;

pub use layers::{LayerKind, Real, Sequential, Shape};
pub use optim::{Adam, Optimizer, RmsProp};
pub use train::{train_network1, train_network2, LrStage, VaeEpoch, VaeTrainConfig, WorkEpoch, WorkTrainConfig};
pub use vae::{LatentCode, LossParts, Vae, VaeArch};
pub use worknet::{WorkArch, WorkNet, WorkPredictor};

use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use layers::cast;

/// Flip-and-scale of one θ field: `1 − (θ − min)/(max − min)`, so contraction
/// troughs carry the largest value. A constant field maps to all zeros.
pub fn normalize_theta(theta: &Matrix) -> Matrix {
    ThetaScale::of(theta).apply(theta)
}

/// Fixed θ bounds for the flip-and-scale map. Fitted once over a training set
/// so that amplitudes stay comparable between images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaScale {
    pub min: f64,
    pub max: f64,
}

impl ThetaScale {
    pub fn of(theta: &Matrix) -> Self {
        ThetaScale { min: theta.min(), max: theta.max() }
    }

    pub fn fit<'a>(fields: impl IntoIterator<Item = &'a Matrix>) -> Self {
        let mut s = ThetaScale { min: f64::INFINITY, max: f64::NEG_INFINITY };
        for m in fields {
            s.min = s.min.min(m.min());
            s.max = s.max.max(m.max());
        }
        s
    }

    /// Values outside the bounds are clipped into [0, 1].
    pub fn apply(&self, theta: &Matrix) -> Matrix {
        let span = self.max - self.min;
        if !(span > 0.0) || !span.is_finite() {
            return Matrix::zeros(theta.rows(), theta.cols());
        }
        theta.map(|v| (1.0 - (v - self.min) / span).clamp(0.0, 1.0))
    }

    /// Inverse map from an image value back to θ.
    pub fn invert(&self, image: &Matrix) -> Matrix {
        image.map(|v| self.min + (1.0 - v) * (self.max - self.min))
    }
}

/// `−½ Σ (1 + log σ² − σ² − μ²)`.
pub fn kld_closed_form<F: Real>(mu: &[F], log_var: &[F]) -> F {
    assert_eq!(mu.len(), log_var.len());
    let half = cast::<F>(0.5);
    let mut s = F::zero();
    for (&m, &lv) in mu.iter().zip(log_var) {
        s += F::one() + lv - lv.exp() - m * m;
    }
    -half * s
}

/// `z = μ + ε · exp(½ log σ²)`.
pub fn reparameterize<F: Real>(mu: &[F], log_var: &[F], eps: &[F]) -> Vec<F> {
    assert!(mu.len() == log_var.len() && mu.len() == eps.len());
    let half = cast::<F>(0.5);
    mu.iter().zip(log_var).zip(eps).map(|((&m, &lv), &e)| m + e * (half * lv).exp()).collect()
}

/// Per-sample objective: `KLD / M + (β / N) Σ (x − x̂)²`.
pub fn loss_n1<F: Real>(recon: &[F], input: &[F], mu: &[F], log_var: &[F], beta: F) -> F {
    loss_parts(recon, input, mu, log_var, beta).total
}

pub(crate) fn loss_parts<F: Real>(recon: &[F], input: &[F], mu: &[F], log_var: &[F], beta: F) -> LossParts<F> {
    assert_eq!(recon.len(), input.len());
    let n = cast::<F>(input.len() as f64);
    let m = cast::<F>(mu.len() as f64);
    let mut sse = F::zero();
    for (&a, &b) in recon.iter().zip(input) {
        sse += (a - b) * (a - b);
    }
    let kld = kld_closed_form(mu, log_var);
    LossParts { total: kld / m + beta / n * sse, kld, mse: sse / n }
}

/// Mean squared error over all entries.
pub fn mse<F: Real>(a: &[F], b: &[F]) -> F {
    assert_eq!(a.len(), b.len());
    let mut s = F::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += (x - y) * (x - y);
    }
    s / cast(a.len() as f64)
}

/// Central finite-difference helpers for gradient checks.
pub mod gradcheck {
    /// Relative error with a floor on the denominator so that vanishing
    /// gradients are compared absolutely.
    pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
        (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
    }

    /// Worst relative error over all parameters. When the estimate disagrees
    /// it is retried with smaller steps (a difference straddling a ReLU kink)
    /// and one larger step (round-off on a tiny gradient), and the best kept.
    pub fn max_relative_error(params: &[f64], analytic: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> (f64, usize) {
        assert_eq!(params.len(), analytic.len());
        let mut p = params.to_vec();
        let mut worst = (0.0, 0);
        for i in 0..p.len() {
            let mut best = f64::INFINITY;
            for step in [h, 0.1 * h, 0.01 * h, 10.0 * h] {
                let orig = p[i];
                p[i] = orig + step;
                let up = f(&p);
                p[i] = orig - step;
                let down = f(&p);
                p[i] = orig;
                let err = relative_error(analytic[i], (up - down) / (2.0 * step));
                best = best.min(err);
                if best < 1e-6 {
                    break;
                }
            }
            if best > worst.0 {
                worst = (best, i);
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn normalize_examples() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 2.0]]).unwrap();
        let n = normalize_theta(&m);
        assert_eq!(n.as_slice(), &[1.0, 0.5, 0.0, 0.5]);
        let c = normalize_theta(&Matrix::filled(3, 3, 0.7));
        assert!(c.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn scale_round_trip() {
        let m = Matrix::from_fn(4, 4, |r, c| 0.3 + 0.1 * (r * 4 + c) as f64);
        let s = ThetaScale::of(&m);
        let back = s.invert(&s.apply(&m));
        assert!(back.max_abs_diff(&m) < 1e-12);
    }

    #[test]
    fn kld_examples() {
        assert_eq!(kld_closed_form(&[0.0f64; 24], &[0.0; 24]), 0.0);
        assert_relative_eq!(kld_closed_form(&[1.0f64], &[0.0]), 0.5);
    }

    #[test]
    fn kld_matches_monte_carlo() {
        let mut rng = crate::synth::stream_rng(3, 0);
        let (mu, lv) = (0.7f64, -0.4f64);
        let sd = (0.5 * lv).exp();
        let n = 200_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let e: f64 = rng.sample(StandardNormal);
            let z = mu + sd * e;
            // log q − log p for one dimension
            let d = -0.5 * e * e - sd.ln() + 0.5 * z * z;
            s += d;
            s2 += d * d;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        let exact = kld_closed_form(&[mu], &[lv]);
        assert!((mean - exact).abs() < 3.0 * se, "{mean} vs {exact} (se {se})");
    }

    #[test]
    fn reparameterize_examples() {
        assert_eq!(reparameterize(&[1.0, 2.0], &[0.3, -1.0], &[0.0, 0.0]), vec![1.0, 2.0]);
        assert_eq!(reparameterize(&[1.0], &[0.0], &[0.25]), vec![1.25]);
    }

    #[test]
    fn loss_examples() {
        let x = vec![0.5f64; 256];
        let mut r = x.clone();
        assert_eq!(loss_n1(&r, &x, &[0.0; 24], &[0.0; 24], 1000.0), 0.0);
        r[17] += 1.0;
        assert_relative_eq!(loss_n1(&r, &x, &[0.0; 24], &[0.0; 24], 1000.0), 1000.0 / 256.0, max_relative = 1e-12);
    }

    proptest! {
        #[test]
        fn kld_non_negative(mu in proptest::collection::vec(-3.0f64..3.0, 1..8), lv_seed in -2.0f64..2.0) {
            let lv: Vec<f64> = mu.iter().enumerate().map(|(i, _)| lv_seed * (i as f64 * 0.7).cos()).collect();
            prop_assert!(kld_closed_form(&mu, &lv) >= -1e-12);
        }

        #[test]
        fn normalized_in_unit_interval(vals in proptest::collection::vec(0.05f64..5.0, 16)) {
            let m = Matrix::from_vec(4, 4, vals).unwrap();
            let n = normalize_theta(&m);
            prop_assert!(n.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
            let argmin = m.as_slice().iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            if m.max() > m.min() {
                prop_assert_eq!(n.as_slice()[argmin], 1.0);
            }
        }
    }
}
