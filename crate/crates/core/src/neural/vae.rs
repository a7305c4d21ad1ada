//! Network 1: convolutional variational autoencoder.
//!
//! Encoder: two stride-2 3×3 convolutions (g → g/2 → g/4) with ReLU, then one
//! dense layer emitting μ and log σ² side by side. Decoder: dense to the
//! g/4 feature map, then two rounds of nearest 2× upsampling plus 3×3
//! convolution, ending in a sigmoid.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{cast, LayerKind, Real, Sequential, Shape};
use super::{kld_closed_form, loss_parts, reparameterize};
use crate::error::{Error, Result};
use crate::synth::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VaeArch {
    /// Side of the square input image; must be divisible by 4.
    pub grid: usize,
    pub c1: usize,
    pub c2: usize,
    pub latent: usize,
}

impl VaeArch {
    pub fn desk() -> Self {
        VaeArch { grid: crate::GRID, c1: 8, c2: 16, latent: crate::LATENT_DIM }
    }

    pub fn descriptor(&self) -> Vec<u32> {
        [self.grid, self.c1, self.c2, self.latent].iter().map(|&v| v as u32).collect()
    }

    pub fn from_descriptor(d: &[u32]) -> Result<Self> {
        match d {
            [g, c1, c2, m] => {
                let a = VaeArch { grid: *g as usize, c1: *c1 as usize, c2: *c2 as usize, latent: *m as usize };
                a.validate()?;
                Ok(a)
            }
            _ => Err(Error::Checkpoint(format!("autoencoder descriptor has {} fields, expected 4", d.len()))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid == 0 || !self.grid.is_multiple_of(4) || self.c1 == 0 || self.c2 == 0 || self.latent == 0 {
            return Err(Error::Invalid(format!("bad autoencoder architecture {self:?}")));
        }
        Ok(())
    }

    pub fn n_pixels(&self) -> usize {
        self.grid * self.grid
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode<F> {
    pub mu: Vec<F>,
    pub log_var: Vec<F>,
    pub z: Vec<F>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts<F> {
    pub total: F,
    /// Unscaled KL divergence.
    pub kld: F,
    /// Mean squared reconstruction error.
    pub mse: F,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vae<F> {
    pub arch: VaeArch,
    encoder: Sequential,
    head: Sequential,
    decoder: Sequential,
    pub params: Vec<F>,
}

impl<F: Real> Vae<F> {
    /// Zero parameters; use [`Vae::new`] for a trainable initialisation.
    pub fn blank(arch: VaeArch) -> Result<Self> {
        arch.validate()?;
        let g = arch.grid;
        let q = g / 4;
        let feat = Shape::new(arch.c2, q, q);
        let encoder = Sequential::new(
            Shape::new(1, g, g),
            &[
                LayerKind::Conv3 { out_c: arch.c1, stride: 2 },
                LayerKind::Relu,
                LayerKind::Conv3 { out_c: arch.c2, stride: 2 },
                LayerKind::Relu,
                LayerKind::Reshape(Shape::flat(feat.len())),
            ],
            0,
        );
        let head = Sequential::new(encoder.output(), &[LayerKind::Dense { out: 2 * arch.latent }], encoder.n_params);
        let decoder = Sequential::new(
            Shape::flat(arch.latent),
            &[
                LayerKind::Dense { out: feat.len() },
                LayerKind::Relu,
                LayerKind::Reshape(feat),
                LayerKind::Upsample2,
                LayerKind::Conv3 { out_c: arch.c1, stride: 1 },
                LayerKind::Relu,
                LayerKind::Upsample2,
                LayerKind::Conv3 { out_c: 1, stride: 1 },
                LayerKind::Sigmoid,
            ],
            encoder.n_params + head.n_params,
        );
        debug_assert_eq!(decoder.output(), encoder.input);
        let n = encoder.n_params + head.n_params + decoder.n_params;
        Ok(Vae { arch, encoder, head, decoder, params: vec![F::zero(); n] })
    }

    pub fn new(arch: VaeArch, seed: u64) -> Result<Self> {
        let mut v = Self::blank(arch)?;
        let mut rng = stream_rng(seed, 0x0056_4145);
        for s in [&v.encoder, &v.head, &v.decoder] {
            s.init(&mut v.params, &mut rng);
        }
        Ok(v)
    }

    pub fn with_params(arch: VaeArch, params: Vec<F>) -> Result<Self> {
        let mut v = Self::blank(arch)?;
        if params.len() != v.params.len() {
            return Err(Error::Checkpoint(format!("autoencoder needs {} parameters, got {}", v.params.len(), params.len())));
        }
        v.params = params;
        Ok(v)
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Same network in another precision.
    pub fn cast<G: Real>(&self) -> Vae<G> {
        Vae {
            arch: self.arch,
            encoder: self.encoder.clone(),
            head: self.head.clone(),
            decoder: self.decoder.clone(),
            params: self.params.iter().map(|p| cast(p.to_f64().unwrap())).collect(),
        }
    }

    fn check_image(&self, x: &[F]) -> Result<()> {
        if x.len() != self.arch.n_pixels() {
            return Err(Error::Invalid(format!(
                "image has {} values, the autoencoder expects {}×{}",
                x.len(),
                self.arch.grid,
                self.arch.grid
            )));
        }
        Ok(())
    }

    /// Latent mean and log-variance.
    pub fn encode(&self, x: &[F]) -> Result<(Vec<F>, Vec<F>)> {
        self.check_image(x)?;
        let h = self.encoder.apply(&self.params, x);
        let mut out = self.head.apply(&self.params, &h);
        let lv = out.split_off(self.arch.latent);
        Ok((out, lv))
    }

    pub fn decode(&self, z: &[F]) -> Result<Vec<F>> {
        if z.len() != self.arch.latent {
            return Err(Error::Invalid(format!("latent has {} values, expected {}", z.len(), self.arch.latent)));
        }
        Ok(self.decoder.apply(&self.params, z))
    }

    pub fn forward(&self, x: &[F], eps: &[F]) -> Result<(Vec<F>, LatentCode<F>)> {
        let (mu, log_var) = self.encode(x)?;
        if eps.len() != mu.len() {
            return Err(Error::Invalid(format!("noise has {} values, expected {}", eps.len(), mu.len())));
        }
        let z = reparameterize(&mu, &log_var, eps);
        let r = self.decode(&z)?;
        Ok((r, LatentCode { mu, log_var, z }))
    }

    pub fn loss(&self, x: &[F], eps: &[F], beta: F) -> Result<LossParts<F>> {
        let (r, code) = self.forward(x, eps)?;
        Ok(loss_parts(&r, x, &code.mu, &code.log_var, beta))
    }

    /// Loss of one sample with its gradient accumulated into `grads` after
    /// multiplying by `scale` (1/B for a batch mean).
    pub fn loss_grad(&self, x: &[F], eps: &[F], beta: F, scale: F, grads: &mut [F]) -> Result<LossParts<F>> {
        self.check_image(x)?;
        let m = self.arch.latent;
        let p = &self.params;
        let enc = self.encoder.forward(p, x);
        let head = self.head.forward(p, enc.last().unwrap());
        let out = head.last().unwrap();
        let (mu, lv) = out.split_at(m);
        let z = reparameterize(mu, lv, eps);
        let dec = self.decoder.forward(p, &z);
        let recon = dec.last().unwrap();
        let parts = loss_parts(recon, x, mu, lv, beta);

        let n = cast::<F>(x.len() as f64);
        let mf = cast::<F>(m as f64);
        let half = cast::<F>(0.5);
        let two = cast::<F>(2.0);
        let gr: Vec<F> = recon.iter().zip(x).map(|(&a, &b)| scale * two * beta / n * (a - b)).collect();
        let gz = self.decoder.backward(p, &dec, &gr, grads);
        let mut gh = vec![F::zero(); 2 * m];
        for j in 0..m {
            let sd = (half * lv[j]).exp();
            gh[j] = gz[j] + scale * mu[j] / mf;
            gh[m + j] = gz[j] * eps[j] * half * sd - scale * half * (F::one() - lv[j].exp()) / mf;
        }
        let ge = self.head.backward(p, &head, &gh, grads);
        self.encoder.backward(p, &enc, &ge, grads);
        Ok(parts)
    }

    /// Draws one ε vector.
    pub fn sample_eps<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<F> {
        (0..self.arch.latent).map(|_| cast(rng.sample::<f64, _>(rand_distr::StandardNormal))).collect()
    }

    /// KL divergence of one encoded image from the prior.
    pub fn kld(&self, x: &[F]) -> Result<F> {
        let (mu, lv) = self.encode(x)?;
        Ok(kld_closed_form(&mu, &lv))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::gradcheck::max_relative_error;

    fn tiny() -> VaeArch {
        VaeArch { grid: 8, c1: 2, c2: 3, latent: 3 }
    }

    #[test]
    fn desk_shapes() {
        let v = Vae::<f32>::new(VaeArch::desk(), 1).unwrap();
        let x = vec![0.3f32; 256];
        let (r, code) = v.forward(&x, &[0.0; 24]).unwrap();
        assert_eq!(r.len(), 256);
        assert_eq!(code.mu.len(), 24);
        assert!(r.iter().all(|v| v.is_finite() && *v > 0.0 && *v < 1.0));
        let (r0, _) = v.forward(&vec![0.0; 256], &[0.0; 24]).unwrap();
        assert!(r0.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn deterministic_under_seed() {
        let a = Vae::<f32>::new(VaeArch::desk(), 9).unwrap();
        let b = Vae::<f32>::new(VaeArch::desk(), 9).unwrap();
        let x: Vec<f32> = (0..256).map(|i| (i as f32 * 0.37).sin().abs()).collect();
        let eps = vec![0.1f32; 24];
        assert_eq!(a.forward(&x, &eps).unwrap(), b.forward(&x, &eps).unwrap());
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let v = Vae::<f64>::new(tiny(), 1).unwrap();
        assert!(v.encode(&[0.0; 10]).is_err());
        assert!(v.decode(&[0.0; 2]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut v = Vae::<f64>::new(tiny(), 4).unwrap();
        let mut rng = stream_rng(4, 1);
        for p in v.params.iter_mut() {
            *p += 0.05 * rng.random_range(-1.0..1.0);
        }
        let x: Vec<f64> = (0..64).map(|_| rng.random_range(0.0..1.0)).collect();
        let eps = v.sample_eps(&mut rng);
        let mut g = vec![0.0; v.n_params()];
        v.loss_grad(&x, &eps, 10.0, 1.0, &mut g).unwrap();
        let (err, at) = max_relative_error(&v.params.clone(), &g, 1e-5, |p| {
            let w = Vae::with_params(v.arch, p.to_vec()).unwrap();
            w.loss(&x, &eps, 10.0).unwrap().total
        });
        assert!(err < 1e-4, "relative error {err} at parameter {at}");
    }
}
