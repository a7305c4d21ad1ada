//! Network 2: dense ReLU regressor from a landscape vector to the four work
//! metrics, all in min-max normalised units.

use serde::{Deserialize, Serialize};

use super::layers::{cast, LayerKind, Real, Sequential, Shape};
use crate::error::{Error, Result};
use crate::stats::MinMax;
use crate::synth::stream_rng;

/// Inputs slightly outside [0, 1] by less than this are accepted.
pub const INPUT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkArch {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
}

impl WorkArch {
    pub fn desk() -> Self {
        WorkArch { input: crate::VDL_DIM, hidden: vec![75; 3], output: 4 }
    }

    pub fn descriptor(&self) -> Vec<u32> {
        let mut d = vec![self.input as u32, self.output as u32];
        d.extend(self.hidden.iter().map(|&h| h as u32));
        d
    }

    pub fn from_descriptor(d: &[u32]) -> Result<Self> {
        if d.len() < 2 || d.contains(&0) {
            return Err(Error::Checkpoint(format!("bad regressor descriptor {d:?}")));
        }
        Ok(WorkArch { input: d[0] as usize, output: d[1] as usize, hidden: d[2..].iter().map(|&h| h as usize).collect() })
    }

    fn kinds(&self) -> Vec<LayerKind> {
        let mut k = Vec::new();
        for &h in self.hidden.iter().chain(std::iter::once(&self.output)) {
            k.push(LayerKind::Dense { out: h });
            k.push(LayerKind::Relu);
        }
        k
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkNet<F> {
    pub arch: WorkArch,
    net: Sequential,
    pub params: Vec<F>,
}

impl<F: Real> WorkNet<F> {
    pub fn blank(arch: WorkArch) -> Self {
        let net = Sequential::new(Shape::flat(arch.input), &arch.kinds(), 0);
        let n = net.n_params;
        WorkNet { arch, net, params: vec![F::zero(); n] }
    }

    /// Glorot weights; the output bias starts at 0.1 so the final ReLU is live.
    pub fn new(arch: WorkArch, seed: u64) -> Self {
        let mut w = Self::blank(arch);
        w.net.init(&mut w.params, &mut stream_rng(seed, 0x574f_524b));
        let last = w.net.layers.iter().rev().find(|l| l.n_params > 0).unwrap();
        let nb = w.arch.output;
        for b in &mut w.params[last.offset + last.n_params - nb..last.offset + last.n_params] {
            *b = cast(0.1);
        }
        w
    }

    pub fn with_params(arch: WorkArch, params: Vec<F>) -> Result<Self> {
        let mut w = Self::blank(arch);
        if params.len() != w.params.len() {
            return Err(Error::Checkpoint(format!("regressor needs {} parameters, got {}", w.params.len(), params.len())));
        }
        w.params = params;
        Ok(w)
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn cast<G: Real>(&self) -> WorkNet<G> {
        WorkNet { arch: self.arch.clone(), net: self.net.clone(), params: self.params.iter().map(|p| cast(p.to_f64().unwrap())).collect() }
    }

    fn check(&self, x: &[F]) -> Result<()> {
        if x.len() != self.arch.input {
            return Err(Error::Invalid(format!("regressor input has {} values, expected {}", x.len(), self.arch.input)));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[F]) -> Result<Vec<F>> {
        self.check(x)?;
        Ok(self.net.apply(&self.params, x))
    }

    /// Forward pass on a normalised landscape vector; rejects inputs outside [0, 1].
    pub fn predict_work(&self, x: &[F]) -> Result<Vec<F>> {
        for (i, v) in x.iter().enumerate() {
            let v = v.to_f64().unwrap();
            if !(-INPUT_TOLERANCE..=1.0 + INPUT_TOLERANCE).contains(&v) {
                return Err(Error::Invalid(format!("regressor input {i} = {v} is not normalised to [0, 1]")));
            }
        }
        self.forward(x)
    }

    pub fn loss(&self, x: &[F], y: &[F]) -> Result<F> {
        Ok(super::mse(&self.forward(x)?, y))
    }

    /// Mean squared error of one sample; gradient times `scale` accumulated into `grads`.
    pub fn loss_grad(&self, x: &[F], y: &[F], scale: F, grads: &mut [F]) -> Result<F> {
        self.check(x)?;
        if y.len() != self.arch.output {
            return Err(Error::Invalid(format!("target has {} values, expected {}", y.len(), self.arch.output)));
        }
        let acts = self.net.forward(&self.params, x);
        let out = acts.last().unwrap();
        let n = cast::<F>(y.len() as f64);
        let two = cast::<F>(2.0);
        let g: Vec<F> = out.iter().zip(y).map(|(&a, &b)| scale * two * (a - b) / n).collect();
        self.net.backward(&self.params, &acts, &g, grads);
        Ok(super::mse(out, y))
    }
}

/// A trained regressor with the input and output scalings it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkPredictor {
    pub net: WorkNet<f32>,
    pub input_scale: MinMax,
    pub output_scale: MinMax,
}

impl WorkPredictor {
    /// Normalises a raw landscape vector (clipped into [0, 1]) and returns the
    /// prediction in normalised and in physical units.
    pub fn predict(&self, raw: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let x: Vec<f32> = self.input_scale.normalize_clipped(raw)?.iter().map(|&v| v as f32).collect();
        let y: Vec<f64> = self.net.predict_work(&x)?.iter().map(|&v| v as f64).collect();
        let phys = self.output_scale.denormalize(&y)?;
        Ok((y, phys))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::gradcheck::max_relative_error;
    use rand::Rng;

    #[test]
    fn desk_layout() {
        let w = WorkNet::<f32>::new(WorkArch::desk(), 0);
        assert_eq!(w.n_params(), 30 * 75 + 75 + 2 * (75 * 75 + 75) + 75 * 4 + 4);
        let y = w.predict_work(&[0.5; 30]).unwrap();
        assert_eq!(y.len(), 4);
        assert!(y.iter().all(|v| *v >= 0.0));
        assert_eq!(y, w.predict_work(&[0.5; 30]).unwrap());
    }

    #[test]
    fn rejects_unnormalised_input() {
        let w = WorkNet::<f32>::new(WorkArch::desk(), 0);
        let mut x = [0.5f32; 30];
        x[3] = 1.01;
        assert!(w.predict_work(&x).is_err());
        assert!(w.predict_work(&[0.5; 29]).is_err());
    }

    #[test]
    fn descriptor_round_trip() {
        let a = WorkArch::desk();
        assert_eq!(WorkArch::from_descriptor(&a.descriptor()).unwrap(), a);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let arch = WorkArch { input: 5, hidden: vec![6, 4, 5], output: 3 };
        let w = WorkNet::<f64>::new(arch.clone(), 2);
        let mut rng = stream_rng(2, 9);
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
        let y: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
        let mut g = vec![0.0; w.n_params()];
        w.loss_grad(&x, &y, 1.0, &mut g).unwrap();
        let (err, at) =
            max_relative_error(&w.params, &g, 1e-5, |p| WorkNet::with_params(arch.clone(), p.to_vec()).unwrap().loss(&x, &y).unwrap());
        assert!(err < 1e-4, "relative error {err} at parameter {at}");
    }
}
