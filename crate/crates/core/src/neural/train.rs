//! Mini-batch training loops for both networks.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::optim::{Adam, Optimizer, RmsProp};
use super::vae::{Vae, VaeArch};
use super::worknet::{WorkArch, WorkNet};
use crate::error::{Error, Result};
use crate::synth::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrStage {
    pub from_epoch: usize,
    pub lr: f64,
}

fn validate_schedule(schedule: &[LrStage], epochs: usize) -> Result<()> {
    if epochs == 0 {
        return Err(Error::Invalid("epochs must be positive".into()));
    }
    match schedule.first() {
        Some(s) if s.from_epoch == 0 => {}
        _ => return Err(Error::Invalid("learning-rate schedule must start at epoch 0".into())),
    }
    for w in schedule.windows(2) {
        if w[1].from_epoch <= w[0].from_epoch {
            return Err(Error::Invalid("learning-rate stages must be strictly increasing".into()));
        }
    }
    if schedule.last().unwrap().from_epoch >= epochs {
        return Err(Error::Invalid("learning-rate stage starts after the last epoch".into()));
    }
    if schedule.iter().any(|s| !(s.lr > 0.0 && s.lr.is_finite())) {
        return Err(Error::Invalid("learning rates must be positive".into()));
    }
    Ok(())
}

fn lr_at(schedule: &[LrStage], epoch: usize) -> f64 {
    schedule.iter().rev().find(|s| s.from_epoch <= epoch).map_or(schedule[0].lr, |s| s.lr)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VaeTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub beta: f64,
    pub schedule: Vec<LrStage>,
    pub seed: u64,
    /// Size of the fixed-noise evaluation subset scored after every epoch.
    pub eval_size: usize,
}

impl Default for VaeTrainConfig {
    /// 250 epochs with Adam stepping down 1e-4 → 3.3e-5 → 5e-6.
    fn default() -> Self {
        VaeTrainConfig {
            epochs: 250,
            batch_size: 32,
            beta: 1000.0,
            schedule: vec![
                LrStage { from_epoch: 0, lr: 1e-4 },
                LrStage { from_epoch: 100, lr: 3.3e-5 },
                LrStage { from_epoch: 200, lr: 5e-6 },
            ],
            seed: 0,
            eval_size: 256,
        }
    }
}

impl VaeTrainConfig {
    /// Short laptop run: the same three-stage schedule at ten times the rates,
    /// with the steps at 40% and 80% of `epochs`.
    pub fn desk(epochs: usize) -> Self {
        VaeTrainConfig {
            epochs,
            schedule: vec![
                LrStage { from_epoch: 0, lr: 1e-3 },
                LrStage { from_epoch: epochs * 2 / 5, lr: 3.3e-4 },
                LrStage { from_epoch: epochs * 4 / 5, lr: 5e-5 },
            ],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.beta > 0.0) {
            return Err(Error::Invalid("batch size and beta must be positive".into()));
        }
        validate_schedule(&self.schedule, self.epochs)
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        lr_at(&self.schedule, epoch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VaeEpoch {
    pub epoch: usize,
    pub lr: f64,
    /// Mean mini-batch loss.
    pub loss: f64,
    pub recon_mse: f64,
    pub kld: f64,
    /// Loss on the evaluation subset with noise fixed for the whole run.
    pub eval_loss: f64,
}

/// Trains the autoencoder with Adam on flattened images in [0, 1].
pub fn train_network1(images: &[Vec<f32>], arch: VaeArch, cfg: &VaeTrainConfig) -> Result<(Vae<f32>, Vec<VaeEpoch>)> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(Error::Invalid("no training images".into()));
    }
    let mut vae = Vae::<f32>::new(arch, cfg.seed)?;
    for (i, x) in images.iter().enumerate() {
        if x.len() != arch.n_pixels() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("training image {i} has the wrong size or non-finite values")));
        }
    }
    let mut opt = Adam::new(vae.n_params());
    let mut rng = stream_rng(cfg.seed, 1);
    let mut eval_rng = stream_rng(cfg.seed, 2);
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut eval_idx = order.clone();
    eval_idx.shuffle(&mut eval_rng);
    eval_idx.truncate(cfg.eval_size.max(1));
    let eval_eps: Vec<Vec<f32>> = eval_idx.iter().map(|_| vae.sample_eps(&mut eval_rng)).collect();
    let beta = cfg.beta as f32;

    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut grads = vec![0.0f32; vae.n_params()];
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr(epoch);
        order.shuffle(&mut rng);
        let (mut loss, mut mse, mut kld) = (0.0f64, 0.0f64, 0.0f64);
        for batch in order.chunks(cfg.batch_size) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f32;
            for &i in batch {
                let eps = vae.sample_eps(&mut rng);
                let parts = vae.loss_grad(&images[i], &eps, beta, scale, &mut grads)?;
                loss += parts.total as f64;
                mse += parts.mse as f64;
                kld += parts.kld as f64;
            }
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDivergence { epoch });
            }
            opt.step(&mut vae.params, &grads, lr);
        }
        let n = images.len() as f64;
        let mut eval = 0.0f64;
        for (&i, eps) in eval_idx.iter().zip(&eval_eps) {
            eval += vae.loss(&images[i], eps, beta)?.total as f64;
        }
        eval /= eval_idx.len() as f64;
        if !eval.is_finite() {
            return Err(Error::TrainingDivergence { epoch });
        }
        log::debug!("vae epoch {epoch}: loss {:.5} mse {:.2e} eval {eval:.5}", loss / n, mse / n);
        curve.push(VaeEpoch { epoch, lr, loss: loss / n, recon_mse: mse / n, kld: kld / n, eval_loss: eval });
    }
    Ok((vae, curve))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for WorkTrainConfig {
    /// RMSprop at 1e-3 for 1000 epochs.
    fn default() -> Self {
        WorkTrainConfig { epochs: 1000, batch_size: 32, lr: 1e-3, seed: 0 }
    }
}

impl WorkTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch size must be positive".into()));
        }
        validate_schedule(&[LrStage { from_epoch: 0, lr: self.lr }], self.epochs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkEpoch {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
}

/// Input/target pairs in normalised units.
pub type Pairs<'a> = (&'a [Vec<f32>], &'a [Vec<f32>]);

/// Mean squared error of a regressor over a set of pairs.
pub fn evaluate_worknet(net: &WorkNet<f32>, data: Pairs<'_>) -> Result<f64> {
    let mut s = 0.0;
    for (x, y) in data.0.iter().zip(data.1) {
        s += net.loss(x, y)? as f64;
    }
    Ok(s / data.0.len().max(1) as f64)
}

/// Trains the work-metric regressor with RMSprop on mean squared error.
pub fn train_network2(
    train: Pairs<'_>,
    val: Option<Pairs<'_>>,
    arch: WorkArch,
    cfg: &WorkTrainConfig,
) -> Result<(WorkNet<f32>, Vec<WorkEpoch>)> {
    cfg.validate()?;
    let (xs, ys) = train;
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::Invalid(format!("{} inputs paired with {} targets", xs.len(), ys.len())));
    }
    let mut net = WorkNet::<f32>::new(arch, cfg.seed);
    let mut opt = RmsProp::new(net.n_params());
    let mut rng = stream_rng(cfg.seed, 1);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut grads = vec![0.0f32; net.n_params()];
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f32;
            for &i in batch {
                total += net.loss_grad(&xs[i], &ys[i], scale, &mut grads)? as f64;
            }
            if !total.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDivergence { epoch });
            }
            opt.step(&mut net.params, &grads, cfg.lr);
        }
        let val_mse = val.map(|v| evaluate_worknet(&net, v)).transpose()?;
        curve.push(WorkEpoch { epoch, train_mse: total / xs.len() as f64, val_mse });
    }
    Ok((net, curve))
}

/// Writes a learning curve as CSV with a header row.
pub fn write_curve<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_validation() {
        let mut c = VaeTrainConfig::default();
        assert!(c.validate().is_ok());
        assert_eq!(c.lr(0), 1e-4);
        assert_eq!(c.lr(150), 3.3e-5);
        assert_eq!(c.lr(249), 5e-6);
        c.schedule[2].from_epoch = 250;
        assert!(c.validate().is_err());
        c.schedule[2].from_epoch = 200;
        c.schedule[1].lr = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn memorises_one_image() {
        let x: Vec<f32> = (0..64).map(|i| ((i % 8) as f32 / 7.0 - 0.5).abs() * 1.6).collect();
        let arch = VaeArch { grid: 8, c1: 4, c2: 8, latent: 4 };
        let cfg = VaeTrainConfig {
            epochs: 3000,
            batch_size: 1,
            beta: 1000.0,
            schedule: vec![LrStage { from_epoch: 0, lr: 3e-3 }, LrStage { from_epoch: 2000, lr: 3e-4 }],
            seed: 1,
            eval_size: 1,
        };
        let (vae, curve) = train_network1(std::slice::from_ref(&x), arch, &cfg).unwrap();
        let (mu, _) = vae.encode(&x).unwrap();
        let r = vae.decode(&mu).unwrap();
        let err = crate::neural::mse(&r, &x);
        assert!(err < 1e-4, "memorisation mse {err}, last epoch {:?}", curve.last());
    }

    #[test]
    fn reproducible_curves() {
        let imgs: Vec<Vec<f32>> = (0..6).map(|k| (0..64).map(|i| ((i + k) % 5) as f32 / 4.0).collect()).collect();
        let arch = VaeArch { grid: 8, c1: 2, c2: 4, latent: 3 };
        let cfg = VaeTrainConfig { epochs: 4, batch_size: 4, schedule: vec![LrStage { from_epoch: 0, lr: 1e-3 }], ..Default::default() };
        let a = train_network1(&imgs, arch, &cfg).unwrap();
        let b = train_network1(&imgs, arch, &cfg).unwrap();
        assert_eq!(a.1, b.1);
        assert_eq!(a.0.params, b.0.params);
    }

    #[test]
    fn regressor_fits_a_linear_target() {
        let mut rng = stream_rng(5, 0);
        let gen = |rng: &mut rand_chacha::ChaCha8Rng| {
            use rand::Rng;
            let x: Vec<f32> = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
            let y = vec![0.2 + 0.3 * x[0] + 0.2 * x[3], 0.6 - 0.4 * x[1] + 0.1 * x[5]];
            (x, y)
        };
        let (tx, ty): (Vec<_>, Vec<_>) = (0..400).map(|_| gen(&mut rng)).unzip();
        let (vx, vy): (Vec<_>, Vec<_>) = (0..100).map(|_| gen(&mut rng)).unzip();
        let arch = WorkArch { input: 6, hidden: vec![32, 32, 32], output: 2 };
        let cfg = WorkTrainConfig { epochs: 300, batch_size: 32, lr: 1e-3, seed: 3 };
        let (net, curve) = train_network2((&tx, &ty), Some((&vx, &vy)), arch.clone(), &cfg).unwrap();
        let v = curve.last().unwrap().val_mse.unwrap();
        assert!(v < 1e-4, "validation mse {v}");
        let again = train_network2((&tx, &ty), None, arch, &cfg).unwrap().0;
        assert_eq!(net.params, again.params);
    }
}
