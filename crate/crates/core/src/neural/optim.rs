//! First-order update rules over flat parameter vectors.
//!
//! Adam, with step t counted from 1:
//!   m ← β₁ m + (1 − β₁) g
//!   v ← β₂ v + (1 − β₂) g²
//!   p ← p − η · m̂ / (√v̂ + ε),   m̂ = m / (1 − β₁ᵗ),  v̂ = v / (1 − β₂ᵗ)
//!
//! RMSprop:
//!   v ← ρ v + (1 − ρ) g²
//!   p ← p − η · g / (√v + ε)

use super::layers::{cast, Real};

pub trait Optimizer<F: Real> {
    fn step(&mut self, params: &mut [F], grads: &[F], lr: f64);
}

#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<F>,
    v: Vec<F>,
    t: i32,
}

impl<F: Real> Adam<F> {
    pub fn new(n: usize) -> Self {
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-7, m: vec![F::zero(); n], v: vec![F::zero(); n], t: 0 }
    }
}

impl<F: Real> Optimizer<F> for Adam<F> {
    fn step(&mut self, params: &mut [F], grads: &[F], lr: f64) {
        assert_eq!(params.len(), grads.len());
        self.t += 1;
        let (b1, b2) = (cast::<F>(self.beta1), cast::<F>(self.beta2));
        let c1 = cast::<F>(1.0 / (1.0 - self.beta1.powi(self.t)));
        let c2 = cast::<F>(1.0 / (1.0 - self.beta2.powi(self.t)));
        let lr = cast::<F>(lr);
        let eps = cast::<F>(self.eps);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (F::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (F::one() - b2) * g * g;
            params[i] = params[i] - lr * (self.m[i] * c1) / ((self.v[i] * c2).sqrt() + eps);
        }
    }
}

#[derive(Debug, Clone)]
pub struct RmsProp<F> {
    pub rho: f64,
    pub eps: f64,
    v: Vec<F>,
}

impl<F: Real> RmsProp<F> {
    pub fn new(n: usize) -> Self {
        RmsProp { rho: 0.9, eps: 1e-7, v: vec![F::zero(); n] }
    }
}

impl<F: Real> Optimizer<F> for RmsProp<F> {
    fn step(&mut self, params: &mut [F], grads: &[F], lr: f64) {
        assert_eq!(params.len(), grads.len());
        let rho = cast::<F>(self.rho);
        let lr = cast::<F>(lr);
        let eps = cast::<F>(self.eps);
        for i in 0..params.len() {
            let g = grads[i];
            self.v[i] = rho * self.v[i] + (F::one() - rho) * g * g;
            params[i] = params[i] - lr * g / (self.v[i].sqrt() + eps);
        }
    }
}
