//! Sequential stacks of dense, 3×3 convolution, activation and resampling
//! layers with hand-written backward passes.
//!
//! Parameters live in one flat slice owned by the model; each layer knows its
//! offset into it. Activations are laid out channel-major (`c × h × w`).

use std::fmt::Debug;
use std::ops::AddAssign;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Floating point type the networks run in: `f32` for training, `f64` for gradient checks.
pub trait Real: Float + FromPrimitive + ToPrimitive + AddAssign + Debug + Default + Send + Sync + 'static {}

impl Real for f32 {}
impl Real for f64 {}

pub(crate) fn cast<F: Real>(x: f64) -> F {
    F::from_f64(x).expect("representable constant")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(c: usize, h: usize, w: usize) -> Self {
        Shape { c, h, w }
    }

    pub fn flat(n: usize) -> Self {
        Shape { c: n, h: 1, w: 1 }
    }

    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    /// Fully connected on the flattened input.
    Dense {
        out: usize,
    },
    /// 3 × 3 convolution, zero padding 1.
    Conv3 {
        out_c: usize,
        stride: usize,
    },
    Relu,
    Sigmoid,
    /// Nearest-neighbour 2× upsampling.
    Upsample2,
    /// Reinterprets the (flat) input with a new shape.
    Reshape(Shape),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub kind: LayerKind,
    pub input: Shape,
    pub output: Shape,
    pub offset: usize,
    pub n_params: usize,
}

impl Layer {
    fn new(kind: LayerKind, input: Shape, offset: usize) -> Self {
        let (output, n_params) = match kind {
            LayerKind::Dense { out } => (Shape::flat(out), out * input.len() + out),
            LayerKind::Conv3 { out_c, stride } => {
                assert!(stride >= 1);
                let o = Shape::new(out_c, input.h.div_ceil(stride), input.w.div_ceil(stride));
                (o, out_c * input.c * 9 + out_c)
            }
            LayerKind::Relu | LayerKind::Sigmoid => (input, 0),
            LayerKind::Upsample2 => (Shape::new(input.c, 2 * input.h, 2 * input.w), 0),
            LayerKind::Reshape(s) => {
                assert_eq!(s.len(), input.len(), "reshape must keep the element count");
                (s, 0)
            }
        };
        Layer { kind, input, output, offset, n_params }
    }

    /// Weights (fan-in, fan-out) for Glorot initialisation.
    fn fans(&self) -> Option<(usize, usize, usize)> {
        match self.kind {
            LayerKind::Dense { out } => Some((self.input.len(), out, out * self.input.len())),
            LayerKind::Conv3 { out_c, .. } => Some((self.input.c * 9, out_c * 9, out_c * self.input.c * 9)),
            _ => None,
        }
    }

    pub fn forward<F: Real>(&self, p: &[F], x: &[F], y: &mut Vec<F>) {
        debug_assert_eq!(x.len(), self.input.len());
        y.clear();
        y.resize(self.output.len(), F::zero());
        let p = &p[self.offset..self.offset + self.n_params];
        match self.kind {
            LayerKind::Dense { out } => {
                let n = x.len();
                let (w, b) = p.split_at(out * n);
                for o in 0..out {
                    let row = &w[o * n..(o + 1) * n];
                    let mut acc = b[o];
                    for (wi, xi) in row.iter().zip(x) {
                        acc += *wi * *xi;
                    }
                    y[o] = acc;
                }
            }
            LayerKind::Conv3 { out_c, stride } => {
                let Shape { c: ic, h, w } = self.input;
                let Shape { h: oh, w: ow, .. } = self.output;
                let (wt, b) = p.split_at(out_c * ic * 9);
                for oc in 0..out_c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = b[oc];
                            for c in 0..ic {
                                let k = &wt[(oc * ic + c) * 9..(oc * ic + c + 1) * 9];
                                for ky in 0..3 {
                                    let iy = (oy * stride + ky) as isize - 1;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for kx in 0..3 {
                                        let ix = (ox * stride + kx) as isize - 1;
                                        if ix < 0 || ix >= w as isize {
                                            continue;
                                        }
                                        acc += k[ky * 3 + kx] * x[(c * h + iy as usize) * w + ix as usize];
                                    }
                                }
                            }
                            y[(oc * oh + oy) * ow + ox] = acc;
                        }
                    }
                }
            }
            LayerKind::Relu => {
                for (yi, xi) in y.iter_mut().zip(x) {
                    *yi = xi.max(F::zero());
                }
            }
            LayerKind::Sigmoid => {
                for (yi, xi) in y.iter_mut().zip(x) {
                    *yi = F::one() / (F::one() + (-*xi).exp());
                }
            }
            LayerKind::Upsample2 => {
                let Shape { c, h, w } = self.input;
                for ch in 0..c {
                    for yy in 0..2 * h {
                        for xx in 0..2 * w {
                            y[(ch * 2 * h + yy) * 2 * w + xx] = x[(ch * h + yy / 2) * w + xx / 2];
                        }
                    }
                }
            }
            LayerKind::Reshape(_) => y.copy_from_slice(x),
        }
    }

    /// Accumulates parameter gradients into `g` and writes the input gradient into `gx`.
    pub fn backward<F: Real>(&self, p: &[F], x: &[F], y: &[F], gy: &[F], g: &mut [F], gx: &mut Vec<F>) {
        gx.clear();
        gx.resize(self.input.len(), F::zero());
        let p = &p[self.offset..self.offset + self.n_params];
        let g = &mut g[self.offset..self.offset + self.n_params];
        match self.kind {
            LayerKind::Dense { out } => {
                let n = x.len();
                let (w, _) = p.split_at(out * n);
                let (gw, gb) = g.split_at_mut(out * n);
                for o in 0..out {
                    let d = gy[o];
                    gb[o] += d;
                    let row = &w[o * n..(o + 1) * n];
                    let grow = &mut gw[o * n..(o + 1) * n];
                    for i in 0..n {
                        grow[i] += d * x[i];
                        gx[i] += d * row[i];
                    }
                }
            }
            LayerKind::Conv3 { out_c, stride } => {
                let Shape { c: ic, h, w } = self.input;
                let Shape { h: oh, w: ow, .. } = self.output;
                let (wt, _) = p.split_at(out_c * ic * 9);
                let (gw, gb) = g.split_at_mut(out_c * ic * 9);
                for oc in 0..out_c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let d = gy[(oc * oh + oy) * ow + ox];
                            gb[oc] += d;
                            for c in 0..ic {
                                let base = (oc * ic + c) * 9;
                                for ky in 0..3 {
                                    let iy = (oy * stride + ky) as isize - 1;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for kx in 0..3 {
                                        let ix = (ox * stride + kx) as isize - 1;
                                        if ix < 0 || ix >= w as isize {
                                            continue;
                                        }
                                        let xi = (c * h + iy as usize) * w + ix as usize;
                                        gw[base + ky * 3 + kx] += d * x[xi];
                                        gx[xi] += d * wt[base + ky * 3 + kx];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            LayerKind::Relu => {
                for i in 0..x.len() {
                    gx[i] = if x[i] > F::zero() { gy[i] } else { F::zero() };
                }
            }
            LayerKind::Sigmoid => {
                for i in 0..x.len() {
                    gx[i] = gy[i] * y[i] * (F::one() - y[i]);
                }
            }
            LayerKind::Upsample2 => {
                let Shape { c, h, w } = self.input;
                for ch in 0..c {
                    for yy in 0..2 * h {
                        for xx in 0..2 * w {
                            gx[(ch * h + yy / 2) * w + xx / 2] += gy[(ch * 2 * h + yy) * 2 * w + xx];
                        }
                    }
                }
            }
            LayerKind::Reshape(_) => gx.copy_from_slice(gy),
        }
    }
}

/// A chain of layers over one region of a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequential {
    pub layers: Vec<Layer>,
    pub input: Shape,
    pub offset: usize,
    pub n_params: usize,
}

/// Activations of one forward pass: `acts[0]` is the input, `acts[i + 1]` the output of layer `i`.
pub type Activations<F> = Vec<Vec<F>>;

impl Sequential {
    pub fn new(input: Shape, kinds: &[LayerKind], offset: usize) -> Self {
        let mut layers = Vec::with_capacity(kinds.len());
        let mut shape = input;
        let mut at = offset;
        for &k in kinds {
            let l = Layer::new(k, shape, at);
            shape = l.output;
            at += l.n_params;
            layers.push(l);
        }
        Sequential { layers, input, offset, n_params: at - offset }
    }

    pub fn output(&self) -> Shape {
        self.layers.last().map_or(self.input, |l| l.output)
    }

    /// Glorot-uniform weights and zero biases.
    pub fn init<F: Real, R: Rng + ?Sized>(&self, p: &mut [F], rng: &mut R) {
        for l in &self.layers {
            if let Some((fan_in, fan_out, n_w)) = l.fans() {
                let lim = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for v in &mut p[l.offset..l.offset + n_w] {
                    *v = cast(rng.random_range(-lim..lim));
                }
                for v in &mut p[l.offset + n_w..l.offset + l.n_params] {
                    *v = F::zero();
                }
            }
        }
    }

    pub fn forward<F: Real>(&self, p: &[F], x: &[F]) -> Activations<F> {
        assert_eq!(x.len(), self.input.len(), "input has {} values, layer expects {}", x.len(), self.input.len());
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for l in &self.layers {
            let mut y = Vec::new();
            l.forward(p, acts.last().unwrap(), &mut y);
            acts.push(y);
        }
        acts
    }

    /// Output only.
    pub fn apply<F: Real>(&self, p: &[F], x: &[F]) -> Vec<F> {
        self.forward(p, x).pop().unwrap()
    }

    /// Backpropagates `gy` through the stack, accumulating into `g`; returns the input gradient.
    pub fn backward<F: Real>(&self, p: &[F], acts: &Activations<F>, gy: &[F], g: &mut [F]) -> Vec<F> {
        let mut grad = gy.to_vec();
        let mut next = Vec::new();
        for (i, l) in self.layers.iter().enumerate().rev() {
            l.backward(p, &acts[i], &acts[i + 1], &grad, g, &mut next);
            std::mem::swap(&mut grad, &mut next);
        }
        grad
    }
}
