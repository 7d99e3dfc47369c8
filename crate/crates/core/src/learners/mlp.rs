//! Fully connected ReLU network with hand-written backpropagation.
//!
//! Parameters live in one flat vector, layer by layer, each layer storing its
//! row-major `out × in` weight matrix followed by its bias. The loss and its
//! gradient are generic over [`Scalar`] so the same code runs on [`Dual`]
//! numbers, which turns the gradient into a Hessian-vector product.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Mul, Sub};

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::StreamRng;

pub const HIDDEN: usize = 40;
pub const REGRESSION_SIZES: [usize; 4] = [1, HIDDEN, HIDDEN, 1];

pub trait Scalar:
    Copy + Debug + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + AddAssign
{
    fn constant(x: f64) -> Self;
    fn value(self) -> f64;
}

impl Scalar for f64 {
    fn constant(x: f64) -> Self {
        x
    }

    fn value(self) -> f64 {
        self
    }
}

/// `re + eps·ε` with `ε² = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub re: f64,
    pub eps: f64,
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual {
            re: self.re + o.re,
            eps: self.eps + o.eps,
        }
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual {
            re: self.re - o.re,
            eps: self.eps - o.eps,
        }
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual {
            re: self.re * o.re,
            eps: self.re * o.eps + self.eps * o.re,
        }
    }
}

impl AddAssign for Dual {
    fn add_assign(&mut self, o: Dual) {
        self.re += o.re;
        self.eps += o.eps;
    }
}

impl Scalar for Dual {
    fn constant(x: f64) -> Self {
        Dual { re: x, eps: 0.0 }
    }

    fn value(self) -> f64 {
        self.re
    }
}

/// A supervised example.
pub trait Sample: Sync {
    fn input(&self) -> &[f64];
    fn target(&self) -> &[f64];
}

impl Sample for (f64, f64) {
    fn input(&self) -> &[f64] {
        std::slice::from_ref(&self.0)
    }

    fn target(&self) -> &[f64] {
        std::slice::from_ref(&self.1)
    }
}

impl Sample for (Vec<f64>, Vec<f64>) {
    fn input(&self) -> &[f64] {
        &self.0
    }

    fn target(&self) -> &[f64] {
        &self.1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MlpParams {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
}

impl MlpParams {
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; param_count(sizes)],
        }
    }

    pub fn from_vec(sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        let expected = param_count(sizes);
        if params.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("mlp parameters"));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            params,
        })
    }

    /// Weights and biases uniform in `±1/√fan_in`.
    pub fn init(sizes: &[usize], rng: &mut StreamRng) -> Self {
        let mut p = Self::zeros(sizes);
        let mut offset = 0;
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            let n = w[1] * (w[0] + 1);
            for v in &mut p.params[offset..offset + n] {
                *v = rng.random_range(-bound..bound);
            }
            offset += n;
        }
        p
    }

    pub fn regression(rng: &mut StreamRng) -> Self {
        Self::init(&REGRESSION_SIZES, rng)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.params
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn with_params(&self, params: Vec<f64>) -> Self {
        debug_assert_eq!(params.len(), self.params.len());
        Self {
            sizes: self.sizes.clone(),
            params,
        }
    }

    /// `self + step · direction`.
    pub fn axpy(&self, step: f64, direction: &[f64]) -> Self {
        self.with_params(
            self.params
                .iter()
                .zip(direction)
                .map(|(p, d)| p + step * d)
                .collect(),
        )
    }
}

fn relu<S: Scalar>(z: S) -> S {
    if z.value() > 0.0 {
        z
    } else {
        S::constant(0.0)
    }
}

fn layer<S: Scalar>(params: &[S], offset: usize, n_in: usize, n_out: usize, x: &[S]) -> Vec<S> {
    let (w, b) = params[offset..offset + n_out * (n_in + 1)].split_at(n_out * n_in);
    (0..n_out)
        .map(|o| {
            let mut acc = b[o];
            for (wi, xi) in w[o * n_in..(o + 1) * n_in].iter().zip(x) {
                acc += *wi * *xi;
            }
            acc
        })
        .collect()
}

/// Forward pass keeping every layer's input for backpropagation.
fn forward_trace<S: Scalar>(sizes: &[usize], params: &[S], x: &[S]) -> Vec<Vec<S>> {
    let mut acts = vec![x.to_vec()];
    let mut offset = 0;
    let last = sizes.len() - 2;
    for (l, w) in sizes.windows(2).enumerate() {
        let mut z = layer(params, offset, w[0], w[1], acts.last().expect("non-empty"));
        if l < last {
            z.iter_mut().for_each(|v| *v = relu(*v));
        }
        acts.push(z);
        offset += w[1] * (w[0] + 1);
    }
    acts
}

pub fn forward_generic<S: Scalar>(sizes: &[usize], params: &[S], x: &[S]) -> Vec<S> {
    forward_trace(sizes, params, x).pop().expect("non-empty")
}

pub fn mlp_forward(p: &MlpParams, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != p.sizes[0] {
        return Err(Error::DimensionMismatch {
            expected: p.sizes[0],
            found: x.len(),
        });
    }
    Ok(forward_generic(&p.sizes, &p.params, x))
}

/// Mean squared error `(1/n) Σ ‖f(x) − y‖²` and its gradient.
pub fn loss_and_grad_generic<S: Scalar, X: Sample>(
    sizes: &[usize],
    params: &[S],
    batch: &[X],
) -> (S, Vec<S>) {
    let mut grad = vec![S::constant(0.0); params.len()];
    let mut loss = S::constant(0.0);
    let inv_n = S::constant(1.0 / batch.len() as f64);
    let n_layers = sizes.len() - 1;
    let mut offsets = Vec::with_capacity(n_layers);
    let mut acc = 0;
    for w in sizes.windows(2) {
        offsets.push(acc);
        acc += w[1] * (w[0] + 1);
    }
    for sample in batch {
        let x: Vec<S> = sample.input().iter().map(|v| S::constant(*v)).collect();
        let acts = forward_trace(sizes, params, &x);
        let out = &acts[n_layers];
        let mut delta: Vec<S> = out
            .iter()
            .zip(sample.target())
            .map(|(o, y)| {
                let d = *o - S::constant(*y);
                loss += d * d * inv_n;
                S::constant(2.0) * d * inv_n
            })
            .collect();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let off = offsets[l];
            let input = &acts[l];
            for o in 0..n_out {
                let d = delta[o];
                let row = off + o * n_in;
                for i in 0..n_in {
                    grad[row + i] += d * input[i];
                }
                grad[off + n_out * n_in + o] += d;
            }
            if l > 0 {
                delta = (0..n_in)
                    .map(|i| {
                        if input[i].value() > 0.0 {
                            let mut s = S::constant(0.0);
                            for o in 0..n_out {
                                s += params[off + o * n_in + i] * delta[o];
                            }
                            s
                        } else {
                            S::constant(0.0)
                        }
                    })
                    .collect();
            }
        }
    }
    (loss, grad)
}

pub fn mlp_loss<X: Sample>(p: &MlpParams, batch: &[X]) -> f64 {
    let n = batch.len() as f64;
    batch
        .iter()
        .map(|s| {
            forward_generic(&p.sizes, &p.params, s.input())
                .iter()
                .zip(s.target())
                .map(|(o, y)| (o - y) * (o - y))
                .sum::<f64>()
        })
        .sum::<f64>()
        / n
}

/// Loss and gradient of the mean squared error over a non-empty batch.
pub fn mlp_loss_grad<X: Sample>(p: &MlpParams, batch: &[X]) -> (f64, Vec<f64>) {
    loss_and_grad_generic(&p.sizes, &p.params, batch)
}

pub fn mlp_grad<X: Sample>(p: &MlpParams, batch: &[X]) -> Vec<f64> {
    mlp_loss_grad(p, batch).1
}

/// `H v` where `H` is the Hessian of the batch loss at `p`.
pub fn hessian_vector<X: Sample>(p: &MlpParams, batch: &[X], v: &[f64]) -> Vec<f64> {
    let duals: Vec<Dual> = p
        .params
        .iter()
        .zip(v)
        .map(|(re, eps)| Dual { re: *re, eps: *eps })
        .collect();
    loss_and_grad_generic(&p.sizes, &duals, batch)
        .1
        .into_iter()
        .map(|d| d.eps)
        .collect()
}
