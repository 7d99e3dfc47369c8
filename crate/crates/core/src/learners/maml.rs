//! MAML for few-shot regression.
//!
//! The second-order meta-gradient runs the inner loop forward, storing every
//! iterate `φ₀ … φ_K`, then pulls the query gradient back through each step:
//! `g ← g − α H_S(φᵢ) g`, with the Hessian-vector product taken by dual numbers.

use rayon::prelude::*;

use super::adam::Adam;
use super::mlp::{hessian_vector, mlp_loss_grad, MlpParams, Sample};
use crate::episodes::RegressionEpisode;

/// Plain gradient descent on the support loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerLoop {
    pub steps: usize,
    pub lr: f64,
}

pub fn maml_adapt<X: Sample>(p: &MlpParams, support: &[X], inner: InnerLoop) -> MlpParams {
    let mut phi = p.clone();
    for _ in 0..inner.steps {
        let (_, g) = mlp_loss_grad(&phi, support);
        phi = phi.axpy(-inner.lr, &g);
    }
    phi
}

/// Query loss after adaptation and its gradient with respect to `p`.
pub fn maml_meta_gradient<X: Sample>(
    p: &MlpParams,
    support: &[X],
    query: &[X],
    inner: InnerLoop,
    second_order: bool,
) -> (f64, Vec<f64>) {
    let mut iterates = Vec::with_capacity(inner.steps);
    let mut phi = p.clone();
    for _ in 0..inner.steps {
        let (_, g) = mlp_loss_grad(&phi, support);
        let next = phi.axpy(-inner.lr, &g);
        iterates.push(phi);
        phi = next;
    }
    let (loss, mut g) = mlp_loss_grad(&phi, query);
    if second_order {
        for it in iterates.iter().rev() {
            let hg = hessian_vector(it, support, &g);
            for (gi, hi) in g.iter_mut().zip(hg) {
                *gi -= inner.lr * hi;
            }
        }
    }
    (loss, g)
}

/// Per-episode query losses and the mean meta-gradient. Episodes are
/// processed in parallel and summed in episode order.
pub fn maml_batch_gradient(
    p: &MlpParams,
    meta_batch: &[RegressionEpisode],
    inner: InnerLoop,
    second_order: bool,
) -> (Vec<f64>, Vec<f64>) {
    let parts: Vec<(f64, Vec<f64>)> = meta_batch
        .par_iter()
        .map(|ep| maml_meta_gradient(p, &ep.support, &ep.query, inner, second_order))
        .collect();
    let mut mean = vec![0.0; p.len()];
    let inv = 1.0 / meta_batch.len() as f64;
    for (_, g) in &parts {
        for (m, gi) in mean.iter_mut().zip(g) {
            *m += gi * inv;
        }
    }
    (parts.into_iter().map(|(l, _)| l).collect(), mean)
}

/// One outer Adam step on the mean adapted query loss. Returns the
/// per-episode query losses.
pub fn maml_meta_step(
    p: &mut MlpParams,
    meta_batch: &[RegressionEpisode],
    inner: InnerLoop,
    second_order: bool,
    outer: &mut Adam,
) -> Vec<f64> {
    assert!(!meta_batch.is_empty(), "empty meta-batch");
    let (losses, g) = maml_batch_gradient(p, meta_batch, inner, second_order);
    outer.step(p.as_mut_slice(), &g);
    losses
}
