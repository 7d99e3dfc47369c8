use rayon::prelude::*;

use super::maml::{maml_adapt, InnerLoop};
use super::mlp::{mlp_loss, MlpParams};
use crate::episodes::RegressionEpisode;

/// Mean displacement `mean(W̃ − p)` of the adapted weights, and each
/// episode's query loss at its adapted weights.
pub fn reptile_displacement(
    p: &MlpParams,
    meta_batch: &[RegressionEpisode],
    inner: InnerLoop,
) -> (Vec<f64>, Vec<f64>) {
    let parts: Vec<(f64, MlpParams)> = meta_batch
        .par_iter()
        .map(|ep| {
            let w = maml_adapt(p, &ep.support, inner);
            (mlp_loss(&w, &ep.query), w)
        })
        .collect();
    let inv = 1.0 / meta_batch.len() as f64;
    let mut mean = vec![0.0; p.len()];
    for (_, w) in &parts {
        for ((m, wi), pi) in mean.iter_mut().zip(w.as_slice()).zip(p.as_slice()) {
            *m += (wi - pi) * inv;
        }
    }
    (mean, parts.into_iter().map(|(l, _)| l).collect())
}

/// `p + meta_lr · mean(W̃ − p)`. Returns the new parameters and the
/// per-episode query losses.
pub fn reptile_meta_step(
    p: &MlpParams,
    meta_batch: &[RegressionEpisode],
    inner: InnerLoop,
    meta_lr: f64,
) -> (MlpParams, Vec<f64>) {
    assert!(!meta_batch.is_empty(), "empty meta-batch");
    let (d, losses) = reptile_displacement(p, meta_batch, inner);
    (p.axpy(meta_lr, &d), losses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn episode(support: Vec<(f64, f64)>) -> RegressionEpisode {
        RegressionEpisode {
            query: support.clone(),
            support,
        }
    }

    #[test]
    fn fitted_support_leaves_p() {
        let p = MlpParams::from_vec(&[1, 1], vec![2.0, 1.0]).unwrap();
        let ep = episode(vec![(0.0, 1.0), (1.0, 3.0)]);
        let (q, losses) = reptile_meta_step(&p, &[ep], InnerLoop { steps: 5, lr: 0.1 }, 0.5);
        assert_eq!(q, p);
        assert_eq!(losses, vec![0.0]);
    }

    #[test]
    fn unit_meta_rate_jumps_to_adapted_weights() {
        let mut r = stream(1, "jump", 0);
        let p = MlpParams::init(&[1, 4, 1], &mut r);
        let ep = episode((0..5).map(|_| (r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))).collect());
        let inner = InnerLoop { steps: 5, lr: 0.01 };
        let w = maml_adapt(&p, &ep.support, inner);
        let (q, _) = reptile_meta_step(&p, &[ep], inner, 1.0);
        for (a, b) in q.as_slice().iter().zip(w.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn two_episodes_move_towards_the_midpoint() {
        // One step at lr 0.25 on a single point of y = w x + b from (0, 0):
        // grad = 2 (−y) (x, 1), so W̃ = (0.5 y x, 0.5 y).
        let p = MlpParams::zeros(&[1, 1]);
        let a = episode(vec![(1.0, 2.0)]);
        let b = episode(vec![(2.0, -1.0)]);
        let inner = InnerLoop { steps: 1, lr: 0.25 };
        let wa = [1.0, 1.0];
        let wb = [-1.0, -0.5];
        let meta_lr = 0.4;
        let (q, _) = reptile_meta_step(&p, &[a, b], inner, meta_lr);
        for i in 0..2 {
            assert!((q.as_slice()[i] - meta_lr * 0.5 * (wa[i] + wb[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn update_stays_on_the_segment() {
        let mut r = stream(2, "seg", 0);
        let p = MlpParams::init(&[1, 3, 1], &mut r);
        let pts: Vec<(f64, f64)> = (0..4).map(|_| (r.random_range(-1.0..1.0), 1.0)).collect();
        let eps = vec![episode(pts.clone()), episode(pts)];
        let inner = InnerLoop { steps: 3, lr: 0.1 };
        let w = maml_adapt(&p, &eps[0].support, inner);
        for meta_lr in [0.1, 0.5, 1.0] {
            let (q, _) = reptile_meta_step(&p, &eps, inner, meta_lr);
            for ((qi, pi), wi) in q.as_slice().iter().zip(p.as_slice()).zip(w.as_slice()) {
                let lo = pi.min(*wi) - 1e-15;
                let hi = pi.max(*wi) + 1e-15;
                assert!((lo..=hi).contains(qi));
            }
        }
    }
}
