//! Prototypical classifier over a linear embedding `g(x) = W x`.
//!
//! Class prototypes are the embedded support means `c_k = W s̄_k`, and
//! `p(k | x*) ∝ exp(−‖W x* − c_k‖²)`. With `u_k = x* − s̄_k` the query
//! cross-entropy has gradient `−2 Σ_k (p_k − [k = y]) W u_k u_kᵀ`.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::diversity::TaskFeedback;
use crate::episodes::{draw_episode, ClassPool, EmbeddingTable, Episode, Task};
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProtoModel {
    d_in: usize,
    d_out: usize,
    /// Row-major `d_out × d_in`.
    w: Vec<f64>,
}

impl ProtoModel {
    pub fn identity(d: usize) -> Self {
        let mut w = vec![0.0; d * d];
        for i in 0..d {
            w[i * d + i] = 1.0;
        }
        Self { d_in: d, d_out: d, w }
    }

    /// Entries uniform in `±1/√d_in`.
    pub fn random(d_in: usize, d_out: usize, rng: &mut StreamRng) -> Self {
        let bound = 1.0 / (d_in as f64).sqrt();
        let w = (0..d_in * d_out).map(|_| rng.random_range(-bound..bound)).collect();
        Self { d_in, d_out, w }
    }

    pub fn from_matrix(d_in: usize, d_out: usize, w: Vec<f64>) -> Result<Self> {
        if w.len() != d_in * d_out {
            return Err(Error::DimensionMismatch {
                expected: d_in * d_out,
                found: w.len(),
            });
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("protonet embedding"));
        }
        Ok(Self { d_in, d_out, w })
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn params(&self) -> &[f64] {
        &self.w
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.w
    }

    pub fn embed(&self, x: &[f64]) -> Vec<f64> {
        self.w
            .chunks(self.d_in)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }
}

fn support_means(ep: &Episode) -> Vec<Vec<f64>> {
    let d = ep.support.first().map_or(0, |e| e.x.len());
    let mut sums = vec![vec![0.0; d]; ep.n_way];
    let mut counts = vec![0usize; ep.n_way];
    for e in &ep.support {
        counts[e.y] += 1;
        for (s, x) in sums[e.y].iter_mut().zip(&e.x) {
            *s += x;
        }
    }
    for (s, c) in sums.iter_mut().zip(counts) {
        let inv = 1.0 / c.max(1) as f64;
        s.iter_mut().for_each(|v| *v *= inv);
    }
    sums
}

fn softmax_neg(d2: &[f64]) -> Vec<f64> {
    let min = d2.iter().copied().fold(f64::INFINITY, f64::min);
    let e: Vec<f64> = d2.iter().map(|d| (min - d).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn query_probs(m: &ProtoModel, protos: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    let g = m.embed(x);
    let d2: Vec<f64> = protos
        .iter()
        .map(|c| g.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum())
        .collect();
    softmax_neg(&d2)
}

/// Class probabilities for every query example, in query order.
pub fn protonet_predict(m: &ProtoModel, episode: &Episode) -> Vec<Vec<f64>> {
    let protos: Vec<Vec<f64>> = support_means(episode).iter().map(|s| m.embed(s)).collect();
    episode
        .query
        .iter()
        .map(|q| query_probs(m, &protos, &q.x))
        .collect()
}

pub fn protonet_accuracy(m: &ProtoModel, episode: &Episode) -> f64 {
    let probs = protonet_predict(m, episode);
    let hits = probs
        .iter()
        .zip(&episode.query)
        .filter(|(p, q)| {
            let best = p
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i);
            best == Some(q.y)
        })
        .count();
    hits as f64 / episode.query.len() as f64
}

/// Mean query cross-entropy.
pub fn protonet_loss(m: &ProtoModel, episode: &Episode) -> f64 {
    let probs = protonet_predict(m, episode);
    probs
        .iter()
        .zip(&episode.query)
        .map(|(p, q)| -p[q.y].max(f64::MIN_POSITIVE).ln())
        .sum::<f64>()
        / episode.query.len() as f64
}

/// Mean query cross-entropy and its gradient with respect to `W`.
pub fn protonet_loss_grad(m: &ProtoModel, episode: &Episode) -> (f64, Vec<f64>) {
    let means = support_means(episode);
    let protos: Vec<Vec<f64>> = means.iter().map(|s| m.embed(s)).collect();
    let mut grad = vec![0.0; m.w.len()];
    let mut loss = 0.0;
    let inv = 1.0 / episode.query.len() as f64;
    for q in &episode.query {
        let p = query_probs(m, &protos, &q.x);
        loss -= p[q.y].max(f64::MIN_POSITIVE).ln() * inv;
        for (k, mean) in means.iter().enumerate() {
            let coeff = -2.0 * (p[k] - if k == q.y { 1.0 } else { 0.0 }) * inv;
            let u: Vec<f64> = q.x.iter().zip(mean).map(|(a, b)| a - b).collect();
            let wu = m.embed(&u);
            for (r, wr) in wu.iter().enumerate() {
                let row = &mut grad[r * m.d_in..(r + 1) * m.d_in];
                for (g, uc) in row.iter_mut().zip(&u) {
                    *g += coeff * wr * uc;
                }
            }
        }
    }
    (loss, grad)
}

/// Per-episode losses and the mean gradient, summed in episode order.
pub fn protonet_batch_gradient(m: &ProtoModel, meta_batch: &[Episode]) -> (Vec<f64>, Vec<f64>) {
    let parts: Vec<(f64, Vec<f64>)> = meta_batch.par_iter().map(|ep| protonet_loss_grad(m, ep)).collect();
    let inv = 1.0 / meta_batch.len() as f64;
    let mut mean = vec![0.0; m.w.len()];
    for (_, g) in &parts {
        for (a, b) in mean.iter_mut().zip(g) {
            *a += b * inv;
        }
    }
    (parts.into_iter().map(|(l, _)| l).collect(), mean)
}

/// One gradient-descent step on the mean query cross-entropy.
pub fn protonet_train_step(m: &ProtoModel, meta_batch: &[Episode], meta_lr: f64) -> (ProtoModel, Vec<f64>) {
    assert!(!meta_batch.is_empty(), "empty meta-batch");
    let (losses, g) = protonet_batch_gradient(m, meta_batch);
    let mut next = m.clone();
    for (w, gi) in next.w.iter_mut().zip(g) {
        *w -= meta_lr * gi;
    }
    (next, losses)
}

/// Per class, the mean embedding of `samples_per_class` fresh examples.
pub fn class_embeddings_from_model(
    m: &ProtoModel,
    pool: &ClassPool,
    samples_per_class: usize,
    rng: &mut StreamRng,
) -> Result<EmbeddingTable> {
    if samples_per_class == 0 {
        return Err(Error::InvalidArgument("samples_per_class must be positive".into()));
    }
    let mut table = EmbeddingTable::new(m.d_out);
    for c in pool.classes() {
        let mut acc = vec![0.0; m.d_out];
        for _ in 0..samples_per_class {
            let g = m.embed(&pool.example(c, rng.random())?);
            acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        acc.iter_mut().for_each(|a| *a /= samples_per_class as f64);
        table.insert(c.clone(), acc)?;
    }
    Ok(table)
}

/// A frozen model answering the adaptive samplers' questions. A task's
/// difficulty is its query loss on an episode drawn from a stream addressed
/// by the task id, so it does not depend on the order of questions.
#[derive(Debug, Clone)]
pub struct ProtoFeedback {
    pub model: ProtoModel,
    pub pool: ClassPool,
    pub k_shot: usize,
    pub q_queries: usize,
    pub samples_per_class: usize,
    pub seed: u64,
}

impl TaskFeedback for ProtoFeedback {
    fn difficulty(&self, task: &Task) -> Result<f64> {
        let mut r = rng::stream(self.seed, "difficulty", task.task_id());
        let ep = draw_episode(task, &self.pool, self.k_shot, self.q_queries, &mut r)?;
        Ok(protonet_loss(&self.model, &ep))
    }

    fn class_embeddings(&self) -> Result<EmbeddingTable> {
        let mut r = rng::stream(self.seed, "class-embeddings", 0);
        class_embeddings_from_model(&self.model, &self.pool, self.samples_per_class, &mut r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episodes::{synth_gaussian_world, Example};
    use crate::learners::mlp::tests::{central_diff, rel_err};
    use crate::rng::stream;
    use crate::samplers::TaskUniverse;

    fn ex(x: &[f64], y: usize) -> Example {
        Example { x: x.to_vec(), y }
    }

    fn random_episode(r: &mut StreamRng, n_way: usize, k: usize, q: usize, d: usize) -> Episode {
        let mut draw = |y| ex(&(0..d).map(|_| r.random_range(-1.0..1.0)).collect::<Vec<_>>(), y);
        let support = (0..n_way).flat_map(|y| (0..k).map(move |_| y)).collect::<Vec<_>>();
        let support = support.into_iter().map(&mut draw).collect();
        let query = (0..n_way * q).map(|i| draw(i % n_way)).collect();
        Episode {
            support,
            query,
            n_way,
            k_shot: k,
            q_queries: q,
        }
    }

    #[test]
    fn worked_one_dimensional_example() {
        let ep = Episode {
            support: vec![ex(&[0.0], 0), ex(&[2.0], 1)],
            query: vec![ex(&[0.5], 0)],
            n_way: 2,
            k_shot: 1,
            q_queries: 1,
        };
        let p = protonet_predict(&ProtoModel::identity(1), &ep);
        let a = (-0.25f64).exp();
        let b = (-2.25f64).exp();
        assert!((p[0][0] - a / (a + b)).abs() < 1e-12);
        assert!((p[0][1] - b / (a + b)).abs() < 1e-12);
    }

    #[test]
    fn distance_dominates() {
        let ep = Episode {
            support: vec![ex(&[0.0, 0.0], 0), ex(&[10.0, 0.0], 1), ex(&[0.0, 10.0], 2)],
            query: vec![ex(&[0.0, 0.0], 0)],
            n_way: 3,
            k_shot: 1,
            q_queries: 1,
        };
        assert!(protonet_predict(&ProtoModel::identity(2), &ep)[0][0] > 0.99);
    }

    #[test]
    fn rows_are_distributions() {
        let mut r = stream(1, "rows", 0);
        for _ in 0..100 {
            let ep = random_episode(&mut r, 4, 2, 3, 5);
            let m = ProtoModel::random(5, 3, &mut r);
            for row in protonet_predict(&m, &ep) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|p| *p > 0.0 && *p < 1.0));
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut r = stream(2, "pgrad", 0);
        for _ in 0..20 {
            let ep = random_episode(&mut r, 3, 2, 2, 2);
            let m = ProtoModel::random(2, 2, &mut r);
            let (_, g) = protonet_loss_grad(&m, &ep);
            let fd = central_diff(
                |w| protonet_loss(&ProtoModel::from_matrix(2, 2, w.to_vec()).unwrap(), &ep),
                m.params(),
                1e-5,
            );
            assert!(rel_err(&g, &fd) < 1e-4, "{}", rel_err(&g, &fd));
        }
    }

    #[test]
    fn inseparable_world_stays_at_chance() {
        let (pool, _) = synth_gaussian_world(10, 3, 0.0, 1.0, 3).unwrap();
        let mut r = stream(3, "chance", 0);
        let mut m = ProtoModel::identity(3);
        let mut last = Vec::new();
        for _ in 0..30 {
            let batch: Vec<Episode> = (0..4)
                .map(|_| {
                    let t = pool.uniform_task(5, &mut r).unwrap();
                    draw_episode(&t, &pool, 5, 5, &mut r).unwrap()
                })
                .collect();
            let (next, losses) = protonet_train_step(&m, &batch, 0.01);
            m = next;
            last = losses;
        }
        let mean = last.iter().sum::<f64>() / last.len() as f64;
        assert!((mean - 5f64.ln()).abs() < 0.5, "{mean}");
    }

    #[test]
    fn separated_world_is_learned() {
        let (pool, _) = synth_gaussian_world(20, 8, 1.0, 0.3, 4).unwrap();
        let mut r = stream(4, "learn", 0);
        let mut m = ProtoModel::random(8, 8, &mut r);
        for _ in 0..50 {
            let batch: Vec<Episode> = (0..8)
                .map(|_| {
                    let t = pool.uniform_task(5, &mut r).unwrap();
                    draw_episode(&t, &pool, 1, 5, &mut r).unwrap()
                })
                .collect();
            m = protonet_train_step(&m, &batch, 0.05).0;
        }
        let acc: f64 = (0..50)
            .map(|_| {
                let t = pool.uniform_task(5, &mut r).unwrap();
                protonet_accuracy(&m, &draw_episode(&t, &pool, 1, 5, &mut r).unwrap())
            })
            .sum::<f64>()
            / 50.0;
        assert!(acc > 0.9, "{acc}");
    }

    #[test]
    fn identity_embeddings_of_noiseless_world_are_the_means() {
        let (pool, table) = synth_gaussian_world(6, 4, 1.0, 0.0, 5).unwrap();
        let mut r = stream(5, "emb", 0);
        let t = class_embeddings_from_model(&ProtoModel::identity(4), &pool, 3, &mut r).unwrap();
        assert_eq!(t.labels(), table.labels());
        for ((_, a), (_, b)) in t.iter().zip(table.iter()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 1e-15 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn more_samples_halve_the_variance() {
        let (pool, _) = synth_gaussian_world(2, 2, 0.0, 1.0, 6).unwrap();
        let m = ProtoModel::identity(1);
        let var = |n: usize| {
            let vals: Vec<f64> = (0..4000)
                .map(|i| {
                    let mut r = stream(6, "var", i);
                    class_embeddings_from_model(&m, &pool, n, &mut r).unwrap().iter().next().unwrap().1[0]
                })
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64
        };
        // Sample-variance ratio of 4000 draws: standard error about 3%.
        let ratio = var(4) / var(8);
        assert!((ratio - 2.0).abs() < 0.25, "{ratio}");
    }

    #[test]
    fn class_embeddings_are_deterministic() {
        let (pool, _) = synth_gaussian_world(6, 4, 1.0, 0.5, 7).unwrap();
        let m = ProtoModel::identity(4);
        let a = class_embeddings_from_model(&m, &pool, 3, &mut stream(1, "d", 0)).unwrap();
        let b = class_embeddings_from_model(&m, &pool, 3, &mut stream(1, "d", 0)).unwrap();
        assert_eq!(a, b);
    }
}
