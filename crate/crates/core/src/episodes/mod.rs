//! Class pools, synthetic worlds, tasks and episodes.

mod embeddings;
pub mod regression;

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

pub use embeddings::{ingest_embeddings, ClassLabel, EmbeddingTable};
pub use regression::{
    draw_regression_episode, sample_regression_task, RegressionEpisode, RegressionFamily,
    RegressionFn, RegressionTask,
};

/// Default number of query examples per class (classification) or query
/// points (regression).
pub const DEFAULT_QUERIES: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Per-class example generator: class mean plus isotropic Gaussian noise.
///
/// An example is a pure function of `(seed, class, draw index)`.
#[derive(Debug, Clone)]
pub struct GaussianSource {
    means: Arc<EmbeddingTable>,
    noise: f64,
    seed: u64,
}

impl GaussianSource {
    pub fn new(means: Arc<EmbeddingTable>, noise: f64, seed: u64) -> Self {
        Self { means, noise, seed }
    }

    pub fn means(&self) -> &EmbeddingTable {
        &self.means
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn example(&self, class: &ClassLabel, draw_index: u64) -> Result<Vec<f64>> {
        let mean = self
            .means
            .get(class)
            .ok_or_else(|| Error::UnknownClass(class.to_string()))?;
        let mut r = rng::stream(self.seed, &format!("example/{class}"), draw_index);
        Ok(mean
            .iter()
            .map(|m| m + self.noise * r.sample::<f64, _>(StandardNormal))
            .collect())
    }
}

/// The label universe tasks are formed from, with a way to draw examples.
#[derive(Debug, Clone)]
pub struct ClassPool {
    classes: Vec<ClassLabel>,
    source: GaussianSource,
    split: Split,
}

impl ClassPool {
    pub fn new(classes: Vec<ClassLabel>, source: GaussianSource, split: Split) -> Result<Self> {
        for c in &classes {
            if source.means.get(c).is_none() {
                return Err(Error::UnknownClass(c.to_string()));
            }
        }
        Ok(Self {
            classes,
            source,
            split,
        })
    }

    /// A pool over every class of `table`, examples drawn around the table
    /// vectors with noise `noise`.
    pub fn from_table(table: Arc<EmbeddingTable>, noise: f64, seed: u64, split: Split) -> Self {
        let classes = table.labels().to_vec();
        Self {
            classes,
            source: GaussianSource::new(table, noise, seed),
            split,
        }
    }

    pub fn classes(&self) -> &[ClassLabel] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn source(&self) -> &GaussianSource {
        &self.source
    }

    pub fn dim(&self) -> usize {
        self.source.means.dim()
    }

    pub fn contains(&self, class: &ClassLabel) -> bool {
        self.classes.contains(class)
    }

    pub fn example(&self, class: &ClassLabel, draw_index: u64) -> Result<Vec<f64>> {
        if !self.contains(class) {
            return Err(Error::UnknownClass(class.to_string()));
        }
        self.source.example(class, draw_index)
    }

    /// Splits into disjoint train and test pools, `n_test` classes going to
    /// test. The assignment is a seeded shuffle.
    pub fn partition(&self, n_test: usize, seed: u64) -> Result<(ClassPool, ClassPool)> {
        if n_test == 0 || n_test >= self.classes.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot move {n_test} of {} classes to the test split",
                self.classes.len()
            )));
        }
        let mut shuffled = self.classes.clone();
        shuffled.shuffle(&mut rng::stream(seed, "partition", 0));
        let test = shuffled.split_off(shuffled.len() - n_test);
        let train = shuffled;
        Ok((
            ClassPool {
                classes: train,
                source: self.source.clone(),
                split: Split::Train,
            },
            ClassPool {
                classes: test,
                source: self.source.clone(),
                split: Split::Test,
            },
        ))
    }
}

/// Synthetic world of `n_classes` Gaussian classes in `dim` dimensions.
///
/// Class means are i.i.d. `N(0, spread^2 I)`; examples are the mean plus
/// `N(0, noise^2 I)`. The returned table holds the means.
pub fn synth_gaussian_world(
    n_classes: usize,
    dim: usize,
    spread: f64,
    noise: f64,
    seed: u64,
) -> Result<(ClassPool, EmbeddingTable)> {
    if n_classes < 2 || dim < 2 {
        return Err(Error::InvalidArgument(
            "a synthetic world needs at least 2 classes and 2 dimensions".into(),
        ));
    }
    if !(spread >= 0.0 && noise >= 0.0 && spread.is_finite() && noise.is_finite()) {
        return Err(Error::InvalidArgument(
            "spread and noise must be finite and non-negative".into(),
        ));
    }
    let width = (n_classes - 1).to_string().len();
    let mut r = rng::stream(seed, "world/means", 0);
    let table = EmbeddingTable::from_entries(
        dim,
        (0..n_classes).map(|i| {
            let mean: Vec<f64> = (0..dim)
                .map(|_| spread * r.sample::<f64, _>(StandardNormal))
                .collect();
            (ClassLabel::new(&format!("c{i:0width$}")), mean)
        }),
    )?;
    let shared = Arc::new(table.clone());
    let pool = ClassPool::from_table(shared, noise, rng::derive_seed(seed, "world/examples"), Split::Train);
    Ok((pool, table))
}

/// An ordered list of `N` distinct classes and the permutation that maps the
/// class at position `i` to label slot `label_perm[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Task {
    classes: Vec<ClassLabel>,
    label_perm: Vec<usize>,
    task_id: u64,
}

impl Task {
    pub fn new(classes: Vec<ClassLabel>, label_perm: Vec<usize>) -> Result<Self> {
        let n = classes.len();
        if n == 0 {
            return Err(Error::EmptyInput("task with no classes"));
        }
        if label_perm.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: label_perm.len(),
            });
        }
        let mut seen = vec![false; n];
        for &slot in &label_perm {
            if slot >= n || std::mem::replace(&mut seen[slot], true) {
                return Err(Error::InvalidArgument(format!(
                    "label permutation {label_perm:?} is not a bijection"
                )));
            }
        }
        let mut sorted = classes.clone();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("task classes must be distinct".into()));
        }
        let task_id = class_set_id(&sorted);
        Ok(Self {
            classes,
            label_perm,
            task_id,
        })
    }

    /// Identity label permutation.
    pub fn with_identity_labels(classes: Vec<ClassLabel>) -> Result<Self> {
        let n = classes.len();
        Self::new(classes, (0..n).collect())
    }

    pub fn classes(&self) -> &[ClassLabel] {
        &self.classes
    }

    pub fn label_perm(&self) -> &[usize] {
        &self.label_perm
    }

    pub fn n_way(&self) -> usize {
        self.classes.len()
    }

    /// Stable identity of the class set; independent of order and labels.
    pub fn task_id(&self) -> u64 {
        self.task_id
    }

    /// Same classes, new label permutation.
    pub fn relabeled(&self, label_perm: Vec<usize>) -> Result<Self> {
        Self::new(self.classes.clone(), label_perm)
    }

    /// Sorted class labels, for comparing class sets.
    pub fn class_set(&self) -> Vec<ClassLabel> {
        let mut s = self.classes.clone();
        s.sort();
        s
    }
}

fn class_set_id(sorted: &[ClassLabel]) -> u64 {
    let mut bytes = Vec::new();
    for c in sorted {
        bytes.extend_from_slice(c.as_str().as_bytes());
        bytes.push(0x1f);
    }
    rng::fnv1a(&bytes)
}

/// A random permutation of `0..n`.
pub fn random_perm(n: usize, rng: &mut StreamRng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Example {
    pub x: Vec<f64>,
    /// Label slot in `0..n_way`.
    pub y: usize,
}

impl Example {
    pub fn one_hot(&self, n_way: usize) -> Vec<f64> {
        let mut v = vec![0.0; n_way];
        v[self.y] = 1.0;
        v
    }
}

/// Support and query sets realized from a task.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub support: Vec<Example>,
    pub query: Vec<Example>,
    pub n_way: usize,
    pub k_shot: usize,
    pub q_queries: usize,
}

/// Draws fresh examples for `task`: `k_shot` support and `q_queries` query
/// examples per class. Each example's draw index comes from `rng`, so
/// repeating a task does not repeat its examples.
pub fn draw_episode(
    task: &Task,
    pool: &ClassPool,
    k_shot: usize,
    q_queries: usize,
    rng: &mut StreamRng,
) -> Result<Episode> {
    if k_shot == 0 || q_queries == 0 {
        return Err(Error::InvalidArgument(
            "episodes need at least one support and one query example per class".into(),
        ));
    }
    let n_way = task.n_way();
    let mut support = Vec::with_capacity(n_way * k_shot);
    let mut query = Vec::with_capacity(n_way * q_queries);
    for (class, &slot) in task.classes().iter().zip(task.label_perm()) {
        for _ in 0..k_shot {
            let x = pool.example(class, rng.random())?;
            support.push(Example { x, y: slot });
        }
        for _ in 0..q_queries {
            let x = pool.example(class, rng.random())?;
            query.push(Example { x, y: slot });
        }
    }
    Ok(Episode {
        support,
        query,
        n_way,
        k_shot,
        q_queries,
    })
}
