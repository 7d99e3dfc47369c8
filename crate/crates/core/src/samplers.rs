//! Episodic task samplers.
//!
//! A [`TaskSampler`] is a stateful stream of meta-batches. It is generic over
//! the [`TaskUniverse`] tasks come from: a [`ClassPool`] for classification
//! or a [`RegressionFamily`] for regression. The DPP kinds need class
//! embeddings and only work over class pools.
//!
//! | kind            | meta-batch                                                                  |
//! |-----------------|-----------------------------------------------------------------------------|
//! | `uniform`       | `M` independent uniform tasks                                               |
//! | `ndt`           | one task fixed at the first call, repeated in every slot forever            |
//! | `ndb`           | `M` tasks fixed at the first call, relabeled on every later call            |
//! | `ndtb`          | one fresh class set per call, copied into all `M` slots with fresh labels   |
//! | `sbu`           | one fresh task (`M = 1`)                                                    |
//! | `sbu_unbounded` | as `sbu`; differs only in training budget                                   |
//! | `sbu_bounded`   | one task from a finite pool frozen at the first call (`M = 1`)              |
//! | `ohtm`          | hardest `ceil(M f)` buffered tasks plus uniform tasks, once the buffer is big enough |
//! | `sdpp`          | `M` independent k-DPP draws over a static embedding table                   |
//! | `ddpp`          | uniform during warm-up, then k-DPP draws over refreshed embeddings          |

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::index;
use rand::Rng;
use serde::Serialize;

use crate::dpp::LEnsemble;
use crate::episodes::{
    random_perm, sample_regression_task, ClassLabel, ClassPool, EmbeddingTable, RegressionFamily,
    RegressionTask, Task,
};
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Uniform,
    Ndt,
    Ndb,
    Ndtb,
    Sbu,
    SbuBounded,
    SbuUnbounded,
    Ohtm,
    Sdpp,
    Ddpp,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 10] = [
        SamplerKind::Uniform,
        SamplerKind::Ndt,
        SamplerKind::Ndb,
        SamplerKind::Ndtb,
        SamplerKind::Sbu,
        SamplerKind::SbuBounded,
        SamplerKind::SbuUnbounded,
        SamplerKind::Ohtm,
        SamplerKind::Sdpp,
        SamplerKind::Ddpp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Uniform => "uniform",
            SamplerKind::Ndt => "ndt",
            SamplerKind::Ndb => "ndb",
            SamplerKind::Ndtb => "ndtb",
            SamplerKind::Sbu => "sbu",
            SamplerKind::SbuBounded => "sbu_bounded",
            SamplerKind::SbuUnbounded => "sbu_unbounded",
            SamplerKind::Ohtm => "ohtm",
            SamplerKind::Sdpp => "sdpp",
            SamplerKind::Ddpp => "ddpp",
        }
    }

    /// Single-task meta-batches.
    pub fn is_single_batch(self) -> bool {
        matches!(
            self,
            SamplerKind::Sbu | SamplerKind::SbuBounded | SamplerKind::SbuUnbounded
        )
    }

    pub fn needs_embeddings(self) -> bool {
        matches!(self, SamplerKind::Sdpp | SamplerKind::Ddpp)
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        let alias = match norm.as_str() {
            "s_dpp" => "sdpp",
            "d_dpp" => "ddpp",
            other => other,
        };
        SamplerKind::ALL
            .into_iter()
            .find(|k| k.name() == alias)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown sampler `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub n_way: usize,
    pub meta_batch_size: usize,
    pub ohtm_buffer_min: usize,
    pub ohtm_hard_fraction: f64,
    pub ddpp_warmup_batches: u64,
    /// Size of the frozen task pool of `sbu_bounded`.
    pub sbu_pool_size: usize,
    pub seed: u64,
}

impl SamplerConfig {
    pub const DEFAULT_OHTM_BUFFER_MIN: usize = 50;
    pub const DEFAULT_OHTM_HARD_FRACTION: f64 = 0.5;
    pub const DEFAULT_DDPP_WARMUP: u64 = 500;
    pub const DEFAULT_SBU_POOL: usize = 32;

    pub fn new(kind: SamplerKind, n_way: usize, meta_batch_size: usize, seed: u64) -> Self {
        Self {
            kind,
            n_way,
            meta_batch_size,
            ohtm_buffer_min: Self::DEFAULT_OHTM_BUFFER_MIN,
            ohtm_hard_fraction: Self::DEFAULT_OHTM_HARD_FRACTION,
            ddpp_warmup_batches: Self::DEFAULT_DDPP_WARMUP,
            sbu_pool_size: Self::DEFAULT_SBU_POOL,
            seed,
        }
    }

    pub fn with_kind(&self, kind: SamplerKind) -> Self {
        Self {
            kind,
            ..self.clone()
        }
    }

    /// Meta-batch size actually emitted: 1 for the single-batch kinds.
    pub fn effective_batch_size(&self) -> usize {
        if self.kind.is_single_batch() {
            1
        } else {
            self.meta_batch_size
        }
    }

    /// Number of hard slots an active OHTM batch carries.
    pub fn hard_slots(&self) -> usize {
        (self.effective_batch_size() as f64 * self.ohtm_hard_fraction).ceil() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_way == 0 || self.meta_batch_size == 0 {
            return Err(Error::InvalidArgument(
                "n_way and meta_batch_size must be positive".into(),
            ));
        }
        if !(self.ohtm_hard_fraction > 0.0 && self.ohtm_hard_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "ohtm_hard_fraction {} outside (0, 1)",
                self.ohtm_hard_fraction
            )));
        }
        if self.sbu_pool_size == 0 {
            return Err(Error::InvalidArgument("sbu_pool_size must be positive".into()));
        }
        Ok(())
    }
}

/// Where tasks come from.
pub trait TaskUniverse {
    type Task: Clone;

    /// One task drawn uniformly, with a fresh label assignment.
    fn uniform_task(&self, n_way: usize, rng: &mut StreamRng) -> Result<Self::Task>;

    /// Same task with a fresh label assignment.
    fn reshuffle(&self, task: &Self::Task, rng: &mut StreamRng) -> Self::Task;

    fn task_id(task: &Self::Task) -> u64;

    /// Class labels a DPP draws from, if this universe supports DPP sampling.
    fn ground_set(&self) -> Option<&[ClassLabel]> {
        None
    }

    /// A task whose classes are a k-DPP draw from `ensemble`.
    fn dpp_task(&self, _ensemble: &LEnsemble, _n_way: usize, _rng: &mut StreamRng) -> Result<Self::Task> {
        Err(Error::WrongKind("dpp over a universe without class embeddings".into()))
    }
}

impl TaskUniverse for ClassPool {
    type Task = Task;

    fn uniform_task(&self, n_way: usize, rng: &mut StreamRng) -> Result<Task> {
        if self.len() < n_way {
            return Err(Error::PoolTooSmall {
                available: self.len(),
                required: n_way,
            });
        }
        let classes = index::sample(rng, self.len(), n_way)
            .into_iter()
            .map(|i| self.classes()[i].clone())
            .collect();
        Task::new(classes, random_perm(n_way, rng))
    }

    fn reshuffle(&self, task: &Task, rng: &mut StreamRng) -> Task {
        task.relabeled(random_perm(task.n_way(), rng))
            .expect("a random permutation is a bijection")
    }

    fn task_id(task: &Task) -> u64 {
        task.task_id()
    }

    fn ground_set(&self) -> Option<&[ClassLabel]> {
        Some(self.classes())
    }

    fn dpp_task(&self, ensemble: &LEnsemble, n_way: usize, rng: &mut StreamRng) -> Result<Task> {
        let classes = ensemble.kdpp_sample(n_way, rng)?;
        Task::new(classes, random_perm(n_way, rng))
    }
}

impl TaskUniverse for RegressionFamily {
    type Task = RegressionTask;

    fn uniform_task(&self, _n_way: usize, rng: &mut StreamRng) -> Result<RegressionTask> {
        Ok(sample_regression_task(*self, rng))
    }

    fn reshuffle(&self, task: &RegressionTask, _rng: &mut StreamRng) -> RegressionTask {
        *task
    }

    fn task_id(task: &RegressionTask) -> u64 {
        task.task_id()
    }
}

/// Mutable state of one sampler over one training run.
#[derive(Debug, Clone)]
pub struct TaskSampler<T> {
    config: SamplerConfig,
    rng: StreamRng,
    fixed_task: Option<T>,
    fixed_batch: Option<Vec<T>>,
    bounded_pool: Option<Vec<T>>,
    ohtm_buffer: HashMap<u64, (T, f64)>,
    batches_emitted: u64,
    embeddings: Option<Arc<EmbeddingTable>>,
    ensemble: Option<Arc<LEnsemble>>,
}

impl<T: Clone> TaskSampler<T> {
    pub fn new(config: SamplerConfig) -> Result<Self> {
        config.validate()?;
        let rng = rng::stream(config.seed, "sampler", 0);
        Ok(Self {
            config,
            rng,
            fixed_task: None,
            fixed_batch: None,
            bounded_pool: None,
            ohtm_buffer: HashMap::new(),
            batches_emitted: 0,
            embeddings: None,
            ensemble: None,
        })
    }

    /// A sampler holding an embedding table (the static table of `sdpp`, or
    /// the starting table of `ddpp`).
    pub fn with_embeddings(config: SamplerConfig, table: Arc<EmbeddingTable>) -> Result<Self> {
        let mut s = Self::new(config)?;
        s.embeddings = Some(table);
        Ok(s)
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn batches_emitted(&self) -> u64 {
        self.batches_emitted
    }

    pub fn buffer_len(&self) -> usize {
        self.ohtm_buffer.len()
    }

    /// Whether the OHTM buffer is large enough for hard-task mining.
    pub fn ohtm_active(&self) -> bool {
        self.ohtm_buffer.len() >= self.config.ohtm_buffer_min
    }

    /// Whether `ddpp` is still in its uniform warm-up.
    pub fn in_warmup(&self) -> bool {
        self.config.kind == SamplerKind::Ddpp && self.batches_emitted < self.config.ddpp_warmup_batches
    }

    /// Stored difficulty of a buffered task.
    pub fn difficulty(&self, task_id: u64) -> Option<f64> {
        self.ohtm_buffer.get(&task_id).map(|(_, d)| *d)
    }

    /// Records the latest difficulty (query loss; higher is harder) of a task.
    pub fn report_difficulty<U>(&mut self, task: &T, difficulty: f64) -> Result<()>
    where
        U: TaskUniverse<Task = T>,
    {
        if !difficulty.is_finite() {
            return Err(Error::NonFinite("task difficulty"));
        }
        self.ohtm_buffer
            .insert(U::task_id(task), (task.clone(), difficulty));
        Ok(())
    }

    /// Replaces the embeddings `ddpp` samples from. Draws already made are
    /// unaffected.
    pub fn refresh_embeddings(&mut self, table: Arc<EmbeddingTable>) -> Result<()> {
        if self.config.kind != SamplerKind::Ddpp {
            return Err(Error::WrongKind(self.config.kind.to_string()));
        }
        self.embeddings = Some(table);
        self.ensemble = None;
        Ok(())
    }

    /// The buffered tasks an active OHTM batch would use, hardest first.
    /// Ties go to the larger task id.
    pub fn hardest<U>(&self, count: usize) -> Vec<T>
    where
        U: TaskUniverse<Task = T>,
    {
        let mut entries: Vec<(u64, &(T, f64))> = self.ohtm_buffer.iter().map(|(k, v)| (*k, v)).collect();
        entries.sort_by(|a, b| b.1 .1.total_cmp(&a.1 .1).then(b.0.cmp(&a.0)));
        entries
            .into_iter()
            .take(count)
            .map(|(_, (t, _))| t.clone())
            .collect()
    }

    fn ensemble<U>(&mut self, universe: &U) -> Result<Arc<LEnsemble>>
    where
        U: TaskUniverse<Task = T>,
    {
        if let Some(e) = &self.ensemble {
            return Ok(e.clone());
        }
        let table = self
            .embeddings
            .as_ref()
            .ok_or_else(|| Error::MissingEmbedding(format!("{} sampler has no embedding table", self.config.kind)))?;
        let items = universe
            .ground_set()
            .ok_or_else(|| Error::WrongKind(format!("{} over a universe without classes", self.config.kind)))?;
        if let Some(c) = items.iter().find(|c| table.get(c).is_none()) {
            return Err(Error::MissingEmbedding(c.to_string()));
        }
        let e = Arc::new(LEnsemble::build(table, items)?);
        self.ensemble = Some(e.clone());
        Ok(e)
    }

    /// Emits the next meta-batch.
    pub fn next_meta_batch<U>(&mut self, universe: &U) -> Result<Vec<T>>
    where
        U: TaskUniverse<Task = T>,
    {
        let n_way = self.config.n_way;
        let m = self.config.effective_batch_size();
        let batch = match self.config.kind {
            SamplerKind::Uniform | SamplerKind::Sbu | SamplerKind::SbuUnbounded => (0..m)
                .map(|_| universe.uniform_task(n_way, &mut self.rng))
                .collect::<Result<Vec<_>>>()?,
            SamplerKind::Ndt => {
                if self.fixed_task.is_none() {
                    self.fixed_task = Some(universe.uniform_task(n_way, &mut self.rng)?);
                }
                vec![self.fixed_task.clone().expect("set above"); m]
            }
            SamplerKind::Ndb => match &self.fixed_batch {
                None => {
                    let b = (0..m)
                        .map(|_| universe.uniform_task(n_way, &mut self.rng))
                        .collect::<Result<Vec<_>>>()?;
                    self.fixed_batch = Some(b.clone());
                    b
                }
                Some(b) => b.iter().map(|t| universe.reshuffle(t, &mut self.rng)).collect(),
            },
            SamplerKind::Ndtb => {
                let t = universe.uniform_task(n_way, &mut self.rng)?;
                (0..m).map(|_| universe.reshuffle(&t, &mut self.rng)).collect()
            }
            SamplerKind::SbuBounded => {
                if self.bounded_pool.is_none() {
                    let pool = (0..self.config.sbu_pool_size)
                        .map(|_| universe.uniform_task(n_way, &mut self.rng))
                        .collect::<Result<Vec<_>>>()?;
                    self.bounded_pool = Some(pool);
                }
                let pool = self.bounded_pool.as_ref().expect("set above");
                let i = self.rng.random_range(0..pool.len());
                vec![pool[i].clone()]
            }
            SamplerKind::Ohtm => {
                let hard = if self.ohtm_active() {
                    self.hardest::<U>(self.config.hard_slots())
                } else {
                    Vec::new()
                };
                let fill = m - hard.len();
                let mut b = hard;
                for _ in 0..fill {
                    b.push(universe.uniform_task(n_way, &mut self.rng)?);
                }
                b
            }
            SamplerKind::Sdpp => {
                let e = self.ensemble(universe)?;
                (0..m)
                    .map(|_| universe.dpp_task(&e, n_way, &mut self.rng))
                    .collect::<Result<Vec<_>>>()?
            }
            SamplerKind::Ddpp => {
                if self.in_warmup() {
                    (0..m)
                        .map(|_| universe.uniform_task(n_way, &mut self.rng))
                        .collect::<Result<Vec<_>>>()?
                } else {
                    let e = self.ensemble(universe)?;
                    (0..m)
                        .map(|_| universe.dpp_task(&e, n_way, &mut self.rng))
                        .collect::<Result<Vec<_>>>()?
                }
            }
        };
        self.batches_emitted += 1;
        Ok(batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dpp::kdpp_prob;
    use crate::episodes::synth_gaussian_world;
    use std::collections::HashSet;

    fn pool() -> ClassPool {
        synth_gaussian_world(20, 4, 1.0, 0.1, 3).unwrap().0
    }

    fn sampler(kind: SamplerKind, n: usize, m: usize) -> TaskSampler<Task> {
        TaskSampler::new(SamplerConfig::new(kind, n, m, 17)).unwrap()
    }

    fn class_sets(batches: &[Vec<Task>]) -> HashSet<Vec<ClassLabel>> {
        batches.iter().flatten().map(Task::class_set).collect()
    }

    #[test]
    fn ndt_repeats_one_task() {
        let p = pool();
        let mut s = sampler(SamplerKind::Ndt, 3, 2);
        let batches: Vec<_> = (0..3).map(|_| s.next_meta_batch(&p).unwrap()).collect();
        let all: Vec<&Task> = batches.iter().flatten().collect();
        assert_eq!(all.len(), 6);
        assert!(all.iter().all(|t| *t == all[0]));
    }

    #[test]
    fn ndb_repeats_class_sets_with_fresh_labels() {
        let p = pool();
        let mut s = sampler(SamplerKind::Ndb, 5, 4);
        let first = s.next_meta_batch(&p).unwrap();
        let mut relabeled = false;
        for _ in 0..10 {
            let b = s.next_meta_batch(&p).unwrap();
            for (a, t) in first.iter().zip(&b) {
                assert_eq!(a.classes(), t.classes());
                relabeled |= a.label_perm() != t.label_perm();
            }
        }
        assert!(relabeled);
        assert_eq!(class_sets(&[first]).len(), 4);
    }

    #[test]
    fn ndtb_fills_a_batch_with_one_class_set() {
        let p = pool();
        let mut s = sampler(SamplerKind::Ndtb, 5, 4);
        let b = s.next_meta_batch(&p).unwrap();
        assert_eq!(class_sets(&[b.clone()]).len(), 1);
        let perms: HashSet<Vec<usize>> = b.iter().map(|t| t.label_perm().to_vec()).collect();
        assert!(perms.len() > 1);
        let batches: Vec<_> = (0..100).map(|_| s.next_meta_batch(&p).unwrap()).collect();
        let ndtb_distinct = class_sets(&batches).len();
        assert!(ndtb_distinct <= 100);
        let mut u = sampler(SamplerKind::Uniform, 5, 4);
        let ub: Vec<_> = (0..100).map(|_| u.next_meta_batch(&p).unwrap()).collect();
        assert!(class_sets(&ub).len() > ndtb_distinct);
    }

    #[test]
    fn single_batch_kinds_force_m_one() {
        let p = pool();
        for kind in [SamplerKind::Sbu, SamplerKind::SbuBounded, SamplerKind::SbuUnbounded] {
            let mut s = sampler(kind, 3, 32);
            assert_eq!(s.next_meta_batch(&p).unwrap().len(), 1);
        }
    }

    #[test]
    fn sbu_bounded_stays_in_its_pool() {
        let p = pool();
        let mut cfg = SamplerConfig::new(SamplerKind::SbuBounded, 3, 32, 5);
        cfg.sbu_pool_size = 4;
        let mut s = TaskSampler::new(cfg).unwrap();
        let batches: Vec<_> = (0..200).map(|_| s.next_meta_batch(&p).unwrap()).collect();
        assert!(class_sets(&batches).len() <= 4);
    }

    #[test]
    fn pool_too_small() {
        let p = pool();
        let mut s = sampler(SamplerKind::Uniform, 30, 2);
        assert_eq!(
            s.next_meta_batch(&p).unwrap_err(),
            Error::PoolTooSmall {
                available: 20,
                required: 30
            }
        );
    }

    #[test]
    fn determinism() {
        let p = pool();
        for kind in [SamplerKind::Uniform, SamplerKind::Ndb, SamplerKind::Ndtb, SamplerKind::SbuBounded] {
            let mut a = sampler(kind, 4, 3);
            let mut b = sampler(kind, 4, 3);
            for _ in 0..5 {
                assert_eq!(a.next_meta_batch(&p).unwrap(), b.next_meta_batch(&p).unwrap());
            }
        }
    }

    #[test]
    fn difficulty_is_latest_wins() {
        let p = pool();
        let mut s = sampler(SamplerKind::Ohtm, 3, 4);
        let t = s.next_meta_batch(&p).unwrap()[0].clone();
        s.report_difficulty::<ClassPool>(&t, 1.0).unwrap();
        s.report_difficulty::<ClassPool>(&t, 0.2).unwrap();
        assert_eq!(s.difficulty(t.task_id()), Some(0.2));
        assert_eq!(
            s.report_difficulty::<ClassPool>(&t, f64::NAN).unwrap_err(),
            Error::NonFinite("task difficulty")
        );
    }

    #[test]
    fn ohtm_switches_on_after_buffer_minimum() {
        let p = pool();
        let mut s = sampler(SamplerKind::Ohtm, 3, 4);
        let mut seen = HashSet::new();
        let mut r = rng::stream(1, "ohtm", 0);
        while seen.len() < 60 {
            let t = p.uniform_task(3, &mut r).unwrap();
            if seen.insert(t.task_id()) {
                s.report_difficulty::<ClassPool>(&t, seen.len() as f64).unwrap();
            }
        }
        assert!(s.ohtm_active());
        let b = s.next_meta_batch(&p).unwrap();
        let top = s.hardest::<ClassPool>(2);
        assert_eq!(&b[..2], &top[..]);
        assert_eq!(s.difficulty(b[0].task_id()), Some(60.0));
        assert_eq!(s.difficulty(b[1].task_id()), Some(59.0));
    }

    #[test]
    fn ohtm_top_two_of_three() {
        let p = pool();
        let mut cfg = SamplerConfig::new(SamplerKind::Ohtm, 3, 4, 1);
        cfg.ohtm_buffer_min = 3;
        let mut s = TaskSampler::new(cfg).unwrap();
        let tasks = s.next_meta_batch(&p).unwrap();
        for (t, loss) in tasks.iter().zip([5.0, 1.0, 3.0]) {
            s.report_difficulty::<ClassPool>(t, loss).unwrap();
        }
        let b = s.next_meta_batch(&p).unwrap();
        assert_eq!(b[0], tasks[0]);
        assert_eq!(b[1], tasks[2]);
        assert_eq!(b.len(), 4);
    }

    #[test]
    fn ohtm_ties_prefer_larger_ids() {
        let p = pool();
        let mut s = sampler(SamplerKind::Ohtm, 3, 2);
        let tasks = sampler(SamplerKind::Uniform, 3, 6).next_meta_batch(&p).unwrap();
        for t in &tasks {
            s.report_difficulty::<ClassPool>(t, 1.0).unwrap();
        }
        let top = s.hardest::<ClassPool>(1);
        let max_id = tasks.iter().map(Task::task_id).max().unwrap();
        assert_eq!(top[0].task_id(), max_id);
    }

    #[test]
    fn sdpp_never_pairs_duplicate_embeddings() {
        let table = EmbeddingTable::from_entries(
            3,
            [
                ("a", vec![1.0, 0.0, 0.0]),
                ("b", vec![1.0, 0.0, 0.0]),
                ("c", vec![0.0, 1.0, 0.0]),
                ("d", vec![0.0, 0.0, 1.0]),
            ],
        )
        .unwrap();
        let table = Arc::new(table);
        let e = LEnsemble::build(&table, table.labels()).unwrap();
        assert_eq!(kdpp_prob(&e, &["a".into(), "b".into()], 2).unwrap(), 0.0);
        let pool = ClassPool::from_table(table.clone(), 0.1, 0, crate::episodes::Split::Train);
        let mut s = TaskSampler::with_embeddings(SamplerConfig::new(SamplerKind::Sdpp, 2, 100, 3), table).unwrap();
        for _ in 0..100 {
            for t in s.next_meta_batch(&pool).unwrap() {
                let set = t.class_set();
                assert!(!(set.contains(&"a".into()) && set.contains(&"b".into())));
            }
        }
    }

    #[test]
    fn sdpp_requires_embeddings() {
        let p = pool();
        let mut s = sampler(SamplerKind::Sdpp, 3, 2);
        assert!(matches!(s.next_meta_batch(&p).unwrap_err(), Error::MissingEmbedding(_)));
        let partial = Arc::new(EmbeddingTable::from_entries(4, [("c00", vec![1.0; 4])]).unwrap());
        let mut s = TaskSampler::with_embeddings(SamplerConfig::new(SamplerKind::Sdpp, 3, 2, 1), partial).unwrap();
        assert!(matches!(s.next_meta_batch(&p).unwrap_err(), Error::MissingEmbedding(_)));
    }

    #[test]
    fn ddpp_warmup_and_refresh() {
        let (p, table) = synth_gaussian_world(12, 6, 1.0, 0.1, 4).unwrap();
        let table = Arc::new(table);
        let mut cfg = SamplerConfig::new(SamplerKind::Ddpp, 3, 2, 8);
        cfg.ddpp_warmup_batches = 3;
        let mut d = TaskSampler::new(cfg).unwrap();
        // Warm-up batches never touch the (absent) embeddings.
        for _ in 0..2 {
            d.next_meta_batch(&p).unwrap();
        }
        d.refresh_embeddings(table.clone()).unwrap();
        assert!(d.in_warmup());
        d.next_meta_batch(&p).unwrap();
        assert!(!d.in_warmup());
        d.next_meta_batch(&p).unwrap();

        let collapsed = Arc::new(EmbeddingTable::from_entries(
            6,
            table.labels().iter().map(|c| (c.clone(), vec![1.0; 6])),
        )
        .unwrap());
        d.refresh_embeddings(collapsed).unwrap();
        assert_eq!(
            d.next_meta_batch(&p).unwrap_err(),
            Error::InfeasibleK { k: 3, rank: 1 }
        );

        let mut u = sampler(SamplerKind::Uniform, 3, 2);
        assert!(matches!(u.refresh_embeddings(table).unwrap_err(), Error::WrongKind(_)));
    }

    #[test]
    fn refreshed_ddpp_matches_sdpp() {
        let (p, table) = synth_gaussian_world(10, 6, 1.0, 0.1, 4).unwrap();
        let table = Arc::new(table);
        let mut cfg = SamplerConfig::new(SamplerKind::Ddpp, 3, 4, 8);
        cfg.ddpp_warmup_batches = 0;
        let mut d = TaskSampler::new(cfg.clone()).unwrap();
        d.refresh_embeddings(table.clone()).unwrap();
        let mut s = TaskSampler::with_embeddings(cfg.with_kind(SamplerKind::Sdpp), table).unwrap();
        for _ in 0..5 {
            assert_eq!(d.next_meta_batch(&p).unwrap(), s.next_meta_batch(&p).unwrap());
        }
    }

    #[test]
    fn regression_universe() {
        let fam = RegressionFamily::Sinusoid;
        let mut s: TaskSampler<RegressionTask> = TaskSampler::new(SamplerConfig::new(SamplerKind::Ndtb, 1, 4, 2)).unwrap();
        let b = s.next_meta_batch(&fam).unwrap();
        assert!(b.iter().all(|t| *t == b[0]));
        let mut d: TaskSampler<RegressionTask> = TaskSampler::new(SamplerConfig::new(SamplerKind::Sdpp, 1, 4, 2)).unwrap();
        assert!(d.next_meta_batch(&fam).is_err());
    }

    #[test]
    fn kind_names_parse() {
        for k in SamplerKind::ALL {
            assert_eq!(k.name().parse::<SamplerKind>().unwrap(), k);
        }
        assert_eq!("s-DPP".parse::<SamplerKind>().unwrap(), SamplerKind::Sdpp);
        assert_eq!("sbu-bounded".parse::<SamplerKind>().unwrap(), SamplerKind::SbuBounded);
        assert!("random".parse::<SamplerKind>().is_err());
    }
}
