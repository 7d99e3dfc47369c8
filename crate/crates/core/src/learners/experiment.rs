//! Episodic training runs and their evaluation on a shared held-out pool.
//!
//! Randomness is addressed by the master seed: model initialization, the
//! episodes of meta-batch `b`, the held-out tasks and their episodes all come
//! from separate streams, so two runs with the same seed evaluate on exactly
//! the same tasks whatever sampler they trained with.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use super::adam::Adam;
use super::maml::{maml_adapt, maml_batch_gradient, InnerLoop};
use super::mlp::{mlp_loss, MlpParams};
use super::protonet::{
    class_embeddings_from_model, protonet_accuracy, protonet_batch_gradient, ProtoFeedback,
    ProtoModel,
};
use super::reptile::reptile_displacement;
use crate::episodes::{
    draw_episode, draw_regression_episode, sample_regression_task, ClassPool, EmbeddingTable,
    Episode, RegressionEpisode, RegressionFamily, Task, DEFAULT_QUERIES,
};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream};
use crate::samplers::{SamplerConfig, SamplerKind, TaskSampler, TaskUniverse};
use crate::stats::mean_ci95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Maml,
    MamlFo,
    Reptile,
    Protonet,
}

impl LearnerKind {
    pub fn name(self) -> &'static str {
        match self {
            LearnerKind::Maml => "maml",
            LearnerKind::MamlFo => "maml-fo",
            LearnerKind::Reptile => "reptile",
            LearnerKind::Protonet => "protonet",
        }
    }

    pub fn is_regression(self) -> bool {
        self != LearnerKind::Protonet
    }
}

impl fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LearnerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "maml" => Ok(LearnerKind::Maml),
            "maml-fo" | "fomaml" => Ok(LearnerKind::MamlFo),
            "reptile" => Ok(LearnerKind::Reptile),
            "protonet" => Ok(LearnerKind::Protonet),
            _ => Err(Error::InvalidArgument(format!("unknown learner `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    pub learner: LearnerKind,
    pub sampler: SamplerConfig,
    pub epochs: usize,
    /// Meta-batches per epoch. `sbu_bounded` and `sbu_unbounded` run
    /// `meta_batch_size` times as many.
    pub batches_per_epoch: usize,
    pub inner_steps: usize,
    pub inner_lr: f64,
    pub meta_lr: f64,
    pub k_shot: usize,
    pub q_queries: usize,
    pub eval_pool_size: usize,
    pub seed: u64,
    pub ddpp_refresh_interval: u64,
    /// Examples per class averaged when the model re-embeds classes.
    pub embedding_samples: usize,
}

impl TrainConfig {
    pub const EVAL_POOL_SIZE: usize = 1024;
    pub const DDPP_REFRESH_INTERVAL: u64 = 50;
    pub const EMBEDDING_SAMPLES: usize = 8;

    /// Desk-scale regression defaults: 20 epochs of 100 meta-batches of 32
    /// tasks. MAML takes one inner step of 0.001; Reptile five SGD steps of
    /// 0.01. Both use Adam at 0.001 for the outer step.
    pub fn regression(learner: LearnerKind, sampler: SamplerKind, k_shot: usize, seed: u64) -> Self {
        let (inner_steps, inner_lr) = match learner {
            LearnerKind::Reptile => (5, 0.01),
            _ => (1, 0.001),
        };
        Self {
            learner,
            sampler: SamplerConfig::new(sampler, 1, 32, derive_seed(seed, "sampler")),
            epochs: 20,
            batches_per_epoch: 100,
            inner_steps,
            inner_lr,
            meta_lr: 0.001,
            k_shot,
            q_queries: DEFAULT_QUERIES,
            eval_pool_size: Self::EVAL_POOL_SIZE,
            seed,
            ddpp_refresh_interval: Self::DDPP_REFRESH_INTERVAL,
            embedding_samples: Self::EMBEDDING_SAMPLES,
        }
    }

    pub fn protonet(sampler: SamplerKind, n_way: usize, k_shot: usize, seed: u64) -> Self {
        Self {
            learner: LearnerKind::Protonet,
            sampler: SamplerConfig::new(sampler, n_way, 32, derive_seed(seed, "sampler")),
            epochs: 10,
            batches_per_epoch: 100,
            inner_steps: 0,
            inner_lr: 0.0,
            meta_lr: 0.001,
            k_shot,
            q_queries: DEFAULT_QUERIES,
            eval_pool_size: Self::EVAL_POOL_SIZE,
            seed,
            ddpp_refresh_interval: Self::DDPP_REFRESH_INTERVAL,
            embedding_samples: Self::EMBEDDING_SAMPLES,
        }
    }

    pub fn inner(&self) -> InnerLoop {
        InnerLoop {
            steps: self.inner_steps,
            lr: self.inner_lr,
        }
    }

    pub fn batches_per_epoch_effective(&self) -> usize {
        match self.sampler.kind {
            SamplerKind::SbuBounded | SamplerKind::SbuUnbounded => {
                self.batches_per_epoch * self.sampler.meta_batch_size
            }
            _ => self.batches_per_epoch,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        let bad = |what: &str| Err(Error::InvalidArgument(format!("{what} must be positive")));
        if self.epochs == 0 || self.batches_per_epoch == 0 {
            return bad("epochs and batches_per_epoch");
        }
        if self.k_shot == 0 || self.q_queries == 0 {
            return bad("k_shot and q_queries");
        }
        if self.eval_pool_size == 0 {
            return bad("eval_pool_size");
        }
        if !(self.meta_lr > 0.0 && self.meta_lr.is_finite()) {
            return bad("meta_lr");
        }
        if self.learner.is_regression() && (self.inner_steps == 0 || !(self.inner_lr >= 0.0)) {
            return Err(Error::InvalidArgument(
                "regression learners need inner_steps >= 1 and inner_lr >= 0".into(),
            ));
        }
        if self.ddpp_refresh_interval == 0 || self.embedding_samples == 0 {
            return bad("ddpp_refresh_interval and embedding_samples");
        }
        Ok(())
    }
}

/// Where tasks come from.
#[derive(Debug, Clone)]
pub enum World {
    Regression(RegressionFamily),
    Classification {
        train: ClassPool,
        test: ClassPool,
        /// Static class embeddings for `sdpp`.
        table: Arc<EmbeddingTable>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub mean_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub learner: LearnerKind,
    pub sampler: SamplerKind,
    /// `mse` or `accuracy`.
    pub metric: &'static str,
    pub per_task: Vec<f64>,
    pub curve: Vec<CurvePoint>,
    pub mean: f64,
    pub ci95: f64,
    pub meta_batches: u64,
    pub tasks_seen: u64,
    pub events: Vec<String>,
}

impl RunResult {
    pub fn per_task_csv(&self) -> String {
        let mut s = String::from("task_index,metric\n");
        for (i, m) in self.per_task.iter().enumerate() {
            s.push_str(&format!("{i},{m}\n"));
        }
        s
    }

    pub fn curve_csv(&self) -> String {
        let mut s = String::from("epoch,mean_metric\n");
        for p in &self.curve {
            s.push_str(&format!("{},{}\n", p.epoch, p.mean_metric));
        }
        s
    }

    pub fn summary(&self) -> String {
        format!("{} ± {}", self.mean, self.ci95)
    }
}

/// Held-out regression tasks for a master seed.
pub fn regression_eval_pool(family: RegressionFamily, size: usize, seed: u64) -> Vec<crate::episodes::RegressionTask> {
    let mut r = stream(seed, "eval-pool", 0);
    (0..size).map(|_| sample_regression_task(family, &mut r)).collect()
}

/// Held-out classification tasks for a master seed.
pub fn classification_eval_pool(test: &ClassPool, n_way: usize, size: usize, seed: u64) -> Result<Vec<Task>> {
    let mut r = stream(seed, "eval-pool", 0);
    (0..size).map(|_| test.uniform_task(n_way, &mut r)).collect()
}

struct Progress {
    curve: Vec<CurvePoint>,
    epoch_sum: f64,
    epoch_batches: usize,
    events: Vec<String>,
    tasks_seen: u64,
    ohtm_logged: bool,
}

impl Progress {
    fn new() -> Self {
        Self {
            curve: Vec::new(),
            epoch_sum: 0.0,
            epoch_batches: 0,
            events: Vec::new(),
            tasks_seen: 0,
            ohtm_logged: false,
        }
    }

    fn record(&mut self, batch: u64, losses: &[f64]) -> Result<()> {
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged { batch });
        }
        self.epoch_sum += mean;
        self.epoch_batches += 1;
        self.tasks_seen += losses.len() as u64;
        Ok(())
    }

    fn end_epoch(&mut self, epoch: usize) {
        self.curve.push(CurvePoint {
            epoch,
            mean_metric: self.epoch_sum / self.epoch_batches as f64,
        });
        self.epoch_sum = 0.0;
        self.epoch_batches = 0;
    }

    fn report_ohtm<T: Clone, U: TaskUniverse<Task = T>>(
        &mut self,
        sampler: &mut TaskSampler<T>,
        tasks: &[T],
        losses: &[f64],
        batch: u64,
    ) -> Result<()> {
        if sampler.config().kind != SamplerKind::Ohtm {
            return Ok(());
        }
        for (t, l) in tasks.iter().zip(losses) {
            sampler.report_difficulty::<U>(t, *l)?;
        }
        if !self.ohtm_logged && sampler.ohtm_active() {
            self.ohtm_logged = true;
            self.events.push(format!(
                "batch {batch}: ohtm buffer holds {} tasks; hard-task mining on",
                sampler.buffer_len()
            ));
        }
        Ok(())
    }
}

fn finish(cfg: &TrainConfig, metric: &'static str, per_task: Vec<f64>, progress: Progress, meta_batches: u64) -> Result<RunResult> {
    let (mean, ci95) = mean_ci95(&per_task)?;
    Ok(RunResult {
        learner: cfg.learner,
        sampler: cfg.sampler.kind,
        metric,
        per_task,
        curve: progress.curve,
        mean,
        ci95,
        meta_batches,
        tasks_seen: progress.tasks_seen,
        events: progress.events,
    })
}

fn run_regression(cfg: &TrainConfig, family: RegressionFamily) -> Result<RunResult> {
    let mut params = MlpParams::regression(&mut stream(cfg.seed, "init", 0));
    let mut adam = Adam::new(cfg.meta_lr, params.len());
    let mut sampler = TaskSampler::new(cfg.sampler.clone())?;
    let inner = cfg.inner();
    let mut progress = Progress::new();
    let per_epoch = cfg.batches_per_epoch_effective();
    let mut b = 0u64;
    for epoch in 0..cfg.epochs {
        for _ in 0..per_epoch {
            let tasks = sampler.next_meta_batch(&family)?;
            let mut r = stream(cfg.seed, "train-episodes", b);
            let episodes: Vec<RegressionEpisode> = tasks
                .iter()
                .map(|t| draw_regression_episode(t, cfg.k_shot, cfg.q_queries, &mut r))
                .collect();
            let losses = match cfg.learner {
                LearnerKind::Maml | LearnerKind::MamlFo => {
                    let second = cfg.learner == LearnerKind::Maml;
                    let (losses, g) = maml_batch_gradient(&params, &episodes, inner, second);
                    adam.step(params.as_mut_slice(), &g);
                    losses
                }
                LearnerKind::Reptile => {
                    let (d, losses) = reptile_displacement(&params, &episodes, inner);
                    let pseudo: Vec<f64> = d.iter().map(|v| -v).collect();
                    adam.step(params.as_mut_slice(), &pseudo);
                    losses
                }
                LearnerKind::Protonet => unreachable!("checked by run_experiment"),
            };
            progress.record(b, &losses)?;
            progress.report_ohtm::<_, RegressionFamily>(&mut sampler, &tasks, &losses, b)?;
            b += 1;
        }
        progress.end_epoch(epoch);
    }
    let pool = regression_eval_pool(family, cfg.eval_pool_size, cfg.seed);
    let per_task: Vec<f64> = pool
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let ep = draw_regression_episode(t, cfg.k_shot, cfg.q_queries, &mut stream(cfg.seed, "eval-episodes", i as u64));
            mlp_loss(&maml_adapt(&params, &ep.support, inner), &ep.query)
        })
        .collect();
    finish(cfg, "mse", per_task, progress, b)
}

fn run_protonet(cfg: &TrainConfig, train: &ClassPool, test: &ClassPool, table: &Arc<EmbeddingTable>) -> Result<RunResult> {
    let d = train.dim();
    let mut model = ProtoModel::random(d, d, &mut stream(cfg.seed, "init", 0));
    let mut adam = Adam::new(cfg.meta_lr, model.params().len());
    let mut sampler = match cfg.sampler.kind {
        SamplerKind::Sdpp => TaskSampler::with_embeddings(cfg.sampler.clone(), table.clone())?,
        _ => TaskSampler::new(cfg.sampler.clone())?,
    };
    let mut progress = Progress::new();
    let warmup = cfg.sampler.ddpp_warmup_batches;
    let is_ddpp = cfg.sampler.kind == SamplerKind::Ddpp;
    if is_ddpp && warmup > 0 {
        progress
            .events
            .push(format!("batches 0-{}: ddpp uniform warm-up", warmup - 1));
    }
    let per_epoch = cfg.batches_per_epoch_effective();
    let mut b = 0u64;
    for epoch in 0..cfg.epochs {
        for _ in 0..per_epoch {
            if is_ddpp && b >= warmup && (b - warmup).is_multiple_of(cfg.ddpp_refresh_interval) {
                let fresh = class_embeddings_from_model(
                    &model,
                    train,
                    cfg.embedding_samples,
                    &mut stream(cfg.seed, "refresh", b),
                )?;
                sampler.refresh_embeddings(Arc::new(fresh))?;
                progress.events.push(format!("batch {b}: ddpp embeddings refreshed"));
            }
            let tasks = sampler.next_meta_batch(train)?;
            let mut r = stream(cfg.seed, "train-episodes", b);
            let episodes = tasks
                .iter()
                .map(|t| draw_episode(t, train, cfg.k_shot, cfg.q_queries, &mut r))
                .collect::<Result<Vec<Episode>>>()?;
            let (losses, g) = protonet_batch_gradient(&model, &episodes);
            adam.step(model.params_mut(), &g);
            progress.record(b, &losses)?;
            progress.report_ohtm::<_, ClassPool>(&mut sampler, &tasks, &losses, b)?;
            b += 1;
        }
        progress.end_epoch(epoch);
    }
    let pool = classification_eval_pool(test, cfg.sampler.n_way, cfg.eval_pool_size, cfg.seed)?;
    let per_task = pool
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let ep = draw_episode(t, test, cfg.k_shot, cfg.q_queries, &mut stream(cfg.seed, "eval-episodes", i as u64))?;
            Ok(protonet_accuracy(&model, &ep))
        })
        .collect::<Result<Vec<f64>>>()?;
    finish(cfg, "accuracy", per_task, progress, b)
}

/// Trains `cfg.learner` with `cfg.sampler` and evaluates on the held-out
/// pool of the master seed.
pub fn run_experiment(cfg: &TrainConfig, world: &World) -> Result<RunResult> {
    cfg.validate()?;
    match (cfg.learner, world) {
        (LearnerKind::Protonet, World::Classification { train, test, table }) => run_protonet(cfg, train, test, table),
        (l, World::Regression(family)) if l.is_regression() => run_regression(cfg, *family),
        (l, _) => Err(Error::InvalidArgument(format!("learner {l} does not match the world"))),
    }
}

/// A briefly trained Protonet-lite on uniform tasks, used as a frozen
/// difficulty and embedding oracle.
pub fn pilot_protonet(train: &ClassPool, n_way: usize, k_shot: usize, steps: u64, seed: u64) -> Result<ProtoModel> {
    let d = train.dim();
    let mut model = ProtoModel::random(d, d, &mut stream(seed, "pilot-init", 0));
    let mut adam = Adam::new(0.01, model.params().len());
    let mut r = stream(seed, "pilot", 0);
    for _ in 0..steps {
        let episodes = (0..8)
            .map(|_| {
                let t = train.uniform_task(n_way, &mut r)?;
                draw_episode(&t, train, k_shot, 5, &mut r)
            })
            .collect::<Result<Vec<_>>>()?;
        let (_, g) = protonet_batch_gradient(&model, &episodes);
        adam.step(model.params_mut(), &g);
    }
    Ok(model)
}

/// Meta-batches the pilot model trains for before it is frozen.
pub const PILOT_STEPS: u64 = 50;

/// Difficulty and embedding feedback from a pilot Protonet-lite trained for
/// `steps` meta-batches of `n_way`-way 1-shot tasks on `pool`.
pub fn pilot_feedback(pool: &ClassPool, n_way: usize, steps: u64, seed: u64) -> Result<ProtoFeedback> {
    Ok(ProtoFeedback {
        model: pilot_protonet(pool, n_way, 1, steps, seed)?,
        pool: pool.clone(),
        k_shot: 1,
        q_queries: 5,
        samples_per_class: TrainConfig::EMBEDDING_SAMPLES,
        seed,
    })
}
