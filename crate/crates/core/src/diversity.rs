//! Volume-based diversity of tasks, meta-batches and samplers.
//!
//! Every quantity is a squared parallelotope volume `det(A Aᵀ)`:
//!
//! * task diversity `TD` spans the task's class embeddings,
//! * batch diversity `BD` spans the task embeddings `TE` (class means) of a batch,
//! * overall diversity `OD` spans the batch embeddings `BE = BD · Σ πᵢ TEᵢ`
//!   collected over a run, with `πᵢ = TDᵢ / Σ TD`.
//!
//! Reports divide every `OD` by the uniform sampler's, so `uniform` scores 1.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::episodes::{ClassPool, EmbeddingTable, Task};
use crate::error::{Error, Result};
use crate::geometry::{gram_volume_sq, mean_vector, RowMatrix};
use crate::rng::derive_seed;
use crate::samplers::{SamplerConfig, SamplerKind, TaskSampler};

/// Model-derived signals the adaptive samplers need while being measured.
pub trait TaskFeedback: Sync {
    /// Difficulty of a task under the current model (higher is harder).
    fn difficulty(&self, task: &Task) -> Result<f64>;

    /// Class embeddings produced by the current model.
    fn class_embeddings(&self) -> Result<EmbeddingTable>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DiversityProtocol {
    pub n_batches: usize,
    pub batch_size: usize,
    pub n_seeds: usize,
}

impl Default for DiversityProtocol {
    fn default() -> Self {
        Self {
            n_batches: 5,
            batch_size: 8,
            n_seeds: 3,
        }
    }
}

fn class_rows<'a>(task: &Task, table: &'a EmbeddingTable) -> Result<Vec<&'a [f64]>> {
    task.classes().iter().map(|c| table.require(c)).collect()
}

pub fn task_diversity(task: &Task, table: &EmbeddingTable) -> Result<f64> {
    Ok(gram_volume_sq(&RowMatrix::from_rows(&class_rows(task, table)?)?))
}

pub fn task_embedding(task: &Task, table: &EmbeddingTable) -> Result<Vec<f64>> {
    mean_vector(&class_rows(task, table)?)
}

fn require_nonempty(batch: &[Task]) -> Result<()> {
    if batch.is_empty() {
        Err(Error::EmptyInput("meta-batch"))
    } else {
        Ok(())
    }
}

fn volume_of(rows: &[Vec<f64>]) -> Result<f64> {
    if rows.len() < 2 {
        return Ok(0.0);
    }
    Ok(gram_volume_sq(&RowMatrix::from_rows(rows)?))
}

/// Zero for a single-task batch.
pub fn batch_diversity(batch: &[Task], table: &EmbeddingTable) -> Result<f64> {
    require_nonempty(batch)?;
    let tes = batch
        .iter()
        .map(|t| task_embedding(t, table))
        .collect::<Result<Vec<_>>>()?;
    volume_of(&tes)
}

pub fn batch_embedding(batch: &[Task], table: &EmbeddingTable) -> Result<Vec<f64>> {
    Ok(BatchTrace::measure(batch, table)?.batch_embedding)
}

/// Uniform weights when every entry is zero.
fn proportional_weights(tds: &[f64]) -> Vec<f64> {
    let total: f64 = tds.iter().sum();
    if total > 0.0 {
        tds.iter().map(|td| td / total).collect()
    } else {
        vec![1.0 / tds.len() as f64; tds.len()]
    }
}

/// Intermediate values of one measured meta-batch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchTrace {
    pub task_diversity: Vec<f64>,
    pub task_embeddings: Vec<Vec<f64>>,
    pub batch_diversity: f64,
    pub batch_embedding: Vec<f64>,
}

impl BatchTrace {
    pub fn measure(batch: &[Task], table: &EmbeddingTable) -> Result<Self> {
        require_nonempty(batch)?;
        let task_diversity = batch
            .iter()
            .map(|t| task_diversity(t, table))
            .collect::<Result<Vec<_>>>()?;
        let task_embeddings = batch
            .iter()
            .map(|t| task_embedding(t, table))
            .collect::<Result<Vec<_>>>()?;
        let batch_diversity = volume_of(&task_embeddings)?;
        let pi = proportional_weights(&task_diversity);
        let mut batch_embedding = vec![0.0; table.dim()];
        for (w, te) in pi.iter().zip(&task_embeddings) {
            for (b, x) in batch_embedding.iter_mut().zip(te) {
                *b += w * x;
            }
        }
        for b in &mut batch_embedding {
            *b *= batch_diversity;
        }
        Ok(Self {
            task_diversity,
            task_embeddings,
            batch_diversity,
            batch_embedding,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedTrace {
    pub seed: u64,
    pub batches: Vec<BatchTrace>,
    pub overall: f64,
}

/// Raw (unnormalized) overall diversity with its per-seed intermediates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplerDiversity {
    pub sampler: SamplerKind,
    pub raw: f64,
    pub seeds: Vec<SeedTrace>,
}

fn sampler_for_seed(
    template: &SamplerConfig,
    protocol: &DiversityProtocol,
    seed_index: usize,
    table: &Arc<EmbeddingTable>,
) -> Result<TaskSampler<Task>> {
    let mut cfg = template.clone();
    cfg.meta_batch_size = protocol.batch_size;
    cfg.seed = derive_seed(template.seed, &format!("diversity/{seed_index}"));
    match cfg.kind {
        SamplerKind::Sdpp => TaskSampler::with_embeddings(cfg, table.clone()),
        _ => TaskSampler::new(cfg),
    }
}

fn report_batch(
    sampler: &mut TaskSampler<Task>,
    batch: &[Task],
    feedback: &dyn TaskFeedback,
) -> Result<()> {
    for t in batch {
        sampler.report_difficulty::<ClassPool>(t, feedback.difficulty(t)?)?;
    }
    Ok(())
}

/// Brings an adaptive sampler to its steady state before measurement: OHTM
/// until its buffer is full enough, d-DPP through its warm-up and one refresh.
fn warm_up(
    sampler: &mut TaskSampler<Task>,
    pool: &ClassPool,
    feedback: Option<&dyn TaskFeedback>,
) -> Result<()> {
    let kind = sampler.config().kind;
    let missing = || Error::InvalidArgument(format!("{kind} diversity needs a model feedback"));
    match kind {
        SamplerKind::Ohtm => {
            let fb = feedback.ok_or_else(missing)?;
            while !sampler.ohtm_active() {
                let batch = sampler.next_meta_batch(pool)?;
                report_batch(sampler, &batch, fb)?;
            }
        }
        SamplerKind::Ddpp => {
            let fb = feedback.ok_or_else(missing)?;
            while sampler.in_warmup() {
                sampler.next_meta_batch(pool)?;
            }
            sampler.refresh_embeddings(Arc::new(fb.class_embeddings()?))?;
        }
        _ => {}
    }
    Ok(())
}

fn seed_trace(
    template: &SamplerConfig,
    pool: &ClassPool,
    table: &Arc<EmbeddingTable>,
    protocol: &DiversityProtocol,
    feedback: Option<&dyn TaskFeedback>,
    seed_index: usize,
) -> Result<SeedTrace> {
    let mut sampler = sampler_for_seed(template, protocol, seed_index, table)?;
    warm_up(&mut sampler, pool, feedback)?;
    let mut batches = Vec::with_capacity(protocol.n_batches);
    for _ in 0..protocol.n_batches {
        let batch = sampler.next_meta_batch(pool)?;
        batches.push(BatchTrace::measure(&batch, table)?);
        if let (SamplerKind::Ohtm, Some(fb)) = (template.kind, feedback) {
            report_batch(&mut sampler, &batch, fb)?;
        }
    }
    let bes: Vec<Vec<f64>> = batches.iter().map(|b| b.batch_embedding.clone()).collect();
    Ok(SeedTrace {
        seed: sampler.config().seed,
        overall: volume_of(&bes)?,
        batches,
    })
}

/// Raw overall diversity of one sampler, averaged over the protocol's seeds.
/// Seeds run concurrently and are reduced in seed order.
pub fn overall_diversity(
    sampler: &SamplerConfig,
    pool: &ClassPool,
    table: &Arc<EmbeddingTable>,
    protocol: &DiversityProtocol,
    feedback: Option<&dyn TaskFeedback>,
) -> Result<SamplerDiversity> {
    if protocol.n_batches == 0 || protocol.batch_size == 0 || protocol.n_seeds == 0 {
        return Err(Error::InvalidArgument("diversity protocol counts must be positive".into()));
    }
    let seeds = (0..protocol.n_seeds)
        .into_par_iter()
        .map(|s| seed_trace(sampler, pool, table, protocol, feedback, s))
        .collect::<Result<Vec<_>>>()?;
    let raw = seeds.iter().map(|s| s.overall).sum::<f64>() / seeds.len() as f64;
    Ok(SamplerDiversity {
        sampler: sampler.kind,
        raw,
        seeds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportEntry {
    pub sampler: SamplerKind,
    pub od_normalized: f64,
    pub od_raw: f64,
    pub seeds: Vec<SeedTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiversityReport {
    pub protocol: DiversityProtocol,
    pub n_way: usize,
    pub entries: Vec<ReportEntry>,
}

impl DiversityReport {
    pub fn get(&self, kind: SamplerKind) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.sampler == kind)
            .map(|e| e.od_normalized)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("sampler,od_normalized\n");
        for e in &self.entries {
            out.push_str(&format!("{},{}\n", e.sampler, e.od_normalized));
        }
        out
    }
}

/// Normalized overall diversity of each kind, in the order given.
pub fn diversity_report(
    kinds: &[SamplerKind],
    template: &SamplerConfig,
    pool: &ClassPool,
    table: &Arc<EmbeddingTable>,
    protocol: &DiversityProtocol,
    feedback: Option<&dyn TaskFeedback>,
) -> Result<DiversityReport> {
    if !kinds.contains(&SamplerKind::Uniform) {
        return Err(Error::InvalidArgument(
            "the uniform sampler is required for normalization".into(),
        ));
    }
    let raw = kinds
        .iter()
        .map(|&k| overall_diversity(&template.with_kind(k), pool, table, protocol, feedback))
        .collect::<Result<Vec<_>>>()?;
    let uniform = raw
        .iter()
        .find(|r| r.sampler == SamplerKind::Uniform)
        .map(|r| r.raw)
        .expect("checked above");
    if !(uniform > 0.0) {
        return Err(Error::ZeroUniformDiversity);
    }
    let entries = raw
        .into_iter()
        .map(|r| ReportEntry {
            sampler: r.sampler,
            od_normalized: r.raw / uniform,
            od_raw: r.raw,
            seeds: r.seeds,
        })
        .collect();
    Ok(DiversityReport {
        protocol: *protocol,
        n_way: template.n_way,
        entries,
    })
}
