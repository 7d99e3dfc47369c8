use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use super::config::{Resolver, MANIFEST_FILE};
use super::{
    DiversityArgs, DppCheckArgs, ProtonetArgs, RegressionArgs, SampleArgs, SamplerArgs, SynthSpec,
    TrainArgs, TtestArgs, WorldArgs,
};
use crate::diversity::{diversity_report, DiversityProtocol, TaskFeedback};
use crate::dpp::{check_exact, LEnsemble};
use crate::episodes::{
    draw_episode, ingest_embeddings, synth_gaussian_world, ClassLabel, ClassPool, EmbeddingTable,
    Example, RegressionFamily, Split, DEFAULT_QUERIES,
};
use crate::error::{Error, Result};
use crate::learners::{pilot_feedback, run_experiment, LearnerKind, RunResult, TrainConfig, World, PILOT_STEPS};
use crate::rng::{derive_seed, stream};
use crate::samplers::{SamplerConfig, SamplerKind, TaskSampler};
use crate::stats::{paired_t_test, PairedSamples, DEFAULT_ALPHA};

const DEFAULT_SEED: u64 = 1;
const DEFAULT_SYNTH: SynthSpec = SynthSpec {
    classes: 50,
    dim: 16,
    spread: 1.0,
    noise: 0.1,
};
const DEFAULT_FILE_NOISE: f64 = 0.1;
const ALL_DIVERSITY_SAMPLERS: &str = "uniform,ndt,ndb,ndtb,sbu,ohtm,sdpp,ddpp";

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(format!("usage: {}", msg.into()))
}

fn parse_flag<T: std::str::FromStr<Err = Error>>(flag: Option<String>) -> Result<Option<T>> {
    flag.map(|s| s.parse()).transpose()
}

/// A class pool and its embedding table, from a file or a synthetic spec.
fn resolve_world(
    res: &mut Resolver,
    w: WorldArgs,
    seed: u64,
    synth_default: Option<SynthSpec>,
) -> Result<(ClassPool, Arc<EmbeddingTable>)> {
    let file = res.optional("embeddings", w.embeddings)?;
    let synth_flag = res.optional("synth", w.synth)?;
    match (file, synth_flag) {
        (Some(_), Some(_)) => Err(usage("--embeddings and --synth are mutually exclusive")),
        (Some(path), None) => {
            let noise = res.value("noise", w.noise, DEFAULT_FILE_NOISE)?;
            let table = Arc::new(ingest_embeddings(&path)?);
            let pool = ClassPool::from_table(table.clone(), noise, derive_seed(seed, "examples"), Split::Train);
            Ok((pool, table))
        }
        (None, synth) => {
            let spec = match (synth, synth_default) {
                (Some(s), _) => s,
                (None, Some(d)) => res.value("synth", None, d)?,
                (None, None) => return Err(usage("one of --embeddings or --synth is required")),
            };
            let (pool, table) = synth_gaussian_world(spec.classes, spec.dim, spec.spread, spec.noise, seed)?;
            Ok((pool, Arc::new(table)))
        }
    }
}

fn resolve_sampler(res: &mut Resolver, kind: SamplerKind, n_way: usize, m: usize, seed: u64, a: SamplerArgs) -> Result<SamplerConfig> {
    let mut cfg = SamplerConfig::new(kind, n_way, m, seed);
    cfg.ohtm_buffer_min = res.value("ohtm-buffer-min", a.ohtm_buffer_min, cfg.ohtm_buffer_min)?;
    cfg.ohtm_hard_fraction = res.value("hard-fraction", a.hard_fraction, cfg.ohtm_hard_fraction)?;
    cfg.ddpp_warmup_batches = res.value("ddpp-warmup", a.ddpp_warmup, cfg.ddpp_warmup_batches)?;
    cfg.sbu_pool_size = res.value("sbu-pool-size", a.sbu_pool_size, cfg.sbu_pool_size)?;
    cfg.validate()?;
    Ok(cfg)
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn prepare_dir(dir: &str) -> Result<PathBuf> {
    let p = PathBuf::from(dir);
    fs::create_dir_all(&p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
    Ok(p)
}

#[derive(Serialize)]
struct Referenced<'a, T: Serialize> {
    manifest: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

fn to_json<T: Serialize>(body: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&Referenced {
        manifest: MANIFEST_FILE,
        body,
    })
    .map_err(|e| Error::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn elapsed(start: Instant) {
    eprintln!("done in {:.2}s", start.elapsed().as_secs_f64());
}

pub fn diversity(a: DiversityArgs, res: &mut Resolver) -> Result<()> {
    let start = Instant::now();
    let seed = res.value("seed", a.seed, DEFAULT_SEED)?;
    let (pool, table) = resolve_world(res, a.world, seed, None)?;
    let samplers: String = res.value("samplers", a.samplers, ALL_DIVERSITY_SAMPLERS.to_string())?;
    let kinds = samplers
        .split(',')
        .map(str::parse)
        .collect::<Result<Vec<SamplerKind>>>()?;
    let n_way = res.value("n-way", a.n_way, 5)?;
    let protocol = DiversityProtocol {
        n_batches: res.value("batches", a.batches, 5)?,
        batch_size: res.value("batch-size", a.batch_size, 8)?,
        n_seeds: res.value("seeds", a.seeds, 3)?,
    };
    let pilot_steps = res.value("pilot-steps", a.pilot_steps, PILOT_STEPS)?;
    let template = resolve_sampler(res, SamplerKind::Uniform, n_way, protocol.batch_size, seed, a.sampler)?;
    let out = prepare_dir(&res.value("out", a.out, ".".to_string())?)?;
    res.finish()?;

    let needs_model = kinds.iter().any(|k| matches!(k, SamplerKind::Ohtm | SamplerKind::Ddpp));
    let feedback = if needs_model {
        Some(pilot_feedback(&pool, n_way, pilot_steps, seed)?)
    } else {
        None
    };
    let report = diversity_report(
        &kinds,
        &template,
        &pool,
        &table,
        &protocol,
        feedback.as_ref().map(|f| f as &dyn TaskFeedback),
    )?;
    let csv = report.to_csv();
    write_file(&out, "diversity.csv", &csv)?;
    write_file(&out, "diversity.json", &to_json(&report)?)?;
    write_file(&out, MANIFEST_FILE, &res.manifest("diversity", &["diversity.csv", "diversity.json"]))?;
    print!("{csv}");
    elapsed(start);
    Ok(())
}

#[derive(Serialize)]
struct ExampleLine<'a> {
    x: &'a [f64],
    y: usize,
}

#[derive(Serialize)]
struct EpisodeLine<'a> {
    task_id: u64,
    /// Class of each label slot.
    classes: Vec<&'a ClassLabel>,
    support: Vec<ExampleLine<'a>>,
    query: Vec<ExampleLine<'a>>,
}

fn example_lines(xs: &[Example]) -> Vec<ExampleLine<'_>> {
    xs.iter().map(|e| ExampleLine { x: &e.x, y: e.y }).collect()
}

pub fn sample(a: SampleArgs, res: &mut Resolver) -> Result<()> {
    let seed = res.value("seed", a.seed, DEFAULT_SEED)?;
    let (pool, table) = resolve_world(res, a.world, seed, Some(DEFAULT_SYNTH))?;
    let kind = res.value("sampler", parse_flag(a.sampler)?, SamplerKind::Uniform)?;
    let n_way = res.value("n-way", a.n_way, 5)?;
    let m = res.value("meta-batch-size", a.meta_batch_size, 4)?;
    let k_shot = res.value("k-shot", a.k_shot, 1)?;
    let q = res.value("q-queries", a.q_queries, DEFAULT_QUERIES)?;
    let count = res.value("count", a.count, 1)?;
    let cfg = resolve_sampler(res, kind, n_way, m, derive_seed(seed, "sampler"), a.sampler_params)?;
    let out = res.optional::<String>("out", a.out)?;
    res.finish()?;

    let mut sampler = match kind {
        SamplerKind::Sdpp => TaskSampler::with_embeddings(cfg, table.clone())?,
        _ => TaskSampler::new(cfg)?,
    };
    let mut buf = Vec::new();
    for b in 0..count as u64 {
        // Without a model in the loop, d-DPP switches to the world's own
        // embeddings when its warm-up ends.
        if kind == SamplerKind::Ddpp && !sampler.in_warmup() && b == sampler.config().ddpp_warmup_batches {
            sampler.refresh_embeddings(table.clone())?;
        }
        let tasks = sampler.next_meta_batch(&pool)?;
        let mut r = stream(seed, "sample-episodes", b);
        for t in &tasks {
            let ep = draw_episode(t, &pool, k_shot, q, &mut r)?;
            let mut by_slot: Vec<&ClassLabel> = t.classes().iter().collect();
            for (c, &slot) in t.classes().iter().zip(t.label_perm()) {
                by_slot[slot] = c;
            }
            let line = EpisodeLine {
                task_id: t.task_id(),
                classes: by_slot,
                support: example_lines(&ep.support),
                query: example_lines(&ep.query),
            };
            serde_json::to_writer(&mut buf, &line).map_err(|e| Error::Io(e.to_string()))?;
            buf.push(b'\n');
        }
    }
    match out {
        Some(path) => {
            let path = PathBuf::from(path);
            let dir = match path.parent() {
                Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
                _ => PathBuf::from("."),
            };
            fs::create_dir_all(&dir)?;
            fs::write(&path, &buf)?;
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            write_file(&dir, MANIFEST_FILE, &res.manifest("sample", &[&name]))?;
        }
        None => io::stdout().write_all(&buf)?,
    }
    Ok(())
}

/// Fills the options shared by both training commands into `cfg` and returns
/// the output directory.
fn resolve_train(res: &mut Resolver, a: TrainArgs, cfg: &mut TrainConfig, default_shots: usize) -> Result<PathBuf> {
    let sampler = res.value("sampler", parse_flag(a.sampler)?, SamplerKind::Uniform)?;
    let shots = res.value("shots", a.shots, default_shots)?;
    let m = res.value("meta-batch-size", a.meta_batch_size, cfg.sampler.meta_batch_size)?;
    cfg.epochs = res.value("epochs", a.epochs, cfg.epochs)?;
    cfg.batches_per_epoch = res.value("batches-per-epoch", a.batches_per_epoch, cfg.batches_per_epoch)?;
    cfg.meta_lr = res.value("meta-lr", a.meta_lr, cfg.meta_lr)?;
    cfg.q_queries = res.value("q-queries", a.q_queries, cfg.q_queries)?;
    cfg.eval_pool_size = res.value("eval-pool", a.eval_pool, cfg.eval_pool_size)?;
    cfg.sampler = resolve_sampler(res, sampler, cfg.sampler.n_way, m, cfg.sampler.seed, a.sampler_params)?;
    cfg.k_shot = shots;
    prepare_dir(&res.value("out", a.out, ".".to_string())?)
}

#[derive(Serialize)]
struct Summary<'a> {
    config: &'a TrainConfig,
    learner: LearnerKind,
    sampler: SamplerKind,
    metric: &'a str,
    mean: f64,
    ci95: f64,
    meta_batches: u64,
    tasks_seen: u64,
    /// One epoch is `batches_per_epoch` meta-batches.
    epoch_unit: &'a str,
}

fn write_run(out: &Path, command: &str, res: &Resolver, cfg: &TrainConfig, r: &RunResult) -> Result<()> {
    let summary = Summary {
        config: cfg,
        learner: r.learner,
        sampler: r.sampler,
        metric: r.metric,
        mean: r.mean,
        ci95: r.ci95,
        meta_batches: r.meta_batches,
        tasks_seen: r.tasks_seen,
        epoch_unit: "batches_per_epoch meta-batches",
    };
    let mut events = String::new();
    for e in &r.events {
        eprintln!("{e}");
        events.push_str(e);
        events.push('\n');
    }
    write_file(out, "curve.csv", &r.curve_csv())?;
    write_file(out, "per_task.csv", &r.per_task_csv())?;
    write_file(out, "events.log", &events)?;
    write_file(out, "summary.json", &to_json(&summary)?)?;
    write_file(
        out,
        MANIFEST_FILE,
        &res.manifest(command, &["curve.csv", "per_task.csv", "events.log", "summary.json"]),
    )?;
    println!("{}", r.summary());
    Ok(())
}

pub fn train_regression(a: RegressionArgs, res: &mut Resolver) -> Result<()> {
    let start = Instant::now();
    let seed = res.value("seed", a.train.seed, DEFAULT_SEED)?;
    let learner = res.value("learner", parse_flag(a.learner)?, LearnerKind::Reptile)?;
    if !learner.is_regression() {
        return Err(usage("train-regression takes --learner maml, maml-fo or reptile"));
    }
    let family = res.value("family", parse_flag(a.family)?, RegressionFamily::Sinusoid)?;
    let mut cfg = TrainConfig::regression(learner, SamplerKind::Uniform, 5, seed);
    cfg.inner_steps = res.value("inner-steps", a.inner_steps, cfg.inner_steps)?;
    cfg.inner_lr = res.value("inner-lr", a.inner_lr, cfg.inner_lr)?;
    let out = resolve_train(res, a.train, &mut cfg, 5)?;
    res.finish()?;
    let r = run_experiment(&cfg, &World::Regression(family))?;
    write_run(&out, "train-regression", res, &cfg, &r)?;
    elapsed(start);
    Ok(())
}

pub fn train_protonet(a: ProtonetArgs, res: &mut Resolver) -> Result<()> {
    let start = Instant::now();
    let seed = res.value("seed", a.train.seed, DEFAULT_SEED)?;
    let (pool, table) = resolve_world(res, a.world, seed, Some(DEFAULT_SYNTH))?;
    let n_way = res.value("n-way", a.n_way, 5)?;
    let test_classes = res.value("test-classes", a.test_classes, 15)?;
    let mut cfg = TrainConfig::protonet(SamplerKind::Uniform, n_way, 1, seed);
    cfg.ddpp_refresh_interval = res.value("ddpp-refresh", a.ddpp_refresh, cfg.ddpp_refresh_interval)?;
    cfg.embedding_samples = res.value("embedding-samples", a.embedding_samples, cfg.embedding_samples)?;
    let out = resolve_train(res, a.train, &mut cfg, 1)?;
    res.finish()?;
    let (train, test) = pool.partition(test_classes, derive_seed(seed, "split"))?;
    let r = run_experiment(&cfg, &World::Classification { train, test, table })?;
    write_run(&out, "train-protonet", res, &cfg, &r)?;
    elapsed(start);
    Ok(())
}

pub fn dpp_check(a: DppCheckArgs, res: &mut Resolver) -> Result<()> {
    let seed = res.value("seed", a.seed, DEFAULT_SEED)?;
    let identity = res.optional("identity", a.identity)?;
    let ensemble = match identity {
        Some(n) => {
            if a.world.embeddings.is_some() || a.world.synth.is_some() {
                return Err(usage("--identity excludes --embeddings and --synth"));
            }
            let ids = (0..n).map(|i| ClassLabel::new(&format!("i{i}"))).collect();
            let l = (0..n)
                .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect();
            LEnsemble::from_matrix(l, ids)?
        }
        None => {
            let (_, table) = resolve_world(res, a.world, seed, None)?;
            LEnsemble::build(&table, table.labels())?
        }
    };
    let k = res.value("k", a.k, 2)?;
    let draws = res.value("draws", a.draws, 60_000)?;
    let alpha = res.value("alpha", a.alpha, 0.01)?;
    let out = res.optional::<String>("out", a.out)?;
    res.finish()?;
    if ensemble.len() > 8 || k > 3 || k == 0 {
        return Err(usage(format!(
            "dpp-check supports N <= 8 and 1 <= k <= 3, got N = {} and k = {k}",
            ensemble.len()
        )));
    }
    let check = check_exact(&ensemble, k, draws, &mut stream(seed, "dpp-check", 0))?;
    let mut report = String::from("subset,probability,observed\n");
    for (subset, p, c) in &check.cells {
        let names: Vec<&str> = subset.iter().map(|&i| ensemble.item_ids()[i].as_str()).collect();
        report.push_str(&format!("{},{p},{c}\n", names.join("+")));
    }
    let cs = &check.chi_square;
    report.push_str(&format!(
        "chi_square={} dof={} p_value={} impossible_hits={}\n",
        cs.statistic, cs.dof, cs.p_value, cs.impossible_hits
    ));
    report.push_str(if check.passed(alpha) { "result=pass\n" } else { "result=fail\n" });
    print!("{report}");
    if let Some(path) = out {
        let path = PathBuf::from(path);
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&dir)?;
        fs::write(&path, &report)?;
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        write_file(&dir, MANIFEST_FILE, &res.manifest("dpp-check", &[&name]))?;
    }
    Ok(())
}

/// Reads a `task_index,metric` CSV, ordered by task index.
pub fn read_per_task(path: &str) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{path}: {e}")))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "task_index,metric" => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: format!("{path}: expected header `task_index,metric`"),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |m: &str| Error::Parse {
            line: i + 1,
            message: format!("{path}: {m}"),
        };
        let (idx, val) = line.split_once(',').ok_or_else(|| parse_err("expected two fields"))?;
        let idx: usize = idx.trim().parse().map_err(|_| parse_err("bad task index"))?;
        let val: f64 = val.trim().parse().map_err(|_| parse_err("bad metric"))?;
        rows.push((idx, val));
    }
    rows.sort_by_key(|r| r.0);
    if rows.iter().enumerate().any(|(i, r)| r.0 != i) {
        return Err(Error::InvalidArgument(format!("{path}: task indices are not 0..n")));
    }
    Ok(rows.into_iter().map(|r| r.1).collect())
}

pub fn ttest(a: TtestArgs, res: &mut Resolver) -> Result<()> {
    let alpha = res.value("alpha", a.alpha, DEFAULT_ALPHA)?;
    res.value("seed", a.seed, DEFAULT_SEED)?;
    res.finish()?;
    let samples = PairedSamples::new(read_per_task(&a.a)?, read_per_task(&a.b)?)?;
    let t = paired_t_test(&samples);
    println!("t,p,dof,significant@{alpha}");
    println!("{},{},{},{}", t.t, t.p, t.dof, t.significant(alpha));
    if t.degenerate {
        eprintln!("warning: all differences are equal and nonzero; variance is zero");
    }
    Ok(())
}
