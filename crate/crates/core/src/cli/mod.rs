//! Command-line interface.
//!
//! Every command takes `--seed` and `--config FILE`, writes its results and a
//! `manifest.conf` into `--out`, and exits non-zero with a one-line
//! `error: ...` message on failure. Wall-clock time goes to stderr only, so
//! output files are byte-identical across reruns.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};

pub const THREADS_ENV: &str = "EPISODE_FORGE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "episode-forge", version, about = "Episodic task samplers, diversity metrics and desk-scale meta-learners")]
pub struct Cli {
    /// Worker threads. Results do not depend on it; `1` is the reference mode.
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,

    /// Flat `key = value` file of option defaults (a run manifest works).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Overall diversity of samplers, normalized to the uniform sampler.
    Diversity(DiversityArgs),
    /// Stream sampled episodes as JSON Lines.
    Sample(SampleArgs),
    /// Train MAML or Reptile on a regression family.
    TrainRegression(RegressionArgs),
    /// Train Protonet-lite on a synthetic or file-backed world.
    TrainProtonet(ProtonetArgs),
    /// Chi-square check of the k-DPP sampler against exact probabilities.
    DppCheck(DppCheckArgs),
    /// Paired t-test of two per-task metric files.
    Ttest(TtestArgs),
}

/// `classes,dim,spread,noise` of a synthetic Gaussian world.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub classes: usize,
    pub dim: usize,
    pub spread: f64,
    pub noise: f64,
}

impl FromStr for SynthSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("--synth expects classes,dim,spread,noise, got `{s}`"));
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(bad());
        }
        Ok(Self {
            classes: parts[0].parse().map_err(|_| bad())?,
            dim: parts[1].parse().map_err(|_| bad())?,
            spread: parts[2].parse().map_err(|_| bad())?,
            noise: parts[3].parse().map_err(|_| bad())?,
        })
    }
}

impl fmt::Display for SynthSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.classes, self.dim, self.spread, self.noise)
    }
}

#[derive(Debug, Clone, Args, Default)]
pub struct WorldArgs {
    /// Class embedding CSV (`class_id,e0,e1,...`).
    #[arg(long)]
    pub embeddings: Option<String>,
    /// Synthetic Gaussian world `classes,dim,spread,noise`.
    #[arg(long)]
    pub synth: Option<SynthSpec>,
    /// Example noise around file-backed class embeddings.
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Clone, Args, Default)]
pub struct SamplerArgs {
    /// Buffered tasks OHTM needs before mining hard tasks.
    #[arg(long)]
    pub ohtm_buffer_min: Option<usize>,
    /// Fraction of an OHTM meta-batch filled with hard tasks.
    #[arg(long)]
    pub hard_fraction: Option<f64>,
    /// Uniform warm-up meta-batches of d-DPP.
    #[arg(long)]
    pub ddpp_warmup: Option<u64>,
    /// Size of the frozen task pool of `sbu_bounded`.
    #[arg(long)]
    pub sbu_pool_size: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct DiversityArgs {
    #[command(flatten)]
    pub world: WorldArgs,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    /// Comma-separated sampler kinds; must include `uniform`.
    #[arg(long)]
    pub samplers: Option<String>,
    #[arg(long)]
    pub n_way: Option<usize>,
    /// Measured meta-batches per seed.
    #[arg(long)]
    pub batches: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Training steps of the pilot model that feeds OHTM and d-DPP.
    #[arg(long)]
    pub pilot_steps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub world: WorldArgs,
    #[command(flatten)]
    pub sampler_params: SamplerArgs,
    #[arg(long)]
    pub sampler: Option<String>,
    #[arg(long)]
    pub n_way: Option<usize>,
    #[arg(long)]
    pub meta_batch_size: Option<usize>,
    #[arg(long)]
    pub k_shot: Option<usize>,
    #[arg(long)]
    pub q_queries: Option<usize>,
    /// Meta-batches to emit.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Debug, Clone, Args, Default)]
pub struct TrainArgs {
    #[command(flatten)]
    pub sampler_params: SamplerArgs,
    #[arg(long)]
    pub sampler: Option<String>,
    #[arg(long)]
    pub shots: Option<usize>,
    #[arg(long)]
    pub meta_batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batches_per_epoch: Option<usize>,
    #[arg(long)]
    pub meta_lr: Option<f64>,
    #[arg(long)]
    pub q_queries: Option<usize>,
    /// Held-out tasks evaluated after training.
    #[arg(long)]
    pub eval_pool: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct RegressionArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// `maml`, `maml-fo` or `reptile`.
    #[arg(long)]
    pub learner: Option<String>,
    /// `sinusoid`, `sinusoid-line` or `harmonic`.
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub inner_steps: Option<usize>,
    #[arg(long)]
    pub inner_lr: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct ProtonetArgs {
    #[command(flatten)]
    pub world: WorldArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long)]
    pub n_way: Option<usize>,
    /// Classes held out for evaluation.
    #[arg(long)]
    pub test_classes: Option<usize>,
    /// Meta-batches between d-DPP embedding refreshes.
    #[arg(long)]
    pub ddpp_refresh: Option<u64>,
    /// Examples per class averaged into a refreshed embedding.
    #[arg(long)]
    pub embedding_samples: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct DppCheckArgs {
    #[command(flatten)]
    pub world: WorldArgs,
    /// Identity L-ensemble over this many items.
    #[arg(long)]
    pub identity: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub draws: Option<usize>,
    /// Pass threshold on the p-value.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report file; stdout only when absent.
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct TtestArgs {
    /// Per-task CSV (`task_index,metric`) of the first run.
    pub a: String,
    /// Per-task CSV of the second run.
    pub b: String,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Accepted for uniformity; the test is deterministic.
    #[arg(long)]
    pub seed: Option<u64>,
}

fn configure_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::InvalidArgument("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    }
    Ok(())
}

/// Runs a parsed command line.
pub fn execute(cli: Cli) -> Result<()> {
    configure_threads(cli.threads)?;
    let file = match &cli.config {
        Some(p) => config::read_config(p)?,
        None => Default::default(),
    };
    let mut res = config::Resolver::new(file);
    match cli.command {
        Command::Diversity(a) => commands::diversity(a, &mut res),
        Command::Sample(a) => commands::sample(a, &mut res),
        Command::TrainRegression(a) => commands::train_regression(a, &mut res),
        Command::TrainProtonet(a) => commands::train_protonet(a, &mut res),
        Command::DppCheck(a) => commands::dpp_check(a, &mut res),
        Command::Ttest(a) => commands::ttest(a, &mut res),
    }
}

/// Parses `args` and runs the command, mapping every failure to a one-line
/// message on stderr.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("invalid usage")
                .trim_start_matches("error: ");
            eprintln!("error: usage: {first}");
            return ExitCode::from(2);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::from(1)
        }
    }
}

pub fn main() -> ExitCode {
    main_with(std::env::args_os())
}
