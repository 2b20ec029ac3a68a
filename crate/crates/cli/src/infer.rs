use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use clap::Args;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use rjnet::dataset::{build_regression, check_universe, ModelStructure, TimeSeriesExperiment};
use rjnet::kernel::KernelFamily;
use rjnet::network::{infer_target, result_from_trace, target_rng, MethodConfig, TargetResult};
use rjnet::rjmcmc::{Chain, ChainCheckpoint};
use rjnet::summary::fitness;

use crate::config::{resolve_seed, InitialPolicy, Method, RunConfig};
use crate::csvio::read_experiment;
use crate::documents::{read_json, to_json, AcceptanceRates, ResultsDocument, TargetEntry, SCHEMA_VERSION};
use crate::error::{CliError, CliResult};

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Dataset CSV files, one per experiment.
    #[arg(long, required = true, num_args = 1..)]
    pub data: Vec<PathBuf>,
    /// Run configuration JSON; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    #[arg(long, value_parser = parse_kernel)]
    pub kernel: Option<KernelFamily>,
    /// Impulse-response truncation length.
    #[arg(long)]
    pub truncation: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burn_in_fraction: Option<f64>,
    #[arg(long)]
    pub thinning: Option<usize>,
    /// Defaults to the config file, then $RJNET_SEED, then 1.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub initial: Option<InitialPolicy>,
    #[arg(long)]
    pub lambda_sd: Option<f64>,
    #[arg(long)]
    pub beta_window: Option<f64>,
    /// Keep proposal scales fixed during burn-in.
    #[arg(long)]
    pub no_adapt: bool,
    #[arg(long)]
    pub target_rate: Option<f64>,
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Fraction of each experiment held out to score prediction fitness.
    #[arg(long)]
    pub validation_split: Option<f64>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub backward_selection: bool,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Results JSON path; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Line-JSON checkpoint file (sampler only).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub checkpoint_every: usize,
    /// Continue from the checkpoint file instead of starting over.
    #[arg(long, requires = "checkpoint")]
    pub resume: bool,
}

fn parse_kernel(s: &str) -> Result<KernelFamily, String> {
    s.parse().map_err(|e: rjnet::Error| e.to_string())
}

impl InferArgs {
    pub fn resolve_config(&self) -> CliResult<RunConfig> {
        let file: Option<RunConfig> = self.config.as_deref().map(read_json).transpose()?;
        let mut c = file.clone().unwrap_or_default();
        macro_rules! take {
            ($($field:ident <- $flag:expr),* $(,)?) => { $( if let Some(v) = $flag { c.$field = v; } )* };
        }
        take!(
            method <- self.method,
            kernel <- self.kernel,
            truncation <- self.truncation,
            iterations <- self.iterations,
            burn_in_fraction <- self.burn_in_fraction,
            thinning <- self.thinning,
            initial <- self.initial,
            lambda_sd <- self.lambda_sd,
            beta_window <- self.beta_window,
            target_rate <- self.target_rate,
            top_k <- self.top_k,
            validation_split <- self.validation_split,
            keb_restarts <- self.restarts,
        );
        if self.no_adapt {
            c.adapt = false;
        }
        if self.backward_selection {
            c.backward_selection = true;
        }
        if self.jobs.is_some() {
            c.jobs = self.jobs;
        }
        c.seed = resolve_seed(self.seed, file.map(|f| f.seed))?;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum CheckpointLine {
    Header {
        schema_version: String,
        config: RunConfig,
        data: Vec<String>,
    },
    Chain {
        target: usize,
        checkpoint: Box<ChainCheckpoint<ChaCha8Rng>>,
    },
}

/// Appends chain snapshots to a line-JSON file through a single writer.
struct Checkpointer {
    writer: Mutex<BufWriter<File>>,
    resumed: BTreeMap<usize, ChainCheckpoint<ChaCha8Rng>>,
    every: usize,
}

impl Checkpointer {
    fn open(path: &Path, header: CheckpointLine, resume: bool, every: usize) -> CliResult<Self> {
        if every == 0 {
            return Err(CliError::Usage("checkpoint interval must be positive".into()));
        }
        let mut resumed = BTreeMap::new();
        let file = if resume && path.exists() {
            let f = File::open(path).map_err(|e| CliError::io(path, e))?;
            let mut lines = BufReader::new(f).lines();
            let first = lines.next().transpose().map_err(|e| CliError::io(path, e))?;
            let found: Option<CheckpointLine> = first.and_then(|l| serde_json::from_str(&l).ok());
            if found.as_ref() != Some(&header) {
                return Err(CliError::Mismatch(format!(
                    "{}: checkpoint was written by a different configuration or dataset",
                    path.display()
                )));
            }
            for line in lines {
                let line = line.map_err(|e| CliError::io(path, e))?;
                // a torn final line from an interrupted write is skipped
                if let Ok(CheckpointLine::Chain { target, checkpoint }) = serde_json::from_str(&line) {
                    resumed.insert(target, *checkpoint);
                }
            }
            OpenOptions::new().append(true).open(path).map_err(|e| CliError::io(path, e))?
        } else {
            let mut f = File::create(path).map_err(|e| CliError::io(path, e))?;
            writeln!(f, "{}", serde_json::to_string(&header).expect("serializable")).map_err(|e| CliError::io(path, e))?;
            f
        };
        Ok(Checkpointer {
            writer: Mutex::new(BufWriter::new(file)),
            resumed,
            every,
        })
    }

    fn save(&self, target: usize, ck: &ChainCheckpoint<ChaCha8Rng>) -> CliResult<()> {
        let line = serde_json::to_string(&CheckpointLine::Chain {
            target,
            checkpoint: Box::new(ck.clone()),
        })
        .map_err(|e| CliError::Numerical(format!("checkpoint of target {target}: {e}")))?;
        let mut w = self.writer.lock().expect("checkpoint writer poisoned");
        writeln!(w, "{line}").and_then(|_| w.flush()).map_err(|e| CliError::Io(e.to_string()))
    }
}

fn run_checkpointed(
    train: &[TimeSeriesExperiment],
    target: usize,
    config: &RunConfig,
    method: &MethodConfig,
    ck: &Checkpointer,
) -> CliResult<TargetResult> {
    let MethodConfig::Rjmcmc(sampler) = method else {
        return Err(CliError::Usage("checkpointing applies to the sampler only".into()));
    };
    let (p, m) = check_universe(train)?;
    let problem = build_regression(train, &ModelStructure::full(target, p + m)?, sampler.kernel.truncation)?;
    let mut chain = match ck.resumed.get(&target) {
        Some(saved) => Chain::resume(&problem, sampler.clone(), saved.clone())?,
        None => Chain::new(&problem, sampler.clone(), target_rng(config.seed, target))?,
    };
    while !chain.is_done() {
        let next = (chain.iteration() / ck.every + 1) * ck.every;
        chain.run_until(next)?;
        ck.save(target, chain.checkpoint())?;
    }
    Ok(result_from_trace(&chain.into_trace(), config.top_k)?)
}

fn validation_fitness(r: &TargetResult, valid: &[TimeSeriesExperiment], truncation: usize) -> Option<f64> {
    let scores: Vec<f64> = valid
        .iter()
        .filter_map(|e| {
            let yhat = r.predict(e, truncation).ok()?;
            fitness(&e.nodes[r.target][truncation..], &yhat).ok()
        })
        .collect();
    (scores.len() == valid.len() && !scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Split every experiment into training head and validation tail.
pub fn split_experiments(
    exps: &[TimeSeriesExperiment],
    fraction: f64,
    truncation: usize,
) -> CliResult<(Vec<TimeSeriesExperiment>, Vec<TimeSeriesExperiment>)> {
    if fraction == 0.0 {
        return Ok((exps.to_vec(), Vec::new()));
    }
    let mut train = Vec::new();
    let mut valid = Vec::new();
    for e in exps {
        let held = (e.len() as f64 * fraction).round() as usize;
        if held <= truncation || e.len() - held <= truncation {
            return Err(CliError::Usage(format!(
                "experiment {} of {} samples cannot be split {fraction} with truncation {truncation}",
                e.id,
                e.len()
            )));
        }
        let (a, b) = e.split_at(e.len() - held);
        train.push(a);
        valid.push(b);
    }
    Ok((train, valid))
}

pub struct InferOutcome {
    pub document: ResultsDocument,
    pub failure: Option<CliError>,
}

pub fn run_inference(args: &InferArgs) -> CliResult<InferOutcome> {
    let config = args.resolve_config()?;
    let method = config.method_config()?;
    let exps: Vec<TimeSeriesExperiment> = args.data.iter().map(|p| read_experiment(p)).collect::<CliResult<_>>()?;
    let (p, m) = check_universe(&exps)?;
    let (train, valid) = split_experiments(&exps, config.validation_split, config.truncation)?;
    let data: Vec<String> = args.data.iter().map(|p| p.display().to_string()).collect();
    let checkpointer = match &args.checkpoint {
        Some(path) => {
            if config.method != Method::Rjmcmc {
                return Err(CliError::Usage("checkpointing applies to --method rjmcmc only".into()));
            }
            let header = CheckpointLine::Header {
                schema_version: SCHEMA_VERSION.into(),
                config: config.clone(),
                data: data.clone(),
            };
            Some(Checkpointer::open(path, header, args.resume, args.checkpoint_every)?)
        }
        None => None,
    };
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let jobs = config.jobs.unwrap_or_else(|| p.min(cores)).max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let outcomes: Vec<CliResult<TargetResult>> = pool.install(|| {
        (0..p)
            .into_par_iter()
            .map(|i| match &checkpointer {
                Some(ck) => run_checkpointed(&train, i, &config, &method, ck),
                None => Ok(infer_target(&train, i, &method, config.top_k, &mut target_rng(config.seed, i))?),
            })
            .collect()
    });
    let mut failure = None;
    let targets = outcomes
        .into_iter()
        .enumerate()
        .map(|(i, r)| match r {
            Ok(res) => TargetEntry {
                target: i,
                validation_fitness: validation_fitness(&res, &valid, config.truncation),
                acceptance: res.moves.as_ref().map(AcceptanceRates::from_moves),
                result: Some(res),
                error: None,
            },
            Err(e) => {
                let msg = e.to_string();
                if failure.as_ref().is_none_or(|f: &CliError| f.exit_code() < e.exit_code()) {
                    failure = Some(e);
                }
                TargetEntry {
                    target: i,
                    result: None,
                    validation_fitness: None,
                    acceptance: None,
                    error: Some(msg),
                }
            }
        })
        .collect();
    let document = ResultsDocument {
        schema_version: SCHEMA_VERSION.into(),
        method: method.tag(),
        seed: config.seed,
        config,
        data,
        n_nodes: p,
        n_inputs: m,
        n_samples: train.iter().map(TimeSeriesExperiment::len).collect(),
        targets,
    };
    Ok(InferOutcome { document, failure })
}

pub fn run(args: &InferArgs) -> CliResult<()> {
    let InferOutcome { document, failure } = run_inference(args)?;
    let text = to_json(&document);
    match &args.out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
            }
            fs::write(path, text).map_err(|e| CliError::io(path, e))?
        }
        None => print!("{text}"),
    }
    match failure {
        None => Ok(()),
        Some(CliError::Numerical(msg)) => Err(CliError::Numerical(format!("{msg} (partial results written)"))),
        Some(other) => Err(other),
    }
}
