use std::collections::BTreeSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use rjnet::benchgen::{aggregate, run_trial, CellSummary, InferenceMethod, Protocol, TrialOutcome};
use rjnet::network::NetworkMethod;

use crate::documents::{read_json, to_json, write_json, SweepProtocol, SCHEMA_VERSION};
use crate::error::{CliError, CliResult};
use crate::report::{grid, write_long, write_wide};

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Protocol JSON: network family, noise, data lengths, trials, seed and methods.
    #[arg(long)]
    pub protocol: PathBuf,
    /// Output directory; rerunning into it resumes unfinished cells.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub schema_version: String,
    pub protocol: Protocol,
    pub methods: Vec<String>,
    pub cells: Vec<CellSummary>,
    pub outcomes: Vec<TrialOutcome>,
}

/// Method labels, made unique when two entries share a tag.
pub fn build_methods(doc: &SweepProtocol) -> CliResult<Vec<NetworkMethod>> {
    if doc.methods.is_empty() {
        return Err(CliError::Usage("protocol lists no methods".into()));
    }
    let mut out: Vec<NetworkMethod> = Vec::new();
    for (i, c) in doc.methods.iter().enumerate() {
        let mut m = NetworkMethod::new(c.method_config()?);
        if out.iter().any(|o| o.label == m.label) || doc.methods[i + 1..].iter().any(|o| o.method_config().ok().map(|x| x.tag()) == Some(m.label.clone())) {
            m.label = format!("{}#{i}", m.label);
        }
        out.push(m);
    }
    Ok(out)
}

fn read_progress(path: &Path) -> CliResult<Vec<TrialOutcome>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if let Ok(o) = serde_json::from_str::<TrialOutcome>(&line) {
            out.push(o);
        }
    }
    Ok(out)
}

pub fn run_sweep(args: &SweepArgs) -> CliResult<SweepSummary> {
    let doc: SweepProtocol = read_json(&args.protocol)?;
    let protocol = &doc.protocol;
    if protocol.trials == 0 || protocol.lengths.is_empty() {
        return Err(CliError::Usage("protocol needs at least one trial and one data length".into()));
    }
    let methods = build_methods(&doc)?;
    fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    let echo = args.out.join("protocol.json");
    if echo.exists() {
        let previous: SweepProtocol = read_json(&echo)?;
        if previous != doc {
            return Err(CliError::Mismatch(format!("{} holds a different protocol", args.out.display())));
        }
    } else {
        write_json(&echo, &doc)?;
    }
    let progress_path = args.out.join("progress.jsonl");
    let mut outcomes = read_progress(&progress_path)?;
    let done: BTreeSet<(String, usize, usize)> = outcomes.iter().map(|o| (o.method.clone(), o.length, o.trial)).collect();
    let jobs: Vec<(usize, usize, usize)> = (0..methods.len())
        .flat_map(|mi| protocol.lengths.iter().flat_map(move |&l| (0..protocol.trials).map(move |t| (mi, l, t))))
        .filter(|(mi, l, t)| !done.contains(&(methods[*mi].label.clone(), *l, *t)))
        .collect();

    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&progress_path)
        .map_err(|e| CliError::io(&progress_path, e))?;
    let writer = Mutex::new(BufWriter::new(file));
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = args.jobs {
        pool = pool.num_threads(j.max(1));
    }
    let pool = pool.build().map_err(|e| CliError::Usage(e.to_string()))?;
    let fresh: Vec<CliResult<TrialOutcome>> = pool.install(|| {
        jobs.into_par_iter()
            .map(|(mi, l, t)| {
                let o = run_trial(protocol, &methods[mi] as &dyn InferenceMethod, t, l);
                if let Some(err) = &o.error {
                    eprintln!("cell {} N={l} trial {t} failed: {err}", o.method);
                }
                let line = serde_json::to_string(&o).map_err(|e| CliError::Io(e.to_string()))?;
                let mut w = writer.lock().expect("progress writer poisoned");
                writeln!(w, "{line}").and_then(|_| w.flush()).map_err(|e| CliError::io(&progress_path, e))?;
                Ok(o)
            })
            .collect()
    });
    for o in fresh {
        outcomes.push(o?);
    }

    let labels: Vec<String> = methods.iter().map(|m| m.label.clone()).collect();
    let order = |o: &TrialOutcome| {
        (
            labels.iter().position(|l| *l == o.method).unwrap_or(usize::MAX),
            protocol.lengths.iter().position(|l| *l == o.length).unwrap_or(usize::MAX),
            o.trial,
        )
    };
    outcomes.retain(|o| order(o).0 != usize::MAX && order(o).1 != usize::MAX && o.trial < protocol.trials);
    outcomes.sort_by_key(order);
    let cells = aggregate(&outcomes, &labels, &protocol.lengths);
    Ok(SweepSummary {
        schema_version: SCHEMA_VERSION.into(),
        protocol: protocol.clone(),
        methods: labels,
        cells,
        outcomes,
    })
}

pub fn run(args: &SweepArgs) -> CliResult<()> {
    let summary = run_sweep(args)?;
    let table = args.out.join("table.csv");
    write_wide(File::create(&table).map_err(|e| CliError::io(&table, e))?, &summary.outcomes, &summary.cells)?;
    let long = args.out.join("long.csv");
    write_long(File::create(&long).map_err(|e| CliError::io(&long, e))?, &summary.outcomes)?;
    let path = args.out.join("summary.json");
    fs::write(&path, to_json(&summary)).map_err(|e| CliError::io(&path, e))?;
    print!("{}", grid(&summary.cells));
    Ok(())
}
