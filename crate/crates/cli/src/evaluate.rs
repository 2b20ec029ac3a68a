use std::fs::File;
use std::path::PathBuf;

use clap::Args;

use rjnet::benchgen::{aggregate, score_topology, CellSummary, TrialOutcome};

use crate::documents::{read_versioned, ResultsDocument, TruthDocument};
use crate::error::{CliError, CliResult};
use crate::report::{grid, opt, write_long, write_wide};

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Results documents, paired in order with --truth.
    #[arg(long, required = true, num_args = 1..)]
    pub results: Vec<PathBuf>,
    #[arg(long, required = true, num_args = 1..)]
    pub truth: Vec<PathBuf>,
    /// Per-trial and aggregate table.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Long-format table for plotting.
    #[arg(long)]
    pub long_csv: Option<PathBuf>,
}

pub fn score_pair(doc: &ResultsDocument, truth: &TruthDocument) -> CliResult<TrialOutcome> {
    if doc.n_nodes != truth.n_measured || doc.n_inputs != truth.n_inputs || doc.targets.len() != doc.n_nodes {
        return Err(CliError::Mismatch(format!(
            "results cover {} nodes and {} inputs, truth has {} and {}",
            doc.n_nodes, doc.n_inputs, truth.n_measured, truth.n_inputs
        )));
    }
    let net = truth.network()?;
    let report = score_topology(&doc.adjacency(), Some(&doc.confidence()), &net)
        .map_err(|e| CliError::Mismatch(e.to_string()))?;
    Ok(TrialOutcome {
        method: doc.method.clone(),
        length: truth.length,
        trial: truth.trial,
        report: Some(report),
        fitness: doc.mean_fitness(),
        error: None,
    })
}

pub fn evaluate(args: &EvaluateArgs) -> CliResult<(Vec<TrialOutcome>, Vec<CellSummary>)> {
    if args.results.len() != args.truth.len() {
        return Err(CliError::Usage(format!(
            "{} results files but {} truth files",
            args.results.len(),
            args.truth.len()
        )));
    }
    let mut outcomes = Vec::new();
    for (r, t) in args.results.iter().zip(&args.truth) {
        let doc: ResultsDocument = read_versioned(r)?;
        let truth: TruthDocument = read_versioned(t)?;
        outcomes.push(score_pair(&doc, &truth).map_err(|e| match e {
            CliError::Mismatch(m) => CliError::Mismatch(format!("{} vs {}: {m}", r.display(), t.display())),
            other => other,
        })?);
    }
    let mut methods: Vec<String> = Vec::new();
    for o in &outcomes {
        if !methods.contains(&o.method) {
            methods.push(o.method.clone());
        }
    }
    let mut lengths: Vec<usize> = outcomes.iter().map(|o| o.length).collect();
    lengths.sort_unstable();
    lengths.dedup();
    let cells = aggregate(&outcomes, &methods, &lengths);
    Ok((outcomes, cells))
}

pub fn run(args: &EvaluateArgs) -> CliResult<()> {
    let (outcomes, cells) = evaluate(args)?;
    if let Some(path) = &args.csv {
        write_wide(File::create(path).map_err(|e| CliError::io(path, e))?, &outcomes, &cells)?;
    }
    if let Some(path) = &args.long_csv {
        write_long(File::create(path).map_err(|e| CliError::io(path, e))?, &outcomes)?;
    }
    for (o, path) in outcomes.iter().zip(&args.results) {
        let r = o.report.expect("scored");
        println!(
            "{}  method={} N={} TPR={} PREC={} fitness={} AUROC={} AUPREC={}",
            path.display(),
            o.method,
            o.length,
            opt(Some(r.tpr)),
            opt(r.prec),
            opt(o.fitness),
            opt(r.auroc),
            opt(r.auprec)
        );
    }
    println!();
    print!("{}", grid(&cells));
    Ok(())
}
