//! Tables of scores: CSV files and a console grid.

use std::io::Write;

use rjnet::benchgen::{CellSummary, TrialOutcome};

use crate::error::{CliError, CliResult};

pub fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| x.to_string())
}

fn opt_short(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x:.1}"))
}

/// Per-trial rows followed by one aggregate row per cell.
pub fn write_wide<W: Write>(w: W, outcomes: &[TrialOutcome], cells: &[CellSummary]) -> CliResult<()> {
    let mut out = csv::Writer::from_writer(w);
    let e = |err: csv::Error| CliError::Io(err.to_string());
    out.write_record(["row", "method", "length", "trial", "tpr", "prec", "fitness", "auroc", "auprec", "successes", "error"])
        .map_err(e)?;
    for o in outcomes {
        let r = o.report;
        out.write_record([
            "trial".into(),
            o.method.clone(),
            o.length.to_string(),
            o.trial.to_string(),
            opt(r.map(|r| r.tpr)),
            opt(r.and_then(|r| r.prec)),
            opt(o.fitness),
            opt(r.and_then(|r| r.auroc)),
            opt(r.and_then(|r| r.auprec)),
            String::new(),
            o.error.clone().unwrap_or_default(),
        ])
        .map_err(e)?;
    }
    for c in cells {
        out.write_record([
            "mean".into(),
            c.method.clone(),
            c.length.to_string(),
            String::new(),
            opt(c.mean_tpr),
            opt(c.mean_prec),
            opt(c.mean_fitness),
            opt(c.mean_auroc),
            opt(c.mean_auprec),
            format!("{}/{}", c.successes, c.trials),
            String::new(),
        ])
        .map_err(e)?;
    }
    out.flush().map_err(|err| CliError::Io(err.to_string()))
}

/// One row per trial and metric, for plotting.
pub fn write_long<W: Write>(w: W, outcomes: &[TrialOutcome]) -> CliResult<()> {
    let mut out = csv::Writer::from_writer(w);
    let e = |err: csv::Error| CliError::Io(err.to_string());
    out.write_record(["method", "length", "trial", "metric", "value"]).map_err(e)?;
    for o in outcomes {
        let r = o.report;
        let metrics = [
            ("tpr", r.map(|r| r.tpr)),
            ("prec", r.and_then(|r| r.prec)),
            ("fitness", o.fitness),
            ("auroc", r.and_then(|r| r.auroc)),
            ("auprec", r.and_then(|r| r.auprec)),
        ];
        for (name, v) in metrics {
            out.write_record([o.method.clone(), o.length.to_string(), o.trial.to_string(), name.into(), opt(v)])
                .map_err(e)?;
        }
    }
    out.flush().map_err(|err| CliError::Io(err.to_string()))
}

/// Methods down, data lengths across, cells `PREC/TPR`.
pub fn grid(cells: &[CellSummary]) -> String {
    let mut methods: Vec<&str> = Vec::new();
    let mut lengths: Vec<usize> = Vec::new();
    for c in cells {
        if !methods.contains(&c.method.as_str()) {
            methods.push(&c.method);
        }
        if !lengths.contains(&c.length) {
            lengths.push(c.length);
        }
    }
    let width = methods.iter().map(|m| m.len()).max().unwrap_or(6).max(6);
    let mut s = format!("{:width$}", "method");
    for l in &lengths {
        s += &format!(" | {:>13}", format!("N={l}"));
    }
    s.push('\n');
    for m in &methods {
        s += &format!("{m:width$}");
        for l in &lengths {
            let cell = cells
                .iter()
                .find(|c| c.method == *m && c.length == *l)
                .map(|c| format!("{}/{}", opt_short(c.mean_prec), opt_short(c.mean_tpr)))
                .unwrap_or_default();
            s += &format!(" | {cell:>13}");
        }
        s.push('\n');
    }
    s
}
