//! Dataset CSV: header `time,y1..yp,u1..um`, one row per sample.
//!
//! Values are written in shortest round-trip decimal form, so a write/read
//! cycle reproduces every finite double exactly.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rjnet::dataset::TimeSeriesExperiment;

use crate::error::{CliError, CliResult};

pub fn write_experiment_to<W: Write>(w: W, e: &TimeSeriesExperiment) -> CliResult<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["time".to_string()];
    header.extend((1..=e.n_nodes()).map(|i| format!("y{i}")));
    header.extend((1..=e.n_inputs()).map(|k| format!("u{k}")));
    let io = |err: csv::Error| CliError::Io(err.to_string());
    out.write_record(&header).map_err(io)?;
    for t in 0..e.len() {
        let mut row = vec![t.to_string()];
        row.extend(e.nodes.iter().chain(&e.inputs).map(|s| s[t].to_string()));
        out.write_record(&row).map_err(io)?;
    }
    out.flush().map_err(|err| CliError::Io(err.to_string()))
}

pub fn write_experiment(path: &Path, e: &TimeSeriesExperiment) -> CliResult<()> {
    let f = File::create(path).map_err(|err| CliError::io(path, err))?;
    write_experiment_to(f, e).map_err(|err| CliError::io(path, err))
}

fn parse_header(header: &csv::StringRecord) -> CliResult<(usize, usize)> {
    let cols: Vec<&str> = header.iter().collect();
    if cols.first() != Some(&"time") {
        return Err(CliError::Usage("first column must be 'time'".into()));
    }
    let p = cols[1..].iter().take_while(|c| c.starts_with('y')).count();
    let m = cols.len() - 1 - p;
    for (i, c) in cols[1..=p].iter().enumerate() {
        if *c != format!("y{}", i + 1) {
            return Err(CliError::Usage(format!("expected column y{}, found '{c}'", i + 1)));
        }
    }
    for (k, c) in cols[1 + p..].iter().enumerate() {
        if *c != format!("u{}", k + 1) {
            return Err(CliError::Usage(format!("expected column u{}, found '{c}'", k + 1)));
        }
    }
    if p == 0 {
        return Err(CliError::Usage("no node columns".into()));
    }
    Ok((p, m))
}

pub fn read_experiment_from<R: Read>(r: R, id: &str) -> CliResult<TimeSeriesExperiment> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let header = rdr.headers().map_err(|e| CliError::Usage(e.to_string()))?.clone();
    let (p, m) = parse_header(&header)?;
    let mut nodes = vec![Vec::new(); p];
    let mut inputs = vec![Vec::new(); m];
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Usage(e.to_string()))?;
        if rec.len() != 1 + p + m {
            return Err(CliError::Usage(format!("row {} has {} cells, expected {}", line + 1, rec.len(), 1 + p + m)));
        }
        for (c, cell) in rec.iter().enumerate().skip(1) {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("row {}: '{cell}' is not a number", line + 1)))?;
            if !v.is_finite() {
                return Err(CliError::Usage(format!("row {}: non-finite value", line + 1)));
            }
            if c <= p {
                nodes[c - 1].push(v);
            } else {
                inputs[c - 1 - p].push(v);
            }
        }
    }
    Ok(TimeSeriesExperiment::new(id, nodes, inputs)?)
}

pub fn read_experiment(path: &Path) -> CliResult<TimeSeriesExperiment> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    let id = path.file_stem().map_or_else(|| "data".into(), |s| s.to_string_lossy().into_owned());
    read_experiment_from(f, &id).map_err(|e| match e {
        CliError::Usage(msg) => CliError::Usage(format!("{}: {msg}", path.display())),
        other => other,
    })
}
