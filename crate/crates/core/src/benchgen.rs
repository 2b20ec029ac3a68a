//! Synthetic benchmarks: random sparse stable networks with hidden nodes,
//! ring networks, noisy simulation and topology scoring.

use nalgebra::{DMatrix, Schur};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ModelStructure, TimeSeriesExperiment};
use crate::error::{Error, Result};
use crate::summary::{fitness, predict_one_step};

pub const MAX_GENERATION_ATTEMPTS: usize = 1000;
/// Band of the spectral radius after rescaling.
pub const RHO_RANGE: (f64, f64) = (0.7, 0.95);

/// Where the measured inputs enter the state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputPlacement {
    /// One input per state, hidden states included.
    AllNodes,
    /// One input per measured state.
    MeasuredNodes,
    Single(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthNetwork {
    /// State matrix, row-major: `a[i][j]` is the weight of `x_j → x_i`.
    pub a: Vec<Vec<f64>>,
    /// State driven by each input.
    pub input_nodes: Vec<usize>,
    pub n_measured: usize,
    /// Per measured target, whether each candidate group truly drives it.
    /// The self entry is always `true`.
    pub adjacency: Vec<Vec<bool>>,
}

impl GroundTruthNetwork {
    pub fn new(a: Vec<Vec<f64>>, input_nodes: Vec<usize>, n_measured: usize) -> Result<Self> {
        let n = a.len();
        if n == 0 || a.iter().any(|r| r.len() != n) {
            return Err(Error::Usage("state matrix must be square and non-empty".into()));
        }
        if n_measured == 0 || n_measured > n {
            return Err(Error::Usage(format!("{n_measured} measured states out of {n}")));
        }
        if input_nodes.iter().any(|&k| k >= n) {
            return Err(Error::Usage("input enters a non-existent state".into()));
        }
        let adjacency = dsf_adjacency(&a, &input_nodes, n_measured);
        Ok(GroundTruthNetwork {
            a,
            input_nodes,
            n_measured,
            adjacency,
        })
    }

    pub fn n_states(&self) -> usize {
        self.a.len()
    }

    pub fn n_inputs(&self) -> usize {
        self.input_nodes.len()
    }

    pub fn state_matrix(&self) -> DMatrix<f64> {
        let n = self.n_states();
        DMatrix::from_fn(n, n, |i, j| self.a[i][j])
    }

    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.state_matrix())
    }

    /// The same network with its inputs removed.
    pub fn without_inputs(&self) -> Self {
        GroundTruthNetwork::new(self.a.clone(), vec![], self.n_measured).expect("already valid")
    }

    /// True links excluding self loops.
    pub fn link_count(&self) -> usize {
        self.adjacency
            .iter()
            .enumerate()
            .map(|(i, r)| r.iter().enumerate().filter(|&(g, &v)| v && g != i).count())
            .sum()
    }

    pub fn structure(&self, target: usize) -> ModelStructure {
        ModelStructure {
            target,
            parents: self.adjacency[target].clone(),
        }
    }

    fn has_isolated_measured_node(&self) -> bool {
        let p = self.n_measured;
        (0..p).any(|i| {
            let incoming = (0..p).any(|j| j != i && self.adjacency[i][j]);
            let outgoing = (0..p).any(|k| k != i && self.adjacency[k][i]);
            !incoming && !outgoing
        })
    }
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    // plain QR stalls on permutation-like matrices; a diagonal shift moves
    // every eigenvalue by the same amount and breaks the symmetry
    let n = a.nrows();
    for shift in [0.0, 0.1, -0.37, 0.73] {
        let shifted = a + DMatrix::identity(n, n) * shift;
        if let Some(s) = Schur::try_new(shifted, f64::EPSILON, 10_000) {
            return s
                .complex_eigenvalues()
                .iter()
                .map(|z| (z - shift).norm())
                .fold(0.0, f64::max);
        }
    }
    gelfand_radius(a)
}

fn gelfand_radius(a: &DMatrix<f64>) -> f64 {
    let mut m = a.clone();
    let mut log_scale = 0.0;
    let mut k = 1.0;
    for _ in 0..30 {
        let norm = m.norm();
        if norm == 0.0 {
            return 0.0;
        }
        log_scale += norm.ln() / k;
        m /= norm;
        m = &m * &m;
        k *= 2.0;
    }
    (log_scale + m.norm().ln() / k).exp()
}

/// States reachable from `source` through hidden-only intermediaries,
/// restricted to measured endpoints.
fn hidden_reach(a: &[Vec<f64>], n_measured: usize, source: usize) -> Vec<bool> {
    let n = a.len();
    let mut hit = vec![false; n_measured];
    let mut seen = vec![false; n];
    let mut stack = vec![source];
    seen[source] = true;
    while let Some(u) = stack.pop() {
        for v in 0..n {
            if a[v][u] == 0.0 {
                continue;
            }
            if v < n_measured {
                hit[v] = true;
            } else if !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    hit
}

fn dsf_adjacency(a: &[Vec<f64>], input_nodes: &[usize], p: usize) -> Vec<Vec<bool>> {
    let m = input_nodes.len();
    let mut adj = vec![vec![false; p + m]; p];
    for j in 0..p {
        let reach = hidden_reach(a, p, j);
        for i in 0..p {
            if reach[i] {
                adj[i][j] = true;
            }
        }
    }
    for (k, &node) in input_nodes.iter().enumerate() {
        if node < p {
            adj[node][p + k] = true;
        } else {
            let reach = hidden_reach(a, p, node);
            for i in 0..p {
                if reach[i] {
                    adj[i][p + k] = true;
                }
            }
        }
    }
    for (i, row) in adj.iter_mut().enumerate() {
        row[i] = true;
    }
    adj
}

fn rescale<R: Rng + ?Sized>(a: &mut DMatrix<f64>, rng: &mut R) -> bool {
    let rho = spectral_radius(a);
    // a (near-)nilpotent matrix reports rounding noise as its radius
    if !(rho > 1e-3 * a.norm()) || !rho.is_finite() {
        return false;
    }
    let target = rng.random_range(RHO_RANGE.0..RHO_RANGE.1);
    *a *= target / rho;
    (spectral_radius(a) - target).abs() < 1e-6
}

fn to_rows(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..a.nrows()).map(|i| a.row(i).iter().copied().collect()).collect()
}

fn place_inputs(placement: &InputPlacement, n: usize, p: usize) -> Result<Vec<usize>> {
    match placement {
        InputPlacement::AllNodes => Ok((0..n).collect()),
        InputPlacement::MeasuredNodes => Ok((0..p).collect()),
        InputPlacement::Single(k) if *k < n => Ok(vec![*k]),
        InputPlacement::Single(k) => Err(Error::Usage(format!("input node {k} outside {n} states"))),
    }
}

/// Sparse Gaussian state matrix rescaled to a stable spectral radius, with
/// no isolated measured node.
pub fn generate_random_network<R: Rng + ?Sized>(
    n: usize,
    p: usize,
    density: f64,
    inputs: &InputPlacement,
    rng: &mut R,
) -> Result<GroundTruthNetwork> {
    if p == 0 || p > n {
        return Err(Error::Usage(format!("need 1 <= p <= n, got p={p}, n={n}")));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::Usage(format!("density must be in (0, 1], got {density}")));
    }
    let input_nodes = place_inputs(inputs, n, p)?;
    for _ in 0..MAX_GENERATION_ATTEMPTS {
        let mut a = DMatrix::from_fn(n, n, |_, _| {
            if rng.random::<f64>() < density {
                let z: f64 = StandardNormal.sample(rng);
                z
            } else {
                0.0
            }
        });
        if !rescale(&mut a, rng) {
            continue;
        }
        let net = GroundTruthNetwork::new(to_rows(&a), input_nodes.clone(), p)?;
        if p > 1 && net.has_isolated_measured_node() {
            continue;
        }
        return Ok(net);
    }
    Err(Error::Generation(format!(
        "no valid network with n={n}, p={p}, density={density} after {MAX_GENERATION_ATTEMPTS} attempts"
    )))
}

/// Directed cycle `0 → 1 → … → p−1 → 0`, one input at state 0, all states measured.
pub fn generate_ring_network<R: Rng + ?Sized>(p: usize, rng: &mut R) -> Result<GroundTruthNetwork> {
    if p < 3 {
        return Err(Error::Usage(format!("ring needs at least 3 nodes, got {p}")));
    }
    let mut a = DMatrix::zeros(p, p);
    for i in 0..p {
        // magnitudes away from zero so every link is visible
        let mag: f64 = rng.random_range(0.5..1.0);
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        a[((i + 1) % p, i)] = sign * mag;
    }
    assert!(rescale(&mut a, rng), "cycle weights are non-zero");
    GroundTruthNetwork::new(to_rows(&a), vec![0], p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    NoNoise,
    /// `SNR = 10 log10(σ_u / σ_e)` in dB with unit input variance.
    SnrDb(f64),
    /// No inputs, unit process noise.
    PureNoise,
}

impl NoiseMode {
    /// Process-noise variance.
    pub fn noise_variance(self) -> f64 {
        match self {
            NoiseMode::NoNoise => 0.0,
            NoiseMode::SnrDb(db) => 10f64.powf(-db / 10.0),
            NoiseMode::PureNoise => 1.0,
        }
    }

    pub fn has_inputs(self) -> bool {
        !matches!(self, NoiseMode::PureNoise)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub length: usize,
    pub noise: NoiseMode,
}

/// Simulate `x(t+1) = A x(t) + B u(t) + e(t)` after a transient of `10 n`
/// steps; the first `p` states are measured.
pub fn simulate<R: Rng + ?Sized>(
    network: &GroundTruthNetwork,
    config: &SimulationConfig,
    id: &str,
    rng: &mut R,
) -> Result<TimeSeriesExperiment> {
    let n = network.n_states();
    let p = network.n_measured;
    let m = if config.noise.has_inputs() { network.n_inputs() } else { 0 };
    let sd_e = config.noise.noise_variance().sqrt();
    let transient = 10 * n;
    let total = transient + config.length;
    let mut x = vec![0.0; n];
    let mut nodes = vec![Vec::with_capacity(config.length); p];
    let mut inputs = vec![Vec::with_capacity(config.length); m];
    for t in 0..total {
        let u: Vec<f64> = (0..m).map(|_| StandardNormal.sample(rng)).collect();
        if t >= transient {
            for i in 0..p {
                nodes[i].push(x[i]);
            }
            for k in 0..m {
                inputs[k].push(u[k]);
            }
        }
        let mut next = vec![0.0; n];
        for (i, row) in network.a.iter().enumerate() {
            next[i] = row.iter().zip(&x).map(|(a, b)| a * b).sum();
        }
        for (k, &node) in network.input_nodes.iter().enumerate().take(m) {
            next[node] += u[k];
        }
        if sd_e > 0.0 {
            for v in next.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *v += sd_e * z;
            }
        }
        x = next;
    }
    TimeSeriesExperiment::new(id, nodes, inputs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Percent of true links recovered.
    pub tpr: f64,
    /// Percent of inferred links that are true; `None` when nothing was inferred.
    pub prec: Option<f64>,
    pub auroc: Option<f64>,
    pub auprec: Option<f64>,
}

fn off_diagonal<T: Copy>(rows: &[Vec<T>]) -> Vec<T> {
    rows.iter()
        .enumerate()
        .flat_map(|(i, r)| r.iter().enumerate().filter(move |(g, _)| *g != i).map(|(_, v)| *v))
        .collect()
}

fn check_shape<T>(a: &[Vec<T>], truth: &[Vec<bool>]) -> Result<()> {
    if a.len() != truth.len() || a.iter().zip(truth).any(|(x, y)| x.len() != y.len()) {
        return Err(Error::Usage("inferred and true networks have different universes".into()));
    }
    Ok(())
}

/// TPR and precision of an inferred adjacency, self links excluded.
pub fn score_adjacency(inferred: &[Vec<bool>], truth: &[Vec<bool>]) -> Result<(f64, Option<f64>)> {
    check_shape(inferred, truth)?;
    let inf = off_diagonal(inferred);
    let tru = off_diagonal(truth);
    let tp = inf.iter().zip(&tru).filter(|(a, b)| **a && **b).count();
    let n_true = tru.iter().filter(|v| **v).count();
    let n_inf = inf.iter().filter(|v| **v).count();
    let tpr = if n_true == 0 { 100.0 } else { 100.0 * tp as f64 / n_true as f64 };
    let prec = (n_inf > 0).then(|| 100.0 * tp as f64 / n_inf as f64);
    Ok((tpr, prec))
}

/// Threshold sweep with tied confidences grouped; returns cumulative
/// `(tp, fp)` after each distinct confidence level.
fn sweep(conf: &[f64], labels: &[bool]) -> Vec<(usize, usize)> {
    let mut idx: Vec<usize> = (0..conf.len()).collect();
    idx.sort_by(|&a, &b| conf[b].total_cmp(&conf[a]));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < idx.len() {
        let level = conf[idx[i]];
        while i < idx.len() && conf[idx[i]] == level {
            if labels[idx[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push((tp, fp));
    }
    out
}

pub fn auroc(conf: &[f64], labels: &[bool]) -> Option<f64> {
    let pos = labels.iter().filter(|v| **v).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut area = 0.0;
    let (mut x0, mut y0) = (0.0, 0.0);
    for (tp, fp) in sweep(conf, labels) {
        let x = fp as f64 / neg as f64;
        let y = tp as f64 / pos as f64;
        area += (x - x0) * (y + y0) / 2.0;
        x0 = x;
        y0 = y;
    }
    Some(area)
}

pub fn auprec(conf: &[f64], labels: &[bool]) -> Option<f64> {
    let pos = labels.iter().filter(|v| **v).count();
    if pos == 0 {
        return None;
    }
    let pts: Vec<(f64, f64)> = sweep(conf, labels)
        .into_iter()
        .map(|(tp, fp)| (tp as f64 / pos as f64, tp as f64 / (tp + fp) as f64))
        .collect();
    let mut area = 0.0;
    let (mut r0, mut p0) = (0.0, pts[0].1);
    for (r, p) in pts {
        area += (r - r0) * (p + p0) / 2.0;
        r0 = r;
        p0 = p;
    }
    Some(area)
}

/// Full report from an inferred adjacency and per-link confidences.
pub fn score_topology(
    inferred: &[Vec<bool>],
    confidence: Option<&[Vec<f64>]>,
    truth: &GroundTruthNetwork,
) -> Result<EvalReport> {
    let (tpr, prec) = score_adjacency(inferred, &truth.adjacency)?;
    let (auroc_v, auprec_v) = match confidence {
        Some(c) => {
            check_shape(c, &truth.adjacency)?;
            let conf = off_diagonal(c);
            let labels = off_diagonal(&truth.adjacency);
            (auroc(&conf, &labels), auprec(&conf, &labels))
        }
        None => (None, None),
    };
    Ok(EvalReport {
        tpr,
        prec,
        auroc: auroc_v,
        auprec: auprec_v,
    })
}

/// What an inference method reports for a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkEstimate {
    /// Per target: inferred parent set over all candidate groups.
    pub adjacency: Vec<Vec<bool>>,
    /// Per target: ranking confidence per candidate group.
    pub confidence: Vec<Vec<f64>>,
    /// Per target: the selected structure and its impulse responses.
    pub responses: Vec<(ModelStructure, Vec<f64>)>,
    pub truncation: usize,
}

pub trait InferenceMethod: Sync {
    fn name(&self) -> String;
    fn infer(&self, experiments: &[TimeSeriesExperiment], seed: u64) -> Result<NetworkEstimate>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NetworkFamily {
    Random {
        n: usize,
        p: usize,
        density: f64,
        inputs: InputPlacement,
    },
    Ring {
        p: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub family: NetworkFamily,
    pub noise: NoiseMode,
    pub lengths: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
}

/// Independent generator for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Network, training data and a validation experiment of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub network: GroundTruthNetwork,
    pub train: TimeSeriesExperiment,
    pub validation: TimeSeriesExperiment,
}

pub fn generate_network<R: Rng + ?Sized>(family: &NetworkFamily, rng: &mut R) -> Result<GroundTruthNetwork> {
    match family {
        NetworkFamily::Random { n, p, density, inputs } => generate_random_network(*n, *p, *density, inputs, rng),
        NetworkFamily::Ring { p } => generate_ring_network(*p, rng),
    }
}

/// Generator of experiment `index` of trial `trial`. Independent of the
/// data length, so longer records extend shorter ones.
pub fn simulation_rng(seed: u64, trial: usize, index: usize) -> ChaCha8Rng {
    stream_rng(seed ^ 0x5eed_da7a, ((trial as u64) << 32) | index as u64)
}

pub fn generate_trial(protocol: &Protocol, trial: usize, length: usize) -> Result<Trial> {
    let network = generate_network(&protocol.family, &mut stream_rng(protocol.seed, trial as u64))?;
    let network = if protocol.noise.has_inputs() { network } else { network.without_inputs() };
    let cfg = SimulationConfig {
        length,
        noise: protocol.noise,
    };
    let train = simulate(&network, &cfg, &format!("trial{trial}-n{length}"), &mut simulation_rng(protocol.seed, trial, 0))?;
    let validation = simulate(
        &network,
        &cfg,
        &format!("trial{trial}-n{length}-val"),
        &mut simulation_rng(protocol.seed, trial, 1),
    )?;
    Ok(Trial {
        network,
        train,
        validation,
    })
}

/// Mean one-step fitness over the target nodes of an estimate.
pub fn validation_fitness(estimate: &NetworkEstimate, validation: &TimeSeriesExperiment) -> Result<f64> {
    let mut total = 0.0;
    for (s, w) in &estimate.responses {
        let yhat = predict_one_step(w, s, validation, estimate.truncation)?;
        let y = &validation.nodes[s.target][estimate.truncation..];
        total += fitness(y, &yhat)?;
    }
    Ok(total / estimate.responses.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub method: String,
    pub length: usize,
    pub trial: usize,
    pub report: Option<EvalReport>,
    pub fitness: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub method: String,
    pub length: usize,
    pub successes: usize,
    pub trials: usize,
    pub mean_tpr: Option<f64>,
    pub mean_prec: Option<f64>,
    pub se_tpr: Option<f64>,
    pub se_prec: Option<f64>,
    pub mean_fitness: Option<f64>,
    pub mean_auroc: Option<f64>,
    pub mean_auprec: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub outcomes: Vec<TrialOutcome>,
    /// Method-major, then data length.
    pub cells: Vec<CellSummary>,
}

fn mean_se(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let se = (v.len() > 1).then(|| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt());
    (Some(mean), se)
}

pub fn aggregate(outcomes: &[TrialOutcome], methods: &[String], lengths: &[usize]) -> Vec<CellSummary> {
    let mut cells = Vec::new();
    for m in methods {
        for &len in lengths {
            let here: Vec<&TrialOutcome> = outcomes.iter().filter(|o| &o.method == m && o.length == len).collect();
            let reports: Vec<&EvalReport> = here.iter().filter_map(|o| o.report.as_ref()).collect();
            let tprs: Vec<f64> = reports.iter().map(|r| r.tpr).collect();
            let precs: Vec<f64> = reports.iter().filter_map(|r| r.prec).collect();
            let fits: Vec<f64> = here.iter().filter_map(|o| o.fitness).collect();
            let aurocs: Vec<f64> = reports.iter().filter_map(|r| r.auroc).collect();
            let auprecs: Vec<f64> = reports.iter().filter_map(|r| r.auprec).collect();
            let (mean_tpr, se_tpr) = mean_se(&tprs);
            let (mean_prec, se_prec) = mean_se(&precs);
            cells.push(CellSummary {
                method: m.clone(),
                length: len,
                successes: reports.len(),
                trials: here.len(),
                mean_tpr,
                mean_prec,
                se_tpr,
                se_prec,
                mean_fitness: mean_se(&fits).0,
                mean_auroc: mean_se(&aurocs).0,
                mean_auprec: mean_se(&auprecs).0,
            });
        }
    }
    cells
}

pub fn run_trial(protocol: &Protocol, method: &dyn InferenceMethod, trial: usize, length: usize) -> TrialOutcome {
    let result = generate_trial(protocol, trial, length).and_then(|t| {
        let seed = protocol.seed.wrapping_add(trial as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let est = method.infer(std::slice::from_ref(&t.train), seed)?;
        let report = score_topology(&est.adjacency, Some(&est.confidence), &t.network)?;
        let fit = validation_fitness(&est, &t.validation).ok();
        Ok((report, fit))
    });
    let (report, fitness, error) = match result {
        Ok((r, f)) => (Some(r), f, None),
        Err(e) => (None, None, Some(e.to_string())),
    };
    TrialOutcome {
        method: method.name(),
        length,
        trial,
        report,
        fitness,
        error,
    }
}

/// Generate → simulate → infer → score for every trial, method and length.
pub fn run_monte_carlo(protocol: &Protocol, methods: &[&dyn InferenceMethod]) -> MonteCarloReport {
    let jobs: Vec<(usize, usize, usize)> = (0..methods.len())
        .flat_map(|mi| {
            protocol
                .lengths
                .iter()
                .flat_map(move |&len| (0..protocol.trials).map(move |t| (mi, len, t)))
        })
        .collect();
    let outcomes: Vec<TrialOutcome> = jobs
        .into_par_iter()
        .map(|(mi, len, t)| run_trial(protocol, methods[mi], t, len))
        .collect();
    let names: Vec<String> = methods.iter().map(|m| m.name()).collect();
    let cells = aggregate(&outcomes, &names, &protocol.lengths);
    MonteCarloReport { outcomes, cells }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn nilpotent_matrix_is_not_rescaled() {
        // strictly lower triangular: every eigenvalue is zero
        let mut a = DMatrix::from_fn(6, 6, |i, j| if i > j { 1.5 } else { 0.0 });
        let before = a.clone();
        assert!(!rescale(&mut a, &mut ChaCha8Rng::seed_from_u64(2)));
        assert_eq!(a, before);
    }

    #[test]
    fn sparse_networks_land_in_radius_band() {
        for seed in 0..300 {
            let net = generate_random_network(8, 6, 0.2, &InputPlacement::AllNodes, &mut stream_rng(seed, seed)).unwrap();
            let rho = net.spectral_radius();
            assert!(rho >= RHO_RANGE.0 - 1e-6 && rho <= RHO_RANGE.1 + 1e-6, "seed {seed}: {rho}");
        }
    }

    #[test]
    fn dense_network_is_fully_connected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = generate_random_network(5, 4, 1.0, &InputPlacement::MeasuredNodes, &mut rng).unwrap();
        assert!(net.spectral_radius() < 1.0);
        for (i, row) in net.adjacency.iter().enumerate() {
            for (g, &v) in row.iter().enumerate() {
                // measured nodes all reach each other; inputs only hit their own node
                let expect = g < 4 || g - 4 == i;
                assert_eq!(v, expect, "{i} {g}");
            }
        }
    }

    #[test]
    fn no_hidden_nodes_gives_measured_pattern() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = generate_random_network(6, 6, 0.3, &InputPlacement::MeasuredNodes, &mut rng).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                if i != j {
                    assert_eq!(net.adjacency[i][j], net.a[i][j] != 0.0);
                }
            }
        }
    }

    #[test]
    fn hidden_paths_create_links() {
        // 0 → 2 (hidden) → 1, input into the hidden node
        let a = vec![
            vec![0.5, 0.0, 0.0],
            vec![0.0, 0.5, 0.4],
            vec![0.3, 0.0, 0.2],
        ];
        let net = GroundTruthNetwork::new(a, vec![0, 1, 2], 2).unwrap();
        assert!(net.adjacency[1][0]);
        assert!(!net.adjacency[0][1]);
        // input 2 enters hidden state 2, which feeds node 1
        assert!(net.adjacency[1][2 + 2]);
        assert!(!net.adjacency[0][2 + 2]);
        // input 0 enters measured node 0 only
        assert!(net.adjacency[0][2]);
        assert!(!net.adjacency[1][2]);
        assert_eq!(net.link_count(), 4);
    }

    #[test]
    fn full_size_network_found() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = generate_random_network(15, 10, 0.15, &InputPlacement::AllNodes, &mut rng).unwrap();
        let rho = net.spectral_radius();
        assert!(rho >= RHO_RANGE.0 - 1e-9 && rho <= RHO_RANGE.1 + 1e-9);
        assert!(!net.has_isolated_measured_node());
        assert_eq!(net.adjacency[0].len(), 25);
        assert!(generate_random_network(3, 3, 1e-9, &InputPlacement::MeasuredNodes, &mut rng).is_err());
    }

    #[test]
    fn ring_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = generate_ring_network(3, &mut rng).unwrap();
        assert_eq!(net.link_count(), 4);
        assert!(net.spectral_radius() < 1.0);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(net.a[i][j] != 0.0, i == (j + 1) % 3);
            }
        }
        let net5 = generate_ring_network(5, &mut rng).unwrap();
        assert_eq!(net5.link_count(), 6);
        assert!(generate_ring_network(2, &mut rng).is_err());
    }

    #[test]
    fn radius_matches_known_spectra() {
        let perm = DMatrix::from_fn(6, 6, |i, j| if i == (j + 1) % 6 { 0.8 } else { 0.0 });
        assert_relative_eq!(spectral_radius(&perm), 0.8, epsilon = 1e-9);
        assert_relative_eq!(gelfand_radius(&perm), 0.8, epsilon = 1e-6);
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -0.9, 0.9, 0.0]);
        assert_relative_eq!(spectral_radius(&rot), 0.9, epsilon = 1e-9);
        let tri = DMatrix::from_row_slice(2, 2, &[0.5, 3.0, 0.0, -0.7]);
        assert_relative_eq!(spectral_radius(&tri), 0.7, epsilon = 1e-9);
    }

    #[test]
    fn noise_levels() {
        assert_relative_eq!(NoiseMode::SnrDb(10.0).noise_variance(), 0.1);
        assert_eq!(NoiseMode::NoNoise.noise_variance(), 0.0);
    }

    #[test]
    fn simulation_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = generate_random_network(8, 6, 0.25, &InputPlacement::AllNodes, &mut rng).unwrap();
        let quiet = net.without_inputs();
        let cfg = SimulationConfig {
            length: 50,
            noise: NoiseMode::NoNoise,
        };
        let e = simulate(&quiet, &cfg, "z", &mut rng).unwrap();
        assert!(e.nodes.iter().flatten().all(|&v| v == 0.0));
        assert_eq!(e.n_inputs(), 0);

        let cfg = SimulationConfig {
            length: 400,
            noise: NoiseMode::SnrDb(10.0),
        };
        let a = simulate(&net, &cfg, "a", &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let b = simulate(&net, &cfg, "a", &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_nodes(), 6);
        assert_eq!(a.n_inputs(), 8);

        for seed in 0..50 {
            let e = simulate(&net, &cfg, "s", &mut ChaCha8Rng::seed_from_u64(100 + seed)).unwrap();
            for y in &e.nodes {
                let first: f64 = y[..200].iter().map(|v| v * v).sum::<f64>() / 200.0;
                let second: f64 = y[200..].iter().map(|v| v * v).sum::<f64>() / 200.0;
                assert!(first.is_finite() && second.is_finite());
                assert!(second < 10.0 * first + 1.0);
            }
        }
    }

    #[test]
    fn simulation_follows_recursion() {
        let a = vec![vec![0.5, 0.2], vec![-0.3, 0.4]];
        let net = GroundTruthNetwork::new(a.clone(), vec![1], 2).unwrap();
        let cfg = SimulationConfig {
            length: 30,
            noise: NoiseMode::NoNoise,
        };
        let e = simulate(&net, &cfg, "r", &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        for t in 0..29 {
            let x0 = a[0][0] * e.nodes[0][t] + a[0][1] * e.nodes[1][t];
            let x1 = a[1][0] * e.nodes[0][t] + a[1][1] * e.nodes[1][t] + e.inputs[0][t];
            assert_relative_eq!(e.nodes[0][t + 1], x0, epsilon = 1e-12);
            assert_relative_eq!(e.nodes[1][t + 1], x1, epsilon = 1e-12);
        }
    }

    fn truth4() -> GroundTruthNetwork {
        let a = vec![
            vec![0.5, 0.3, 0.0],
            vec![0.0, 0.5, 0.3],
            vec![0.3, 0.0, 0.5],
        ];
        GroundTruthNetwork::new(a, vec![0], 3).unwrap()
    }

    #[test]
    fn scoring_examples() {
        let t = truth4();
        assert_eq!(t.link_count(), 4);
        let (tpr, prec) = score_adjacency(&t.adjacency, &t.adjacency).unwrap();
        assert_eq!((tpr, prec), (100.0, Some(100.0)));
        let mut extra = t.adjacency.clone();
        extra[0][2] = true;
        let (tpr, prec) = score_adjacency(&extra, &t.adjacency).unwrap();
        assert_eq!(tpr, 100.0);
        assert_relative_eq!(prec.unwrap(), 80.0);
        let none: Vec<Vec<bool>> = (0..3).map(|i| (0..4).map(|g| g == i).collect()).collect();
        let (tpr, prec) = score_adjacency(&none, &t.adjacency).unwrap();
        assert_eq!(tpr, 0.0);
        assert_eq!(prec, None);
        assert!(score_adjacency(&t.adjacency[..2], &t.adjacency).is_err());

        let conf: Vec<Vec<f64>> = t.adjacency.iter().map(|r| r.iter().map(|&v| f64::from(u8::from(v))).collect()).collect();
        let r = score_topology(&t.adjacency, Some(&conf), &t).unwrap();
        assert_eq!(r.auroc, Some(1.0));
        assert_eq!(r.auprec, Some(1.0));
    }

    #[test]
    fn curve_oracles() {
        // hand-computed: ranking P N P N
        let conf = [0.9, 0.8, 0.7, 0.6];
        let lab = [true, false, true, false];
        assert_relative_eq!(auroc(&conf, &lab).unwrap(), 0.75);
        // PR points (0,1) (0.5,1) (0.5,0.5) (1,2/3) (1,0.5)
        let expect = 0.5 * 1.0 + 0.5 * (0.5 + 2.0 / 3.0) / 2.0;
        assert_relative_eq!(auprec(&conf, &lab).unwrap(), expect);
        // all tied: diagonal ROC
        assert_relative_eq!(auroc(&[0.5; 4], &lab).unwrap(), 0.5);
        // reversed ranking
        assert_relative_eq!(auroc(&[0.1, 0.9, 0.2, 0.8], &lab).unwrap(), 0.0);
        assert_eq!(auroc(&[0.1, 0.2], &[true, true]), None);
    }

    proptest! {
        #[test]
        fn auroc_is_pairwise_probability(v in prop::collection::vec((0u8..5, any::<bool>()), 2..30)) {
            let conf: Vec<f64> = v.iter().map(|x| x.0 as f64).collect();
            let lab: Vec<bool> = v.iter().map(|x| x.1).collect();
            let pos: Vec<f64> = conf.iter().zip(&lab).filter(|x| *x.1).map(|x| *x.0).collect();
            let neg: Vec<f64> = conf.iter().zip(&lab).filter(|x| !*x.1).map(|x| *x.0).collect();
            if let Some(a) = auroc(&conf, &lab) {
                let mut s = 0.0;
                for p in &pos { for n in &neg {
                    s += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
                }}
                prop_assert!((a - s / (pos.len() * neg.len()) as f64).abs() < 1e-12);
            }
            if let Some(ap) = auprec(&conf, &lab) {
                prop_assert!((0.0..=1.0 + 1e-12).contains(&ap));
            }
        }

        #[test]
        fn scores_invariant_under_relabeling(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = generate_random_network(5, 5, 0.4, &InputPlacement::MeasuredNodes, &mut rng).unwrap();
            let inferred: Vec<Vec<bool>> = net.adjacency.iter().map(|r| r.iter().map(|&v| v ^ rng.random_bool(0.2)).collect()).collect();
            let conf: Vec<Vec<f64>> = inferred.iter().map(|r| r.iter().map(|&v| f64::from(u8::from(v)) + rng.random_range(0.0..0.5)).collect()).collect();
            // swap nodes 1 and 3 (and their inputs)
            let perm = |g: usize| match g { 1 => 3, 3 => 1, 6 => 8, 8 => 6, x => x };
            let permute = |m: &Vec<Vec<bool>>| -> Vec<Vec<bool>> {
                (0..5).map(|i| (0..10).map(|g| m[perm(i)][perm(g)]).collect()).collect()
            };
            let mut pt = net.clone();
            pt.adjacency = permute(&net.adjacency);
            let pc: Vec<Vec<f64>> = (0..5).map(|i| (0..10).map(|g| conf[perm(i)][perm(g)]).collect()).collect();
            let a = score_topology(&inferred, Some(&conf), &net).unwrap();
            let b = score_topology(&permute(&inferred), Some(&pc), &pt).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    struct Oracle(&'static str);

    impl InferenceMethod for Oracle {
        fn name(&self) -> String {
            self.0.into()
        }

        fn infer(&self, experiments: &[TimeSeriesExperiment], _seed: u64) -> Result<NetworkEstimate> {
            // relies on the protocol below: ring of 4 with its only input at node 0
            let e = &experiments[0];
            let p = e.n_nodes();
            let adjacency: Vec<Vec<bool>> = (0..p)
                .map(|i| (0..p + 1).map(|g| g == i || g == (i + p - 1) % p || (i == 0 && g == p)).collect())
                .collect();
            let confidence = adjacency.iter().map(|r| r.iter().map(|&v| f64::from(u8::from(v))).collect()).collect();
            Ok(NetworkEstimate {
                adjacency,
                confidence,
                responses: vec![],
                truncation: 2,
            })
        }
    }

    #[test]
    fn monte_carlo_bookkeeping() {
        let protocol = Protocol {
            family: NetworkFamily::Ring { p: 4 },
            noise: NoiseMode::SnrDb(10.0),
            lengths: vec![30, 60, 90],
            trials: 2,
            seed: 9,
        };
        let rep = run_monte_carlo(&protocol, &[&Oracle("a"), &Oracle("b")]);
        assert_eq!(rep.outcomes.len(), 12);
        assert_eq!(rep.cells.len(), 6);
        for c in &rep.cells {
            assert_eq!(c.mean_tpr, Some(100.0));
            assert_eq!(c.mean_prec, Some(100.0));
            assert_eq!(c.successes, 2);
        }
        let t1 = generate_trial(&protocol, 1, 30).unwrap();
        let t1b = generate_trial(&protocol, 1, 90).unwrap();
        assert_eq!(t1.network, t1b.network);
        assert_ne!(generate_trial(&protocol, 0, 30).unwrap().network, t1.network);
    }
}
