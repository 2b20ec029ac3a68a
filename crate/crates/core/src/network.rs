//! Whole-network inference: one independent problem per measured node.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::benchgen::{InferenceMethod, NetworkEstimate};
use crate::dataset::{build_regression, check_universe, ModelStructure, TimeSeriesExperiment};
use crate::error::{Error, Result};
use crate::keb::{keb_optimize, KebOptions};
use crate::kernel::{Beta, KernelConfig};
use crate::rjmcmc::{run_rjmcmc, ChainTrace, MoveCounts, SamplerConfig};
use crate::summary::{predict_one_step, summarize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum MethodConfig {
    Rjmcmc(SamplerConfig),
    Keb { kernel: KernelConfig, options: KebOptions },
}

impl MethodConfig {
    pub fn kernel(&self) -> KernelConfig {
        match self {
            MethodConfig::Rjmcmc(c) => c.kernel,
            MethodConfig::Keb { kernel, .. } => *kernel,
        }
    }

    pub fn tag(&self) -> String {
        match self {
            MethodConfig::Rjmcmc(c) => format!("rjmcmc_{}", c.kernel.family.name()),
            MethodConfig::Keb { kernel, .. } => format!("keb_{}", kernel.family.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KebDiagnostics {
    pub objective: f64,
    pub converged: bool,
    pub sweeps: usize,
    pub lambda: Vec<f64>,
    pub beta: Vec<Beta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetResult {
    pub target: usize,
    /// Most probable structures first; a single entry of probability 1 for
    /// point estimates.
    pub structure_probs: Vec<(ModelStructure, f64)>,
    pub map_structure: ModelStructure,
    /// Posterior link probabilities; the selected indicator for point estimates.
    pub link_probs: Vec<f64>,
    /// Ranking score per candidate group.
    pub confidence: Vec<f64>,
    /// Responses of the MAP structure, per experiment.
    pub w_hat: Vec<Vec<f64>>,
    pub sigma_hat: Vec<f64>,
    pub moves: Option<MoveCounts>,
    pub keb: Option<KebDiagnostics>,
}

impl TargetResult {
    /// Responses averaged over experiments, for prediction on new data.
    pub fn mean_response(&self) -> Vec<f64> {
        let k = self.w_hat.len() as f64;
        let mut out = vec![0.0; self.w_hat.first().map_or(0, Vec::len)];
        for w in &self.w_hat {
            for (o, v) in out.iter_mut().zip(w) {
                *o += v / k;
            }
        }
        out
    }

    pub fn predict(&self, experiment: &TimeSeriesExperiment, truncation: usize) -> Result<Vec<f64>> {
        predict_one_step(&self.mean_response(), &self.map_structure, experiment, truncation)
    }
}

/// Generator of target `target` under master seed `seed`.
pub fn target_rng(seed: u64, target: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(target as u64);
    r
}

/// Summarize a finished chain, keeping the `top_k` most probable structures.
pub fn result_from_trace(trace: &ChainTrace, top_k: usize) -> Result<TargetResult> {
    let s = summarize(trace)?;
    Ok(TargetResult {
        target: trace.target,
        structure_probs: s.structure_probs.into_iter().take(top_k.max(1)).collect(),
        map_structure: s.map_structure,
        confidence: s.link_probs.clone(),
        link_probs: s.link_probs,
        w_hat: s.means.w_hat,
        sigma_hat: s.means.sigma_hat,
        moves: Some(trace.moves),
        keb: None,
    })
}

pub fn infer_target<R: Rng>(
    experiments: &[TimeSeriesExperiment],
    target: usize,
    method: &MethodConfig,
    top_k: usize,
    rng: &mut R,
) -> Result<TargetResult> {
    let (p, m) = check_universe(experiments)?;
    let full = ModelStructure::full(target, p + m)?;
    let problem = build_regression(experiments, &full, method.kernel().truncation)?;
    match method {
        MethodConfig::Rjmcmc(cfg) => {
            let trace = run_rjmcmc(&problem, cfg, rng)?;
            result_from_trace(&trace, top_k)
        }
        MethodConfig::Keb { kernel, options } => {
            let r = keb_optimize(&problem, kernel, options, rng)?;
            let link_probs = r.structure.parents.iter().map(|&b| f64::from(u8::from(b))).collect();
            Ok(TargetResult {
                target,
                structure_probs: vec![(r.structure.clone(), 1.0)],
                map_structure: r.structure,
                link_probs,
                confidence: r.confidence,
                w_hat: r.w_hat,
                sigma_hat: r.sigma.clone(),
                moves: None,
                keb: Some(KebDiagnostics {
                    objective: r.objective,
                    converged: r.converged,
                    sweeps: r.history.len(),
                    lambda: r.lambda,
                    beta: r.beta,
                }),
            })
        }
    }
}

/// Every measured node in parallel; results are in target order and do not
/// depend on scheduling.
pub fn infer_network(
    experiments: &[TimeSeriesExperiment],
    method: &MethodConfig,
    seed: u64,
    top_k: usize,
) -> Result<Vec<Result<TargetResult>>> {
    let (p, _) = check_universe(experiments)?;
    Ok((0..p)
        .into_par_iter()
        .map(|i| infer_target(experiments, i, method, top_k, &mut target_rng(seed, i)))
        .collect())
}

/// Collect per-target results into the shape scored by the benchmark harness.
pub fn to_estimate(results: &[TargetResult], truncation: usize) -> NetworkEstimate {
    NetworkEstimate {
        adjacency: results.iter().map(|r| r.map_structure.parents.clone()).collect(),
        confidence: results.iter().map(|r| r.confidence.clone()).collect(),
        responses: results.iter().map(|r| (r.map_structure.clone(), r.mean_response())).collect(),
        truncation,
    }
}

/// A method usable by the Monte Carlo harness.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkMethod {
    pub label: String,
    pub config: MethodConfig,
}

impl NetworkMethod {
    pub fn new(config: MethodConfig) -> Self {
        NetworkMethod {
            label: config.tag(),
            config,
        }
    }
}

impl InferenceMethod for NetworkMethod {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn infer(&self, experiments: &[TimeSeriesExperiment], seed: u64) -> Result<NetworkEstimate> {
        let results = infer_network(experiments, &self.config, seed, 1)?
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        if results.is_empty() {
            return Err(Error::Usage("no measured nodes".into()));
        }
        Ok(to_estimate(&results, self.config.kernel().truncation))
    }
}
