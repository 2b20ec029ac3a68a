//! Time-series experiments, topology hypotheses, and the truncated
//! impulse-response regression built from them.
//!
//! Candidate groups are numbered `0..p` for measured nodes followed by
//! `p..p+m` for inputs. The target's own node group is its autoregressive
//! term and is always part of a structure.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest enumerable structure exponent (`p + m − 1`).
pub const MAX_ENUMERATION_BITS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesExperiment {
    pub id: String,
    /// `p` measured node trajectories.
    pub nodes: Vec<Vec<f64>>,
    /// `m` input trajectories.
    pub inputs: Vec<Vec<f64>>,
}

impl TimeSeriesExperiment {
    pub fn new(id: impl Into<String>, nodes: Vec<Vec<f64>>, inputs: Vec<Vec<f64>>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Usage("an experiment needs at least one node series".into()));
        }
        let len = nodes[0].len();
        if nodes.iter().chain(&inputs).any(|s| s.len() != len) {
            return Err(Error::Usage("all series in an experiment must share one length".into()));
        }
        if nodes.iter().chain(&inputs).flatten().any(|v| !v.is_finite()) {
            return Err(Error::Usage("series contain non-finite values".into()));
        }
        Ok(TimeSeriesExperiment {
            id: id.into(),
            nodes,
            inputs,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_inputs(&self) -> usize {
        self.inputs.len()
    }

    /// Series of candidate group `g` (nodes first, then inputs).
    pub fn group_series(&self, g: usize) -> &[f64] {
        let p = self.nodes.len();
        if g < p {
            &self.nodes[g]
        } else {
            &self.inputs[g - p]
        }
    }

    /// Copy with every series shifted to zero mean and unit variance.
    /// Constant series are only centered.
    pub fn standardized(&self) -> Self {
        fn standardize(s: &[f64]) -> Vec<f64> {
            let n = s.len() as f64;
            let mean = s.iter().sum::<f64>() / n;
            let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            s.iter().map(|v| (v - mean) / sd).collect()
        }
        TimeSeriesExperiment {
            id: self.id.clone(),
            nodes: self.nodes.iter().map(|s| standardize(s)).collect(),
            inputs: self.inputs.iter().map(|s| standardize(s)).collect(),
        }
    }

    /// Split each series at `at`, returning `(head, tail)`.
    pub fn split_at(&self, at: usize) -> (Self, Self) {
        let head = TimeSeriesExperiment {
            id: format!("{}-train", self.id),
            nodes: self.nodes.iter().map(|s| s[..at].to_vec()).collect(),
            inputs: self.inputs.iter().map(|s| s[..at].to_vec()).collect(),
        };
        let tail = TimeSeriesExperiment {
            id: format!("{}-valid", self.id),
            nodes: self.nodes.iter().map(|s| s[at..].to_vec()).collect(),
            inputs: self.inputs.iter().map(|s| s[at..].to_vec()).collect(),
        };
        (head, tail)
    }
}

/// Check that a set of experiments shares one node/input universe.
pub fn check_universe(experiments: &[TimeSeriesExperiment]) -> Result<(usize, usize)> {
    let first = experiments
        .first()
        .ok_or_else(|| Error::Usage("no experiments supplied".into()))?;
    let (p, m) = (first.n_nodes(), first.n_inputs());
    if experiments.iter().any(|e| e.n_nodes() != p || e.n_inputs() != m) {
        return Err(Error::Usage(
            "experiments disagree on the number of nodes or inputs".into(),
        ));
    }
    Ok((p, m))
}

/// Parent set of one target node.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModelStructure {
    pub target: usize,
    pub parents: Vec<bool>,
}

impl ModelStructure {
    pub fn new(target: usize, parents: Vec<bool>) -> Result<Self> {
        let s = ModelStructure { target, parents };
        s.validate()?;
        Ok(s)
    }

    /// Self-loop only.
    pub fn self_only(target: usize, n_candidates: usize) -> Result<Self> {
        let mut parents = vec![false; n_candidates];
        if target < n_candidates {
            parents[target] = true;
        }
        ModelStructure::new(target, parents)
    }

    /// Every candidate group present.
    pub fn full(target: usize, n_candidates: usize) -> Result<Self> {
        ModelStructure::new(target, vec![true; n_candidates])
    }

    pub fn from_groups(target: usize, n_candidates: usize, groups: &[usize]) -> Result<Self> {
        let mut parents = vec![false; n_candidates];
        for &g in groups {
            if g >= n_candidates {
                return Err(Error::Usage(format!("group {g} out of range")));
            }
            parents[g] = true;
        }
        ModelStructure::new(target, parents)
    }

    pub fn validate(&self) -> Result<()> {
        if self.parents.is_empty() || self.target >= self.parents.len() {
            return Err(Error::Usage(format!(
                "target {} outside {} candidate groups",
                self.target,
                self.parents.len()
            )));
        }
        if !self.parents[self.target] {
            return Err(Error::Usage(
                "the target's own autoregressive group must be present".into(),
            ));
        }
        Ok(())
    }

    pub fn n_candidates(&self) -> usize {
        self.parents.len()
    }

    /// `M_k`, the number of present groups (self included).
    pub fn link_count(&self) -> usize {
        self.parents.iter().filter(|&&b| b).count()
    }

    /// Present groups in ascending order.
    pub fn groups(&self) -> Vec<usize> {
        (0..self.parents.len()).filter(|&g| self.parents[g]).collect()
    }

    /// Absent groups in ascending order.
    pub fn absent_groups(&self) -> Vec<usize> {
        (0..self.parents.len()).filter(|&g| !self.parents[g]).collect()
    }

    /// Present groups other than the target's own.
    pub fn removable_groups(&self) -> Vec<usize> {
        (0..self.parents.len())
            .filter(|&g| self.parents[g] && g != self.target)
            .collect()
    }

    /// Position of `group` among the present groups.
    pub fn position(&self, group: usize) -> Option<usize> {
        if !self.parents.get(group).copied().unwrap_or(false) {
            return None;
        }
        Some(self.parents[..group].iter().filter(|&&b| b).count())
    }

    pub fn with_group(&self, group: usize) -> Self {
        let mut s = self.clone();
        s.parents[group] = true;
        s
    }

    pub fn without_group(&self, group: usize) -> Self {
        debug_assert_ne!(group, self.target);
        let mut s = self.clone();
        s.parents[group] = false;
        s
    }

    /// Compact bit string, e.g. `"101"`.
    pub fn bits(&self) -> String {
        self.parents.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }
}

/// Regression rows of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRegression {
    /// `[y_i(N), …, y_i(T+1)]ᵀ`.
    pub response: DVector<f64>,
    /// Lagged regressors, `T` columns per group.
    pub regressors: DMatrix<f64>,
    /// `ΦᵀΦ`.
    pub gram: DMatrix<f64>,
    /// `ΦᵀY`.
    pub cross: DVector<f64>,
    /// `YᵀY`.
    pub response_sq: f64,
}

impl ExperimentRegression {
    fn new(response: DVector<f64>, regressors: DMatrix<f64>) -> Self {
        let gram = regressors.tr_mul(&regressors);
        let cross = regressors.tr_mul(&response);
        let response_sq = response.norm_squared();
        ExperimentRegression {
            response,
            regressors,
            gram,
            cross,
            response_sq,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.response.len()
    }
}

/// Per-target regression problem over a set of column blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionProblem {
    pub target: usize,
    pub truncation: usize,
    /// Total candidate groups `M₁ = p + m`.
    pub n_candidates: usize,
    /// Candidate group of each `T`-column block, ascending.
    pub groups: Vec<usize>,
    pub experiments: Vec<ExperimentRegression>,
}

impl RegressionProblem {
    pub fn n_blocks(&self) -> usize {
        self.groups.len()
    }

    pub fn n_experiments(&self) -> usize {
        self.experiments.len()
    }

    /// Block positions of the given candidate groups.
    pub fn block_positions(&self, groups: &[usize]) -> Result<Vec<usize>> {
        groups
            .iter()
            .map(|g| {
                self.groups
                    .iter()
                    .position(|x| x == g)
                    .ok_or_else(|| Error::Usage(format!("group {g} not in this problem")))
            })
            .collect()
    }

    /// Sub-problem keeping only the listed candidate groups.
    pub fn restrict(&self, structure: &ModelStructure) -> Result<RegressionProblem> {
        let groups = structure.groups();
        let blocks = self.block_positions(&groups)?;
        let t = self.truncation;
        let experiments = self
            .experiments
            .iter()
            .map(|e| {
                let n = e.n_rows();
                let mut phi = DMatrix::zeros(n, t * blocks.len());
                for (k, &b) in blocks.iter().enumerate() {
                    phi.columns_mut(k * t, t).copy_from(&e.regressors.columns(b * t, t));
                }
                ExperimentRegression::new(e.response.clone(), phi)
            })
            .collect();
        Ok(RegressionProblem {
            target: self.target,
            truncation: t,
            n_candidates: self.n_candidates,
            groups,
            experiments,
        })
    }
}

/// Build `Y` and `Φ` for every experiment under `structure`.
pub fn build_regression(
    experiments: &[TimeSeriesExperiment],
    structure: &ModelStructure,
    truncation: usize,
) -> Result<RegressionProblem> {
    let (p, m) = check_universe(experiments)?;
    structure.validate()?;
    if structure.n_candidates() != p + m {
        return Err(Error::Usage(format!(
            "structure has {} candidate groups, data has {}",
            structure.n_candidates(),
            p + m
        )));
    }
    if structure.target >= p {
        return Err(Error::Usage(format!(
            "target {} is not a measured node",
            structure.target
        )));
    }
    if truncation < 2 {
        return Err(Error::Usage("truncation length must be at least 2".into()));
    }
    let groups = structure.groups();
    let t = truncation;
    let mut regs = Vec::with_capacity(experiments.len());
    for (j, exp) in experiments.iter().enumerate() {
        let n = exp.len();
        if n <= t {
            return Err(Error::DataTooShort {
                experiment: j,
                len: n,
                truncation: t,
            });
        }
        let rows = n - t;
        let target = &exp.nodes[structure.target];
        // Row r holds time N − r (1-based), i.e. 0-based index n − 1 − r.
        let response = DVector::from_fn(rows, |r, _| target[n - 1 - r]);
        let mut phi = DMatrix::zeros(rows, t * groups.len());
        for (k, &g) in groups.iter().enumerate() {
            let series = exp.group_series(g);
            for c in 0..t {
                for r in 0..rows {
                    phi[(r, k * t + c)] = series[n - 2 - r - c];
                }
            }
        }
        regs.push(ExperimentRegression::new(response, phi));
    }
    Ok(RegressionProblem {
        target: structure.target,
        truncation: t,
        n_candidates: p + m,
        groups,
        experiments: regs,
    })
}

/// `|M| = 2^(p+m−1)`.
pub fn structure_space_size(p: usize, m: usize) -> u128 {
    1u128 << (p + m - 1)
}

/// All structures for `target`, ordered by the binary counter over the
/// non-self groups (lowest group index is the least significant bit).
pub fn enumerate_structures(p: usize, m: usize, target: usize) -> Result<Vec<ModelStructure>> {
    if p == 0 || target >= p {
        return Err(Error::Usage(format!("target {target} outside {p} nodes")));
    }
    let m1 = p + m;
    let bits = m1 - 1;
    if bits > MAX_ENUMERATION_BITS {
        return Err(Error::SpaceTooLarge { bits });
    }
    let others: Vec<usize> = (0..m1).filter(|&g| g != target).collect();
    let out = (0u64..(1u64 << bits))
        .map(|mask| {
            let mut parents = vec![false; m1];
            parents[target] = true;
            for (b, &g) in others.iter().enumerate() {
                if mask >> b & 1 == 1 {
                    parents[g] = true;
                }
            }
            ModelStructure { target, parents }
        })
        .collect();
    Ok(out)
}
