//! Stability-inducing covariance functions for truncated impulse responses.
//!
//! All three families produce exponentially decaying prior variance along the
//! lag axis, which is what keeps sampled impulse responses stable. Lags `t, s`
//! are 1-based, matching the regression layout in [`crate::dataset`].

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Values closer than this to a domain boundary are rejected.
pub const BOUNDARY_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    /// Tuned/correlated.
    Tc,
    /// Diagonal/correlated.
    Dc,
    /// Second-order stable spline.
    Ss,
}

impl KernelFamily {
    pub fn beta_dim(self) -> usize {
        match self {
            KernelFamily::Dc => 2,
            KernelFamily::Tc | KernelFamily::Ss => 1,
        }
    }

    /// Open interval `(lower, upper)` for each β component.
    pub fn beta_bounds(self) -> &'static [(f64, f64)] {
        match self {
            KernelFamily::Dc => &[(0.0, 1.0), (-1.0, 1.0)],
            KernelFamily::Tc | KernelFamily::Ss => &[(0.0, 1.0)],
        }
    }

    /// Midpoint of the β domain.
    pub fn beta_midpoint(self) -> Beta {
        match self {
            KernelFamily::Dc => Beta::Pair(0.5, 0.0),
            KernelFamily::Tc | KernelFamily::Ss => Beta::Scalar(0.5),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Tc => "tc",
            KernelFamily::Dc => "dc",
            KernelFamily::Ss => "ss",
        }
    }
}

impl std::str::FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tc" => Ok(KernelFamily::Tc),
            "dc" => Ok(KernelFamily::Dc),
            "ss" => Ok(KernelFamily::Ss),
            other => Err(Error::Usage(format!("unknown kernel family '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub family: KernelFamily,
    /// Truncation length of every impulse response, in samples.
    pub truncation: usize,
}

impl KernelConfig {
    pub fn new(family: KernelFamily, truncation: usize) -> Result<Self> {
        if truncation < 2 {
            return Err(Error::Usage(format!(
                "truncation length must be at least 2, got {truncation}"
            )));
        }
        Ok(KernelConfig { family, truncation })
    }
}

/// Decay hyperparameter of one impulse-response group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Beta {
    Scalar(f64),
    Pair(f64, f64),
}

impl Beta {
    pub fn components(&self) -> Vec<f64> {
        match *self {
            Beta::Scalar(b) => vec![b],
            Beta::Pair(a, b) => vec![a, b],
        }
    }

    pub fn from_components(c: &[f64]) -> Result<Self> {
        match c {
            [b] => Ok(Beta::Scalar(*b)),
            [a, b] => Ok(Beta::Pair(*a, *b)),
            _ => Err(Error::Usage(format!(
                "beta must have 1 or 2 components, got {}",
                c.len()
            ))),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Beta::Scalar(_) => 1,
            Beta::Pair(..) => 2,
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Whether every component lies strictly inside the family's domain.
    pub fn in_domain(&self, family: KernelFamily) -> bool {
        let bounds = family.beta_bounds();
        let comps = self.components();
        comps.len() == bounds.len()
            && comps.iter().zip(bounds).all(|(&v, &(lo, hi))| {
                v.is_finite() && v > lo + BOUNDARY_MARGIN && v < hi - BOUNDARY_MARGIN
            })
    }

    pub fn check(&self, family: KernelFamily) -> Result<()> {
        if self.in_domain(family) {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "beta {:?} outside the {} domain",
                self.components(),
                family.name()
            )))
        }
    }
}

/// Kernel formula without any domain check.
pub fn kernel_value_unchecked(family: KernelFamily, t: usize, s: usize, beta: Beta) -> f64 {
    let (t, s) = (t as f64, s as f64);
    let mx = t.max(s);
    match (family, beta) {
        (KernelFamily::Tc, Beta::Scalar(b)) => b.powf(mx),
        (KernelFamily::Ss, Beta::Scalar(b)) => {
            b.powf(t + s + mx) / 2.0 - b.powf(3.0 * mx) / 6.0
        }
        (KernelFamily::Dc, Beta::Pair(b1, b2)) => {
            b1.powf((t + s) / 2.0) * b2.powi((t - s).abs() as i32)
        }
        _ => f64::NAN,
    }
}

/// Evaluate `k(t, s; β)` for 1-based lags.
pub fn eval_kernel(family: KernelFamily, t: usize, s: usize, beta: Beta) -> Result<f64> {
    if t == 0 || s == 0 {
        return Err(Error::Usage("kernel lags are 1-based".into()));
    }
    beta.check(family)?;
    Ok(kernel_value_unchecked(family, t, s, beta))
}

/// The `T × T` matrix `[K]_{ts} = k(t, s; β)`.
pub fn gram_matrix(family: KernelFamily, truncation: usize, beta: Beta) -> Result<DMatrix<f64>> {
    beta.check(family)?;
    let mut k = DMatrix::zeros(truncation, truncation);
    for t in 0..truncation {
        for s in 0..=t {
            let v = kernel_value_unchecked(family, t + 1, s + 1, beta);
            k[(t, s)] = v;
            k[(s, t)] = v;
        }
    }
    Ok(k)
}

/// Lower-triangular `L` with `L Lᵀ = λ K(β)`, or `None` when `λ = 0`.
pub(crate) fn scaled_kernel_factor(
    cfg: &KernelConfig,
    lambda: f64,
    beta: Beta,
) -> Result<Option<DMatrix<f64>>> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::Domain(format!("lambda must be >= 0, got {lambda}")));
    }
    if lambda == 0.0 {
        return Ok(None);
    }
    let k = gram_matrix(cfg.family, cfg.truncation, beta)?;
    let mut l = linalg::cholesky_with_jitter(k, "kernel gram matrix")?;
    l *= lambda.sqrt();
    Ok(Some(l))
}

/// Block-diagonal prior covariance `blkdiag{λ₁K₁, …, λ_MK_M}`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCovariance {
    pub blocks: Vec<DMatrix<f64>>,
    pub scales: Vec<f64>,
}

impl BlockCovariance {
    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|b| b.nrows()).sum()
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut out = DMatrix::zeros(n, n);
        let mut off = 0;
        for (k, &lam) in self.blocks.iter().zip(&self.scales) {
            let d = k.nrows();
            out.view_mut((off, off), (d, d)).copy_from(&(k * lam));
            off += d;
        }
        out
    }
}

pub fn assemble_block_covariance(
    lambda: &[f64],
    blocks: Vec<DMatrix<f64>>,
) -> Result<BlockCovariance> {
    if lambda.len() != blocks.len() {
        return Err(Error::Usage(format!(
            "{} scales for {} kernel blocks",
            lambda.len(),
            blocks.len()
        )));
    }
    if let Some(bad) = lambda.iter().find(|l| !(**l >= 0.0)) {
        return Err(Error::Domain(format!("lambda must be >= 0, got {bad}")));
    }
    if blocks.iter().any(|b| !b.is_square()) {
        return Err(Error::Usage("kernel blocks must be square".into()));
    }
    Ok(BlockCovariance {
        blocks,
        scales: lambda.to_vec(),
    })
}
