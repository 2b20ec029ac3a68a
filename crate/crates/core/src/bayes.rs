//! Log-space densities of the hierarchical model: structure prior,
//! Gaussian likelihood, hyperpriors, conditional posteriors, and the
//! marginal likelihood with the impulse responses integrated out.
//!
//! The prior covariance of the present groups is handled through its square
//! root `L` (`L Lᵀ = ΛK`). With `B = ΦL` the marginal covariance is
//! `σI + BBᵀ`, and the impulse responses are `W = L v` with
//! `v | Y ~ N(A⁻¹Bᵀ Y/σ, A⁻¹)`, `A = I + BᵀB/σ`. Groups with `λ = 0`
//! contribute nothing and their responses are identically zero.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::dataset::RegressionProblem;
use crate::error::{Error, Result};
use crate::kernel::{scaled_kernel_factor, Beta, KernelConfig, KernelFamily};
use crate::linalg;

/// Shape of the noise-variance prior.
pub const SIGMA_SHAPE: f64 = 0.001;
/// Scale of the noise-variance prior.
pub const SIGMA_SCALE: f64 = 0.001;
/// Shape of the ARD scale prior.
pub const LAMBDA_SHAPE: f64 = 2.0;
/// Scale of the ARD scale prior.
pub const LAMBDA_SCALE: f64 = 1.0;
/// Shape of the structure-rate prior.
pub const ALPHA_SHAPE: f64 = 0.1;
/// Rate of the structure-rate prior.
pub const ALPHA_RATE: f64 = 1.0;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// ARD scales, one per present group.
    pub lambda: Vec<f64>,
    /// Kernel decay, one per present group.
    pub beta: Vec<Beta>,
    /// Noise variance, one per experiment.
    pub sigma: Vec<f64>,
    /// Structure-prior rate.
    pub alpha: f64,
}

/// Impulse responses of every experiment, `T` coefficients per present group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentResponses {
    pub per_experiment: Vec<Vec<f64>>,
}

impl LatentResponses {
    pub fn zeros(n_experiments: usize, dim: usize) -> Self {
        LatentResponses {
            per_experiment: vec![vec![0.0; dim]; n_experiments],
        }
    }

    /// Coefficients of group position `k` in experiment `j`.
    pub fn group(&self, j: usize, k: usize, truncation: usize) -> &[f64] {
        &self.per_experiment[j][k * truncation..(k + 1) * truncation]
    }
}

/// Inverse-gamma distribution with density `∝ x^{−a−1} e^{−b/x}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverseGamma {
    pub shape: f64,
    pub scale: f64,
}

impl InverseGamma {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        if !(shape > 0.0 && scale > 0.0) {
            return Err(Error::Domain(format!(
                "inverse gamma needs positive parameters, got ({shape}, {scale})"
            )));
        }
        Ok(InverseGamma { shape, scale })
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if !(x > 0.0) {
            return f64::NEG_INFINITY;
        }
        self.shape * self.scale.ln() - ln_gamma(self.shape)
            - (self.shape + 1.0) * x.ln()
            - self.scale / x
    }

    /// Mean `b / (a − 1)`; infinite for `a ≤ 1`.
    pub fn mean(&self) -> f64 {
        if self.shape > 1.0 {
            self.scale / (self.shape - 1.0)
        } else {
            f64::INFINITY
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let g = Gamma::new(self.shape, 1.0 / self.scale).expect("validated parameters");
        1.0 / g.sample(rng)
    }
}

fn log_sum_exp(terms: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = terms.collect();
    let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        return mx;
    }
    mx + v.iter().map(|t| (t - mx).exp()).sum::<f64>().ln()
}

fn ln_choose(n: usize, k: usize) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// `log Z(α)` with `Z(α) = Σ_c C(M₁−1, c) α^{c+1} / (c+1)!`.
pub fn log_structure_partition(alpha: f64, n_candidates: usize) -> Result<f64> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Domain(format!("alpha must be > 0, got {alpha}")));
    }
    if n_candidates == 0 {
        return Err(Error::Usage("no candidate groups".into()));
    }
    let la = alpha.ln();
    Ok(log_sum_exp((0..n_candidates).map(|c| {
        ln_choose(n_candidates - 1, c) + (c as f64 + 1.0) * la - ln_gamma(c as f64 + 2.0)
    })))
}

/// `log p(M_k | α)` for a structure with `link_count` present groups.
pub fn log_structure_prior(link_count: usize, alpha: f64, p: usize, m: usize) -> Result<f64> {
    let m1 = p + m;
    if link_count == 0 || link_count > m1 {
        return Err(Error::Usage(format!(
            "link count {link_count} outside 1..={m1}"
        )));
    }
    let lz = log_structure_partition(alpha, m1)?;
    Ok(link_count as f64 * alpha.ln() - ln_gamma(link_count as f64 + 1.0) - lz)
}

/// Unnormalized `log p(α | M_k)`.
pub fn log_alpha_conditional(alpha: f64, link_count: usize, p: usize, m: usize) -> Result<f64> {
    let lz = log_structure_partition(alpha, p + m)?;
    Ok((ALPHA_SHAPE - 1.0 + link_count as f64) * alpha.ln() - ALPHA_RATE * alpha - lz)
}

/// `Σ_i log IG(λ_i; 2, 1)`; `−∞` outside the domain.
pub fn log_lambda_prior(lambda: &[f64]) -> f64 {
    let ig = InverseGamma {
        shape: LAMBDA_SHAPE,
        scale: LAMBDA_SCALE,
    };
    lambda.iter().map(|&l| ig.ln_pdf(l)).sum()
}

/// Uniform β prior: `log 1` (TC/SS) or `log ½` (DC) per group; `−∞` outside.
pub fn log_beta_prior(beta: &[Beta], family: KernelFamily) -> f64 {
    let per = match family {
        KernelFamily::Dc => -std::f64::consts::LN_2,
        KernelFamily::Tc | KernelFamily::Ss => 0.0,
    };
    beta.iter()
        .map(|b| if b.in_domain(family) { per } else { f64::NEG_INFINITY })
        .sum()
}

fn check_sigma(sigma: &[f64], n_experiments: usize) -> Result<()> {
    if sigma.len() != n_experiments {
        return Err(Error::Usage(format!(
            "{} noise variances for {} experiments",
            sigma.len(),
            n_experiments
        )));
    }
    if let Some(s) = sigma.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
        return Err(Error::Domain(format!("noise variance must be > 0, got {s}")));
    }
    Ok(())
}

/// `Φ_S W` for the given block positions and block-ordered `w`.
pub(crate) fn predict_blocks(
    problem: &RegressionProblem,
    j: usize,
    blocks: &[usize],
    w: &[f64],
) -> DVector<f64> {
    let t = problem.truncation;
    let e = &problem.experiments[j];
    let mut out = DVector::zeros(e.n_rows());
    for (k, &b) in blocks.iter().enumerate() {
        let wk = &w[k * t..(k + 1) * t];
        if wk.iter().all(|&v| v == 0.0) {
            continue;
        }
        let wk = DVector::from_column_slice(wk);
        out.gemv(1.0, &e.regressors.columns(b * t, t), &wk, 1.0);
    }
    out
}

pub(crate) fn residual_sq_blocks(
    problem: &RegressionProblem,
    j: usize,
    blocks: &[usize],
    w: &[f64],
) -> f64 {
    let fit = predict_blocks(problem, j, blocks, w);
    (&problem.experiments[j].response - fit).norm_squared()
}

fn all_blocks(problem: &RegressionProblem) -> Vec<usize> {
    (0..problem.n_blocks()).collect()
}

/// Gaussian log-likelihood `Σ_j log N(Y_j; Φ_j W_j, σ_j I)`.
pub fn log_likelihood(problem: &RegressionProblem, w: &LatentResponses, sigma: &[f64]) -> Result<f64> {
    check_sigma(sigma, problem.n_experiments())?;
    let blocks = all_blocks(problem);
    let dim = problem.truncation * blocks.len();
    if w.per_experiment.len() != problem.n_experiments()
        || w.per_experiment.iter().any(|x| x.len() != dim)
    {
        return Err(Error::Usage("latent responses do not match the problem shape".into()));
    }
    Ok(problem
        .experiments
        .iter()
        .enumerate()
        .map(|(j, e)| {
            let n = e.n_rows() as f64;
            let rss = residual_sq_blocks(problem, j, &blocks, &w.per_experiment[j]);
            -0.5 * n * (LN_2PI + sigma[j].ln()) - rss / (2.0 * sigma[j])
        })
        .sum())
}

/// Which linear system evaluates the marginal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarginalPath {
    /// Weight-space system when `T·M_k < N_j − T`, data-space otherwise.
    Auto,
    /// `(T·M_k)`-sized system via the determinant and inversion lemmas.
    Weights,
    /// `(N_j − T)`-sized system `σI + ΦΛKΦᵀ`.
    Data,
}

#[derive(Debug, Clone)]
enum Factor {
    Weights {
        /// Lower Cholesky factor of `A = I + BᵀB/σ`.
        chol: DMatrix<f64>,
        /// `A⁻¹ BᵀY / σ`.
        mean_v: DVector<f64>,
    },
    Data {
        /// Lower Cholesky factor of `C = σI + BBᵀ`.
        chol: DMatrix<f64>,
        /// `C⁻¹ Y`.
        c_inv_y: DVector<f64>,
    },
}

#[derive(Debug, Clone)]
struct ExperimentFactor {
    b: DMatrix<f64>,
    factor: Factor,
    log_marginal: f64,
}

/// Factorized conditional posterior `p(W | β, λ, σ, Y)` together with the
/// marginal likelihood it came from.
#[derive(Debug, Clone)]
pub struct ConditionalPosterior {
    truncation: usize,
    /// Block positions inside the problem.
    blocks: Vec<usize>,
    /// Prior square root per block; `None` for `λ = 0`.
    roots: Vec<Option<DMatrix<f64>>>,
    sigma: Vec<f64>,
    experiments: Vec<ExperimentFactor>,
}

impl ConditionalPosterior {
    /// `Σ_j log p(Y_j | β, λ, σ_j)`.
    pub fn log_marginal(&self) -> f64 {
        self.experiments.iter().map(|e| e.log_marginal).sum()
    }

    pub fn experiment_log_marginal(&self, j: usize) -> f64 {
        self.experiments[j].log_marginal
    }

    pub fn dim(&self) -> usize {
        self.truncation * self.blocks.len()
    }

    fn active_dim(&self) -> usize {
        self.truncation * self.roots.iter().filter(|r| r.is_some()).count()
    }

    /// Map a vector in the active whitened space to the full block layout.
    fn apply_root(&self, v: &DVector<f64>) -> DVector<f64> {
        let t = self.truncation;
        let mut out = DVector::zeros(self.dim());
        let mut off = 0;
        for (k, root) in self.roots.iter().enumerate() {
            if let Some(l) = root {
                let seg = l * v.rows(off, t);
                out.rows_mut(k * t, t).copy_from(&seg);
                off += t;
            }
        }
        out
    }

    fn root_dense(&self) -> DMatrix<f64> {
        let t = self.truncation;
        let mut out = DMatrix::zeros(self.dim(), self.active_dim());
        let mut off = 0;
        for (k, root) in self.roots.iter().enumerate() {
            if let Some(l) = root {
                out.view_mut((k * t, off), (t, t)).copy_from(l);
                off += t;
            }
        }
        out
    }

    fn mean_v(&self, j: usize) -> DVector<f64> {
        let e = &self.experiments[j];
        match &e.factor {
            Factor::Weights { mean_v, .. } => mean_v.clone(),
            Factor::Data { c_inv_y, .. } => e.b.tr_mul(c_inv_y),
        }
    }

    /// Posterior mean `μ_j`, zero on `λ = 0` groups.
    pub fn mean(&self, j: usize) -> DVector<f64> {
        self.apply_root(&self.mean_v(j))
    }

    /// Posterior covariance `Σ_j`.
    pub fn covariance(&self, j: usize) -> DMatrix<f64> {
        let e = &self.experiments[j];
        let d = self.active_dim();
        let cov_v = match &e.factor {
            Factor::Weights { chol, .. } => {
                let linv = linalg::solve_lower_mat(chol, &DMatrix::identity(d, d));
                linv.tr_mul(&linv)
            }
            Factor::Data { chol, .. } => {
                let z = linalg::solve_lower_mat(chol, &e.b);
                DMatrix::identity(d, d) - z.tr_mul(&z)
            }
        };
        let l = self.root_dense();
        &l * cov_v * l.transpose()
    }

    /// Exact draw `W_j ~ N(μ_j, Σ_j)`.
    pub fn sample<R: Rng + ?Sized>(&self, j: usize, rng: &mut R) -> DVector<f64> {
        let e = &self.experiments[j];
        let d = self.active_dim();
        let xi = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let v = match &e.factor {
            Factor::Weights { chol, mean_v } => mean_v + linalg::solve_lower_transpose(chol, &xi),
            Factor::Data { chol, c_inv_y } => {
                // v = ξ + Bᵀ C⁻¹ (Y − Bξ − ζ), ζ ~ N(0, σI), written against C⁻¹Y.
                let n = e.b.nrows();
                let sd = self.sigma[j].sqrt();
                let zeta = DVector::from_fn(n, |_, _| sd * rng.sample::<f64, _>(StandardNormal));
                let pert = &e.b * &xi + zeta;
                let c_inv_pert = linalg::solve_lower_transpose(chol, &linalg::solve_lower(chol, &pert));
                &xi + e.b.tr_mul(&(c_inv_y - c_inv_pert))
            }
        };
        self.apply_root(&v)
    }
}

fn check_hyper_shapes(
    problem: &RegressionProblem,
    blocks: &[usize],
    lambda: &[f64],
    beta: &[Beta],
    sigma: &[f64],
    cfg: &KernelConfig,
) -> Result<()> {
    if lambda.len() != blocks.len() || beta.len() != blocks.len() {
        return Err(Error::Usage(format!(
            "{} lambdas and {} betas for {} groups",
            lambda.len(),
            beta.len(),
            blocks.len()
        )));
    }
    if cfg.truncation != problem.truncation {
        return Err(Error::Usage(format!(
            "kernel truncation {} differs from problem truncation {}",
            cfg.truncation, problem.truncation
        )));
    }
    if blocks.iter().any(|&b| b >= problem.n_blocks()) {
        return Err(Error::Usage("block position out of range".into()));
    }
    check_sigma(sigma, problem.n_experiments())
}

/// Factorize the conditional posterior of the listed blocks.
pub(crate) fn factorize_blocks(
    problem: &RegressionProblem,
    blocks: &[usize],
    lambda: &[f64],
    beta: &[Beta],
    sigma: &[f64],
    cfg: &KernelConfig,
    path: MarginalPath,
) -> Result<ConditionalPosterior> {
    check_hyper_shapes(problem, blocks, lambda, beta, sigma, cfg)?;
    let t = problem.truncation;
    let roots = lambda
        .iter()
        .zip(beta)
        .map(|(&l, &b)| scaled_kernel_factor(cfg, l, b))
        .collect::<Result<Vec<_>>>()?;
    let active: Vec<(usize, &DMatrix<f64>)> = blocks
        .iter()
        .zip(&roots)
        .filter_map(|(&b, r)| r.as_ref().map(|l| (b, l)))
        .collect();
    let d = t * active.len();

    let mut experiments = Vec::with_capacity(problem.n_experiments());
    for (j, e) in problem.experiments.iter().enumerate() {
        let n = e.n_rows();
        let s = sigma[j];
        let mut b = DMatrix::zeros(n, d);
        for (k, (blk, l)) in active.iter().enumerate() {
            let prod = e.regressors.columns(blk * t, t) * *l;
            b.columns_mut(k * t, t).copy_from(&prod);
        }
        let use_weights = match path {
            MarginalPath::Auto => d < n,
            MarginalPath::Weights => true,
            MarginalPath::Data => false,
        };
        let (factor, log_det, quad) = if use_weights {
            // A = I + Lᵀ G L / σ assembled blockwise from the cached Gram.
            let mut a = DMatrix::zeros(d, d);
            for (p, (bp, lp)) in active.iter().enumerate() {
                for (q, (bq, lq)) in active.iter().enumerate().take(p + 1) {
                    let g = e.gram.view((bp * t, bq * t), (t, t));
                    let blk = lp.transpose() * g * *lq;
                    a.view_mut((p * t, q * t), (t, t)).copy_from(&blk);
                    if p != q {
                        a.view_mut((q * t, p * t), (t, t)).copy_from(&blk.transpose());
                    }
                }
            }
            a /= s;
            for i in 0..d {
                a[(i, i)] += 1.0;
            }
            let chol = linalg::cholesky_with_jitter(a, "weight-space marginal system")?;
            let mut rhs = DVector::zeros(d);
            for (k, (blk, l)) in active.iter().enumerate() {
                let c = e.cross.rows(blk * t, t);
                rhs.rows_mut(k * t, t).copy_from(&(l.tr_mul(&c) / s));
            }
            let mean_v = linalg::solve_lower_transpose(&chol, &linalg::solve_lower(&chol, &rhs));
            let resid = &e.response - &b * &mean_v;
            let quad = resid.norm_squared() / s + mean_v.norm_squared();
            let log_det = n as f64 * s.ln() + linalg::chol_log_det(&chol);
            (Factor::Weights { chol, mean_v }, log_det, quad)
        } else {
            let mut c = &b * b.transpose();
            for i in 0..n {
                c[(i, i)] += s;
            }
            let chol = linalg::cholesky_with_jitter(c, "data-space marginal system")?;
            let z = linalg::solve_lower(&chol, &e.response);
            let quad = z.norm_squared();
            let c_inv_y = linalg::solve_lower_transpose(&chol, &z);
            let log_det = linalg::chol_log_det(&chol);
            (Factor::Data { chol, c_inv_y }, log_det, quad)
        };
        let log_marginal = -0.5 * (n as f64 * LN_2PI + log_det + quad);
        if !log_marginal.is_finite() {
            return Err(Error::numerical("non-finite marginal likelihood"));
        }
        experiments.push(ExperimentFactor {
            b,
            factor,
            log_marginal,
        });
    }
    Ok(ConditionalPosterior {
        truncation: t,
        blocks: blocks.to_vec(),
        roots,
        sigma: sigma.to_vec(),
        experiments,
    })
}

/// `Σ_j log N(Y_j; 0, σ_j I + Φ_j ΛK Φ_jᵀ)` over every block of `problem`.
pub fn log_marginal(
    problem: &RegressionProblem,
    lambda: &[f64],
    beta: &[Beta],
    sigma: &[f64],
    cfg: &KernelConfig,
) -> Result<f64> {
    log_marginal_with_path(problem, lambda, beta, sigma, cfg, MarginalPath::Auto)
}

pub fn log_marginal_with_path(
    problem: &RegressionProblem,
    lambda: &[f64],
    beta: &[Beta],
    sigma: &[f64],
    cfg: &KernelConfig,
    path: MarginalPath,
) -> Result<f64> {
    factorize_blocks(problem, &all_blocks(problem), lambda, beta, sigma, cfg, path)
        .map(|f| f.log_marginal())
}

/// Per-experiment Gaussian `p(W_j | β, λ, σ_j, Y_j)` in factorized form.
pub fn conditional_w_posterior(
    problem: &RegressionProblem,
    lambda: &[f64],
    beta: &[Beta],
    sigma: &[f64],
    cfg: &KernelConfig,
) -> Result<ConditionalPosterior> {
    factorize_blocks(problem, &all_blocks(problem), lambda, beta, sigma, cfg, MarginalPath::Auto)
}

/// `IG(a₀ + (N_j−T)/2, b₀ + ‖Y_j − Φ_j W_j‖²/2)` per experiment.
pub fn conditional_sigma_posterior(
    problem: &RegressionProblem,
    w: &LatentResponses,
) -> Result<Vec<InverseGamma>> {
    let blocks = all_blocks(problem);
    sigma_posterior_blocks(problem, &blocks, w)
}

pub(crate) fn sigma_posterior_blocks(
    problem: &RegressionProblem,
    blocks: &[usize],
    w: &LatentResponses,
) -> Result<Vec<InverseGamma>> {
    let dim = problem.truncation * blocks.len();
    if w.per_experiment.len() != problem.n_experiments()
        || w.per_experiment.iter().any(|x| x.len() != dim)
    {
        return Err(Error::Usage("latent responses do not match the problem shape".into()));
    }
    problem
        .experiments
        .iter()
        .enumerate()
        .map(|(j, e)| {
            let rss = residual_sq_blocks(problem, j, blocks, &w.per_experiment[j]);
            InverseGamma::new(
                SIGMA_SHAPE + e.n_rows() as f64 / 2.0,
                SIGMA_SCALE + rss / 2.0,
            )
        })
        .collect()
}

/// Log Gaussian density `log N(x; 0, S)` for a dense SPD `S`.
pub fn log_gaussian_zero_mean(x: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let l = linalg::cholesky_with_jitter(cov.clone(), "gaussian density")?;
    let z = linalg::solve_lower(&l, x);
    Ok(-0.5 * (x.len() as f64 * LN_2PI + linalg::chol_log_det(&l) + z.norm_squared()))
}
