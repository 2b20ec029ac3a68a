//! Kernel empirical Bayes baseline: type-II maximum likelihood over
//! `(λ, β, σ)` on the full structure, ARD readout and optional backward
//! selection.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::{factorize_blocks, InverseGamma, MarginalPath, LAMBDA_SCALE, LAMBDA_SHAPE};
use crate::dataset::{ModelStructure, RegressionProblem};
use crate::error::{Error, Result};
use crate::kernel::{gram_matrix, scaled_kernel_factor, Beta, KernelConfig, BOUNDARY_MARGIN};
use crate::linalg;
use crate::proposals::uniform_beta;

const INV_PHI: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KebOptions {
    pub restarts: usize,
    pub max_sweeps: usize,
    /// Relative objective decrease below which a sweep counts as converged.
    pub tolerance: f64,
    /// Search range of `log10 λ`.
    pub log10_lambda_range: (f64, f64),
    pub golden_iterations: usize,
    /// ARD threshold relative to the largest `λ`.
    pub tau_rel: f64,
    pub backward_selection: bool,
    /// Largest relative objective increase accepted by backward selection.
    pub backward_tolerance: f64,
}

impl Default for KebOptions {
    fn default() -> Self {
        KebOptions {
            restarts: 5,
            max_sweeps: 50,
            tolerance: 1e-7,
            log10_lambda_range: (-10.0, 3.0),
            golden_iterations: 40,
            tau_rel: 1e-6,
            backward_selection: false,
            backward_tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KebResult {
    /// Optimized scales per candidate group of the full structure.
    pub lambda: Vec<f64>,
    pub beta: Vec<Beta>,
    pub sigma: Vec<f64>,
    pub objective: f64,
    pub converged: bool,
    /// Objective after each sweep of the winning restart.
    pub history: Vec<f64>,
    /// Groups kept by the ARD readout.
    pub ard_structure: ModelStructure,
    /// Final structure after backward selection (equals the ARD readout
    /// when selection is off).
    pub structure: ModelStructure,
    /// Posterior mean responses of `structure`, per experiment.
    pub w_hat: Vec<Vec<f64>>,
    /// `‖w_g‖ / ‖w‖` per candidate group, from the full-structure means.
    pub confidence: Vec<f64>,
}

/// `Σ_j Yᵀ C_j⁻¹ Y + log|C_j|` with `C_j = σ_j I + Φ_j ΛK Φ_jᵀ`, assembled
/// densely in data space.
pub fn keb_objective(
    problem: &RegressionProblem,
    lambda: &[f64],
    beta: &[Beta],
    sigma: &[f64],
    cfg: &KernelConfig,
) -> Result<f64> {
    let t = problem.truncation;
    if lambda.len() != problem.n_blocks() || beta.len() != problem.n_blocks() || sigma.len() != problem.n_experiments() {
        return Err(Error::Usage("hyperparameter shapes do not match the problem".into()));
    }
    if lambda.iter().any(|l| !(*l >= 0.0)) || sigma.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::Domain("lambda must be >= 0 and sigma > 0".into()));
    }
    let grams = beta
        .iter()
        .map(|&b| gram_matrix(cfg.family, t, b))
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    for (e, &s) in problem.experiments.iter().zip(sigma) {
        let n = e.n_rows();
        let mut c = DMatrix::identity(n, n) * s;
        for (k, (l, g)) in lambda.iter().zip(&grams).enumerate() {
            if *l == 0.0 {
                continue;
            }
            let phi = e.regressors.columns(k * t, t);
            c += (&phi * g * phi.transpose()) * *l;
        }
        let chol = linalg::cholesky_with_jitter(c, "empirical Bayes objective")?;
        let z = linalg::solve_lower(&chol, &e.response);
        total += z.norm_squared() + linalg::chol_log_det(&chol);
    }
    Ok(total)
}

/// `‖w_g‖ / ‖w‖` per group of `w_hat`, concatenated over experiments.
pub fn keb_link_confidence(w_hat: &[Vec<f64>], truncation: usize) -> Vec<f64> {
    let n_groups = w_hat.first().map_or(0, |w| w.len() / truncation);
    let mut sq = vec![0.0; n_groups];
    for w in w_hat {
        for (g, acc) in sq.iter_mut().enumerate() {
            *acc += w[g * truncation..(g + 1) * truncation].iter().map(|v| v * v).sum::<f64>();
        }
    }
    let total: f64 = sq.iter().sum();
    if total == 0.0 {
        return vec![0.0; n_groups];
    }
    sq.iter().map(|s| (s / total).sqrt()).collect()
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> (f64, f64) {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Per-experiment pieces of the objective with one group held out.
struct HeldOut {
    /// `Φ_iᵀ C₋ᵢ⁻¹ Φ_i`.
    m: DMatrix<f64>,
    /// `Φ_iᵀ C₋ᵢ⁻¹ Y`.
    b: DVector<f64>,
    /// `Yᵀ C₋ᵢ⁻¹ Y + log|C₋ᵢ|`.
    base: f64,
}

/// Optimizer state over a set of active blocks of the full problem.
struct Optimizer<'a> {
    problem: &'a RegressionProblem,
    cfg: KernelConfig,
    opts: KebOptions,
    /// Active block positions.
    active: Vec<usize>,
    lambda: Vec<f64>,
    beta: Vec<Beta>,
    sigma: Vec<f64>,
    /// `Φ_g λ_g K_g Φ_gᵀ` per active group and experiment.
    contrib: Vec<Vec<DMatrix<f64>>>,
}

impl<'a> Optimizer<'a> {
    fn new(
        problem: &'a RegressionProblem,
        cfg: KernelConfig,
        opts: KebOptions,
        active: Vec<usize>,
        lambda: Vec<f64>,
        beta: Vec<Beta>,
        sigma: Vec<f64>,
    ) -> Result<Self> {
        let mut o = Optimizer {
            problem,
            cfg,
            opts,
            active,
            lambda,
            beta,
            sigma,
            contrib: Vec::new(),
        };
        o.contrib = (0..o.active.len())
            .map(|k| o.group_contrib(k, o.lambda[k], o.beta[k]))
            .collect::<Result<Vec<_>>>()?;
        Ok(o)
    }

    fn group_contrib(&self, k: usize, lambda: f64, beta: Beta) -> Result<Vec<DMatrix<f64>>> {
        let t = self.problem.truncation;
        let blk = self.active[k];
        let root = scaled_kernel_factor(&self.cfg, lambda, beta)?;
        Ok(self
            .problem
            .experiments
            .iter()
            .map(|e| {
                let n = e.n_rows();
                match &root {
                    None => DMatrix::zeros(n, n),
                    Some(l) => {
                        let b = e.regressors.columns(blk * t, t) * l;
                        &b * b.transpose()
                    }
                }
            })
            .collect())
    }

    fn held_out(&self, k: usize) -> Result<Vec<HeldOut>> {
        let t = self.problem.truncation;
        let blk = self.active[k];
        self.problem
            .experiments
            .iter()
            .enumerate()
            .map(|(j, e)| {
                let n = e.n_rows();
                let mut c = DMatrix::identity(n, n) * self.sigma[j];
                for (q, cg) in self.contrib.iter().enumerate() {
                    if q != k {
                        c += &cg[j];
                    }
                }
                let chol = linalg::cholesky_with_jitter(c, "held-out covariance")?;
                let phi = e.regressors.columns(blk * t, t).into_owned();
                let z = linalg::solve_lower_mat(&chol, &phi);
                let zy = linalg::solve_lower(&chol, &e.response);
                Ok(HeldOut {
                    m: z.tr_mul(&z),
                    b: z.tr_mul(&zy),
                    base: zy.norm_squared() + linalg::chol_log_det(&chol),
                })
            })
            .collect()
    }

    fn group_objective(&self, held: &[HeldOut], lambda: f64, beta: Beta) -> f64 {
        let base: f64 = held.iter().map(|h| h.base).sum();
        let root = match scaled_kernel_factor(&self.cfg, lambda, beta) {
            Ok(Some(l)) => l,
            Ok(None) => return base,
            Err(_) => return f64::INFINITY,
        };
        let t = root.nrows();
        let mut total = base;
        for h in held {
            let mut s = root.transpose() * &h.m * &root;
            for i in 0..t {
                s[(i, i)] += 1.0;
            }
            let Ok(chol) = linalg::cholesky_with_jitter(s, "group objective") else {
                return f64::INFINITY;
            };
            let r = root.tr_mul(&h.b);
            let z = linalg::solve_lower(&chol, &r);
            total += linalg::chol_log_det(&chol) - z.norm_squared();
        }
        total
    }

    fn optimize_group(&mut self, k: usize) -> Result<()> {
        let held = self.held_out(k)?;
        let family = self.cfg.family;
        let mut best = self.group_objective(&held, self.lambda[k], self.beta[k]);
        let beta_k = self.beta[k];
        let (lo, hi) = self.opts.log10_lambda_range;
        let (x, fx) = golden_min(
            |x| self.group_objective(&held, 10f64.powf(x), beta_k),
            lo,
            hi,
            self.opts.golden_iterations,
        );
        if fx < best {
            best = fx;
            self.lambda[k] = 10f64.powf(x);
        }
        let f0 = self.group_objective(&held, 0.0, beta_k);
        if f0 < best {
            best = f0;
            self.lambda[k] = 0.0;
        }
        if self.lambda[k] > 0.0 {
            let lam = self.lambda[k];
            for (c, &(blo, bhi)) in family.beta_bounds().iter().enumerate() {
                let comps = self.beta[k].components();
                let with = |v: f64| {
                    let mut cc = comps.clone();
                    cc[c] = v;
                    Beta::from_components(&cc).expect("component count follows the family")
                };
                let margin = 1e3 * BOUNDARY_MARGIN;
                let (v, fv) = golden_min(
                    |v| self.group_objective(&held, lam, with(v)),
                    blo + margin,
                    bhi - margin,
                    self.opts.golden_iterations,
                );
                if fv < best {
                    best = fv;
                    self.beta[k] = with(v);
                }
            }
        }
        self.contrib[k] = self.group_contrib(k, self.lambda[k], self.beta[k])?;
        Ok(())
    }

    /// Line search of every `σ_j`; returns the full objective.
    fn optimize_sigma(&mut self) -> f64 {
        let mut total = 0.0;
        for (j, e) in self.problem.experiments.iter().enumerate() {
            let n = e.n_rows();
            let mut p = DMatrix::zeros(n, n);
            for cg in &self.contrib {
                p += &cg[j];
            }
            let eig = SymmetricEigen::new(p);
            let proj = eig.eigenvectors.tr_mul(&e.response);
            let d: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(0.0)).collect();
            let obj = |ls: f64| {
                let s = ls.exp();
                d.iter()
                    .zip(proj.iter())
                    .map(|(dk, yk)| (s + dk).ln() + yk * yk / (s + dk))
                    .sum::<f64>()
            };
            let scale = (e.response_sq / n as f64).max(f64::MIN_POSITIVE);
            let cur = self.sigma[j].ln();
            let mut best = obj(cur);
            let (ls, f) = golden_min(obj, (1e-12 * scale).ln(), (10.0 * scale).ln(), 2 * self.opts.golden_iterations);
            if f < best {
                best = f;
                self.sigma[j] = ls.exp();
            }
            total += best;
        }
        total
    }

    fn run(&mut self) -> Result<(f64, bool, Vec<f64>)> {
        let mut obj = self.optimize_sigma();
        let mut history = vec![obj];
        let mut converged = false;
        for _ in 0..self.opts.max_sweeps {
            for k in 0..self.active.len() {
                self.optimize_group(k)?;
            }
            let next = self.optimize_sigma();
            history.push(next);
            let gain = obj - next;
            obj = next;
            if gain <= self.opts.tolerance * obj.abs().max(1.0) {
                converged = true;
                break;
            }
        }
        Ok((obj, converged, history))
    }

    fn means(&self) -> Result<Vec<Vec<f64>>> {
        let post = factorize_blocks(
            self.problem,
            &self.active,
            &self.lambda,
            &self.beta,
            &self.sigma,
            &self.cfg,
            MarginalPath::Auto,
        )?;
        Ok((0..self.problem.n_experiments())
            .map(|j| post.mean(j).as_slice().to_vec())
            .collect())
    }
}

struct Fit {
    lambda: Vec<f64>,
    beta: Vec<Beta>,
    sigma: Vec<f64>,
    objective: f64,
    converged: bool,
    history: Vec<f64>,
}

fn fit_blocks(
    problem: &RegressionProblem,
    cfg: KernelConfig,
    opts: KebOptions,
    active: &[usize],
    lambda: Vec<f64>,
    beta: Vec<Beta>,
    sigma: Vec<f64>,
) -> Result<Fit> {
    let mut o = Optimizer::new(problem, cfg, opts, active.to_vec(), lambda, beta, sigma)?;
    let (objective, converged, history) = o.run()?;
    Ok(Fit {
        lambda: o.lambda,
        beta: o.beta,
        sigma: o.sigma,
        objective,
        converged,
        history,
    })
}

fn structure_means(
    problem: &RegressionProblem,
    cfg: KernelConfig,
    opts: KebOptions,
    active: &[usize],
    fit: &Fit,
) -> Result<Vec<Vec<f64>>> {
    Optimizer::new(problem, cfg, opts, active.to_vec(), fit.lambda.clone(), fit.beta.clone(), fit.sigma.clone())?.means()
}

/// Multi-start coordinate descent on the full structure, then ARD readout
/// and optional backward selection. `problem` must cover every candidate group.
pub fn keb_optimize<R: Rng + ?Sized>(
    problem: &RegressionProblem,
    cfg: &KernelConfig,
    opts: &KebOptions,
    rng: &mut R,
) -> Result<KebResult> {
    let m1 = problem.n_candidates;
    if problem.groups != (0..m1).collect::<Vec<_>>() {
        return Err(Error::Usage("empirical Bayes needs the regression over every candidate group".into()));
    }
    if opts.restarts == 0 {
        return Err(Error::Usage("at least one restart is required".into()));
    }
    let cfg = *cfg;
    let opts = *opts;
    let ig = InverseGamma::new(LAMBDA_SHAPE, LAMBDA_SCALE)?;
    let sigma0: Vec<f64> = problem
        .experiments
        .iter()
        .map(|e| (0.5 * e.response_sq / e.n_rows() as f64).max(1e-12))
        .collect();
    let starts: Vec<(Vec<f64>, Vec<Beta>)> = (0..opts.restarts)
        .map(|_| {
            let l = (0..m1).map(|_| ig.sample(rng)).collect();
            let b = (0..m1).map(|_| uniform_beta(rng, cfg.family)).collect();
            (l, b)
        })
        .collect();
    let all: Vec<usize> = (0..m1).collect();
    let fits: Vec<Result<Fit>> = starts
        .into_par_iter()
        .map(|(l, b)| fit_blocks(problem, cfg, opts, &all, l, b, sigma0.clone()))
        .collect();
    let mut best: Option<Fit> = None;
    let mut last_err = None;
    for f in fits {
        match f {
            Ok(f) => {
                if best.as_ref().is_none_or(|b| f.objective < b.objective) {
                    best = Some(f);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let best = match best {
        Some(b) => b,
        None => return Err(last_err.expect("at least one restart ran")),
    };

    let full_means = structure_means(problem, cfg, opts, &all, &best)?;
    let confidence = keb_link_confidence(&full_means, problem.truncation);

    let target = problem.target;
    let lmax = best.lambda.iter().cloned().fold(0.0, f64::max);
    let tau = opts.tau_rel * lmax;
    let kept: Vec<usize> = (0..m1)
        .filter(|&g| g == target || (best.lambda[g] > 0.0 && best.lambda[g] >= tau))
        .collect();
    let ard_structure = ModelStructure::from_groups(target, m1, &kept)?;

    let mut groups = kept.clone();
    let pick = |f: &Fit, idx: &[usize]| -> (Vec<f64>, Vec<Beta>) {
        (idx.iter().map(|&g| f.lambda[g]).collect(), idx.iter().map(|&g| f.beta[g]).collect())
    };
    let (l, b) = pick(&best, &groups);
    let mut current = fit_blocks(problem, cfg, opts, &groups, l, b, best.sigma.clone())?;
    if opts.backward_selection {
        loop {
            let means = structure_means(problem, cfg, opts, &groups, &current)?;
            let t = problem.truncation;
            let norms: Vec<(usize, f64)> = groups
                .iter()
                .enumerate()
                .filter(|(_, g)| **g != target)
                .map(|(k, &g)| {
                    let sq: f64 = means.iter().map(|w| w[k * t..(k + 1) * t].iter().map(|v| v * v).sum::<f64>()).sum();
                    (g, sq)
                })
                .collect();
            let Some(&(weakest, _)) = norms.iter().min_by(|a, b| a.1.total_cmp(&b.1)) else {
                break;
            };
            let pos = groups.iter().position(|&g| g == weakest).expect("group is active");
            let mut next_groups = groups.clone();
            next_groups.remove(pos);
            let mut l = current.lambda.clone();
            let mut b = current.beta.clone();
            l.remove(pos);
            b.remove(pos);
            let next = fit_blocks(problem, cfg, opts, &next_groups, l, b, current.sigma.clone())?;
            if next.objective <= current.objective + opts.backward_tolerance * current.objective.abs() {
                groups = next_groups;
                current = next;
            } else {
                break;
            }
        }
    }
    let structure = ModelStructure::from_groups(target, m1, &groups)?;
    let w_hat = structure_means(problem, cfg, opts, &groups, &current)?;
    Ok(KebResult {
        lambda: best.lambda,
        beta: best.beta,
        sigma: best.sigma,
        objective: best.objective,
        converged: best.converged,
        history: best.history,
        ard_structure,
        structure,
        w_hat,
        confidence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes::log_marginal;
    use crate::dataset::{build_regression, ExperimentRegression, TimeSeriesExperiment};
    use crate::kernel::KernelFamily;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    const LN_2PI: f64 = 1.837_877_066_409_345_5;

    fn data(n: usize, noise: f64, seed: u64) -> Vec<TimeSeriesExperiment> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = || -> f64 { StandardNormal.sample(&mut rng) };
        let u: Vec<f64> = (0..n).map(|_| g()).collect();
        let y1: Vec<f64> = (0..n).map(|_| g()).collect();
        let y2: Vec<f64> = (0..n).map(|_| g()).collect();
        let mut y0 = vec![0.0; n];
        for t in 2..n {
            y0[t] = 0.5 * y0[t - 1] + 0.9 * y1[t - 1] - 0.4 * y1[t - 2] + 0.7 * u[t - 1] + noise * g();
        }
        vec![TimeSeriesExperiment::new("e", vec![y0, y1, y2], vec![u]).unwrap()]
    }

    fn full(exps: &[TimeSeriesExperiment], t: usize) -> RegressionProblem {
        let m1 = exps[0].n_nodes() + exps[0].n_inputs();
        build_regression(exps, &ModelStructure::full(0, m1).unwrap(), t).unwrap()
    }

    #[test]
    fn objective_zero_lambda() {
        let exps = data(30, 0.2, 1);
        let prob = full(&exps, 3);
        let cfg = KernelConfig::new(KernelFamily::Tc, 3).unwrap();
        let e = &prob.experiments[0];
        let n = e.n_rows() as f64;
        let v = keb_objective(&prob, &[0.0; 4], &[Beta::Scalar(0.5); 4], &[0.7], &cfg).unwrap();
        assert_relative_eq!(v, e.response_sq / 0.7 + n * 0.7f64.ln(), max_relative = 1e-12);
    }

    #[test]
    fn objective_is_scaled_marginal() {
        let exps = data(40, 0.3, 2);
        let prob = full(&exps, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for fam in [KernelFamily::Tc, KernelFamily::Dc, KernelFamily::Ss] {
            let cfg = KernelConfig::new(fam, 4).unwrap();
            for _ in 0..10 {
                let lam: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..3.0)).collect();
                let bet: Vec<Beta> = (0..4).map(|_| uniform_beta(&mut rng, fam)).collect();
                let sig = vec![rng.random_range(0.05..2.0)];
                let obj = keb_objective(&prob, &lam, &bet, &sig, &cfg).unwrap();
                let lm = log_marginal(&prob, &lam, &bet, &sig, &cfg).unwrap();
                let n = prob.experiments[0].n_rows() as f64;
                let other = -2.0 * lm - n * LN_2PI;
                assert!((obj - other).abs() <= 1e-8 * obj.abs().max(1.0), "{obj} {other}");
            }
        }
    }

    #[test]
    fn scalar_closed_form() {
        // one row, one group whose second lag is zero
        let regressors = DMatrix::from_row_slice(1, 2, &[1.5, 0.0]);
        let response = DVector::from_vec(vec![0.8]);
        let e = ExperimentRegression {
            gram: regressors.tr_mul(&regressors),
            cross: regressors.tr_mul(&response),
            response_sq: response.norm_squared(),
            response,
            regressors,
        };
        let prob = RegressionProblem {
            target: 0,
            truncation: 2,
            n_candidates: 1,
            groups: vec![0],
            experiments: vec![e],
        };
        let cfg = KernelConfig::new(KernelFamily::Tc, 2).unwrap();
        let (lam, beta, sigma) = (0.9, 0.6, 0.25);
        let v = keb_objective(&prob, &[lam], &[Beta::Scalar(beta)], &[sigma], &cfg).unwrap();
        let c = sigma + 1.5f64.powi(2) * lam * beta;
        assert_relative_eq!(v, 0.64 / c + c.ln(), max_relative = 1e-12);
    }

    #[test]
    fn link_confidence_examples() {
        assert_eq!(keb_link_confidence(&[vec![0.0, 0.0, 3.0, 4.0]], 2), vec![0.0, 1.0]);
        let c = keb_link_confidence(&[vec![1.0, 0.0, 0.0, 1.0]], 2);
        assert_relative_eq!(c[0], 1.0 / 2f64.sqrt());
        assert_relative_eq!(c[1], 1.0 / 2f64.sqrt());
        assert_eq!(keb_link_confidence(&[vec![0.0; 4]], 2), vec![0.0, 0.0]);
        let c = keb_link_confidence(&[vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]], 2);
        assert_relative_eq!(c.iter().map(|v| v * v).sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn golden_section_finds_minimum() {
        let (x, f) = golden_min(|x| (x - 1.3).powi(2) + 2.0, -5.0, 5.0, 60);
        assert!((x - 1.3).abs() < 1e-6);
        assert_relative_eq!(f, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn sweeps_never_increase_and_match_objective() {
        let exps = data(60, 0.2, 4);
        let prob = full(&exps, 4);
        let cfg = KernelConfig::new(KernelFamily::Tc, 4).unwrap();
        let r = keb_optimize(&prob, &cfg, &KebOptions::default(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        for w in r.history.windows(2) {
            assert!(w[1] <= w[0] + 1e-9 * w[0].abs());
        }
        let direct = keb_objective(&prob, &r.lambda, &r.beta, &r.sigma, &cfg).unwrap();
        assert!((direct - r.objective).abs() < 1e-6 * direct.abs().max(1.0));
        assert!(r.lambda.iter().all(|&l| l >= 0.0));
        assert!(r.sigma.iter().all(|&s| s > 0.0));
        assert!(r.beta.iter().all(|b| b.in_domain(KernelFamily::Tc)));
        // the driving groups survive, the unrelated node is pruned or weak
        assert!(r.ard_structure.parents[1] && r.ard_structure.parents[3]);
        assert!(r.confidence[2] < r.confidence[1]);
    }

    #[test]
    fn deterministic_given_seed() {
        let exps = data(50, 0.3, 6);
        let prob = full(&exps, 3);
        let cfg = KernelConfig::new(KernelFamily::Dc, 3).unwrap();
        let opts = KebOptions {
            backward_selection: true,
            ..KebOptions::default()
        };
        let a = keb_optimize(&prob, &cfg, &opts, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = keb_optimize(&prob, &cfg, &opts, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
        assert!(a.structure.parents[0]);
        for g in a.structure.groups() {
            assert!(a.ard_structure.parents[g]);
        }
    }

    #[test]
    fn single_group_lambda_matches_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut y = vec![0.0; 80];
        for t in 1..80 {
            let z: f64 = StandardNormal.sample(&mut rng);
            y[t] = 0.7 * y[t - 1] + 0.5 * z;
        }
        let exps = vec![TimeSeriesExperiment::new("e", vec![y], vec![]).unwrap()];
        let prob = full(&exps, 3);
        let cfg = KernelConfig::new(KernelFamily::Tc, 3).unwrap();
        let r = keb_optimize(&prob, &cfg, &KebOptions::default(), &mut rng).unwrap();
        let step = 0.01;
        let (mut best_x, mut best_f) = (0.0, f64::INFINITY);
        let mut x = -4.0;
        while x <= 3.0 {
            let f = keb_objective(&prob, &[10f64.powf(x)], &r.beta, &r.sigma, &cfg).unwrap();
            if f < best_f {
                best_f = f;
                best_x = x;
            }
            x += step;
        }
        assert!((r.lambda[0].log10() - best_x).abs() <= step, "{} vs {best_x}", r.lambda[0].log10());
        assert!(r.objective <= best_f + 1e-9 * best_f.abs());
    }

    #[test]
    fn inactive_group_is_pruned() {
        let cfg = KernelConfig::new(KernelFamily::Tc, 3).unwrap();
        let opts = KebOptions {
            restarts: 2,
            ..KebOptions::default()
        };
        let mut pruned = 0;
        for seed in 0..20 {
            let exps = data(80, 0.05, 100 + seed);
            let prob = full(&exps, 3);
            let r = keb_optimize(&prob, &cfg, &opts, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let tau = opts.tau_rel * r.lambda.iter().cloned().fold(0.0, f64::max);
            pruned += usize::from(r.lambda[2] < tau);
        }
        assert!(pruned >= 16, "pruned {pruned} of 20");
    }
}
