//! Samplers for one target node: the fixed-topology Metropolis-within-Gibbs
//! chain and the trans-dimensional chain with birth, death and update moves.
//!
//! Each iteration runs one structural or hyperparameter move with `W`
//! marginalized out, then redraws `W` and `σ` from their exact conditionals
//! and finally moves `α`.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bayes::{
    factorize_blocks, log_beta_prior, log_lambda_prior, log_structure_partition,
    sigma_posterior_blocks, ConditionalPosterior, HyperParams, InverseGamma, LatentResponses,
    MarginalPath, LAMBDA_SCALE, LAMBDA_SHAPE,
};
use crate::dataset::{ModelStructure, RegressionProblem};
use crate::error::{Error, Result};
use crate::kernel::{Beta, KernelConfig};
use crate::linalg;
use crate::proposals::{self, ProposalScales, ScaleAdapter};

/// Move probabilities for a given link count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoveProbabilities {
    pub birth: f64,
    pub death: f64,
    pub update: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MoveSchedule {
    pub n_candidates: usize,
}

impl MoveSchedule {
    pub fn new(n_candidates: usize) -> Self {
        MoveSchedule { n_candidates }
    }

    pub fn probabilities(&self, link_count: usize) -> MoveProbabilities {
        let m1 = self.n_candidates;
        let (birth, death) = if m1 <= 1 {
            (0.0, 0.0)
        } else if link_count >= m1 {
            (0.0, 0.6)
        } else if link_count <= 1 {
            (0.6, 0.0)
        } else {
            (0.3, 0.3)
        };
        MoveProbabilities {
            birth,
            death,
            update: 1.0 - birth - death,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitialStructure {
    Full,
    SelfOnly,
    Given(ModelStructure),
}

/// Hyperparameters held fixed for the whole run. `lambda` and `beta` are
/// indexed by candidate group; only the present groups are ever read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenHyper {
    pub lambda: Vec<f64>,
    pub beta: Vec<Beta>,
    pub sigma: Vec<f64>,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum HyperMode {
    Sampled,
    /// Skip the update, `σ` and `α` steps; births reuse the fixed values.
    Frozen(FrozenHyper),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub kernel: KernelConfig,
    pub iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub scales: ProposalScales,
    pub initial: InitialStructure,
    pub hyper: HyperMode,
    /// Never propose birth or death.
    pub fixed_topology: bool,
}

impl SamplerConfig {
    /// Half the iterations as burn-in, no thinning, full initial structure.
    pub fn new(kernel: KernelConfig, iterations: usize) -> Self {
        SamplerConfig {
            kernel,
            iterations,
            burn_in: iterations / 2,
            thinning: 1,
            scales: ProposalScales::default(),
            initial: InitialStructure::Full,
            hyper: HyperMode::Sampled,
            fixed_topology: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.thinning == 0 {
            return Err(Error::Usage("thinning must be at least 1".into()));
        }
        if self.burn_in > self.iterations {
            return Err(Error::Usage(format!(
                "burn-in {} exceeds {} iterations",
                self.burn_in, self.iterations
            )));
        }
        if !(self.scales.lambda_sd > 0.0) || !(self.scales.beta_window > 0.0) {
            return Err(Error::Usage("proposal scales must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub structure: ModelStructure,
    pub hyper: HyperParams,
    /// Responses of the present groups, in ascending group order.
    pub w: LatentResponses,
    pub iteration: usize,
}

impl ChainState {
    fn check(&self, truncation: usize) -> Result<()> {
        self.structure.validate()?;
        let mk = self.structure.link_count();
        if self.hyper.lambda.len() != mk || self.hyper.beta.len() != mk {
            return Err(Error::Usage("hyperparameter count differs from link count".into()));
        }
        if self.w.per_experiment.iter().any(|w| w.len() != mk * truncation) {
            return Err(Error::Usage("response length differs from link count".into()));
        }
        Ok(())
    }

    fn snapshot(&self) -> String {
        format!(
            "structure {} lambda {:?} beta {:?} sigma {:?} alpha {}",
            self.structure.bits(),
            self.hyper.lambda,
            self.hyper.beta,
            self.hyper.sigma,
            self.hyper.alpha
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveStats {
    pub attempts: usize,
    pub accepts: usize,
    /// Proposals rejected because their factorization failed.
    pub numerical_failures: usize,
}

impl MoveStats {
    pub fn rejects(&self) -> usize {
        self.attempts - self.accepts
    }

    pub fn rate(&self) -> Option<f64> {
        (self.attempts > 0).then(|| self.accepts as f64 / self.attempts as f64)
    }

    fn record(&mut self, accepted: bool) {
        self.attempts += 1;
        self.accepts += usize::from(accepted);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveCounts {
    pub update: MoveStats,
    pub birth: MoveStats,
    pub death: MoveStats,
    pub alpha: MoveStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub iteration: usize,
    pub structure: ModelStructure,
    pub w: LatentResponses,
    pub sigma: Vec<f64>,
    pub alpha: f64,
    pub lambda: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainTrace {
    pub target: usize,
    pub n_candidates: usize,
    pub truncation: usize,
    pub samples: Vec<TraceSample>,
    pub moves: MoveCounts,
    /// Scales after each adaptation step.
    pub scales_history: Vec<(f64, f64)>,
    pub final_scales: ProposalScales,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MoveKind {
    Birth,
    Death,
    Update,
}

/// A factorized state: hyperparameters plus the conditional posterior of `W`.
struct Evaluated {
    structure: ModelStructure,
    lambda: Vec<f64>,
    beta: Vec<Beta>,
    posterior: ConditionalPosterior,
}

/// Move kernels bound to one regression problem.
pub struct Sampler<'a> {
    problem: &'a RegressionProblem,
    kernel: KernelConfig,
    schedule: MoveSchedule,
    hyper: HyperMode,
}

impl<'a> Sampler<'a> {
    pub fn new(problem: &'a RegressionProblem, kernel: KernelConfig, hyper: HyperMode) -> Result<Self> {
        let m1 = problem.n_candidates;
        if problem.groups != (0..m1).collect::<Vec<_>>() {
            return Err(Error::Usage("sampler needs the regression over every candidate group".into()));
        }
        if kernel.truncation != problem.truncation {
            return Err(Error::Usage("kernel truncation differs from the problem".into()));
        }
        if let HyperMode::Frozen(f) = &hyper {
            if f.lambda.len() != m1 || f.beta.len() != m1 || f.sigma.len() != problem.n_experiments() {
                return Err(Error::Usage("frozen hyperparameters do not match the problem".into()));
            }
        }
        Ok(Sampler {
            problem,
            kernel,
            schedule: MoveSchedule::new(m1),
            hyper,
        })
    }

    pub fn schedule(&self) -> MoveSchedule {
        self.schedule
    }

    fn factorize(
        &self,
        structure: &ModelStructure,
        lambda: &[f64],
        beta: &[Beta],
        sigma: &[f64],
    ) -> Result<ConditionalPosterior> {
        let blocks = structure.groups();
        factorize_blocks(self.problem, &blocks, lambda, beta, sigma, &self.kernel, MarginalPath::Auto)
            .map_err(|e| e.with_structure(&structure.parents))
    }

    fn evaluate_state(&self, state: &ChainState) -> Result<Evaluated> {
        let posterior = self.factorize(&state.structure, &state.hyper.lambda, &state.hyper.beta, &state.hyper.sigma)?;
        Ok(Evaluated {
            structure: state.structure.clone(),
            lambda: state.hyper.lambda.clone(),
            beta: state.hyper.beta.clone(),
            posterior,
        })
    }

    /// Summed log marginal likelihood of `state`.
    pub fn log_marginal(&self, state: &ChainState) -> Result<f64> {
        self.factorize(&state.structure, &state.hyper.lambda, &state.hyper.beta, &state.hyper.sigma)
            .map(|p| p.log_marginal())
    }

    fn structure_term(&self, alpha: f64, from_links: usize) -> f64 {
        // α(M₁ − M_kᵗ) / (M_kᵖ (M_kᵖ − 1)) with M_kᵖ = M_kᵗ + 1
        let m1 = self.schedule.n_candidates as f64;
        let mt = from_links as f64;
        alpha.ln() + (m1 - mt).ln() - (mt + 1.0).ln() - mt.ln()
    }

    /// `log r_B` for adding `group` with the given hyperparameters.
    /// Returns the ratio and the factorized proposal.
    fn birth_ratio(
        &self,
        state: &ChainState,
        current_log_marginal: f64,
        group: usize,
        lambda: f64,
        beta: Beta,
    ) -> Result<(f64, Evaluated)> {
        let mk = state.structure.link_count();
        let structure = state.structure.with_group(group);
        let pos = structure.position(group).expect("group was just added");
        let mut lam = state.hyper.lambda.clone();
        let mut bet = state.hyper.beta.clone();
        lam.insert(pos, lambda);
        bet.insert(pos, beta);
        let posterior = self.factorize(&structure, &lam, &bet, &state.hyper.sigma)?;
        let pf = self.schedule.probabilities(mk);
        let pp = self.schedule.probabilities(mk + 1);
        let log_r = posterior.log_marginal() - current_log_marginal + pp.death.ln() - pf.birth.ln()
            + self.structure_term(state.hyper.alpha, mk);
        Ok((
            log_r,
            Evaluated {
                structure,
                lambda: lam,
                beta: bet,
                posterior,
            },
        ))
    }

    /// `log r_D` for removing `group`.
    fn death_ratio(
        &self,
        state: &ChainState,
        current_log_marginal: f64,
        group: usize,
    ) -> Result<(f64, Evaluated)> {
        let mk = state.structure.link_count();
        let pos = state.structure.position(group).expect("group is present");
        let structure = state.structure.without_group(group);
        let mut lam = state.hyper.lambda.clone();
        let mut bet = state.hyper.beta.clone();
        lam.remove(pos);
        bet.remove(pos);
        let posterior = self.factorize(&structure, &lam, &bet, &state.hyper.sigma)?;
        let pf = self.schedule.probabilities(mk);
        let pp = self.schedule.probabilities(mk - 1);
        let log_r = posterior.log_marginal() - current_log_marginal + pp.birth.ln() - pf.death.ln()
            - self.structure_term(state.hyper.alpha, mk - 1);
        Ok((
            log_r,
            Evaluated {
                structure,
                lambda: lam,
                beta: bet,
                posterior,
            },
        ))
    }

    /// `log r_B` for the transition `state → state + group`.
    pub fn log_birth_ratio(&self, state: &ChainState, group: usize, lambda: f64, beta: Beta) -> Result<f64> {
        self.check_birth(state, group)?;
        let ml = self.log_marginal(state)?;
        self.birth_ratio(state, ml, group, lambda, beta).map(|r| r.0)
    }

    /// `log r_D` for the transition `state → state − group`.
    pub fn log_death_ratio(&self, state: &ChainState, group: usize) -> Result<f64> {
        self.check_death(state, Some(group))?;
        let ml = self.log_marginal(state)?;
        self.death_ratio(state, ml, group).map(|r| r.0)
    }

    fn check_birth(&self, state: &ChainState, group: usize) -> Result<()> {
        if state.structure.link_count() >= self.schedule.n_candidates {
            return Err(Error::Usage("birth proposed at the full structure".into()));
        }
        if state.structure.parents.get(group) != Some(&false) {
            return Err(Error::Usage(format!("group {group} cannot be added")));
        }
        Ok(())
    }

    fn check_death(&self, state: &ChainState, group: Option<usize>) -> Result<()> {
        if state.structure.link_count() <= 1 {
            return Err(Error::Usage("death proposed at the self-only structure".into()));
        }
        if let Some(g) = group {
            if g == state.structure.target || state.structure.parents.get(g) != Some(&true) {
                return Err(Error::Usage(format!("group {g} cannot be removed")));
            }
        }
        Ok(())
    }

    /// `log r_U` for replacing `(λ, β)` with a proposal whose
    /// `log q(reverse) − log q(forward)` is `log_q_ratio`.
    pub fn log_update_ratio(
        &self,
        state: &ChainState,
        lambda: &[f64],
        beta: &[Beta],
        log_q_ratio: f64,
    ) -> Result<f64> {
        let ml = self.log_marginal(state)?;
        self.update_ratio(state, ml, lambda, beta, log_q_ratio).map(|r| r.0)
    }

    fn update_ratio(
        &self,
        state: &ChainState,
        current_log_marginal: f64,
        lambda: &[f64],
        beta: &[Beta],
        log_q_ratio: f64,
    ) -> Result<(f64, Option<Evaluated>)> {
        let family = self.kernel.family;
        let prior_p = log_lambda_prior(lambda) + log_beta_prior(beta, family);
        if prior_p == f64::NEG_INFINITY {
            return Ok((f64::NEG_INFINITY, None));
        }
        let prior_t = log_lambda_prior(&state.hyper.lambda) + log_beta_prior(&state.hyper.beta, family);
        let posterior = self.factorize(&state.structure, lambda, beta, &state.hyper.sigma)?;
        let log_r = posterior.log_marginal() - current_log_marginal + prior_p - prior_t + log_q_ratio;
        Ok((
            log_r,
            Some(Evaluated {
                structure: state.structure.clone(),
                lambda: lambda.to_vec(),
                beta: beta.to_vec(),
                posterior,
            }),
        ))
    }

    fn accept<R: Rng + ?Sized>(rng: &mut R, log_r: f64) -> bool {
        if log_r >= 0.0 {
            return true;
        }
        if log_r.is_nan() || log_r == f64::NEG_INFINITY {
            return false;
        }
        let u: f64 = rng.random();
        u.ln() < log_r
    }

    fn update_move<R: Rng + ?Sized>(
        &self,
        state: &ChainState,
        current: &Evaluated,
        scales: &ProposalScales,
        stats: &mut MoveStats,
        rng: &mut R,
    ) -> Option<Evaluated> {
        let family = self.kernel.family;
        let lam = proposals::propose_lambda(rng, &state.hyper.lambda, scales.lambda_sd);
        let mut log_q = lam.log_ratio();
        let beta: Vec<Beta> = state
            .hyper
            .beta
            .iter()
            .map(|&b| {
                let p = proposals::propose_beta(rng, b, scales.beta_window, family);
                log_q += p.log_ratio();
                p.value
            })
            .collect();
        let ml = current.posterior.log_marginal();
        let result = self.update_ratio(state, ml, &lam.value, &beta, log_q);
        self.resolve(result.map(|(r, e)| (r, e)), stats, rng)
    }

    fn resolve<R: Rng + ?Sized>(
        &self,
        result: Result<(f64, Option<Evaluated>)>,
        stats: &mut MoveStats,
        rng: &mut R,
    ) -> Option<Evaluated> {
        match result {
            Ok((log_r, Some(e))) if Self::accept(rng, log_r) => {
                stats.record(true);
                Some(e)
            }
            Ok(_) => {
                stats.record(false);
                None
            }
            Err(e) if e.is_numerical() => {
                stats.record(false);
                stats.numerical_failures += 1;
                None
            }
            Err(_) => {
                stats.record(false);
                None
            }
        }
    }

    fn birth_move<R: Rng + ?Sized>(
        &self,
        state: &ChainState,
        current: &Evaluated,
        stats: &mut MoveStats,
        rng: &mut R,
    ) -> Result<Option<Evaluated>> {
        let absent = state.structure.absent_groups();
        let group = *absent
            .choose(rng)
            .ok_or_else(|| Error::Usage("birth proposed at the full structure".into()))?;
        let (lambda, beta) = match &self.hyper {
            HyperMode::Frozen(f) => (f.lambda[group], f.beta[group]),
            HyperMode::Sampled => {
                let d = proposals::birth_proposal_draw(rng, self.kernel.family);
                (d.lambda, d.beta)
            }
        };
        let ml = current.posterior.log_marginal();
        let result = self.birth_ratio(state, ml, group, lambda, beta).map(|(r, e)| (r, Some(e)));
        Ok(self.resolve(result, stats, rng))
    }

    fn death_move<R: Rng + ?Sized>(
        &self,
        state: &ChainState,
        current: &Evaluated,
        stats: &mut MoveStats,
        rng: &mut R,
    ) -> Result<Option<Evaluated>> {
        let removable = state.structure.removable_groups();
        let group = *removable
            .choose(rng)
            .ok_or_else(|| Error::Usage("death proposed at the self-only structure".into()))?;
        let ml = current.posterior.log_marginal();
        let result = self.death_ratio(state, ml, group).map(|(r, e)| (r, Some(e)));
        Ok(self.resolve(result, stats, rng))
    }

    /// Log acceptance ratio of the Gamma independence proposal for `α`.
    pub fn log_alpha_ratio(&self, current: f64, proposed: f64) -> Result<f64> {
        let m1 = self.schedule.n_candidates;
        let lt = log_structure_partition(current, m1)?;
        let lp = log_structure_partition(proposed, m1)?;
        Ok((-current + lt) - (-proposed + lp))
    }

    fn alpha_move<R: Rng + ?Sized>(&self, state: &mut ChainState, stats: &mut MoveStats, rng: &mut R) -> Result<()> {
        let mk = state.structure.link_count();
        let prop = proposals::propose_alpha(rng, state.hyper.alpha, mk);
        let log_r = self.log_alpha_ratio(state.hyper.alpha, prop.value)?;
        let acc = Self::accept(rng, log_r);
        stats.record(acc);
        if acc {
            state.hyper.alpha = prop.value;
        }
        Ok(())
    }

    /// Exact draws of `W` from `posterior`, then of `σ` given `W` unless frozen.
    fn gibbs_w_sigma<R: Rng + ?Sized>(
        &self,
        state: &mut ChainState,
        posterior: &ConditionalPosterior,
        rng: &mut R,
    ) -> Result<()> {
        for j in 0..self.problem.n_experiments() {
            state.w.per_experiment[j] = posterior.sample(j, rng).as_slice().to_vec();
        }
        if matches!(self.hyper, HyperMode::Sampled) {
            let blocks = state.structure.groups();
            let post = sigma_posterior_blocks(self.problem, &blocks, &state.w)?;
            for (s, ig) in state.hyper.sigma.iter_mut().zip(post) {
                *s = ig.sample(rng);
            }
        }
        Ok(())
    }

    fn initial_state<R: Rng + ?Sized>(&self, initial: &InitialStructure, rng: &mut R) -> Result<ChainState> {
        let m1 = self.schedule.n_candidates;
        let target = self.problem.target;
        let structure = match initial {
            InitialStructure::Full => ModelStructure::full(target, m1)?,
            InitialStructure::SelfOnly => ModelStructure::self_only(target, m1)?,
            InitialStructure::Given(s) => {
                s.validate()?;
                if s.target != target || s.n_candidates() != m1 {
                    return Err(Error::Usage("initial structure does not match the problem".into()));
                }
                s.clone()
            }
        };
        let groups = structure.groups();
        let hyper = match &self.hyper {
            HyperMode::Frozen(f) => HyperParams {
                lambda: groups.iter().map(|&g| f.lambda[g]).collect(),
                beta: groups.iter().map(|&g| f.beta[g]).collect(),
                sigma: f.sigma.clone(),
                alpha: f.alpha,
            },
            HyperMode::Sampled => {
                let ig = InverseGamma::new(LAMBDA_SHAPE, LAMBDA_SCALE)?;
                HyperParams {
                    lambda: groups.iter().map(|_| ig.sample(rng)).collect(),
                    beta: vec![self.kernel.family.beta_midpoint(); groups.len()],
                    sigma: least_squares_sigma(self.problem, &structure),
                    alpha: 1.0,
                }
            }
        };
        let w = LatentResponses::zeros(self.problem.n_experiments(), groups.len() * self.problem.truncation);
        let state = ChainState {
            structure,
            hyper,
            w,
            iteration: 0,
        };
        state.check(self.problem.truncation)?;
        Ok(state)
    }
}

/// Residual variance of least squares on `structure`, or on the self group
/// alone when there are too few rows.
fn least_squares_sigma(problem: &RegressionProblem, structure: &ModelStructure) -> Vec<f64> {
    let t = problem.truncation;
    problem
        .experiments
        .iter()
        .map(|e| {
            let n = e.n_rows();
            let mut groups = structure.groups();
            if groups.len() * t >= n {
                groups = vec![structure.target];
            }
            let d = groups.len() * t;
            let scale = (e.response_sq / n as f64).max(f64::MIN_POSITIVE);
            let floor = 1e-8 * scale;
            if d >= n {
                return scale;
            }
            let mut g = nalgebra::DMatrix::zeros(d, d);
            let mut c = nalgebra::DVector::zeros(d);
            for (p, &gp) in groups.iter().enumerate() {
                c.rows_mut(p * t, t).copy_from(&e.cross.rows(gp * t, t));
                for (q, &gq) in groups.iter().enumerate() {
                    g.view_mut((p * t, q * t), (t, t))
                        .copy_from(&e.gram.view((gp * t, gq * t), (t, t)));
                }
            }
            let Ok(l) = linalg::cholesky_with_jitter(g, "least squares") else {
                return scale;
            };
            let w = linalg::solve_lower_transpose(&l, &linalg::solve_lower(&l, &c));
            let mut fit = nalgebra::DVector::zeros(n);
            for (k, &gk) in groups.iter().enumerate() {
                fit.gemv(1.0, &e.regressors.columns(gk * t, t), &w.rows(k * t, t), 1.0);
            }
            let rss = (&e.response - fit).norm_squared();
            (rss / (n - d) as f64).max(floor)
        })
        .collect()
}

/// A resumable chain: all mutable sampler state in one serializable value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainCheckpoint<R> {
    pub state: ChainState,
    pub scales: ProposalScales,
    pub adapter: ScaleAdapter,
    pub rng: R,
    pub trace: ChainTrace,
}

pub struct Chain<'a, R> {
    sampler: Sampler<'a>,
    config: SamplerConfig,
    inner: ChainCheckpoint<R>,
}

impl<'a, R: Rng> Chain<'a, R> {
    pub fn new(problem: &'a RegressionProblem, config: SamplerConfig, mut rng: R) -> Result<Self> {
        config.validate()?;
        let sampler = Sampler::new(problem, config.kernel, config.hyper.clone())?;
        let state = sampler.initial_state(&config.initial, &mut rng)?;
        let trace = ChainTrace {
            target: problem.target,
            n_candidates: problem.n_candidates,
            truncation: problem.truncation,
            samples: Vec::with_capacity((config.iterations - config.burn_in) / config.thinning + 1),
            moves: MoveCounts::default(),
            scales_history: Vec::new(),
            final_scales: config.scales,
        };
        let inner = ChainCheckpoint {
            state,
            scales: config.scales,
            adapter: ScaleAdapter::new(),
            rng,
            trace,
        };
        Ok(Chain { sampler, config, inner })
    }

    /// Continue from a checkpoint taken with the same problem and config.
    pub fn resume(problem: &'a RegressionProblem, config: SamplerConfig, checkpoint: ChainCheckpoint<R>) -> Result<Self> {
        config.validate()?;
        let sampler = Sampler::new(problem, config.kernel, config.hyper.clone())?;
        checkpoint.state.check(problem.truncation)?;
        Ok(Chain {
            sampler,
            config,
            inner: checkpoint,
        })
    }

    pub fn iteration(&self) -> usize {
        self.inner.state.iteration
    }

    pub fn is_done(&self) -> bool {
        self.iteration() >= self.config.iterations
    }

    pub fn state(&self) -> &ChainState {
        &self.inner.state
    }

    pub fn checkpoint(&self) -> &ChainCheckpoint<R> {
        &self.inner
    }

    pub fn into_trace(self) -> ChainTrace {
        self.inner.trace
    }

    /// Run one full iteration.
    pub fn step(&mut self) -> Result<()> {
        let it = self.inner.state.iteration;
        self.step_inner().map_err(|source| Error::Chain {
            iteration: it,
            snapshot: self.inner.state.snapshot(),
            source: Box::new(source),
        })
    }

    fn step_inner(&mut self) -> Result<()> {
        let ChainCheckpoint {
            state,
            scales,
            adapter,
            rng,
            trace,
        } = &mut self.inner;
        let sampler = &self.sampler;
        let it = state.iteration;
        if it >= self.config.burn_in {
            adapter.freeze();
        }

        let current = sampler.evaluate_state(state)?;
        let probs = if self.config.fixed_topology {
            MoveProbabilities {
                birth: 0.0,
                death: 0.0,
                update: 1.0,
            }
        } else {
            sampler.schedule.probabilities(state.structure.link_count())
        };
        let u: f64 = rng.random();
        let kind = if u < probs.birth {
            MoveKind::Birth
        } else if u < probs.birth + probs.death {
            MoveKind::Death
        } else {
            MoveKind::Update
        };

        let moved = match kind {
            MoveKind::Birth => sampler.birth_move(state, &current, &mut trace.moves.birth, rng)?,
            MoveKind::Death => sampler.death_move(state, &current, &mut trace.moves.death, rng)?,
            MoveKind::Update => match sampler.hyper {
                HyperMode::Frozen(_) => None,
                HyperMode::Sampled => {
                    let before = trace.moves.update.accepts;
                    let out = sampler.update_move(state, &current, scales, &mut trace.moves.update, rng);
                    let accepted = trace.moves.update.accepts > before;
                    let next = adapter.record(accepted, *scales);
                    if next != *scales {
                        trace.scales_history.push((next.lambda_sd, next.beta_window));
                        *scales = next;
                    }
                    out
                }
            },
        };
        let next = moved.unwrap_or(current);
        if next.structure != state.structure {
            state.w = LatentResponses::zeros(state.w.per_experiment.len(), next.lambda.len() * sampler.problem.truncation);
        }
        state.structure = next.structure;
        state.hyper.lambda = next.lambda;
        state.hyper.beta = next.beta;

        sampler.gibbs_w_sigma(state, &next.posterior, rng)?;
        if matches!(sampler.hyper, HyperMode::Sampled) {
            sampler.alpha_move(state, &mut trace.moves.alpha, rng)?;
        }
        debug_assert!(state.check(sampler.problem.truncation).is_ok());

        if it >= self.config.burn_in && (it - self.config.burn_in) % self.config.thinning == 0 {
            trace.samples.push(TraceSample {
                iteration: it,
                structure: state.structure.clone(),
                w: state.w.clone(),
                sigma: state.hyper.sigma.clone(),
                alpha: state.hyper.alpha,
                lambda: state.hyper.lambda.clone(),
            });
        }
        state.iteration += 1;
        trace.final_scales = *scales;
        Ok(())
    }

    /// Step until `iteration` (capped at the configured length).
    pub fn run_until(&mut self, iteration: usize) -> Result<()> {
        let stop = iteration.min(self.config.iterations);
        while self.iteration() < stop {
            self.step()?;
        }
        Ok(())
    }

    pub fn run(mut self) -> Result<ChainTrace> {
        self.run_until(self.config.iterations)?;
        Ok(self.into_trace())
    }
}

/// Trans-dimensional sampler over structures and hyperparameters.
pub fn run_rjmcmc<R: Rng>(problem: &RegressionProblem, config: &SamplerConfig, rng: &mut R) -> Result<ChainTrace> {
    Chain::new(problem, config.clone(), rng)?.run()
}

/// Hyperparameter sampler with the topology held at `structure`.
pub fn run_fixed_topology<R: Rng>(
    problem: &RegressionProblem,
    structure: &ModelStructure,
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<ChainTrace> {
    let mut cfg = config.clone();
    cfg.initial = InitialStructure::Given(structure.clone());
    cfg.fixed_topology = true;
    Chain::new(problem, cfg, rng)?.run()
}
