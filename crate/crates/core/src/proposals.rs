//! Proposal kernels for the Metropolis–Hastings steps and the burn-in scale
//! controller.
//!
//! Every proposal reports the forward and reverse log-densities so the
//! acceptance ratio never has to assume symmetry.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::bayes::{InverseGamma, ALPHA_RATE, ALPHA_SHAPE, LAMBDA_SCALE, LAMBDA_SHAPE};
use crate::kernel::{Beta, KernelFamily, BOUNDARY_MARGIN};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// Smallest scale the controller will shrink to.
pub const SCALE_FLOOR: f64 = 1e-6;
/// Update attempts per adaptation window.
pub const ADAPT_WINDOW: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProposalScales {
    /// Standard deviation of the truncated-Gaussian λ walk.
    pub lambda_sd: f64,
    /// Width of the windowed-uniform β walk.
    pub beta_window: f64,
    pub adapt: bool,
    pub target_rate: f64,
    /// Log-scale step per unit of acceptance-rate error.
    pub gain: f64,
}

impl Default for ProposalScales {
    fn default() -> Self {
        ProposalScales {
            lambda_sd: 0.05,
            beta_window: 0.1,
            adapt: true,
            target_rate: 0.40,
            gain: 1.0,
        }
    }
}

/// `log Q(x)` where `Q` is the standard normal upper tail.
fn log_upper_tail(x: f64) -> f64 {
    if x < 30.0 {
        (0.5 * erfc(x / std::f64::consts::SQRT_2)).ln()
    } else {
        // asymptotic expansion of the Mills ratio
        let x2 = x * x;
        -0.5 * x2 - x.ln() - LN_SQRT_2PI + (1.0 - 1.0 / x2 + 3.0 / (x2 * x2)).ln()
    }
}

/// `log(Φ(b) − Φ(a))` for standardized bounds `a < b`.
fn log_normal_mass(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        // both in the right tail: Q(a) − Q(b)
        let la = log_upper_tail(a);
        let lb = log_upper_tail(b);
        la + (-(lb - la).exp()).ln_1p()
    } else if b <= 0.0 {
        log_normal_mass(-b, -a)
    } else {
        // straddles zero
        let qa = 0.5 * erfc(a / std::f64::consts::SQRT_2);
        let qb = 0.5 * erfc(b / std::f64::consts::SQRT_2);
        (qa - qb).ln()
    }
}

/// Log-density of `N(μ, sd²)` truncated to `(lower, upper)`.
pub fn truncnorm_logpdf(theta: f64, mean: f64, sd: f64, lower: f64, upper: f64) -> f64 {
    if !(theta > lower && theta < upper) {
        return f64::NEG_INFINITY;
    }
    let z = (theta - mean) / sd;
    let a = (lower - mean) / sd;
    let b = (upper - mean) / sd;
    -0.5 * z * z - LN_SQRT_2PI - sd.ln() - log_normal_mass(a, b)
}

/// Robert's exponential rejection sampler for `N(0,1)` on `(a, b)`, `a > 0`.
fn tail_rejection<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    let rate = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let e: f64 = Exp1.sample(rng);
        let x = a + e / rate;
        if x >= b {
            continue;
        }
        let u: f64 = rng.random();
        if u.ln() <= -0.5 * (x - rate).powi(2) {
            return x;
        }
    }
}

fn std_truncnorm_sample<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        if a > 8.0 {
            return tail_rejection(rng, a, b);
        }
        // invert the upper tail: u ∈ (Q(b), Q(a))
        let qa = 0.5 * erfc(a / std::f64::consts::SQRT_2);
        let qb = 0.5 * erfc(b / std::f64::consts::SQRT_2);
        loop {
            let u: f64 = rng.random();
            let q = qb + u * (qa - qb);
            if q <= 0.0 {
                continue;
            }
            let x = std::f64::consts::SQRT_2 * erfc_inv(2.0 * q);
            if x > a && x < b {
                return x;
            }
        }
    } else if b <= 0.0 {
        -std_truncnorm_sample(rng, -b, -a)
    } else {
        // straddles zero: invert Φ through the tail that keeps precision
        let pa = 0.5 * erfc(-a / std::f64::consts::SQRT_2);
        let pb = 0.5 * erfc(-b / std::f64::consts::SQRT_2);
        loop {
            let u: f64 = rng.random();
            let p = pa + u * (pb - pa);
            if p <= 0.0 || p >= 1.0 {
                continue;
            }
            let x = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
            if x > a && x < b {
                return x;
            }
        }
    }
}

/// Draw from `N(μ, sd²)` truncated to `(lower, upper)`.
pub fn truncnorm_sample<R: Rng + ?Sized>(rng: &mut R, mean: f64, sd: f64, lower: f64, upper: f64) -> f64 {
    let a = (lower - mean) / sd;
    let b = (upper - mean) / sd;
    mean + sd * std_truncnorm_sample(rng, a, b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal<T> {
    pub value: T,
    /// `log q(proposed | current)`.
    pub log_q_forward: f64,
    /// `log q(current | proposed)`.
    pub log_q_reverse: f64,
}

impl<T> Proposal<T> {
    pub fn log_ratio(&self) -> f64 {
        self.log_q_reverse - self.log_q_forward
    }
}

/// Componentwise truncated-Gaussian walk on `(0, ∞)`.
pub fn propose_lambda<R: Rng + ?Sized>(rng: &mut R, current: &[f64], sd: f64) -> Proposal<Vec<f64>> {
    let value: Vec<f64> = current
        .iter()
        .map(|&l| {
            let mut x = truncnorm_sample(rng, l, sd, 0.0, f64::INFINITY);
            if x <= 0.0 {
                x = f64::MIN_POSITIVE;
            }
            x
        })
        .collect();
    let log_q_forward = value
        .iter()
        .zip(current)
        .map(|(&p, &c)| truncnorm_logpdf(p, c, sd, 0.0, f64::INFINITY))
        .sum();
    let log_q_reverse = current
        .iter()
        .zip(&value)
        .map(|(&c, &p)| truncnorm_logpdf(c, p, sd, 0.0, f64::INFINITY))
        .sum();
    Proposal {
        value,
        log_q_forward,
        log_q_reverse,
    }
}

/// Window of the clamped uniform walk centred at `center`.
fn uniform_window(center: f64, lower: f64, upper: f64, width: f64) -> (f64, f64) {
    let width = width.min(upper - lower);
    if center <= lower + width / 2.0 {
        (lower, lower + width)
    } else if center >= upper - width / 2.0 {
        (upper - width, upper)
    } else {
        (center - width / 2.0, center + width / 2.0)
    }
}

/// Log-density of the clamped windowed-uniform proposal.
pub fn windowed_uniform_logpdf(theta: f64, center: f64, lower: f64, upper: f64, width: f64) -> f64 {
    let (a, b) = uniform_window(center, lower, upper, width);
    if theta > a && theta < b {
        -(b - a).ln()
    } else {
        f64::NEG_INFINITY
    }
}

pub fn windowed_uniform_sample<R: Rng + ?Sized>(
    rng: &mut R,
    center: f64,
    lower: f64,
    upper: f64,
    width: f64,
) -> f64 {
    let (a, b) = uniform_window(center, lower, upper, width);
    loop {
        let x = rng.random_range(a..b);
        if x > a {
            return x;
        }
    }
}

/// Componentwise windowed-uniform walk inside the family's β domain.
pub fn propose_beta<R: Rng + ?Sized>(
    rng: &mut R,
    current: Beta,
    window: f64,
    family: KernelFamily,
) -> Proposal<Beta> {
    let bounds = family.beta_bounds();
    let cur = current.components();
    let mut value = Vec::with_capacity(cur.len());
    let mut fwd = 0.0;
    let mut rev = 0.0;
    for (&c, &(lo, hi)) in cur.iter().zip(bounds) {
        let p = windowed_uniform_sample(rng, c, lo, hi, window);
        fwd += windowed_uniform_logpdf(p, c, lo, hi, window);
        rev += windowed_uniform_logpdf(c, p, lo, hi, window);
        value.push(p);
    }
    Proposal {
        value: Beta::from_components(&value).expect("component count follows the family"),
        log_q_forward: fwd,
        log_q_reverse: rev,
    }
}

/// Uniform draw over the family's β domain, away from the boundary margin.
pub fn uniform_beta<R: Rng + ?Sized>(rng: &mut R, family: KernelFamily) -> Beta {
    let comps: Vec<f64> = family
        .beta_bounds()
        .iter()
        .map(|&(lo, hi)| loop {
            let x = rng.random_range(lo..hi);
            if x > lo + BOUNDARY_MARGIN && x < hi - BOUNDARY_MARGIN {
                break x;
            }
        })
        .collect();
    Beta::from_components(&comps).expect("component count follows the family")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BirthDraw {
    pub lambda: f64,
    pub beta: Beta,
    /// `log q_B(λ) + log q_B(β)`; equals the prior log-density.
    pub log_density: f64,
}

/// Independent birth proposal: `λ ~ IG(2, 1)`, `β` uniform on its domain.
pub fn birth_proposal_draw<R: Rng + ?Sized>(rng: &mut R, family: KernelFamily) -> BirthDraw {
    let ig = InverseGamma {
        shape: LAMBDA_SHAPE,
        scale: LAMBDA_SCALE,
    };
    let lambda = ig.sample(rng);
    let beta = uniform_beta(rng, family);
    let log_density = ig.ln_pdf(lambda) + crate::bayes::log_beta_prior(&[beta], family);
    BirthDraw {
        lambda,
        beta,
        log_density,
    }
}

/// Gamma proposal parameters `(shape, rate)` for a structure with `link_count` groups.
pub fn alpha_proposal_params(link_count: usize) -> (f64, f64) {
    (ALPHA_SHAPE + link_count as f64, 1.0 + ALPHA_RATE)
}

pub fn alpha_proposal_logpdf(alpha: f64, link_count: usize) -> f64 {
    if !(alpha > 0.0) {
        return f64::NEG_INFINITY;
    }
    let (k, r) = alpha_proposal_params(link_count);
    k * r.ln() - statrs::function::gamma::ln_gamma(k) + (k - 1.0) * alpha.ln() - r * alpha
}

/// Independent Gamma proposal for `α`.
pub fn propose_alpha<R: Rng + ?Sized>(rng: &mut R, current: f64, link_count: usize) -> Proposal<f64> {
    let (k, r) = alpha_proposal_params(link_count);
    let g = Gamma::new(k, 1.0 / r).expect("positive shape and rate");
    let mut value: f64 = g.sample(rng);
    if value <= 0.0 {
        value = f64::MIN_POSITIVE;
    }
    Proposal {
        value,
        log_q_forward: alpha_proposal_logpdf(value, link_count),
        log_q_reverse: alpha_proposal_logpdf(current, link_count),
    }
}

/// One geometric step of the scale controller for an observed acceptance rate.
pub fn adapt_scales(rate: f64, scales: ProposalScales) -> ProposalScales {
    let factor = (scales.gain * (rate - scales.target_rate)).exp();
    ProposalScales {
        lambda_sd: (scales.lambda_sd * factor).max(SCALE_FLOOR),
        // a window wider than the (0, 1) domain is pointless
        beta_window: (scales.beta_window * factor).clamp(SCALE_FLOOR, 1.0),
        ..scales
    }
}

/// Counts update-move outcomes and rescales every [`ADAPT_WINDOW`] attempts
/// until frozen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleAdapter {
    attempts: usize,
    accepts: usize,
    frozen: bool,
    pub history: Vec<(f64, f64)>,
}

impl Default for ScaleAdapter {
    fn default() -> Self {
        Self::new()
    }
}

impl ScaleAdapter {
    pub fn new() -> Self {
        ScaleAdapter {
            attempts: 0,
            accepts: 0,
            frozen: false,
            history: Vec::new(),
        }
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Record an update attempt; returns the (possibly rescaled) scales.
    pub fn record(&mut self, accepted: bool, scales: ProposalScales) -> ProposalScales {
        if self.frozen || !scales.adapt {
            return scales;
        }
        self.attempts += 1;
        self.accepts += usize::from(accepted);
        if self.attempts < ADAPT_WINDOW {
            return scales;
        }
        let rate = self.accepts as f64 / self.attempts as f64;
        self.attempts = 0;
        self.accepts = 0;
        let next = adapt_scales(rate, scales);
        self.history.push((next.lambda_sd, next.beta_window));
        next
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = 0.5 * (f(a) + f(b));
        for i in 1..n {
            s += f(a + i as f64 * h);
        }
        s * h
    }

    #[test]
    fn truncnorm_shapes() {
        for th in [0.1, 0.4, 0.9] {
            assert_relative_eq!(
                truncnorm_logpdf(th, 0.0, 0.5, -1.0, 1.0),
                truncnorm_logpdf(-th, 0.0, 0.5, -1.0, 1.0),
                epsilon = 1e-14
            );
            let half = truncnorm_logpdf(th, 0.0, 0.3, 0.0, f64::INFINITY).exp();
            let normal = (-(th * th) / (2.0 * 0.09)).exp() / (0.3 * (2.0 * std::f64::consts::PI).sqrt());
            assert_relative_eq!(half, 2.0 * normal, max_relative = 1e-12);
        }
        assert_eq!(truncnorm_logpdf(-0.1, 0.0, 1.0, 0.0, 1.0), f64::NEG_INFINITY);
    }

    #[test]
    fn truncnorm_normalizes() {
        for &(mu, sd, lo, hi) in &[(1.0f64, 0.05f64, 0.0, f64::INFINITY), (0.0, 0.05, 0.0, f64::INFINITY), (0.3, 1.0, -0.5, 2.0), (-5.0, 0.5, 0.0, 1.0)] {
            let top = if hi.is_finite() { hi } else { mu.max(0.0) + 12.0 * sd };
            let z = trapezoid(|x| truncnorm_logpdf(x, mu, sd, lo, hi).exp(), lo + 1e-12, top, 200_000);
            assert!((z - 1.0).abs() < 1e-6, "{mu} {sd} {lo} {hi}: {z}");
        }
    }

    #[test]
    fn truncnorm_sample_mean_matches_quadrature() {
        let (mu, sd) = (1.0, 0.05);
        let mean_q = trapezoid(|x| x * truncnorm_logpdf(x, mu, sd, 0.0, f64::INFINITY).exp(), 0.0, 2.0, 100_000);
        let var_q = trapezoid(|x| (x - mean_q).powi(2) * truncnorm_logpdf(x, mu, sd, 0.0, f64::INFINITY).exp(), 0.0, 2.0, 100_000);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let mean = (0..n).map(|_| truncnorm_sample(&mut rng, mu, sd, 0.0, f64::INFINITY)).sum::<f64>() / n as f64;
        assert!((mean - mean_q).abs() < 3.0 * (var_q / n as f64).sqrt());

        // deep tail goes through the rejection branch
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let x = truncnorm_sample(&mut rng, 0.0, 1.0, 12.0, 13.0);
            assert!(x > 12.0 && x < 13.0);
        }
        let x = truncnorm_sample(&mut rng, 0.0, 1.0, -13.0, -12.0);
        assert!(x > -13.0 && x < -12.0);
    }

    #[test]
    fn lambda_walk_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = propose_lambda(&mut rng, &[0.7, 2.0], 1e-9);
        assert!((p.value[0] - 0.7).abs() < 1e-7 && (p.value[1] - 2.0).abs() < 1e-7);

        // at the current point the ratio is one
        let lq_f = truncnorm_logpdf(0.4, 0.4, 0.05, 0.0, f64::INFINITY);
        assert_eq!(lq_f, truncnorm_logpdf(0.4, 0.4, 0.05, 0.0, f64::INFINITY));

        // erf correction equals the log-q ratio net of the symmetric Gaussian kernel
        for _ in 0..50 {
            let cur: f64 = rng.random_range(0.0..0.3);
            let sd: f64 = rng.random_range(0.01..0.2);
            let p = propose_lambda(&mut rng, &[cur], sd);
            let prop = p.value[0];
            let erf = |x: f64| statrs::function::erf::erf(x);
            let direct = (1.0 + erf(cur / (std::f64::consts::SQRT_2 * sd))) / (1.0 + erf(prop / (std::f64::consts::SQRT_2 * sd)));
            assert_relative_eq!(p.log_ratio().exp(), direct, max_relative = 1e-10);
        }
    }

    #[test]
    fn beta_windows() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let p = propose_beta(&mut rng, Beta::Scalar(0.5), 0.1, KernelFamily::Tc);
            let Beta::Scalar(v) = p.value else { panic!() };
            assert!(v > 0.45 && v < 0.55);
            assert_relative_eq!(p.log_q_forward, p.log_q_reverse, epsilon = 1e-12);
            let p = propose_beta(&mut rng, Beta::Scalar(0.01), 0.1, KernelFamily::Tc);
            let Beta::Scalar(v) = p.value else { panic!() };
            assert!(v > 0.0 && v < 0.1);
        }
        // clamped region: reverse density may differ or vanish
        let f = windowed_uniform_logpdf(0.09, 0.01, 0.0, 1.0, 0.1);
        assert_relative_eq!(f, 10f64.ln());
        assert_eq!(windowed_uniform_logpdf(0.01, 0.09, 0.0, 1.0, 0.1), f64::NEG_INFINITY);
        assert_relative_eq!(windowed_uniform_logpdf(0.01, 0.05, 0.0, 1.0, 0.1), 10f64.ln());
        // normalization of the clamped density
        for c in [0.01, 0.5, 0.98] {
            let z = trapezoid(|x| windowed_uniform_logpdf(x, c, 0.0, 1.0, 0.1).exp(), 0.0, 1.0, 400_000);
            assert!((z - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn birth_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let mut below = 0usize;
        for _ in 0..n {
            let d = birth_proposal_draw(&mut rng, KernelFamily::Dc);
            let Beta::Pair(a, b) = d.beta else { panic!() };
            assert!(a > 0.0 && a < 1.0 && b > -1.0 && b < 1.0);
            let expect = crate::bayes::log_lambda_prior(&[d.lambda]) - std::f64::consts::LN_2;
            assert_relative_eq!(d.log_density, expect, epsilon = 1e-12);
            below += usize::from(d.lambda < 1.0);
        }
        // IG(2,1) CDF at 1 by quadrature of the density
        let cdf = trapezoid(|x| if x > 0.0 { (-3.0 * x.ln() - 1.0 / x).exp() } else { 0.0 }, 1e-9, 1.0, 200_000);
        let p = below as f64 / n as f64;
        assert!((p - cdf).abs() < 3.0 * (cdf * (1.0 - cdf) / n as f64).sqrt(), "{p} vs {cdf}");
    }

    #[test]
    fn alpha_proposal() {
        assert_eq!(alpha_proposal_params(1), (1.1, 2.0));
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 100_000;
        let mk = 3;
        let (k, r) = alpha_proposal_params(mk);
        let mean = (0..n).map(|_| propose_alpha(&mut rng, 1.0, mk).value).sum::<f64>() / n as f64;
        let sd = (k / (r * r)).sqrt();
        assert!((mean - k / r).abs() < 3.0 * sd / (n as f64).sqrt());
        let z = trapezoid(|a| alpha_proposal_logpdf(a, mk).exp(), 1e-12, 30.0, 300_000);
        assert!((z - 1.0).abs() < 1e-6);
    }

    #[test]
    fn adaptation_rules() {
        let s = ProposalScales::default();
        assert_eq!(adapt_scales(0.40, s), s);
        assert!(adapt_scales(1.0, s).lambda_sd > s.lambda_sd);
        let mut t = s;
        for _ in 0..200 {
            t = adapt_scales(0.0, t);
        }
        assert!(t.lambda_sd < s.lambda_sd);
        assert_eq!(t.lambda_sd, SCALE_FLOOR);

        let mut a = ScaleAdapter::new();
        let mut sc = s;
        for _ in 0..ADAPT_WINDOW {
            sc = a.record(false, sc);
        }
        assert!(sc.lambda_sd < s.lambda_sd);
        a.freeze();
        let before = sc;
        for _ in 0..10 * ADAPT_WINDOW {
            sc = a.record(false, sc);
        }
        assert_eq!(sc, before);
    }
}
