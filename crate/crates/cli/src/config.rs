use serde::{Deserialize, Serialize};

use rjnet::keb::KebOptions;
use rjnet::kernel::{KernelConfig, KernelFamily};
use rjnet::network::MethodConfig;
use rjnet::proposals::ProposalScales;
use rjnet::rjmcmc::{InitialStructure, SamplerConfig};

use crate::error::{CliError, CliResult};

/// Environment variable holding the default seed.
pub const SEED_ENV: &str = "RJNET_SEED";
pub const DEFAULT_SEED: u64 = 1;

/// Flag, then config file, then `$RJNET_SEED`, then the built-in default.
pub fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> CliResult<u64> {
    if let Some(s) = flag.or(file) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}='{v}' is not an unsigned integer"))),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rjmcmc,
    Keb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum InitialPolicy {
    Full,
    #[value(name = "self")]
    #[serde(rename = "self")]
    SelfOnly,
}

/// Everything that determines an inference run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub method: Method,
    pub kernel: KernelFamily,
    pub truncation: usize,
    pub iterations: usize,
    pub burn_in_fraction: f64,
    pub thinning: usize,
    pub seed: u64,
    pub initial: InitialPolicy,
    pub lambda_sd: f64,
    pub beta_window: f64,
    pub adapt: bool,
    pub target_rate: f64,
    pub top_k: usize,
    /// Fraction of each experiment held out for validation.
    pub validation_split: f64,
    pub keb_restarts: usize,
    pub backward_selection: bool,
    /// Worker threads; `None` means one per target capped by the cores.
    pub jobs: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let scales = ProposalScales::default();
        RunConfig {
            method: Method::Rjmcmc,
            kernel: KernelFamily::Tc,
            truncation: 20,
            iterations: 5000,
            burn_in_fraction: 0.5,
            thinning: 1,
            seed: DEFAULT_SEED,
            initial: InitialPolicy::Full,
            lambda_sd: scales.lambda_sd,
            beta_window: scales.beta_window,
            adapt: scales.adapt,
            target_rate: scales.target_rate,
            top_k: 10,
            validation_split: 0.0,
            keb_restarts: KebOptions::default().restarts,
            backward_selection: false,
            jobs: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Usage(m));
        if self.truncation < 2 {
            return bad(format!("truncation must be at least 2, got {}", self.truncation));
        }
        if self.iterations == 0 || self.thinning == 0 || self.top_k == 0 || self.keb_restarts == 0 {
            return bad("iterations, thinning, top-k and restarts must be positive".into());
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return bad(format!("burn-in fraction must lie in [0, 1), got {}", self.burn_in_fraction));
        }
        if !(0.0..1.0).contains(&self.validation_split) {
            return bad(format!("validation split must lie in [0, 1), got {}", self.validation_split));
        }
        if !(self.lambda_sd > 0.0 && self.beta_window > 0.0 && self.beta_window <= 1.0) {
            return bad("proposal scales must be positive and the beta window at most 1".into());
        }
        if !(self.target_rate > 0.0 && self.target_rate < 1.0) {
            return bad(format!("target acceptance rate must lie in (0, 1), got {}", self.target_rate));
        }
        if self.jobs == Some(0) {
            return bad("jobs must be positive".into());
        }
        Ok(())
    }

    pub fn kernel_config(&self) -> CliResult<KernelConfig> {
        Ok(KernelConfig::new(self.kernel, self.truncation)?)
    }

    pub fn burn_in(&self) -> usize {
        (self.iterations as f64 * self.burn_in_fraction).floor() as usize
    }

    pub fn method_config(&self) -> CliResult<MethodConfig> {
        self.validate()?;
        let kernel = self.kernel_config()?;
        Ok(match self.method {
            Method::Rjmcmc => {
                let mut c = SamplerConfig::new(kernel, self.iterations);
                c.burn_in = self.burn_in();
                c.thinning = self.thinning;
                c.initial = match self.initial {
                    InitialPolicy::Full => InitialStructure::Full,
                    InitialPolicy::SelfOnly => InitialStructure::SelfOnly,
                };
                c.scales = ProposalScales {
                    lambda_sd: self.lambda_sd,
                    beta_window: self.beta_window,
                    adapt: self.adapt,
                    target_rate: self.target_rate,
                    ..ProposalScales::default()
                };
                c.validate()?;
                MethodConfig::Rjmcmc(c)
            }
            Method::Keb => MethodConfig::Keb {
                kernel,
                options: KebOptions {
                    restarts: self.keb_restarts,
                    backward_selection: self.backward_selection,
                    ..KebOptions::default()
                },
            },
        })
    }
}
