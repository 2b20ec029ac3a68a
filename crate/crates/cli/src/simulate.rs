use std::fs;
use std::path::PathBuf;

use clap::{Args, ValueEnum};

use rjnet::benchgen::{generate_network, simulate, simulation_rng, stream_rng, InputPlacement, NetworkFamily, NoiseMode, SimulationConfig};

use crate::config::resolve_seed;
use crate::csvio::write_experiment;
use crate::documents::{write_json, NoiseMeta, TruthDocument, SCHEMA_VERSION};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Random,
    Ring,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputsArg {
    /// One input per state, hidden states included.
    All,
    /// One input per measured node.
    Measured,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "random")]
    pub family: FamilyArg,
    /// Measured nodes.
    #[arg(long)]
    pub nodes: usize,
    /// Hidden states (random family only).
    #[arg(long, default_value_t = 0)]
    pub hidden: usize,
    /// Fraction of non-zero entries of the state matrix (random family only).
    #[arg(long, default_value_t = 0.2)]
    pub density: f64,
    #[arg(long, value_enum, default_value = "all")]
    pub inputs: InputsArg,
    /// Signal-to-noise ratio in dB, or `nonoise` / `purenoise`.
    #[arg(long, default_value = "10", value_parser = parse_noise)]
    pub snr: NoiseMode,
    /// Samples per experiment.
    #[arg(long, default_value_t = 100)]
    pub length: usize,
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    /// Experiments per trial, all on the same network.
    #[arg(long, default_value_t = 1)]
    pub experiments: usize,
    /// Defaults to $RJNET_SEED, then 1.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn parse_noise(s: &str) -> Result<NoiseMode, String> {
    match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
        "nonoise" => Ok(NoiseMode::NoNoise),
        "purenoise" => Ok(NoiseMode::PureNoise),
        other => other
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(NoiseMode::SnrDb)
            .ok_or_else(|| format!("'{s}' is neither a dB value nor nonoise/purenoise")),
    }
}

impl SimulateArgs {
    pub fn family(&self) -> CliResult<NetworkFamily> {
        match self.family {
            FamilyArg::Random => Ok(NetworkFamily::Random {
                n: self.nodes + self.hidden,
                p: self.nodes,
                density: self.density,
                inputs: match self.inputs {
                    InputsArg::All => InputPlacement::AllNodes,
                    InputsArg::Measured => InputPlacement::MeasuredNodes,
                },
            }),
            FamilyArg::Ring if self.hidden > 0 => Err(CliError::Usage("ring networks have no hidden nodes".into())),
            FamilyArg::Ring => Ok(NetworkFamily::Ring { p: self.nodes }),
        }
    }
}

pub fn run(args: &SimulateArgs) -> CliResult<()> {
    if args.length == 0 || args.trials == 0 || args.experiments == 0 {
        return Err(CliError::Usage("length, trials and experiments must be positive".into()));
    }
    let seed = resolve_seed(args.seed, None)?;
    let family = args.family()?;
    let cfg = SimulationConfig {
        length: args.length,
        noise: args.snr,
    };
    for trial in 0..args.trials {
        let net = generate_network(&family, &mut stream_rng(seed, trial as u64))?;
        let net = if args.snr.has_inputs() { net } else { net.without_inputs() };
        let dir = args.out.join(format!("trial{trial}"));
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        let mut names = Vec::new();
        for e in 0..args.experiments {
            let name = format!("exp{e}.csv");
            let data = simulate(&net, &cfg, &format!("exp{e}"), &mut simulation_rng(seed, trial, e))?;
            write_experiment(&dir.join(&name), &data)?;
            names.push(name);
        }
        let truth = TruthDocument {
            schema_version: SCHEMA_VERSION.into(),
            family: format!("{:?}", args.family).to_lowercase(),
            seed,
            trial,
            length: args.length,
            n_states: net.n_states(),
            n_measured: net.n_measured,
            n_inputs: net.n_inputs(),
            a: net.a.clone(),
            input_nodes: net.input_nodes.clone(),
            adjacency: net.adjacency.clone(),
            noise: NoiseMeta::from_mode(args.snr),
            experiments: names,
        };
        write_json(&dir.join("truth.json"), &truth)?;
    }
    Ok(())
}
