//! JSON documents: ground truth, inference results, sweep protocols.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use rjnet::benchgen::{GroundTruthNetwork, NoiseMode, Protocol};
use rjnet::network::TargetResult;
use rjnet::rjmcmc::MoveCounts;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// Major.minor; readers reject a different major.
pub const SCHEMA_VERSION: &str = "1.0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseMeta {
    pub mode: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    pub variance: f64,
}

impl NoiseMeta {
    /// `None` for noise-free data.
    pub fn from_mode(mode: NoiseMode) -> Option<Self> {
        match mode {
            NoiseMode::NoNoise => None,
            NoiseMode::SnrDb(db) => Some(NoiseMeta {
                mode: "snr".into(),
                snr_db: Some(db),
                variance: mode.noise_variance(),
            }),
            NoiseMode::PureNoise => Some(NoiseMeta {
                mode: "pure_noise".into(),
                snr_db: None,
                variance: mode.noise_variance(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthDocument {
    pub schema_version: String,
    pub family: String,
    pub seed: u64,
    pub trial: usize,
    pub length: usize,
    pub n_states: usize,
    pub n_measured: usize,
    pub n_inputs: usize,
    pub a: Vec<Vec<f64>>,
    pub input_nodes: Vec<usize>,
    /// Per measured target, true parents over nodes then inputs.
    pub adjacency: Vec<Vec<bool>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseMeta>,
    pub experiments: Vec<String>,
}

impl TruthDocument {
    /// Rebuild the network, checking that the stored adjacency agrees.
    pub fn network(&self) -> CliResult<GroundTruthNetwork> {
        let net = GroundTruthNetwork::new(self.a.clone(), self.input_nodes.clone(), self.n_measured)?;
        if net.adjacency != self.adjacency {
            return Err(CliError::Mismatch("truth adjacency disagrees with its state matrix".into()));
        }
        Ok(net)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceRates {
    /// `None` when the move was never attempted.
    pub update: Option<f64>,
    pub birth: Option<f64>,
    pub death: Option<f64>,
    pub alpha: Option<f64>,
    pub numerical_failures: usize,
}

impl AcceptanceRates {
    pub fn from_moves(m: &MoveCounts) -> Self {
        AcceptanceRates {
            update: m.update.rate(),
            birth: m.birth.rate(),
            death: m.death.rate(),
            alpha: m.alpha.rate(),
            numerical_failures: m.update.numerical_failures
                + m.birth.numerical_failures
                + m.death.numerical_failures
                + m.alpha.numerical_failures,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEntry {
    pub target: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<TargetResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation_fitness: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acceptance: Option<AcceptanceRates>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsDocument {
    pub schema_version: String,
    pub method: String,
    pub seed: u64,
    pub config: RunConfig,
    pub data: Vec<String>,
    pub n_nodes: usize,
    pub n_inputs: usize,
    /// Training samples per experiment.
    pub n_samples: Vec<usize>,
    pub targets: Vec<TargetEntry>,
}

impl ResultsDocument {
    /// MAP adjacency; failed targets count as self-only.
    pub fn adjacency(&self) -> Vec<Vec<bool>> {
        let m1 = self.n_nodes + self.n_inputs;
        self.targets
            .iter()
            .map(|t| match &t.result {
                Some(r) => r.map_structure.parents.clone(),
                None => (0..m1).map(|g| g == t.target).collect(),
            })
            .collect()
    }

    pub fn confidence(&self) -> Vec<Vec<f64>> {
        let m1 = self.n_nodes + self.n_inputs;
        self.targets
            .iter()
            .map(|t| match &t.result {
                Some(r) => r.confidence.clone(),
                None => (0..m1).map(|g| f64::from(u8::from(g == t.target))).collect(),
            })
            .collect()
    }

    pub fn mean_fitness(&self) -> Option<f64> {
        let v: Vec<f64> = self.targets.iter().filter_map(|t| t.validation_fitness).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// A sweep: one protocol, several method configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepProtocol {
    pub protocol: Protocol,
    pub methods: Vec<RunConfig>,
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable document");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    fs::write(path, to_json(value)).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Read a versioned document, rejecting an unknown major version.
pub fn read_versioned<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let value: serde_json::Value = read_json(path)?;
    let version = value.get("schema_version").and_then(|v| v.as_str()).unwrap_or("");
    check_version(version).map_err(|e| CliError::Mismatch(format!("{}: {e}", path.display())))?;
    serde_json::from_value(value).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn check_version(version: &str) -> Result<(), String> {
    let major = |v: &str| v.split('.').next().map(str::to_owned);
    if version.is_empty() {
        return Err("missing schema_version".into());
    }
    if major(version) != major(SCHEMA_VERSION) {
        return Err(format!("unsupported schema version {version} (this build reads {SCHEMA_VERSION})"));
    }
    Ok(())
}
