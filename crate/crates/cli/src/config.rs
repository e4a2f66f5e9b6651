//! The run configuration shared by every subcommand.

use std::path::Path;

use fairsim_core::apl::{AplConfig, EncoderId};
use fairsim_core::rrm::RnConfig;
use fairsim_core::synth::SynthSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSettings {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSettings {
    fn default() -> Self {
        Self { train_fraction: 0.3, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSettings {
    pub kind: EncoderId,
    /// Seed of the toy encoder's fixed map.
    pub seed: u64,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        Self { kind: EncoderId::Toy, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricSettings {
    pub k: usize,
    pub recall_ks: Vec<usize>,
    pub temperature: f64,
    pub epsilons: Vec<f64>,
    /// Seed of the cross-group pairing used by BFD.
    pub pairs_seed: u64,
    pub zero_shot_words: [String; 2],
}

impl Default for MetricSettings {
    fn default() -> Self {
        Self {
            k: 100,
            recall_ks: vec![1, 5, 10],
            temperature: fairsim_core::metrics::DEFAULT_TEMPERATURE,
            epsilons: (-5..=5).map(|i| i as f64 / 10.0).collect(),
            pairs_seed: 0,
            zero_shot_words: ["happy".into(), "sad".into()],
        }
    }
}

/// Every tunable of the pipeline. Each section defaults independently, so a
/// config file only needs the keys it changes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub synth: SynthSpec,
    pub split: SplitSettings,
    pub encoder: EncoderSettings,
    pub apl: AplConfig,
    pub rrm: RnConfig,
    pub metrics: MetricSettings,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Overwrites `target` when a flag was given.
pub fn set<T>(target: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *target = v;
    }
}
