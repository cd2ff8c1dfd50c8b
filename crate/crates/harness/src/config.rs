use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::HarnessError;

/// Mechanism identifiers accepted by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MechanismKind {
    /// Bounded max-sum mechanism; needs `c_max`.
    Bounded,
    /// Doubling segmenter on the maximum column sum.
    Doubling,
    /// Two-level max-sum mechanism.
    TwoLevel,
    /// Per-query thresholds; needs `c_max`.
    Kquery,
    Kdoubling,
    KtwoLevel,
    KqueryEd,
    KdoublingEd,
    KtwoLevelEd,
}

impl MechanismKind {
    pub const ALL: [MechanismKind; 9] = [
        Self::Bounded,
        Self::Doubling,
        Self::TwoLevel,
        Self::Kquery,
        Self::Kdoubling,
        Self::KtwoLevel,
        Self::KqueryEd,
        Self::KdoublingEd,
        Self::KtwoLevelEd,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Bounded => "bounded",
            Self::Doubling => "doubling",
            Self::TwoLevel => "two-level",
            Self::Kquery => "kquery",
            Self::Kdoubling => "kdoubling",
            Self::KtwoLevel => "ktwo-level",
            Self::KqueryEd => "kquery-ed",
            Self::KdoublingEd => "kdoubling-ed",
            Self::KtwoLevelEd => "ktwo-level-ed",
        }
    }

    /// Mechanisms restricted to the single query `max`.
    pub fn max_only(&self) -> bool {
        matches!(self, Self::Bounded | Self::Doubling | Self::TwoLevel)
    }

    pub fn needs_delta(&self) -> bool {
        matches!(self, Self::KqueryEd | Self::KdoublingEd | Self::KtwoLevelEd)
    }

    /// Mechanisms calibrated with a bound on the query values.
    pub fn uses_c_max(&self) -> bool {
        matches!(self, Self::Bounded | Self::Kquery | Self::KqueryEd)
    }

    pub fn is_doubling(&self) -> bool {
        matches!(self, Self::Doubling | Self::Kdoubling | Self::KdoublingEd)
    }
}

impl fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MechanismKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown mechanism '{s}'")))
    }
}

/// Where trial streams come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StreamSource {
    /// Generator spec string, regenerated per trial from the trial's seed.
    Generator(String),
    /// Fixed stream file shared by all trials.
    File(PathBuf),
}

/// Noise setting of every trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseSetting {
    Live,
    Disabled,
    /// Sample log replayed from the start in every trial.
    Recorded(PathBuf),
}

impl FromStr for NoiseSetting {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(Self::Live),
            "disabled" | "off" => Ok(Self::Disabled),
            _ => s
                .strip_prefix("recorded:")
                .map(|p| Self::Recorded(PathBuf::from(p)))
                .ok_or_else(|| HarnessError::Config(format!("unknown noise mode '{s}'"))),
        }
    }
}

/// A full experiment description. Together with its seed it determines
/// every output except timings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub mechanism: MechanismKind,
    pub queries: String,
    pub stream: StreamSource,
    pub d: usize,
    pub horizon: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub beta: f64,
    pub trials: usize,
    pub seed: u64,
    pub noise: NoiseSetting,
    /// Bound on query values; the realized maximum of each trial when unset.
    pub c_max: Option<usize>,
    /// Replaces the derived threshold step of bounded mechanisms.
    pub k_override: Option<f64>,
    /// Trials whose full output series is exported.
    pub series_trials: usize,
}

impl ExperimentConfig {
    pub fn new(mechanism: MechanismKind, d: usize, horizon: usize) -> Self {
        Self {
            mechanism,
            queries: "max".into(),
            stream: StreamSource::Generator("bernoulli:p=0.5".into()),
            d,
            horizon,
            epsilon: 1.0,
            delta: 0.0,
            beta: 1.0 / 3.0,
            trials: 1,
            seed: 0,
            noise: NoiseSetting::Live,
            c_max: None,
            k_override: None,
            series_trials: 0,
        }
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

/// Hex SHA-256 of the JSON serialization.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let json = serde_json::to_vec(config).expect("configs serialize");
    hex::encode(Sha256::digest(&json))
}

/// How the challenge pair of an audit is built from `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NeighborMode {
    /// Replace the row at time `t` (1-based).
    Event { t: usize, row: Vec<u8> },
    /// Flip column `i` at `flips[i]` (1-based) where given.
    Independent { flips: Vec<Option<usize>> },
}

/// Mechanisms the audit can exercise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuditTarget {
    /// Total count of ones plus Lap(1/eps).
    LaplaceCount,
    /// Bounded max-sum mechanism with a forced threshold step.
    Bounded,
    /// Bounded max-sum mechanism with its sparse-vector noise removed.
    BoundedNoSvtNoise,
}

impl FromStr for AuditTarget {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "laplace" | "laplace-count" => Ok(Self::LaplaceCount),
            "bounded" => Ok(Self::Bounded),
            "bounded-no-svt-noise" | "bounded-mutant" => Ok(Self::BoundedNoSvtNoise),
            _ => Err(HarnessError::Config(format!("unknown audit target '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub target: AuditTarget,
    /// Rows of `x`, each a string of 0/1 digits.
    pub x: Vec<String>,
    pub neighbor: NeighborMode,
    pub epsilon: f64,
    pub delta: f64,
    pub bin_width: f64,
    pub trials: usize,
    pub seed: u64,
    /// Bins with fewer hits on the numerator side are not tested.
    pub min_count: u64,
    /// Threshold step of the bounded targets.
    pub k: f64,
}

impl AuditConfig {
    pub const MIN_TRIALS: usize = 100_000;
    pub const MAX_T: usize = 6;
    pub const MAX_D: usize = 2;

    pub fn hash(&self) -> String {
        config_hash(self)
    }
}
