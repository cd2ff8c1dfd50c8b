//! Experiment runner for the continual-observation mechanisms: seeded
//! multi-trial runs against the exact oracle, structural checks on traces
//! and an empirical privacy audit on tiny instances.

pub mod audit;
pub mod check;
pub mod config;
pub mod experiment;
pub mod mechanisms;
pub mod output;

pub use audit::{run_audit, target_factory, AuditResult, Observation};
pub use check::{check_structure, run_check, CheckResult, Trace, TraceReport};
pub use config::{AuditConfig, AuditTarget, ExperimentConfig, MechanismKind, NeighborMode, NoiseSetting, StreamSource};
pub use experiment::{run_experiment, ExperimentResult};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] contobs::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
