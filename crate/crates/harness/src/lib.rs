//! Experiment harness: a lab world over the mini applications, the
//! anomaly auditor, naive baselines, metrics and the `dagmig` CLI.

pub mod audit;
pub mod experiments;
pub mod lab;
pub mod metrics;
pub mod naive;

use std::path::PathBuf;

use dagmig_core::error::EngineError;
use dagmig_synth::SynthError;
use thiserror::Error;

pub use audit::{audit, AnomalyAudit, Category};
pub use lab::{Baseline, Lab};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("{}: {}", .0.display(), .1)]
    Io(PathBuf, std::io::Error),
    #[error("bad saved state: {0}")]
    State(String),
}
