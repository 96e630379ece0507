//! Deterministic discrete-event network simulation.

mod engine;
pub mod event;
pub mod log;
mod report;
pub mod topology;
pub mod workload;

use thiserror::Error;

pub use engine::{run, FailureAction, FailureEntry, SimConfig};
pub use report::{FPoint, LinkUsage, Outcome, ReapCheck, RequestRecord, RunReport, TickSample};

use crate::controller::ControllerError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("{0}")]
    Config(String),
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
    #[error("unknown link '{0}'")]
    UnknownLink(String),
    #[error(transparent)]
    Controller(#[from] ControllerError),
}
