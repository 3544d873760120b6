//! Discrete-event engine: clock, sensors, message delivery, fault injection
//! and trial orchestration.

pub mod campaign;
pub mod config;
pub mod message;
pub mod sensor;
pub mod sim;
pub mod trace;
pub mod validate;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::MigrationRecord;
use crate::taskgraph::{DepId, TaskId};
use crate::topology::Coord;

pub use campaign::{run_campaign, run_campaign_on, write_campaign_csv, CampaignRow};
pub use config::{CostModel, ExperimentConfig, FaultEntry, FaultSchedule, GridDims, ScheduleSource};
pub use sim::{run_trial, TrialRun};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Why a trial did not survive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum FailureReason {
    NoEscapeRoute {
        task: TaskId,
        at: Coord,
    },
    SpawnFailed {
        task: TaskId,
        at: Coord,
    },
    /// The source node died before ownership moved.
    TransferIncomplete {
        task: TaskId,
    },
    /// Ownership moved but rebinding was still running at hard failure.
    GraceWindowExceeded {
        task: TaskId,
    },
    AckTimeout {
        task: TaskId,
        dep: DepId,
    },
    /// A node died under an agent that was not migrating.
    TaskLost {
        task: TaskId,
    },
    RoundIncomplete {
        completed: u32,
        expected: u32,
    },
    WrongResult {
        round: u32,
    },
    ProtocolError {
        detail: String,
    },
}

impl std::fmt::Display for FailureReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::NoEscapeRoute { task, at } => write!(f, "{task} at {at} has no healthy neighbor"),
            Self::SpawnFailed { task, at } => write!(f, "spawn of {task} on {at} failed"),
            Self::TransferIncomplete { task } => write!(f, "{task} did not leave its node in time"),
            Self::GraceWindowExceeded { task } => write!(f, "{task} was still rebinding at hard failure"),
            Self::AckTimeout { task, dep } => write!(f, "{task} got no rebind ack from {dep:?}"),
            Self::TaskLost { task } => write!(f, "{task} was lost with its node"),
            Self::RoundIncomplete { completed, expected } => {
                write!(f, "only {completed} of {expected} rounds completed")
            }
            Self::WrongResult { round } => write!(f, "round {round} produced a wrong result"),
            Self::ProtocolError { detail } => write!(f, "protocol error: {detail}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial_id: usize,
    pub seed: u64,
    /// Node whose failure this trial injects, for per-node campaigns.
    pub target: Option<TaskId>,
    pub survived: bool,
    pub failure: Option<FailureReason>,
    pub round_results: Vec<i64>,
    pub expected_results: Vec<i64>,
    pub migration_records: Vec<MigrationRecord>,
    pub trace_path: Option<PathBuf>,
}
