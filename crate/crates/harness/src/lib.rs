//! Workflow simulator for the capability-token system.
//!
//! Plays the scheduler and launcher: jobs are submitted, get stage-in,
//! execute and stage-out tokens from the token manager, read and write
//! through the data gateway, and may have faults injected. Every
//! token-bearing message that crosses a domain boundary is recorded in a
//! [`Transcript`].

pub mod engine;
pub mod env;
pub mod report;
pub mod spec;
pub mod transcript;
pub mod wiring;

use thiserror::Error;

pub use engine::{run_workflow, tamper, RunOutput};
pub use report::{InvariantCheck, JobReport, Outcome, PhaseCounts, RunReport, Totals};
pub use spec::{ClockMode, Fault, FaultKind, JobSpec, RunSettings, Transport, WorkflowRun};
pub use transcript::{Direction, Edge, Leak, Message, Transcript, TranscriptSummary};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid workflow: {0}")]
    Workflow(String),
    #[error("could not set up services: {0}")]
    Setup(String),
}

impl HarnessError {
    pub fn code(&self) -> &'static str {
        match self {
            HarnessError::Workflow(_) => "invalid_workflow",
            HarnessError::Setup(_) => "setup_failed",
        }
    }
}
