//! Discrete-event simulation of a training campaign across chained
//! allocations, and the trace fold that measures goodput.

mod engine;
mod event;
mod goodput;
mod sweep;

use thiserror::Error;

use crate::perf::PerfError;
use crate::scenario::{UnknownTier, ValidationError};
use crate::storage::StorageError;

pub use engine::{
    check_terminating, expected_loss_on_bad, run_campaign, run_campaign_with_state, sample_launches, uncommitted_work,
    Allocation, CampaignState, LaunchDraw, LaunchStats, RngStreams,
};
pub use event::{EndReason, Event, EventKind, EventTrace, StartupCause, TraceHeader};
pub use goodput::{measure_goodput, Goodput, WasteCategory};
pub use sweep::{sweep, with_field, SweepRow};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("campaign cannot terminate: {0}")]
    NonTerminating(String),
    #[error("trace digest {trace} does not match scenario digest {scenario}")]
    DigestMismatch { trace: String, scenario: String },
    #[error("unknown scenario field `{0}`")]
    UnknownField(String),
    #[error("value {value} is not compatible with field `{field}`: {reason}")]
    IncompatibleValue {
        field: String,
        value: String,
        reason: String,
    },
    #[error("cannot start worker pool: {0}")]
    WorkerPool(String),
    #[error("malformed trace: {0}")]
    TraceFormat(String),
    #[error(transparent)]
    Invalid(#[from] ValidationError),
    #[error(transparent)]
    Perf(#[from] PerfError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    UnknownTier(#[from] UnknownTier),
}
