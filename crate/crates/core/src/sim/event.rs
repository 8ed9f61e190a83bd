//! Event vocabulary and the trace container with its NDJSON and CSV forms.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::SimError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StartupCause {
    Rank,
    Port,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EndReason {
    /// Signal-driven shutdown at wall-time expiry.
    Walltime,
    Failure,
    VettingAbort,
    StartupFail,
    Completed,
    Deadline,
}

/// Event kinds with their payloads. Durations (`span`, `stall`, ...) are the
/// wall-clock seconds of the activity that ends at the event, so the trace
/// alone accounts for every second of the campaign.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum EventKind {
    AllocStart {
        alloc: u64,
        nodes: u64,
        expiry: f64,
    },
    VettingPass {
        alloc: u64,
        span: f64,
    },
    VettingAbort {
        alloc: u64,
        node: u64,
        span: f64,
    },
    JobStart {
        alloc: u64,
        startup: f64,
        restore: f64,
        restored_iteration: u64,
    },
    StartupFail {
        alloc: u64,
        cause: StartupCause,
        span: f64,
    },
    /// Iterations `[first, end)` completed; a failed iteration's time is
    /// included but not counted in `end`.
    IterationBlockDone {
        first: u64,
        end: u64,
        compute: f64,
        overhead: f64,
        dip: f64,
    },
    CheckpointBegin {
        checkpoint: u64,
        iteration: u64,
        bytes: f64,
    },
    CheckpointDone {
        checkpoint: u64,
        iteration: u64,
        stall: f64,
    },
    NodeFailure {
        node: u64,
        iteration: u64,
        stall: f64,
    },
    OomFailure {
        iteration: u64,
        stall: f64,
    },
    SignalDelivered {
        alloc: u64,
    },
    FinalCheckpoint {
        checkpoint: u64,
        iteration: u64,
        span: f64,
    },
    AllocEnd {
        alloc: u64,
        reason: EndReason,
        clean: bool,
        idle: f64,
        stall: f64,
    },
    Requeue {
        alloc: u64,
        delay: f64,
    },
    CampaignDone {
        iterations: u64,
        tokens_done: u64,
    },
}

impl EventKind {
    /// Every kind name, in a fixed order.
    pub const NAMES: [&'static str; 15] = [
        "AllocStart",
        "VettingPass",
        "VettingAbort",
        "JobStart",
        "StartupFail",
        "IterationBlockDone",
        "CheckpointBegin",
        "CheckpointDone",
        "NodeFailure",
        "OomFailure",
        "SignalDelivered",
        "FinalCheckpoint",
        "AllocEnd",
        "Requeue",
        "CampaignDone",
    ];

    pub fn name(&self) -> &'static str {
        use EventKind::*;
        match self {
            AllocStart { .. } => "AllocStart",
            VettingPass { .. } => "VettingPass",
            VettingAbort { .. } => "VettingAbort",
            JobStart { .. } => "JobStart",
            StartupFail { .. } => "StartupFail",
            IterationBlockDone { .. } => "IterationBlockDone",
            CheckpointBegin { .. } => "CheckpointBegin",
            CheckpointDone { .. } => "CheckpointDone",
            NodeFailure { .. } => "NodeFailure",
            OomFailure { .. } => "OomFailure",
            SignalDelivered { .. } => "SignalDelivered",
            FinalCheckpoint { .. } => "FinalCheckpoint",
            AllocEnd { .. } => "AllocEnd",
            Requeue { .. } => "Requeue",
            CampaignDone { .. } => "CampaignDone",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub seq: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub scenario_digest: String,
    pub seed: u64,
    pub version: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventTrace {
    pub events: Vec<Event>,
    pub scenario_digest: String,
    pub seed: u64,
}

impl EventTrace {
    pub fn header(&self) -> TraceHeader {
        TraceHeader {
            scenario_digest: self.scenario_digest.clone(),
            seed: self.seed,
            version: crate::VERSION.to_string(),
        }
    }

    /// Header line followed by one event per line.
    pub fn to_ndjson(&self) -> String {
        let mut out = serde_json::to_string(&self.header()).expect("header serializes");
        out.push('\n');
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_ndjson(text: &str) -> Result<Self, SimError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let bad = |n: usize, e: serde_json::Error| SimError::TraceFormat(format!("line {n}: {e}"));
        let header: TraceHeader = serde_json::from_str(lines.next().unwrap_or("")).map_err(|e| bad(1, e))?;
        let events = lines
            .enumerate()
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| bad(i + 2, e)))
            .collect::<Result<Vec<Event>, _>>()?;
        Ok(Self {
            events,
            scenario_digest: header.scenario_digest,
            seed: header.seed,
        })
    }

    /// Compact timeline: a `#` header record, then
    /// `time,seq,kind,alloc,iteration,checkpoint,node,seconds`.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# scenario_digest={} seed={}\ntime,seq,kind,alloc,iteration,checkpoint,node,seconds\n",
            self.scenario_digest, self.seed
        );
        for e in &self.events {
            let c = CsvCells::of(&e.kind);
            let cell = |x: Option<u64>| x.map(|v| v.to_string()).unwrap_or_default();
            let secs = c.seconds.map(crate::render::fmt_num).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                crate::render::fmt_num(e.time),
                e.seq,
                e.kind.name(),
                cell(c.alloc),
                cell(c.iteration),
                cell(c.checkpoint),
                cell(c.node),
                secs
            );
        }
        out
    }

    /// SHA-256 of the NDJSON form.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_ndjson().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn count(&self, name: &str) -> usize {
        self.events.iter().filter(|e| e.kind.name() == name).count()
    }

    pub fn end_time(&self) -> f64 {
        self.events.last().map(|e| e.time).unwrap_or(0.0)
    }
}

#[derive(Default)]
struct CsvCells {
    alloc: Option<u64>,
    iteration: Option<u64>,
    checkpoint: Option<u64>,
    node: Option<u64>,
    seconds: Option<f64>,
}

impl CsvCells {
    fn of(kind: &EventKind) -> Self {
        use EventKind::*;
        let mut c = CsvCells::default();
        match *kind {
            AllocStart { alloc, .. } | SignalDelivered { alloc } => c.alloc = Some(alloc),
            VettingPass { alloc, span } => {
                c.alloc = Some(alloc);
                c.seconds = Some(span);
            }
            VettingAbort { alloc, node, span } => {
                c.alloc = Some(alloc);
                c.node = Some(node);
                c.seconds = Some(span);
            }
            JobStart {
                alloc,
                startup,
                restore,
                restored_iteration,
            } => {
                c.alloc = Some(alloc);
                c.iteration = Some(restored_iteration);
                c.seconds = Some(startup + restore);
            }
            StartupFail { alloc, span, .. } => {
                c.alloc = Some(alloc);
                c.seconds = Some(span);
            }
            IterationBlockDone {
                end,
                compute,
                overhead,
                dip,
                ..
            } => {
                c.iteration = Some(end);
                c.seconds = Some(compute + overhead + dip);
            }
            CheckpointBegin {
                checkpoint, iteration, ..
            } => {
                c.checkpoint = Some(checkpoint);
                c.iteration = Some(iteration);
            }
            CheckpointDone {
                checkpoint,
                iteration,
                stall,
            }
            | FinalCheckpoint {
                checkpoint,
                iteration,
                span: stall,
            } => {
                c.checkpoint = Some(checkpoint);
                c.iteration = Some(iteration);
                c.seconds = Some(stall);
            }
            NodeFailure { node, iteration, stall } => {
                c.node = Some(node);
                c.iteration = Some(iteration);
                c.seconds = Some(stall);
            }
            OomFailure { iteration, stall } => {
                c.iteration = Some(iteration);
                c.seconds = Some(stall);
            }
            AllocEnd { alloc, idle, stall, .. } => {
                c.alloc = Some(alloc);
                c.seconds = Some(idle + stall);
            }
            Requeue { alloc, delay } => {
                c.alloc = Some(alloc);
                c.seconds = Some(delay);
            }
            CampaignDone { iterations, .. } => c.iteration = Some(iterations),
        }
        c
    }
}
