use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::scenario::ScenarioSpec;

use super::event::{EndReason, EventKind, EventTrace};
use super::SimError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WasteCategory {
    UsefulCompute,
    Recomputation,
    CheckpointOverhead,
    StartupRestore,
    Vetting,
    BubbleComm,
    IdleRequeue,
}

impl WasteCategory {
    pub const ALL: [WasteCategory; 7] = [
        WasteCategory::UsefulCompute,
        WasteCategory::Recomputation,
        WasteCategory::CheckpointOverhead,
        WasteCategory::StartupRestore,
        WasteCategory::Vetting,
        WasteCategory::BubbleComm,
        WasteCategory::IdleRequeue,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            WasteCategory::UsefulCompute => "useful_compute",
            WasteCategory::Recomputation => "recomputation",
            WasteCategory::CheckpointOverhead => "checkpoint_overhead",
            WasteCategory::StartupRestore => "startup_restore",
            WasteCategory::Vetting => "vetting",
            WasteCategory::BubbleComm => "bubble_comm",
            WasteCategory::IdleRequeue => "idle_requeue",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Goodput {
    pub useful_tokens_per_s: f64,
    pub tokens_done: u64,
    pub total_wallclock: f64,
    pub gpu_seconds_spent: f64,
    /// GPU-seconds per category; sums to `gpu_seconds_spent`.
    pub breakdown: BTreeMap<WasteCategory, f64>,
    /// Iterations discarded at each rollback.
    pub rollbacks: Vec<u64>,
}

impl Goodput {
    pub fn shares(&self) -> BTreeMap<WasteCategory, f64> {
        let total: f64 = self.breakdown.values().sum();
        self.breakdown
            .iter()
            .map(|(k, v)| (*k, if total > 0.0 { v / total } else { 0.0 }))
            .collect()
    }

    pub fn share(&self, c: WasteCategory) -> f64 {
        self.shares()[&c]
    }
}

struct Pending {
    first: u64,
    end: u64,
    compute: f64,
    overhead: f64,
    dip: f64,
}

/// Folds a trace into throughput and a waste partition of the GPU-seconds.
pub fn measure_goodput(trace: &EventTrace, scenario: &ScenarioSpec) -> Result<Goodput, SimError> {
    let digest = scenario.digest();
    if trace.scenario_digest != digest {
        return Err(SimError::DigestMismatch {
            trace: trace.scenario_digest.clone(),
            scenario: digest,
        });
    }
    use WasteCategory::*;
    let mut secs: BTreeMap<WasteCategory, f64> = WasteCategory::ALL.iter().map(|c| (*c, 0.0)).collect();
    let mut pending: Vec<Pending> = Vec::new();
    let mut rollbacks = Vec::new();
    let mut tokens_done = 0;

    let commit = |pending: &mut Vec<Pending>, upto: u64, secs: &mut BTreeMap<WasteCategory, f64>| {
        pending.retain(|p| {
            if p.end > upto {
                return true;
            }
            *secs.get_mut(&UsefulCompute).unwrap() += p.compute;
            *secs.get_mut(&BubbleComm).unwrap() += p.overhead;
            *secs.get_mut(&CheckpointOverhead).unwrap() += p.dip;
            false
        });
    };
    let rollback = |pending: &mut Vec<Pending>, secs: &mut BTreeMap<WasteCategory, f64>, rb: &mut Vec<u64>| {
        let mut lost = 0;
        for p in pending.drain(..) {
            lost += p.end - p.first;
            *secs.get_mut(&Recomputation).unwrap() += p.compute + p.overhead + p.dip;
        }
        rb.push(lost);
    };

    for e in &trace.events {
        let mut add = |c: WasteCategory, v: f64| *secs.get_mut(&c).unwrap() += v;
        match e.kind {
            EventKind::VettingPass { span, .. } | EventKind::VettingAbort { span, .. } => add(Vetting, span),
            EventKind::StartupFail { span, .. } => add(StartupRestore, span),
            EventKind::JobStart { startup, restore, .. } => add(StartupRestore, startup + restore),
            EventKind::IterationBlockDone {
                first,
                end,
                compute,
                overhead,
                dip,
            } => pending.push(Pending {
                first,
                end,
                compute,
                overhead,
                dip,
            }),
            EventKind::CheckpointDone { iteration, stall, .. } => {
                add(CheckpointOverhead, stall);
                commit(&mut pending, iteration, &mut secs);
            }
            EventKind::FinalCheckpoint { iteration, span, .. } => {
                add(CheckpointOverhead, span);
                commit(&mut pending, iteration, &mut secs);
            }
            EventKind::NodeFailure { stall, .. } | EventKind::OomFailure { stall, .. } => {
                add(CheckpointOverhead, stall);
                rollback(&mut pending, &mut secs, &mut rollbacks);
            }
            EventKind::AllocEnd {
                reason,
                clean,
                idle,
                stall,
                ..
            } => {
                add(IdleRequeue, idle);
                add(CheckpointOverhead, stall);
                if !clean && reason == EndReason::Walltime {
                    rollback(&mut pending, &mut secs, &mut rollbacks);
                }
            }
            EventKind::Requeue { delay, .. } => add(IdleRequeue, delay),
            EventKind::CampaignDone { tokens_done: t, .. } => {
                tokens_done = t;
                commit(&mut pending, u64::MAX, &mut secs);
            }
            EventKind::AllocStart { .. } | EventKind::CheckpointBegin { .. } | EventKind::SignalDelivered { .. } => {}
        }
    }

    let gpus = scenario.alloc_gpus() as f64;
    for v in secs.values_mut() {
        *v *= gpus;
    }
    let wall = trace.end_time();
    Ok(Goodput {
        useful_tokens_per_s: if wall > 0.0 { tokens_done as f64 / wall } else { 0.0 },
        tokens_done,
        total_wallclock: wall,
        gpu_seconds_spent: wall * gpus,
        breakdown: secs,
        rollbacks,
    })
}
