//! Campaign reports built from traces, and ranked policy comparisons.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::{ScenarioSpec, DIGEST_SYSTEM_PREFIX};
use crate::sim::{measure_goodput, EventKind, EventTrace, SimError, WasteCategory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointStats {
    /// Periodic writes that completed plus final checkpoints.
    pub written: u64,
    /// Periodic writes begun but never completed.
    pub invalidated: u64,
    /// Wall-clock checkpoint overhead per written checkpoint, in seconds.
    pub mean_effective_cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartStats {
    /// Allocations that ended by discarding uncommitted state.
    pub count: u64,
    pub mean_lost_iterations: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub scenario_digest: String,
    pub seeds: Vec<u64>,
    pub tool_version: String,
    pub total_wallclock: f64,
    pub gpu_hours: f64,
    pub useful_tokens_per_s: f64,
    pub waste_shares: BTreeMap<WasteCategory, f64>,
    /// Event counts by kind; every kind is present. Summed over seeds in
    /// an aggregated report.
    pub counts: BTreeMap<String, u64>,
    pub checkpoint_stats: CheckpointStats,
    pub restart_stats: RestartStats,
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("need at least two reports to compare, got {0}")]
    TooFewReports(usize),
    #[error("reports `{first}` and `{other}` describe different systems; only policy fields may differ")]
    IncomparableScenarios { first: String, other: String },
    #[error("cannot aggregate an empty list of reports")]
    Empty,
    #[error("reports to aggregate come from different scenarios")]
    MixedScenarios,
}

pub fn build_report(trace: &EventTrace, scenario: &ScenarioSpec) -> Result<CampaignReport, SimError> {
    let g = measure_goodput(trace, scenario)?;
    let mut counts: BTreeMap<String, u64> = EventKind::NAMES.iter().map(|n| (n.to_string(), 0)).collect();
    for e in &trace.events {
        *counts.get_mut(e.kind.name()).expect("every kind is named") += 1;
    }
    let begun = counts["CheckpointBegin"];
    let done = counts["CheckpointDone"];
    let written = done + counts["FinalCheckpoint"];
    let ckpt_wall = g.breakdown[&WasteCategory::CheckpointOverhead] / scenario.alloc_gpus() as f64;
    let restarts = g.rollbacks.len() as u64;
    Ok(CampaignReport {
        scenario_digest: trace.scenario_digest.clone(),
        seeds: vec![trace.seed],
        tool_version: crate::VERSION.to_string(),
        total_wallclock: g.total_wallclock,
        gpu_hours: g.gpu_seconds_spent / 3600.0,
        useful_tokens_per_s: g.useful_tokens_per_s,
        waste_shares: g.shares(),
        counts,
        checkpoint_stats: CheckpointStats {
            written,
            invalidated: begun.saturating_sub(done),
            mean_effective_cost: if written > 0 { ckpt_wall / written as f64 } else { 0.0 },
        },
        restart_stats: RestartStats {
            count: restarts,
            mean_lost_iterations: if restarts > 0 {
                g.rollbacks.iter().sum::<u64>() as f64 / restarts as f64
            } else {
                0.0
            },
        },
    })
}

/// Multi-seed summary of one scenario: scalars are means over the reports,
/// counts are totals, seeds are concatenated.
pub fn aggregate(reports: &[CampaignReport]) -> Result<CampaignReport, ReportError> {
    let first = reports.first().ok_or(ReportError::Empty)?;
    if reports.iter().any(|r| r.scenario_digest != first.scenario_digest) {
        return Err(ReportError::MixedScenarios);
    }
    let n = reports.len() as f64;
    let mean = |f: &dyn Fn(&CampaignReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let mut counts = first.counts.clone();
    for r in &reports[1..] {
        for (k, v) in &r.counts {
            *counts.entry(k.clone()).or_default() += v;
        }
    }
    let waste_shares = first
        .waste_shares
        .keys()
        .map(|k| (*k, mean(&|r| r.waste_shares[k])))
        .collect();
    let restarts: u64 = reports.iter().map(|r| r.restart_stats.count).sum();
    let lost: f64 = reports
        .iter()
        .map(|r| r.restart_stats.mean_lost_iterations * r.restart_stats.count as f64)
        .sum();
    let written: u64 = reports.iter().map(|r| r.checkpoint_stats.written).sum();
    let cost: f64 = reports
        .iter()
        .map(|r| r.checkpoint_stats.mean_effective_cost * r.checkpoint_stats.written as f64)
        .sum();
    Ok(CampaignReport {
        scenario_digest: first.scenario_digest.clone(),
        seeds: reports.iter().flat_map(|r| r.seeds.iter().copied()).collect(),
        tool_version: first.tool_version.clone(),
        total_wallclock: mean(&|r| r.total_wallclock),
        gpu_hours: mean(&|r| r.gpu_hours),
        useful_tokens_per_s: mean(&|r| r.useful_tokens_per_s),
        waste_shares,
        counts,
        checkpoint_stats: CheckpointStats {
            written,
            invalidated: reports.iter().map(|r| r.checkpoint_stats.invalidated).sum(),
            mean_effective_cost: if written > 0 { cost / written as f64 } else { 0.0 },
        },
        restart_stats: RestartStats {
            count: restarts,
            mean_lost_iterations: if restarts > 0 { lost / restarts as f64 } else { 0.0 },
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub tokens_per_s: f64,
    pub gpu_hours: f64,
    /// Throughput difference to the best row (zero or negative).
    pub delta_vs_best: f64,
    /// Waste share differences to the best row.
    pub waste_deltas: BTreeMap<WasteCategory, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn best(&self) -> &ComparisonRow {
        &self.rows[0]
    }
}

/// Ranks reports by throughput, then lower GPU-hours, then label.
pub fn compare_policies(reports: &[(String, CampaignReport)]) -> Result<Comparison, ReportError> {
    if reports.len() < 2 {
        return Err(ReportError::TooFewReports(reports.len()));
    }
    let system = |r: &CampaignReport| r.scenario_digest.chars().take(DIGEST_SYSTEM_PREFIX).collect::<String>();
    let (first_label, first) = &reports[0];
    if let Some((label, _)) = reports.iter().find(|(_, r)| system(r) != system(first)) {
        return Err(ReportError::IncomparableScenarios {
            first: first_label.clone(),
            other: label.clone(),
        });
    }
    let mut sorted: Vec<&(String, CampaignReport)> = reports.iter().collect();
    sorted.sort_by(|(la, a), (lb, b)| {
        b.useful_tokens_per_s
            .total_cmp(&a.useful_tokens_per_s)
            .then(a.gpu_hours.total_cmp(&b.gpu_hours))
            .then(la.cmp(lb))
    });
    let best = &sorted[0].1;
    let rows = sorted
        .iter()
        .map(|(label, r)| ComparisonRow {
            label: label.clone(),
            tokens_per_s: r.useful_tokens_per_s,
            gpu_hours: r.gpu_hours,
            delta_vs_best: r.useful_tokens_per_s - best.useful_tokens_per_s,
            waste_deltas: r
                .waste_shares
                .iter()
                .map(|(k, v)| (*k, v - best.waste_shares.get(k).copied().unwrap_or(0.0)))
                .collect(),
        })
        .collect();
    Ok(Comparison { rows })
}
