//! Checkpoint cadence, restart waste, startup-failure scaling and the value
//! of node vetting.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::{ScenarioSpec, Violations};

#[derive(Debug, Error, PartialEq)]
pub enum ResilienceError {
    #[error("invalid inputs: {0}")]
    InvalidInputs(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointInterval {
    Iterations(u64),
    Seconds(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointPolicy {
    pub interval: CheckpointInterval,
    /// Effective cost to training of one checkpoint: the integrated
    /// throughput dip for asynchronous writes, the full stall otherwise.
    pub write_cost: f64,
    #[serde(rename = "async")]
    pub async_write: bool,
    pub dip_factor: f64,
    /// Length of an asynchronous write, in undisturbed training seconds.
    pub write_duration: f64,
    pub tier: String,
    pub restore_cost: f64,
}

impl CheckpointPolicy {
    /// Asynchronous policy whose dip integrates to `write_cost`.
    pub fn asynchronous(
        interval: CheckpointInterval,
        write_cost: f64,
        dip_factor: f64,
        tier: &str,
        restore_cost: f64,
    ) -> Self {
        Self {
            interval,
            write_cost,
            async_write: true,
            dip_factor,
            write_duration: write_cost / (dip_factor - 1.0),
            tier: tier.to_string(),
            restore_cost,
        }
    }

    /// Interval in iterations for a given iteration time.
    pub fn interval_iterations(&self, iteration_time: f64) -> u64 {
        match self.interval {
            CheckpointInterval::Iterations(n) => n,
            CheckpointInterval::Seconds(s) => ((s / iteration_time).round() as u64).max(1),
        }
    }

    pub(crate) fn check(&self, v: &mut Violations) {
        match self.interval {
            CheckpointInterval::Iterations(n) => {
                v.require(n >= 1, "checkpoint.interval_iterations", "must be positive")
            }
            CheckpointInterval::Seconds(s) => v.require(s > 0.0, "checkpoint.interval_seconds", "must be positive"),
        }
        v.require(self.write_cost > 0.0, "checkpoint.write_cost", "must be positive");
        v.require(
            self.restore_cost >= 0.0,
            "checkpoint.restore_cost",
            "must be non-negative",
        );
        v.require(self.dip_factor >= 1.0, "checkpoint.dip_factor", "must be at least 1");
        if self.async_write {
            v.require(
                self.write_duration > 0.0,
                "checkpoint.write_duration",
                "must be positive",
            );
            let integrated = (self.dip_factor - 1.0) * self.write_duration;
            v.require(
                (integrated - self.write_cost).abs() <= 0.01 * self.write_cost,
                "checkpoint.dip_factor",
                &format!("(dip_factor - 1) * write_duration = {integrated} must match write_cost within 1%"),
            );
        } else {
            v.require(
                self.write_duration >= 0.0,
                "checkpoint.write_duration",
                "must be non-negative",
            );
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct YoungDaly {
    pub interval: f64,
    /// Set when the write cost leaves the first-order validity window.
    pub warning: Option<String>,
}

/// First-order optimal checkpoint period `sqrt(2 * C * M)`.
pub fn young_daly_interval(write_cost: f64, cluster_mtbf: f64) -> Result<YoungDaly, ResilienceError> {
    if !(write_cost > 0.0 && cluster_mtbf > 0.0) || !write_cost.is_finite() {
        return Err(ResilienceError::InvalidInputs(format!(
            "write cost {write_cost} and MTBF {cluster_mtbf} must be positive"
        )));
    }
    let warning = (write_cost >= cluster_mtbf / 2.0)
        .then(|| format!("write cost {write_cost} s is not small against MTBF {cluster_mtbf} s; first-order estimate"));
    Ok(YoungDaly {
        interval: (2.0 * write_cost * cluster_mtbf).sqrt(),
        warning,
    })
}

/// Iterations for a period, rounded to the nearest multiple of ten.
pub fn to_iterations(interval: f64, iteration_time: f64) -> u64 {
    let tens = (interval / iteration_time / 10.0).round() as u64;
    tens.max(1) * 10
}

/// Expected fraction of time lost to checkpointing and recomputation.
pub fn waste_fraction(interval: f64, write_cost: f64, cluster_mtbf: f64, restore_cost: f64) -> f64 {
    write_cost / interval + (interval / 2.0 + restore_cost) / cluster_mtbf
}

/// Probability that at least one of `units` independent units fails.
pub fn startup_failure_prob(p_unit: f64, units: u64) -> f64 {
    if units == 0 || p_unit <= 0.0 {
        return 0.0;
    }
    if p_unit >= 1.0 {
        return 1.0;
    }
    -(units as f64 * (-p_unit).ln_1p()).exp_m1()
}

/// Expected GPU-seconds saved per launch by a vetting prolog; positive when
/// vetting pays for itself.
pub fn vetting_value(
    test_duration: f64,
    sensitivity: f64,
    bad_node_prob: f64,
    nodes: u64,
    gpus_per_node: u64,
    expected_loss_on_bad: f64,
) -> f64 {
    detection_probability(sensitivity, bad_node_prob, nodes) * expected_loss_on_bad
        - test_duration * (nodes * gpus_per_node) as f64
}

/// Probability that the prolog flags at least one node.
pub fn detection_probability(sensitivity: f64, bad_node_prob: f64, nodes: u64) -> f64 {
    startup_failure_prob(sensitivity * bad_node_prob, nodes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureAnalytics {
    pub cluster_mtbf: f64,
    pub p_job_startup_fail: f64,
    pub expected_waste_fraction: f64,
}

/// Analytic failure summary of a scenario's allocation.
pub fn failure_analytics(scenario: &ScenarioSpec, iteration_time: f64) -> FailureAnalytics {
    let m = scenario.cluster_mtbf();
    let f = &scenario.failures;
    let ranks = scenario.alloc_gpus();
    let nodes = scenario.scheduler.alloc_nodes;
    let p_start = 1.0
        - (1.0 - startup_failure_prob(f.p_rank_startup, ranks)) * (1.0 - startup_failure_prob(f.p_node_port, nodes));
    let ck = &scenario.checkpoint;
    let interval = ck.interval_iterations(iteration_time) as f64 * iteration_time;
    FailureAnalytics {
        cluster_mtbf: m,
        p_job_startup_fail: p_start,
        expected_waste_fraction: waste_fraction(interval, ck.write_cost, m, ck.restore_cost).min(1.0),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub factor: f64,
    pub interval_seconds: f64,
    pub waste: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointPlan {
    pub write_cost: f64,
    pub cluster_mtbf: f64,
    pub restore_cost: f64,
    pub iteration_time: Option<f64>,
    pub interval_seconds: f64,
    pub interval_iterations: Option<u64>,
    pub waste_at_optimum: f64,
    pub warning: Option<String>,
    pub sensitivity: Vec<SensitivityRow>,
}

pub const SENSITIVITY_FACTORS: [f64; 5] = [0.5, 0.75, 1.0, 1.25, 1.5];

pub fn plan_checkpoint(
    write_cost: f64,
    cluster_mtbf: f64,
    restore_cost: f64,
    iteration_time: Option<f64>,
) -> Result<CheckpointPlan, ResilienceError> {
    let yd = young_daly_interval(write_cost, cluster_mtbf)?;
    if let Some(t) = iteration_time {
        if t.is_nan() || t <= 0.0 {
            return Err(ResilienceError::InvalidInputs("iteration time must be positive".into()));
        }
    }
    let waste = |tau: f64| waste_fraction(tau, write_cost, cluster_mtbf, restore_cost);
    Ok(CheckpointPlan {
        write_cost,
        cluster_mtbf,
        restore_cost,
        iteration_time,
        interval_seconds: yd.interval,
        interval_iterations: iteration_time.map(|t| to_iterations(yd.interval, t)),
        waste_at_optimum: waste(yd.interval),
        warning: yd.warning,
        sensitivity: SENSITIVITY_FACTORS
            .iter()
            .map(|&factor| SensitivityRow {
                factor,
                interval_seconds: factor * yd.interval,
                waste: waste(factor * yd.interval),
            })
            .collect(),
    })
}
