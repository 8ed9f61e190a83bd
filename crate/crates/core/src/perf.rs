//! Analytic per-iteration time model, scaling tables and saturation scores.
//!
//! Iteration time is composed additively:
//! `t_compute * (1 + bubble) + exposed data-parallel collectives + tensor-parallel collectives`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::{ClusterSpec, CommModelSpec, ParallelismLayout, ScenarioSpec, WorkloadSpec};

/// Forward plus backward FLOPs per parameter per token.
pub const FLOPS_PER_PARAM_TOKEN: f64 = 6.0;

/// Weak-scaling global batch at the smallest GPU count.
pub const WEAK_BASE_BATCH_TOKENS: f64 = 0.13e6;

#[derive(Debug, Error, PartialEq)]
pub enum PerfError {
    #[error("layout {layout} covers {product} GPUs, not {gpus}")]
    LayoutMismatch {
        layout: ParallelismLayout,
        product: u64,
        gpus: u64,
    },
    #[error("no layout with tp={tp} cp={cp} divides {gpus} GPUs")]
    LayoutInfeasible { gpus: u64, tp: u64, cp: u64 },
    #[error("GPU counts must be non-empty and strictly ascending")]
    BadGpuCounts,
    #[error("telemetry is empty")]
    EmptyTelemetry,
    #[error("saturation ceilings must be positive")]
    BadCeiling,
    #[error("calibration failed: {0}")]
    Calibration(String),
}

/// Ideal kernel time of one iteration on `gpus` GPUs.
pub fn compute_time(workload: &WorkloadSpec, gpus: u64, cluster: &ClusterSpec) -> f64 {
    FLOPS_PER_PARAM_TOKEN * workload.param_count as f64 * workload.global_batch_tokens as f64
        / (gpus as f64 * cluster.effective_peak_flops() * workload.target_mfu)
}

/// Idle fraction of an interleaved pipeline schedule.
pub fn pipeline_bubble(layout: &ParallelismLayout, microbatches: u64) -> f64 {
    if layout.pp <= 1 {
        return 0.0;
    }
    (layout.pp - 1) as f64 / (layout.vpp * microbatches.max(1)) as f64
}

/// Bytes of gradient each data-parallel rank reduces per iteration.
pub fn gradient_shard_bytes(workload: &WorkloadSpec, layout: &ParallelismLayout) -> f64 {
    workload.param_count as f64 * workload.bytes_per_param / (layout.tp * layout.pp) as f64
}

/// Alpha-beta cost of the bucketed gradient all-reduce.
pub fn dp_allreduce_time(workload: &WorkloadSpec, layout: &ParallelismLayout, comm: &CommModelSpec) -> f64 {
    allreduce_time(gradient_shard_bytes(workload, layout), layout.dp, comm)
}

pub(crate) fn allreduce_time(shard_bytes: f64, dp: u64, comm: &CommModelSpec) -> f64 {
    if dp <= 1 {
        return 0.0;
    }
    let buckets = (shard_bytes / comm.bucket_bytes).ceil().max(1.0);
    let dp = dp as f64;
    buckets * comm.alpha + 2.0 * (dp - 1.0) / dp * shard_bytes / comm.beta_inverse
}

/// Lumped tensor-parallel collective time per iteration.
pub fn tp_time(layout: &ParallelismLayout, comm: &CommModelSpec) -> f64 {
    if layout.tp <= 1 {
        return 0.0;
    }
    comm.tp_count as f64 * comm.tp_alpha + comm.tp_volume_bytes / comm.tp_bandwidth
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationTimeModel {
    pub t_compute: f64,
    pub bubble_fraction: f64,
    pub t_dp_exposed: f64,
    pub t_tp: f64,
    /// Slowdown while an asynchronous checkpoint write is in flight.
    pub dip_factor: f64,
    pub t_iteration: f64,
}

impl IterationTimeModel {
    pub fn compose(t_compute: f64, bubble_fraction: f64, t_dp_exposed: f64, t_tp: f64, dip_factor: f64) -> Self {
        Self {
            t_compute,
            bubble_fraction,
            t_dp_exposed,
            t_tp,
            dip_factor,
            t_iteration: t_compute * (1.0 + bubble_fraction) + t_dp_exposed + t_tp,
        }
    }

    /// Iteration time recomputed from the components.
    pub fn recomposed(&self) -> f64 {
        self.t_compute * (1.0 + self.bubble_fraction) + self.t_dp_exposed + self.t_tp
    }

    /// Everything beyond ideal compute: bubble and exposed communication.
    pub fn overhead(&self) -> f64 {
        self.t_iteration - self.t_compute
    }

    pub fn t_dipped(&self) -> f64 {
        self.t_iteration * self.dip_factor
    }
}

pub fn iteration_time(scenario: &ScenarioSpec, gpus: u64) -> Result<IterationTimeModel, PerfError> {
    let w = &scenario.workload;
    let layout = &w.layout;
    if layout.gpus() != gpus {
        return Err(PerfError::LayoutMismatch {
            layout: *layout,
            product: layout.gpus(),
            gpus,
        });
    }
    let t_compute = compute_time(w, gpus, &scenario.cluster);
    let bubble = pipeline_bubble(layout, w.microbatches(layout.dp));
    let exposed = (1.0 - scenario.comm.overlap) * dp_allreduce_time(w, layout, &scenario.comm);
    let dip = if scenario.checkpoint.async_write {
        scenario.checkpoint.dip_factor
    } else {
        1.0
    };
    Ok(IterationTimeModel::compose(
        t_compute,
        bubble,
        exposed,
        tp_time(layout, &scenario.comm),
        dip,
    ))
}

/// Layout for `gpus` GPUs: tp and cp kept, pp the largest divisor of the
/// scenario's pp that fits, dp the remainder.
pub fn adapt_layout(scenario: &ScenarioSpec, gpus: u64) -> Result<ParallelismLayout, PerfError> {
    let base = scenario.workload.layout;
    let infeasible = PerfError::LayoutInfeasible {
        gpus,
        tp: base.tp,
        cp: base.cp,
    };
    let fixed = base.tp * base.cp;
    if gpus == 0 || !gpus.is_multiple_of(fixed) {
        return Err(infeasible);
    }
    let rest = gpus / fixed;
    let pp = (1..=base.pp)
        .rev()
        .find(|p| base.pp.is_multiple_of(*p) && rest.is_multiple_of(*p))
        .ok_or(infeasible)?;
    Ok(ParallelismLayout {
        pp,
        dp: rest / pp,
        ..base
    })
}

/// The scenario re-laid-out on `gpus` GPUs with a matching allocation size.
pub fn scenario_at(scenario: &ScenarioSpec, gpus: u64) -> Result<ScenarioSpec, PerfError> {
    let layout = adapt_layout(scenario, gpus)?;
    let mut s = scenario.clone();
    s.workload.layout = layout;
    s.scheduler.alloc_nodes = gpus.div_ceil(s.cluster.gpus_per_node);
    Ok(s)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalingMode {
    Strong,
    Weak,
}

impl fmt::Display for ScalingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScalingMode::Strong => "strong",
            ScalingMode::Weak => "weak",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub gpus: u64,
    pub tokens_per_s_per_gpu: f64,
    pub efficiency: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingTable {
    pub mode: ScalingMode,
    pub baseline_gpus: u64,
    pub rows: Vec<ScalingRow>,
}

/// Per-GPU throughput of `scenario` re-laid-out on `gpus`, unrounded.
pub fn tokens_per_s_per_gpu(scenario: &ScenarioSpec, gpus: u64) -> Result<f64, PerfError> {
    let s = scenario_at(scenario, gpus)?;
    let t = iteration_time(&s, gpus)?;
    Ok(s.workload.global_batch_tokens as f64 / (t.t_iteration * gpus as f64))
}

pub fn scaling_table(
    scenario: &ScenarioSpec,
    gpu_counts: &[u64],
    mode: ScalingMode,
) -> Result<ScalingTable, PerfError> {
    if gpu_counts.is_empty() || gpu_counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(PerfError::BadGpuCounts);
    }
    let base = gpu_counts[0];
    let mut throughput = Vec::with_capacity(gpu_counts.len());
    for &n in gpu_counts {
        let mut s = scenario.clone();
        if mode == ScalingMode::Weak {
            let batch = WEAK_BASE_BATCH_TOKENS * n as f64 / base as f64;
            s.workload.global_batch_tokens = batch.round() as u64;
        }
        throughput.push(tokens_per_s_per_gpu(&s, n)?);
    }
    let rows = gpu_counts
        .iter()
        .zip(&throughput)
        .map(|(&gpus, &tps)| ScalingRow {
            gpus,
            tokens_per_s_per_gpu: tps,
            efficiency: round3(tps / throughput[0]),
        })
        .collect();
    Ok(ScalingTable {
        mode,
        baseline_gpus: base,
        rows,
    })
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// Powers of two from `from` to `to` inclusive.
pub fn doubling_counts(from: u64, to: u64) -> Vec<u64> {
    std::iter::successors(Some(from), |&n| Some(n * 2))
        .take_while(|&n| n <= to)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub target_mfu: f64,
    pub alpha: f64,
}

/// Two-parameter fit: `target_mfu` so the target scale reaches
/// `target_tps` tokens/s/GPU, and `alpha` so strong-scaling efficiency from
/// `base_gpus` to `target_gpus` equals `target_efficiency`.
pub fn calibrate(
    scenario: &ScenarioSpec,
    base_gpus: u64,
    target_gpus: u64,
    target_tps: f64,
    target_efficiency: f64,
) -> Result<Calibration, PerfError> {
    let with = |mfu: f64, alpha: f64| {
        let mut s = scenario.clone();
        s.workload.target_mfu = mfu;
        s.comm.alpha = alpha;
        s
    };
    let fit_mfu = |alpha: f64| -> Result<f64, PerfError> {
        let tps = |mfu: f64| tokens_per_s_per_gpu(&with(mfu, alpha), target_gpus);
        if tps(1.0)? < target_tps {
            return Err(PerfError::Calibration(format!(
                "{target_tps} tokens/s/GPU unreachable at alpha={alpha}"
            )));
        }
        bisect(1e-6, 1.0, |m| Ok(tps(m)? - target_tps))
    };
    // An unreachable throughput target means alpha is too large.
    let efficiency = |alpha: f64| -> Result<f64, PerfError> {
        let mfu = match fit_mfu(alpha) {
            Ok(m) => m,
            Err(PerfError::Calibration(_)) => return Ok(0.0),
            Err(e) => return Err(e),
        };
        let s = with(mfu, alpha);
        Ok(tokens_per_s_per_gpu(&s, target_gpus)? / tokens_per_s_per_gpu(&s, base_gpus)?)
    };
    let mut hi = 1e-3;
    while efficiency(hi)? > target_efficiency {
        hi *= 2.0;
        if hi > 1e3 {
            return Err(PerfError::Calibration("alpha bracket not found".into()));
        }
    }
    let alpha = bisect(0.0, hi, |a| Ok(target_efficiency - efficiency(a)?))?;
    Ok(Calibration {
        target_mfu: fit_mfu(alpha)?,
        alpha,
    })
}

/// Root of an increasing function on `[lo, hi]`.
fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> Result<f64, PerfError>) -> Result<f64, PerfError> {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi.abs() {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TelemetrySample {
    /// FLOP/s per GPU.
    pub flops_rate: f64,
    pub mem_bw: f64,
    pub net_bw: f64,
    pub timestamp: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resource {
    Compute,
    Memory,
    Network,
}

impl Resource {
    /// Tie-break order.
    pub const ALL: [Resource; 3] = [Resource::Compute, Resource::Memory, Resource::Network];

    pub fn as_str(self) -> &'static str {
        match self {
            Resource::Compute => "compute",
            Resource::Memory => "memory",
            Resource::Network => "network",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ceilings {
    pub mem_bw_peak: f64,
    pub net_bw_peak: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaturationScore {
    pub per_resource: BTreeMap<Resource, f64>,
    pub bottleneck: Resource,
    pub headroom: f64,
}

pub fn saturation_score(
    samples: &[TelemetrySample],
    cluster: &ClusterSpec,
    ceilings: Ceilings,
) -> Result<SaturationScore, PerfError> {
    if samples.is_empty() {
        return Err(PerfError::EmptyTelemetry);
    }
    let compute_ceiling = cluster.effective_peak_flops();
    if !(compute_ceiling > 0.0 && ceilings.mem_bw_peak > 0.0 && ceilings.net_bw_peak > 0.0) {
        return Err(PerfError::BadCeiling);
    }
    let n = samples.len() as f64;
    let mean = |f: fn(&TelemetrySample) -> f64| samples.iter().map(f).sum::<f64>() / n;
    let score = |rate: f64, ceiling: f64| (rate / ceiling).clamp(0.0, 1.0);
    let per_resource = BTreeMap::from([
        (Resource::Compute, score(mean(|s| s.flops_rate), compute_ceiling)),
        (Resource::Memory, score(mean(|s| s.mem_bw), ceilings.mem_bw_peak)),
        (Resource::Network, score(mean(|s| s.net_bw), ceilings.net_bw_peak)),
    ]);
    let mut bottleneck = Resource::Compute;
    for r in Resource::ALL {
        // Differences at rounding level count as ties.
        if per_resource[&r] > per_resource[&bottleneck] * (1.0 + 1e-12) + 1e-300 {
            bottleneck = r;
        }
    }
    let max = per_resource[&bottleneck];
    Ok(SaturationScore {
        per_resource,
        bottleneck,
        headroom: 1.0 - max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::default_reference_scenario;

    fn workload(p: u64, b: u64, mfu: f64) -> WorkloadSpec {
        let mut w = default_reference_scenario().workload;
        w.param_count = p;
        w.global_batch_tokens = b;
        w.target_mfu = mfu;
        w
    }

    fn cluster(peak: f64) -> ClusterSpec {
        let mut c = default_reference_scenario().cluster;
        c.gpu_peak_flops = peak;
        c.vboost = false;
        c.boost_factor = 1.0;
        c
    }

    fn layout(tp: u64, pp: u64, dp: u64, vpp: u64) -> ParallelismLayout {
        ParallelismLayout { tp, pp, dp, cp: 1, vpp }
    }

    #[test]
    fn compute_time_reference_values() {
        let t = compute_time(&workload(70_000_000_000, 16_800_000, 0.31), 4096, &cluster(989e12));
        // 6 * 70e9 * 16.8e6 / (4096 * 989e12 * 0.31)
        assert!((t - 5.618_76).abs() < 1e-4, "{t}");
        assert_eq!(compute_time(&workload(1, 1, 1.0), 1, &cluster(6.0)), 1.0);
    }

    #[test]
    fn compute_time_halves_with_double_gpus() {
        let w = workload(70_000_000_000, 16_800_000, 0.4);
        let c = cluster(989e12);
        for n in [32u64, 100, 4096] {
            assert_eq!(compute_time(&w, 2 * n, &c), compute_time(&w, n, &c) / 2.0);
        }
    }

    #[test]
    fn vboost_scales_compute_ceiling() {
        let w = workload(70_000_000_000, 16_800_000, 0.4);
        let mut c = cluster(989e12);
        let base = compute_time(&w, 64, &c);
        c.vboost = true;
        c.boost_factor = 1.1;
        assert!((compute_time(&w, 64, &c) * 1.1 - base).abs() < 1e-9 * base);
    }

    #[test]
    fn bubble_values() {
        assert_eq!(pipeline_bubble(&layout(4, 1, 8, 5), 28), 0.0);
        assert_eq!(pipeline_bubble(&layout(4, 8, 8, 2), 28), 0.125);
        assert_eq!(pipeline_bubble(&layout(4, 8, 8, 5), 28), 0.05);
    }

    #[test]
    fn allreduce_bucket_arithmetic() {
        let mut comm = default_reference_scenario().comm;
        comm.alpha = 50e-6;
        comm.beta_inverse = 200e9;
        comm.bucket_bytes = 25e6;
        let s = 1e9;
        let big_dp = 1u64 << 40;
        let t25 = allreduce_time(s, big_dp, &comm);
        assert!((t25 - 0.012).abs() < 1e-9, "{t25}");
        comm.bucket_bytes = 100e6;
        let t100 = allreduce_time(s, big_dp, &comm);
        assert!((t100 - 0.0105).abs() < 1e-9, "{t100}");
        assert!(t100 < t25);
        assert_eq!(allreduce_time(s, 1, &comm), 0.0);
        comm.bucket_bytes = 2e9;
        let one = allreduce_time(s, 8, &comm);
        assert!((one - (50e-6 + 2.0 * 7.0 / 8.0 * s / 200e9)).abs() < 1e-15);
    }

    #[test]
    fn dp_allreduce_uses_shard_bytes() {
        let s = default_reference_scenario();
        let shard = gradient_shard_bytes(&s.workload, &s.workload.layout);
        assert_eq!(shard, 70e9 * 2.0 / 32.0);
        assert_eq!(
            dp_allreduce_time(&s.workload, &s.workload.layout, &s.comm),
            allreduce_time(shard, 64, &s.comm)
        );
    }

    #[test]
    fn communication_free_limit() {
        let mut s = default_reference_scenario();
        s.comm.alpha = 0.0;
        s.comm.tp_alpha = 0.0;
        s.comm.beta_inverse = f64::INFINITY;
        s.comm.tp_bandwidth = f64::INFINITY;
        s.workload.layout = ParallelismLayout {
            tp: 4,
            pp: 1,
            dp: 512,
            cp: 2,
            vpp: 1,
        };
        s.workload.microbatch_tokens = 4375;
        s.workload.global_batch_tokens = 512 * 4375 * 8;
        let m = iteration_time(&s, 4096).unwrap();
        assert_eq!(m.t_iteration, m.t_compute);
    }

    #[test]
    fn layout_mismatch() {
        let s = default_reference_scenario();
        assert!(matches!(
            iteration_time(&s, 2048),
            Err(PerfError::LayoutMismatch {
                product: 4096,
                gpus: 2048,
                ..
            })
        ));
    }

    #[test]
    fn adapt_layout_rule() {
        let s = default_reference_scenario();
        let l = adapt_layout(&s, 32).unwrap();
        assert_eq!((l.tp, l.cp, l.pp, l.dp), (4, 2, 4, 1));
        let l = adapt_layout(&s, 2048).unwrap();
        assert_eq!((l.pp, l.dp), (8, 32));
        assert_eq!(adapt_layout(&s, 4096).unwrap(), s.workload.layout);
        assert!(matches!(adapt_layout(&s, 12), Err(PerfError::LayoutInfeasible { .. })));
    }

    #[test]
    fn scaling_rejects_bad_counts() {
        let s = default_reference_scenario();
        assert_eq!(
            scaling_table(&s, &[], ScalingMode::Strong),
            Err(PerfError::BadGpuCounts)
        );
        assert_eq!(
            scaling_table(&s, &[64, 32], ScalingMode::Strong),
            Err(PerfError::BadGpuCounts)
        );
    }

    #[test]
    fn scaling_baseline_is_one() {
        let s = default_reference_scenario();
        for mode in [ScalingMode::Strong, ScalingMode::Weak] {
            let t = scaling_table(&s, &doubling_counts(32, 4096), mode).unwrap();
            assert_eq!(t.rows[0].efficiency, 1.0);
            assert_eq!(t.baseline_gpus, 32);
        }
    }

    fn sample(f: f64, m: f64, n: f64) -> TelemetrySample {
        TelemetrySample {
            flops_rate: f,
            mem_bw: m,
            net_bw: n,
            timestamp: 0.0,
        }
    }

    #[test]
    fn saturation_compute_score() {
        let c = cluster(989e12);
        let ceil = Ceilings {
            mem_bw_peak: 4e12,
            net_bw_peak: 25e9,
        };
        let rate = 6.0 * 70e9 * 723.0;
        let s = saturation_score(&[sample(rate, 1e12, 5e9)], &c, ceil).unwrap();
        assert!((s.per_resource[&Resource::Compute] - 0.307_03).abs() < 1e-4);
        assert_eq!(s.bottleneck, Resource::Compute);
    }

    #[test]
    fn saturation_identity_and_zero() {
        let c = cluster(989e12);
        let ceil = Ceilings {
            mem_bw_peak: 4e12,
            net_bw_peak: 25e9,
        };
        let full = saturation_score(&[sample(989e12, 4e12, 25e9)], &c, ceil).unwrap();
        assert!(full.per_resource.values().all(|&v| v == 1.0));
        assert_eq!(full.headroom, 0.0);
        let zero = saturation_score(&[sample(0.0, 0.0, 0.0)], &c, ceil).unwrap();
        assert!(zero.per_resource.values().all(|&v| v == 0.0));
        assert_eq!(zero.bottleneck, Resource::Compute);
        assert_eq!(zero.headroom, 1.0);
    }

    #[test]
    fn saturation_clamps_and_errors() {
        let c = cluster(989e12);
        let ceil = Ceilings {
            mem_bw_peak: 4e12,
            net_bw_peak: 25e9,
        };
        let s = saturation_score(&[sample(0.0, 0.0, 50e9)], &c, ceil).unwrap();
        assert_eq!(s.per_resource[&Resource::Network], 1.0);
        assert_eq!(s.bottleneck, Resource::Network);
        assert_eq!(saturation_score(&[], &c, ceil), Err(PerfError::EmptyTelemetry));
    }
}

#[cfg(test)]
mod calibration_tests {
    use super::*;
    use crate::scenario::default_reference_scenario;

    #[test]
    fn reference_constants_come_from_calibration() {
        let mut s = default_reference_scenario();
        s.workload.target_mfu = 0.5;
        s.comm.alpha = 1e-3;
        let c = calibrate(&s, 32, 4096, 723.0, 0.80).unwrap();
        let r = default_reference_scenario();
        assert!(
            (c.target_mfu - r.workload.target_mfu).abs() < 1e-9 * c.target_mfu,
            "{c:?}"
        );
        assert!((c.alpha - r.comm.alpha).abs() < 1e-9 * c.alpha, "{c:?}");
    }

    #[test]
    fn calibrated_reference_hits_targets() {
        let s = default_reference_scenario();
        let tps = tokens_per_s_per_gpu(&s, 4096).unwrap();
        let eff = tps / tokens_per_s_per_gpu(&s, 32).unwrap();
        assert!((tps - 723.0).abs() < 1e-6, "{tps}");
        assert!((eff - 0.80).abs() < 1e-9, "{eff}");
    }

    #[test]
    fn unreachable_target_is_an_error() {
        let s = default_reference_scenario();
        assert!(matches!(
            calibrate(&s, 32, 4096, 1e6, 0.8),
            Err(PerfError::Calibration(_))
        ));
    }
}
