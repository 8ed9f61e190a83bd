//! Scenario description: cluster, storage tiers, workload, communication
//! constants, scheduler and failure models, and checkpoint policy.
//!
//! A [`ScenarioSpec`] is immutable once validated and is shared read-only
//! by every planner and simulation run.

mod format;
mod reference;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::resilience::{CheckpointInterval, CheckpointPolicy};
pub use crate::storage::DatasetSpec;
pub(crate) use format::{from_table, to_table};
pub use format::{
    load_scenario, load_scenario_with, parse_scenario, to_toml, LoadOptions, DEFAULT_SEED, DIGEST_SYSTEM_PREFIX,
};
pub use reference::{default_reference_scenario, post_stabilization_scenario, pre_stabilization_scenario};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub node_count: u64,
    pub gpus_per_node: u64,
    /// FLOP/s per GPU at training precision.
    pub gpu_peak_flops: f64,
    /// Mean time between failures of a single node, seconds.
    pub node_mtbf: f64,
    pub prolog_mem_threshold: f64,
    /// Probability that a node enters an allocation unhealthy.
    pub bad_node_prob: f64,
    pub vboost: bool,
    pub boost_factor: f64,
    /// Inter-node network bandwidth available to one node, bytes/s.
    pub net_bw_per_node: f64,
}

impl ClusterSpec {
    pub const DEFAULT_PROLOG_MEM_THRESHOLD: f64 = 0.90;

    /// Compute ceiling of one GPU with the power boost applied.
    pub fn effective_peak_flops(&self) -> f64 {
        self.gpu_peak_flops * self.boost_factor
    }

    pub fn total_gpus(&self) -> u64 {
        self.node_count * self.gpus_per_node
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Media {
    Flash,
    Hdd,
}

impl Media {
    pub fn default_random_penalty(self) -> f64 {
        match self {
            Media::Flash => 1.0,
            Media::Hdd => 0.3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Media::Flash => "flash",
            Media::Hdd => "hdd",
        }
    }
}

/// External interference on a tier: an alternating renewal process of
/// normal and degraded periods.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub degradation_fraction: f64,
    pub mean_interval: f64,
    pub mean_duration: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StorageTierSpec {
    pub name: String,
    pub media: Media,
    pub aggregate_bandwidth: f64,
    pub per_stream_bandwidth_cap: f64,
    pub iops_cap: f64,
    pub ost_count: u64,
    /// Multiplier applied to random-pattern reads.
    pub random_penalty: f64,
    pub noise: Option<NoiseSpec>,
}

impl StorageTierSpec {
    /// Bandwidth of a single object storage target.
    pub fn per_ost_bandwidth(&self) -> f64 {
        self.aggregate_bandwidth / self.ost_count as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelismLayout {
    pub tp: u64,
    pub pp: u64,
    pub dp: u64,
    pub cp: u64,
    pub vpp: u64,
}

impl ParallelismLayout {
    pub fn gpus(&self) -> u64 {
        self.tp * self.pp * self.dp * self.cp
    }
}

impl fmt::Display for ParallelismLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "tp={} pp={} dp={} cp={} vpp={}",
            self.tp, self.pp, self.dp, self.cp, self.vpp
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub param_count: u64,
    pub token_budget: u64,
    pub global_batch_tokens: u64,
    pub microbatch_tokens: u64,
    pub layout: ParallelismLayout,
    pub bytes_per_param: f64,
    /// Kernel-level compute efficiency before communication losses.
    pub target_mfu: f64,
    pub checkpoint_bytes: f64,
    /// Share of iteration time that stalls on data-path reads; scales with
    /// the dataset tier's noise multiplier.
    pub io_sensitivity: f64,
}

impl WorkloadSpec {
    /// Microbatches per pipeline per iteration for a given data-parallel degree.
    pub fn microbatches(&self, dp: u64) -> u64 {
        let m = self.global_batch_tokens as f64 / (dp * self.microbatch_tokens) as f64;
        (m.round() as u64).max(1)
    }

    /// Iterations needed to consume the token budget.
    pub fn total_iterations(&self) -> u64 {
        self.token_budget.div_ceil(self.global_batch_tokens)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommModelSpec {
    /// Fixed latency per data-parallel collective call, seconds.
    pub alpha: f64,
    /// Effective inter-node collective bandwidth, bytes/s.
    pub beta_inverse: f64,
    pub bucket_bytes: f64,
    /// Share of data-parallel collective time hidden under compute.
    pub overlap: f64,
    pub tp_volume_bytes: f64,
    pub tp_count: u64,
    pub tp_bandwidth: f64,
    /// Latency of one intra-node tensor-parallel collective.
    pub tp_alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VettingPolicy {
    pub enabled: bool,
    pub duration: f64,
    pub sensitivity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchedulerSpec {
    pub walltime: f64,
    pub signal_lead: f64,
    pub requeue_delay: f64,
    pub startup_overhead_base: f64,
    pub image_bytes: f64,
    pub image_tier: String,
    pub image_stripe_count: u64,
    pub singleton: bool,
    /// Nodes granted per allocation.
    pub alloc_nodes: u64,
    pub vetting: VettingPolicy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureModelSpec {
    /// Independent per-rank startup failure probability.
    pub p_rank_startup: f64,
    /// Per-node port collision probability per launch.
    pub p_node_port: f64,
    /// Baseline OOM hazard, 1/s.
    pub oom_h0: f64,
    /// Linear growth of the OOM hazard with time since job start, 1/s².
    pub oom_growth: f64,
    pub cache_flush_prolog: bool,
    /// Time after training starts at which an undetected bad node fails the job.
    pub bad_node_ttf: f64,
}

impl FailureModelSpec {
    /// OOM hazard growth after the cache-flush prolog is taken into account.
    pub fn effective_oom_growth(&self) -> f64 {
        if self.cache_flush_prolog {
            0.0
        } else {
            self.oom_growth
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub cluster: ClusterSpec,
    /// Sorted by name.
    pub tiers: Vec<StorageTierSpec>,
    pub workload: WorkloadSpec,
    pub comm: CommModelSpec,
    pub scheduler: SchedulerSpec,
    pub failures: FailureModelSpec,
    pub checkpoint: CheckpointPolicy,
    pub dataset: DatasetSpec,
    pub seed: u64,
    pub campaign_deadline: Option<f64>,
}

#[derive(Debug, Error)]
#[error("unknown storage tier `{0}`")]
pub struct UnknownTier(pub String);

impl ScenarioSpec {
    pub fn tier(&self, name: &str) -> Result<&StorageTierSpec, UnknownTier> {
        self.tiers
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| UnknownTier(name.to_string()))
    }

    /// GPUs in one allocation.
    pub fn alloc_gpus(&self) -> u64 {
        self.scheduler.alloc_nodes * self.cluster.gpus_per_node
    }

    /// Poisson failure rate of a single node.
    pub fn node_failure_rate(&self) -> f64 {
        1.0 / self.cluster.node_mtbf
    }

    /// Mean time between failures of the nodes in one allocation.
    pub fn cluster_mtbf(&self) -> f64 {
        self.cluster.node_mtbf / self.scheduler.alloc_nodes as f64
    }

    /// Content digest: 16 hex digits over the non-policy sections followed by
    /// 16 over the policy fields. The seed is excluded.
    pub fn digest(&self) -> String {
        format::digest(self)
    }

    /// Check every invariant and report all violations at once.
    pub fn validate(&self) -> Result<(), ValidationError> {
        let mut v = Violations::default();
        self.check(&mut v);
        v.into_result()
    }

    fn check(&self, v: &mut Violations) {
        let c = &self.cluster;
        v.require(c.node_count >= 1, "cluster.node_count", "must be at least 1");
        v.require(c.gpus_per_node >= 1, "cluster.gpus_per_node", "must be at least 1");
        v.require(c.gpu_peak_flops > 0.0, "cluster.gpu_peak_flops", "must be positive");
        v.require(c.node_mtbf > 0.0, "cluster.node_mtbf", "must be positive");
        v.fraction(c.prolog_mem_threshold, "cluster.prolog_mem_threshold");
        v.fraction(c.bad_node_prob, "cluster.bad_node_prob");
        v.require(c.net_bw_per_node > 0.0, "cluster.net_bw_per_node", "must be positive");
        if c.vboost {
            v.require(
                c.boost_factor >= 1.0,
                "cluster.boost_factor",
                "must be >= 1 with vboost",
            );
        } else {
            v.require(
                c.boost_factor == 1.0,
                "cluster.boost_factor",
                "must be exactly 1 when vboost is off",
            );
        }

        if self.tiers.is_empty() {
            v.push("storage", "at least one tier is required");
        }
        for (i, t) in self.tiers.iter().enumerate() {
            let p = |k: &str| format!("storage.{}.{k}", t.name);
            if self.tiers[..i].iter().any(|o| o.name == t.name) {
                v.push(&p("name"), "duplicate tier name");
            }
            v.require(
                t.aggregate_bandwidth > 0.0,
                &p("aggregate_bandwidth"),
                "must be positive",
            );
            v.require(
                t.per_stream_bandwidth_cap > 0.0 && t.per_stream_bandwidth_cap <= t.aggregate_bandwidth,
                &p("per_stream_bandwidth_cap"),
                "must be positive and at most aggregate_bandwidth",
            );
            v.require(t.iops_cap > 0.0, &p("iops_cap"), "must be positive");
            v.require(t.ost_count >= 1, &p("ost_count"), "must be at least 1");
            v.require(
                t.random_penalty > 0.0 && t.random_penalty <= 1.0,
                &p("random_penalty"),
                "must be in (0, 1]",
            );
            if let Some(n) = &t.noise {
                v.require(
                    (0.0..1.0).contains(&n.degradation_fraction),
                    &p("noise.degradation_fraction"),
                    "must be in [0, 1)",
                );
                v.require(n.mean_interval > 0.0, &p("noise.mean_interval"), "must be positive");
                v.require(n.mean_duration > 0.0, &p("noise.mean_duration"), "must be positive");
            }
        }

        let w = &self.workload;
        let l = &w.layout;
        v.require(w.param_count >= 1, "workload.param_count", "must be at least 1");
        v.require(w.token_budget >= 1, "workload.token_budget", "must be at least 1");
        v.require(
            w.global_batch_tokens >= 1,
            "workload.global_batch_tokens",
            "must be at least 1",
        );
        v.require(
            w.microbatch_tokens >= 1,
            "workload.microbatch_tokens",
            "must be at least 1",
        );
        v.require(w.bytes_per_param > 0.0, "workload.bytes_per_param", "must be positive");
        v.require(
            w.target_mfu > 0.0 && w.target_mfu <= 1.0,
            "workload.target_mfu",
            "must be in (0, 1]",
        );
        v.fraction(w.io_sensitivity, "workload.io_sensitivity");
        for (name, deg) in [("tp", l.tp), ("pp", l.pp), ("dp", l.dp), ("cp", l.cp), ("vpp", l.vpp)] {
            v.require(deg >= 1, &format!("workload.layout.{name}"), "must be at least 1");
        }
        v.require(
            l.tp <= c.gpus_per_node,
            "workload.layout.tp",
            &format!("tp={} exceeds gpus_per_node={}", l.tp, c.gpus_per_node),
        );
        let alloc = self.alloc_gpus();
        v.require(
            l.gpus() == alloc,
            "workload.layout",
            &format!(
                "tp*pp*dp*cp = {} does not match the {} GPUs of the allocation",
                l.gpus(),
                alloc
            ),
        );
        let group = l.dp * w.microbatch_tokens;
        v.require(
            group > 0 && w.global_batch_tokens.is_multiple_of(group.max(1)),
            "workload.global_batch_tokens",
            &format!("must be divisible by dp*microbatch_tokens = {group}"),
        );
        v.require(
            w.checkpoint_bytes >= w.param_count as f64 * w.bytes_per_param,
            "workload.checkpoint_bytes",
            "must be at least param_count*bytes_per_param",
        );

        let m = &self.comm;
        v.require(m.alpha > 0.0, "comm.alpha", "must be positive");
        v.require(m.beta_inverse > 0.0, "comm.beta_inverse", "must be positive");
        v.require(m.bucket_bytes > 0.0, "comm.bucket_bytes", "must be positive");
        v.fraction(m.overlap, "comm.overlap");
        v.require(m.tp_volume_bytes > 0.0, "comm.tp_volume_bytes", "must be positive");
        v.require(m.tp_count >= 1, "comm.tp_count", "must be at least 1");
        v.require(m.tp_bandwidth > 0.0, "comm.tp_bandwidth", "must be positive");
        v.require(m.tp_alpha > 0.0, "comm.tp_alpha", "must be positive");

        let s = &self.scheduler;
        v.require(s.walltime > 0.0, "scheduler.walltime", "must be positive");
        v.require(
            s.signal_lead > 0.0 && s.signal_lead < s.walltime,
            "scheduler.signal_lead",
            "must satisfy 0 < signal_lead < walltime",
        );
        // Overlapping chained jobs would share one checkpoint directory.
        v.require(
            s.singleton,
            "scheduler.singleton",
            "only singleton chaining is supported",
        );
        v.require(
            s.requeue_delay >= 0.0,
            "scheduler.requeue_delay",
            "must be non-negative",
        );
        v.require(
            s.startup_overhead_base >= 0.0,
            "scheduler.startup_overhead_base",
            "must be non-negative",
        );
        v.require(s.image_bytes >= 0.0, "scheduler.image_bytes", "must be non-negative");
        v.require(s.alloc_nodes >= 1, "scheduler.alloc_nodes", "must be at least 1");
        v.require(
            s.alloc_nodes <= c.node_count,
            "scheduler.alloc_nodes",
            &format!("exceeds cluster.node_count={}", c.node_count),
        );
        self.check_tier_ref(
            v,
            &s.image_tier,
            "scheduler.image_tier",
            Some(s.image_stripe_count),
            "scheduler.image_stripe_count",
        );
        v.require(
            s.vetting.duration >= 0.0,
            "scheduler.vetting.duration",
            "must be non-negative",
        );
        v.fraction(s.vetting.sensitivity, "scheduler.vetting.sensitivity");
        if s.vetting.enabled {
            v.require(
                s.vetting.duration < s.walltime - s.signal_lead,
                "scheduler.vetting.duration",
                "must end before the signal",
            );
        }

        let f = &self.failures;
        v.fraction(f.p_rank_startup, "failures.p_rank_startup");
        v.fraction(f.p_node_port, "failures.p_node_port");
        v.require(f.oom_h0 >= 0.0, "failures.oom_h0", "must be non-negative");
        v.require(f.oom_growth >= 0.0, "failures.oom_growth", "must be non-negative");
        v.require(f.bad_node_ttf > 0.0, "failures.bad_node_ttf", "must be positive");

        self.checkpoint.check(v);
        self.check_tier_ref(v, &self.checkpoint.tier, "checkpoint.tier", None, "");

        let d = &self.dataset;
        v.require(d.total_bytes > 0.0, "dataset.total_bytes", "must be positive");
        v.require(d.shard_count >= 1, "dataset.shard_count", "must be at least 1");
        v.require(d.total_tokens >= 1, "dataset.total_tokens", "must be at least 1");
        self.check_tier_ref(v, &d.tier, "dataset.tier", Some(d.stripe_count), "dataset.stripe_count");

        if let Some(dl) = self.campaign_deadline {
            v.require(dl > 0.0, "campaign_deadline", "must be positive");
        }
    }

    fn check_tier_ref(&self, v: &mut Violations, name: &str, field: &str, stripes: Option<u64>, stripe_field: &str) {
        match self.tier(name) {
            Err(_) => v.push(field, &format!("unknown storage tier `{name}`")),
            Ok(t) => {
                if let Some(k) = stripes {
                    v.require(
                        k >= 1 && k <= t.ost_count,
                        stripe_field,
                        &format!("must be in [1, {}] for tier `{}`", t.ost_count, t.name),
                    );
                }
            }
        }
    }
}

/// One violated invariant.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Error, Serialize)]
pub struct ValidationError {
    pub violations: Vec<Violation>,
}

impl ValidationError {
    pub fn mentions(&self, field: &str) -> bool {
        self.violations.iter().any(|v| v.field == field)
    }
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} invalid field(s)", self.violations.len())?;
        for v in &self.violations {
            write!(f, "\n  {}: {}", v.field, v.message)?;
        }
        Ok(())
    }
}

#[derive(Default)]
pub(crate) struct Violations(Vec<Violation>);

impl Violations {
    pub(crate) fn push(&mut self, field: &str, message: &str) {
        // One message per field; a parse failure already explains it.
        if !self.0.iter().any(|v| v.field == field) {
            self.0.push(Violation {
                field: field.to_string(),
                message: message.to_string(),
            });
        }
    }

    pub(crate) fn require(&mut self, ok: bool, field: &str, message: &str) {
        if !ok {
            self.push(field, message);
        }
    }

    pub(crate) fn fraction(&mut self, x: f64, field: &str) {
        self.require((0.0..=1.0).contains(&x), field, "must be in [0, 1]");
    }

    pub(crate) fn into_result(self) -> Result<(), ValidationError> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(ValidationError { violations: self.0 })
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown key(s): {}", .keys.join(", "))]
    UnknownKey { keys: Vec<String> },
    #[error(transparent)]
    Validation(#[from] ValidationError),
}
