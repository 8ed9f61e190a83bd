//! Built-in scenarios: a 70B campaign on 1024 four-GPU nodes.
//!
//! Unmeasured constants (MTBF, write cost, collective latency, MFU) are
//! chosen for internal consistency: `target_mfu` and `comm.alpha` come from
//! [`crate::perf::calibrate`] against 723 tokens/s/GPU at 4096 GPUs and 80%
//! strong-scaling efficiency from 32 GPUs; `node_mtbf` puts the Young-Daly
//! cadence of the 4096-GPU allocation at 250 iterations.

use super::{
    ClusterSpec, CommModelSpec, FailureModelSpec, Media, NoiseSpec, ParallelismLayout, ScenarioSpec, SchedulerSpec,
    StorageTierSpec, VettingPolicy, WorkloadSpec,
};
use crate::resilience::{CheckpointInterval, CheckpointPolicy};
use crate::storage::DatasetSpec;

/// Calibrated kernel efficiency of the reference workload.
pub const REFERENCE_TARGET_MFU: f64 = 0.3839140089667462;
/// Calibrated effective latency per gradient bucket, seconds.
pub const REFERENCE_ALPHA: f64 = 0.019484516163229028;

fn flash_tier() -> StorageTierSpec {
    StorageTierSpec {
        name: "flash".into(),
        media: Media::Flash,
        aggregate_bandwidth: 500e9,
        per_stream_bandwidth_cap: 10e9,
        iops_cap: 1e7,
        ost_count: 100,
        random_penalty: 1.0,
        noise: None,
    }
}

fn capacity_tier() -> StorageTierSpec {
    StorageTierSpec {
        name: "capacity".into(),
        media: Media::Hdd,
        aggregate_bandwidth: 300e9,
        per_stream_bandwidth_cap: 5e9,
        iops_cap: 1e6,
        ost_count: 400,
        random_penalty: 0.3,
        noise: None,
    }
}

/// The 70B reference campaign on 4096 GPUs after stabilization.
pub fn default_reference_scenario() -> ScenarioSpec {
    ScenarioSpec {
        cluster: ClusterSpec {
            node_count: 2688,
            gpus_per_node: 4,
            gpu_peak_flops: 989e12,
            node_mtbf: 1.7e7,
            prolog_mem_threshold: ClusterSpec::DEFAULT_PROLOG_MEM_THRESHOLD,
            bad_node_prob: 1e-4,
            vboost: false,
            boost_factor: 1.0,
            net_bw_per_node: 100e9,
        },
        tiers: vec![capacity_tier(), flash_tier()],
        workload: WorkloadSpec {
            param_count: 70_000_000_000,
            token_budget: 15_000_000_000_000,
            global_batch_tokens: 16_800_000,
            microbatch_tokens: 4375,
            layout: ParallelismLayout {
                tp: 4,
                pp: 8,
                dp: 64,
                cp: 2,
                vpp: 5,
            },
            bytes_per_param: 2.0,
            target_mfu: REFERENCE_TARGET_MFU,
            checkpoint_bytes: 150e9,
            io_sensitivity: 0.05,
        },
        comm: CommModelSpec {
            alpha: REFERENCE_ALPHA,
            beta_inverse: 50e9,
            bucket_bytes: 50e6,
            overlap: 0.5,
            tp_volume_bytes: 20e9,
            tp_count: 2000,
            tp_bandwidth: 300e9,
            tp_alpha: 10e-6,
        },
        scheduler: SchedulerSpec {
            walltime: 86400.0,
            signal_lead: 300.0,
            requeue_delay: 120.0,
            startup_overhead_base: 180.0,
            image_bytes: 20e9,
            image_tier: "flash".into(),
            image_stripe_count: 16,
            singleton: true,
            alloc_nodes: 1024,
            vetting: VettingPolicy {
                enabled: true,
                duration: 120.0,
                sensitivity: 0.9,
            },
        },
        failures: FailureModelSpec {
            p_rank_startup: 1e-6,
            p_node_port: 0.0,
            oom_h0: 0.0,
            oom_growth: 0.0,
            cache_flush_prolog: true,
            bad_node_ttf: 600.0,
        },
        checkpoint: CheckpointPolicy {
            interval: CheckpointInterval::Iterations(250),
            write_cost: 60.0,
            async_write: true,
            dip_factor: 1.2,
            write_duration: 300.0,
            tier: "flash".into(),
            restore_cost: 120.0,
        },
        dataset: DatasetSpec {
            total_bytes: 63e12,
            shard_count: 2800,
            total_tokens: 15_000_000_000_000,
            tier: "flash".into(),
            stripe_count: 4,
        },
        seed: super::format::DEFAULT_SEED,
        campaign_deadline: None,
    }
}

/// Stable operation: flash-resident data, no interference, fixed drivers.
pub fn post_stabilization_scenario() -> ScenarioSpec {
    default_reference_scenario()
}

/// Early production: HDD-resident data under interference, driver cache
/// creep without the flush prolog, and elevated startup and node failures.
pub fn pre_stabilization_scenario() -> ScenarioSpec {
    let mut s = default_reference_scenario();
    for t in &mut s.tiers {
        if t.name == "capacity" {
            t.noise = Some(NoiseSpec {
                degradation_fraction: 0.6,
                mean_interval: 1800.0,
                mean_duration: 600.0,
            });
        }
    }
    s.dataset.tier = "capacity".into();
    s.dataset.stripe_count = 4;
    s.workload.io_sensitivity = 0.3;
    s.cluster.node_mtbf = 5e6;
    s.failures = FailureModelSpec {
        p_rank_startup: 1e-5,
        p_node_port: 0.0,
        oom_h0: 1e-6,
        oom_growth: 1e-10,
        cache_flush_prolog: false,
        bad_node_ttf: 600.0,
    };
    s
}
