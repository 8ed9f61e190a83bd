//! Tiered storage throughput under contention and striping, model-loading
//! strategies, tokenization planning, and the external-noise process.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Stream;
use crate::scenario::{NoiseSpec, StorageTierSpec};

#[derive(Debug, Error, PartialEq)]
pub enum StorageError {
    #[error("unknown storage tier `{0}`")]
    UnknownTier(String),
    #[error("stripe count {stripes} outside [1, {ost_count}]")]
    StripeCount { stripes: u64, ost_count: u64 },
    #[error("rate {rate} tokens/s/node outside [{min}, {max}]; pass the override to accept it")]
    RateOutOfRange { rate: f64, min: f64, max: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub total_bytes: f64,
    pub shard_count: u64,
    pub total_tokens: u64,
    pub tier: String,
    pub stripe_count: u64,
}

impl DatasetSpec {
    pub fn mean_shard_bytes(&self) -> f64 {
        self.total_bytes / self.shard_count as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccessPattern {
    Sequential,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FileSharing {
    DistinctFiles,
    SameFile,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReadWorkload {
    pub streams: u64,
    pub bytes_per_stream: f64,
    pub pattern: AccessPattern,
    pub file_sharing: FileSharing,
    /// Size of one read request; bounds throughput through the IOPS ceiling.
    pub request_bytes: f64,
}

impl ReadWorkload {
    pub const DEFAULT_REQUEST_BYTES: f64 = 4e6;

    pub fn sequential(streams: u64, bytes_per_stream: f64, file_sharing: FileSharing) -> Self {
        Self {
            streams,
            bytes_per_stream,
            pattern: AccessPattern::Sequential,
            file_sharing,
            request_bytes: Self::DEFAULT_REQUEST_BYTES,
        }
    }
}

/// Fair-share bandwidth of one stream, bytes/s.
pub fn effective_read_bandwidth(
    tier: &StorageTierSpec,
    workload: &ReadWorkload,
    stripe_count: u64,
) -> Result<f64, StorageError> {
    if stripe_count < 1 || stripe_count > tier.ost_count {
        return Err(StorageError::StripeCount {
            stripes: stripe_count,
            ost_count: tier.ost_count,
        });
    }
    if workload.streams == 0 {
        return Err(StorageError::InvalidInput("at least one stream is required".into()));
    }
    let streams = workload.streams as f64;
    let mut bw = tier
        .per_stream_bandwidth_cap
        .min(tier.aggregate_bandwidth / streams)
        .min(tier.iops_cap * workload.request_bytes / streams);
    if workload.file_sharing == FileSharing::SameFile {
        bw = bw.min(stripe_count as f64 * tier.per_ost_bandwidth());
    }
    if workload.pattern == AccessPattern::Random {
        bw *= tier.random_penalty;
    }
    Ok(bw)
}

/// Per-stream bandwidth for every stripe count from 1 to the tier's OST count.
pub fn striping_curve(tier: &StorageTierSpec, workload: &ReadWorkload) -> Result<Vec<(u64, f64)>, StorageError> {
    (1..=tier.ost_count)
        .map(|k| Ok((k, effective_read_bandwidth(tier, workload, k)?)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoadStrategy {
    AllRanksRead,
    Rank0Broadcast,
    Auto,
}

impl LoadStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            LoadStrategy::AllRanksRead => "all-ranks-read",
            LoadStrategy::Rank0Broadcast => "rank0-broadcast",
            LoadStrategy::Auto => "auto",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadPlan {
    pub strategy: LoadStrategy,
    pub read_time: f64,
    pub redistribution_time: f64,
    pub total_time: f64,
    pub fs_bytes_moved: f64,
}

/// Plan loading a model of `payload_bytes` onto `nodes` nodes. One read
/// stream per node; files are striped across every OST.
pub fn plan_model_load(
    payload_bytes: f64,
    nodes: u64,
    tier: &StorageTierSpec,
    net_bw_per_node: f64,
    strategy: LoadStrategy,
) -> Result<LoadPlan, StorageError> {
    if payload_bytes.is_nan()
        || payload_bytes <= 0.0
        || nodes == 0
        || net_bw_per_node.is_nan()
        || net_bw_per_node <= 0.0
    {
        return Err(StorageError::InvalidInput(
            "payload, nodes and network bandwidth must be positive".into(),
        ));
    }
    let read = |streams: u64| -> Result<f64, StorageError> {
        let w = ReadWorkload::sequential(streams, payload_bytes, FileSharing::SameFile);
        Ok(payload_bytes / effective_read_bandwidth(tier, &w, tier.ost_count)?)
    };
    let all_read = || -> Result<LoadPlan, StorageError> {
        let t = read(nodes)?;
        Ok(LoadPlan {
            strategy: LoadStrategy::AllRanksRead,
            read_time: t,
            redistribution_time: 0.0,
            total_time: t,
            fs_bytes_moved: nodes as f64 * payload_bytes,
        })
    };
    let broadcast = || -> Result<LoadPlan, StorageError> {
        let t = read(1)?;
        let r = payload_bytes / net_bw_per_node;
        Ok(LoadPlan {
            strategy: LoadStrategy::Rank0Broadcast,
            read_time: t,
            redistribution_time: r,
            total_time: t + r,
            fs_bytes_moved: payload_bytes,
        })
    };
    match strategy {
        LoadStrategy::AllRanksRead => all_read(),
        LoadStrategy::Rank0Broadcast => broadcast(),
        LoadStrategy::Auto => {
            let (a, b) = (all_read()?, broadcast()?);
            Ok(if b.total_time < a.total_time { b } else { a })
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenizationPlan {
    pub per_node_rate: f64,
    pub nodes: u64,
    pub node_hours: f64,
    pub wall_hours: f64,
}

pub const TOKENIZE_RATE_MIN: f64 = 1e6;
pub const TOKENIZE_RATE_MAX: f64 = 1e9;

/// Node-hours to tokenize the dataset at `per_node_rate`, assuming perfect
/// scaling across `nodes`.
pub fn plan_tokenization(
    dataset: &DatasetSpec,
    per_node_rate: f64,
    nodes: u64,
    allow_out_of_range: bool,
) -> Result<TokenizationPlan, StorageError> {
    if nodes == 0 || per_node_rate.is_nan() || per_node_rate <= 0.0 {
        return Err(StorageError::InvalidInput("nodes and rate must be positive".into()));
    }
    if !allow_out_of_range && !(TOKENIZE_RATE_MIN..=TOKENIZE_RATE_MAX).contains(&per_node_rate) {
        return Err(StorageError::RateOutOfRange {
            rate: per_node_rate,
            min: TOKENIZE_RATE_MIN,
            max: TOKENIZE_RATE_MAX,
        });
    }
    let exact = dataset.total_tokens as f64 / per_node_rate / 3600.0;
    let wall_hours = exact_share(exact, nodes);
    // Equal to `exact` whenever a float share exists; otherwise within an ulp.
    let node_hours = wall_hours * nodes as f64;
    Ok(TokenizationPlan {
        per_node_rate,
        nodes,
        node_hours,
        wall_hours,
    })
}

/// `x / n`, nudged by an ulp where that makes `share * n == x` hold exactly.
fn exact_share(x: f64, n: u64) -> f64 {
    let nf = n as f64;
    let q = x / nf;
    [q, q.next_up(), q.next_down()]
        .into_iter()
        .find(|c| c * nf == x)
        .unwrap_or(q)
}

/// Alternating renewal process of normal and degraded periods on one tier.
/// Queries must be made at non-decreasing times.
#[derive(Clone, Debug)]
pub struct NoiseProcess {
    spec: Option<NoiseSpec>,
    stream: Stream,
    degraded: bool,
    next_switch: f64,
    degraded_time: f64,
    last_query: f64,
}

impl NoiseProcess {
    pub fn new(tier: &StorageTierSpec, stream: Stream) -> Self {
        let mut p = Self {
            spec: tier.noise.clone(),
            stream,
            degraded: false,
            next_switch: f64::INFINITY,
            degraded_time: 0.0,
            last_query: 0.0,
        };
        if let Some(n) = &p.spec {
            p.next_switch = p.stream.exponential(1.0 / n.mean_interval);
        }
        p
    }

    fn advance(&mut self, time: f64) {
        let Some(n) = self.spec.clone() else { return };
        let time = time.max(self.last_query);
        while self.next_switch <= time {
            if self.degraded {
                self.degraded_time += self.next_switch - self.last_query;
            }
            self.last_query = self.next_switch;
            self.degraded = !self.degraded;
            let mean = if self.degraded {
                n.mean_duration
            } else {
                n.mean_interval
            };
            self.next_switch += self.stream.exponential(1.0 / mean);
        }
        if self.degraded {
            self.degraded_time += time - self.last_query;
        }
        self.last_query = time;
    }

    /// Bandwidth multiplier in `(0, 1]` at `time`.
    pub fn multiplier_at(&mut self, time: f64) -> f64 {
        self.advance(time);
        match &self.spec {
            Some(n) if self.degraded => 1.0 - n.degradation_fraction,
            _ => 1.0,
        }
    }

    /// Total degraded time observed up to the latest query.
    pub fn degraded_time(&self) -> f64 {
        self.degraded_time
    }
}

/// Noise multiplier of `tier` at `time` for the process driven by `rng`.
pub fn sample_noise_state(tier: &StorageTierSpec, time: f64, rng: &Stream) -> f64 {
    NoiseProcess::new(tier, rng.clone()).multiplier_at(time)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{default_reference_scenario, Media};

    fn tier(aggregate: f64, cap: f64, ost: u64) -> StorageTierSpec {
        StorageTierSpec {
            name: "t".into(),
            media: Media::Flash,
            aggregate_bandwidth: aggregate,
            per_stream_bandwidth_cap: cap,
            iops_cap: 1e9,
            ost_count: ost,
            random_penalty: 1.0,
            noise: None,
        }
    }

    #[test]
    fn fair_share_distinct_files() {
        let t = tier(500e9, 10e9, 100);
        let w = ReadWorkload::sequential(256, 1e9, FileSharing::DistinctFiles);
        let bw = effective_read_bandwidth(&t, &w, 1).unwrap();
        assert!((bw - 500e9 / 256.0).abs() < 1.0);
        assert!((bw - 1.953e9).abs() < 1e6);
    }

    #[test]
    fn single_stream_full_stripe_hits_cap() {
        let t = tier(500e9, 10e9, 100);
        let w = ReadWorkload::sequential(1, 1e9, FileSharing::SameFile);
        assert_eq!(effective_read_bandwidth(&t, &w, 100).unwrap(), 10e9);
    }

    #[test]
    fn single_ost_bottleneck() {
        let t = tier(500e9, 10e9, 100);
        for streams in [1u64, 2, 50] {
            let w = ReadWorkload::sequential(streams, 1e9, FileSharing::SameFile);
            assert_eq!(effective_read_bandwidth(&t, &w, 1).unwrap(), 5e9);
        }
    }

    #[test]
    fn random_penalty_and_iops() {
        let mut t = tier(500e9, 10e9, 100);
        t.random_penalty = 0.3;
        let mut w = ReadWorkload::sequential(1, 1e9, FileSharing::DistinctFiles);
        w.pattern = AccessPattern::Random;
        assert!((effective_read_bandwidth(&t, &w, 1).unwrap() - 3e9).abs() < 1.0);
        t.iops_cap = 1000.0;
        w.request_bytes = 4096.0;
        assert!((effective_read_bandwidth(&t, &w, 1).unwrap() - 0.3 * 4096e3).abs() < 1e-6);
    }

    #[test]
    fn stripe_count_is_checked() {
        let t = tier(500e9, 10e9, 100);
        let w = ReadWorkload::sequential(1, 1e9, FileSharing::SameFile);
        assert!(effective_read_bandwidth(&t, &w, 0).is_err());
        assert!(effective_read_bandwidth(&t, &w, 101).is_err());
        assert_eq!(striping_curve(&t, &w).unwrap().len(), 100);
    }

    #[test]
    fn model_load_reference_numbers() {
        let t = tier(500e9, 10e9, 100);
        let all = plan_model_load(150e9, 256, &t, 25e9, LoadStrategy::AllRanksRead).unwrap();
        assert!((all.total_time - 76.8).abs() < 0.1, "{}", all.total_time);
        assert_eq!(all.fs_bytes_moved, 38.4e12);
        let b = plan_model_load(150e9, 256, &t, 25e9, LoadStrategy::Rank0Broadcast).unwrap();
        assert!((b.read_time - 15.0).abs() < 1e-9);
        assert!((b.redistribution_time - 6.0).abs() < 1e-9);
        assert!((b.total_time - 21.0).abs() < 1e-9);
        assert_eq!(all.fs_bytes_moved / b.fs_bytes_moved, 256.0);
        let auto = plan_model_load(150e9, 256, &t, 25e9, LoadStrategy::Auto).unwrap();
        assert_eq!(auto.strategy, LoadStrategy::Rank0Broadcast);
    }

    #[test]
    fn model_load_single_node_tie() {
        // With infinite network the two strategies coincide on one node.
        let t = tier(500e9, 10e9, 100);
        let a = plan_model_load(150e9, 1, &t, f64::INFINITY, LoadStrategy::AllRanksRead).unwrap();
        let b = plan_model_load(150e9, 1, &t, f64::INFINITY, LoadStrategy::Rank0Broadcast).unwrap();
        assert_eq!(a.total_time, b.total_time);
        let auto = plan_model_load(150e9, 1, &t, f64::INFINITY, LoadStrategy::Auto).unwrap();
        assert_eq!(auto.strategy, LoadStrategy::AllRanksRead);
    }

    #[test]
    fn model_load_rejects_bad_input() {
        let t = tier(500e9, 10e9, 100);
        assert!(plan_model_load(0.0, 4, &t, 25e9, LoadStrategy::Auto).is_err());
        assert!(plan_model_load(1e9, 0, &t, 25e9, LoadStrategy::Auto).is_err());
    }

    #[test]
    fn tokenization_window() {
        let mut d = default_reference_scenario().dataset;
        d.total_tokens = 15_000_000_000_000;
        let p = plan_tokenization(&d, 70e6, 1, false).unwrap();
        assert!((p.node_hours - 59.52).abs() < 0.01, "{}", p.node_hours);
        assert_eq!(p.wall_hours, p.node_hours);
        let lo = plan_tokenization(&d, 72e6, 1, false).unwrap().node_hours;
        let hi = plan_tokenization(&d, 51e6, 1, false).unwrap().node_hours;
        assert!((lo - 57.87).abs() < 0.01 && (hi - 81.70).abs() < 0.01, "{lo} {hi}");
        assert!(matches!(
            plan_tokenization(&d, 10.0, 1, false),
            Err(StorageError::RateOutOfRange { .. })
        ));
        assert!(plan_tokenization(&d, 10.0, 1, true).is_ok());
    }

    #[test]
    fn noise_disabled_is_one() {
        let t = tier(500e9, 10e9, 100);
        let s = Stream::new(1, "noise");
        for time in [0.0, 1.0, 1e6] {
            assert_eq!(sample_noise_state(&t, time, &s), 1.0);
        }
    }

    #[test]
    fn noise_long_run_fraction() {
        let mut t = tier(500e9, 10e9, 100);
        t.noise = Some(NoiseSpec {
            degradation_fraction: 0.5,
            mean_interval: 100.0,
            mean_duration: 25.0,
        });
        let mut p = NoiseProcess::new(&t, Stream::new(11, "noise"));
        // Independent estimate: sample the state on a fine grid.
        let horizon = 1e6;
        let mut degraded_samples = 0u64;
        let steps = 1_000_000u64;
        for i in 0..steps {
            let m = p.multiplier_at(i as f64 * horizon / steps as f64);
            assert!(m == 1.0 || m == 0.5);
            if m < 1.0 {
                degraded_samples += 1;
            }
        }
        let frac = degraded_samples as f64 / steps as f64;
        let expected = 25.0 / 125.0;
        assert!((frac - expected).abs() < 0.02, "{frac}");
        assert!((p.degraded_time() / horizon - frac).abs() < 1e-3);
    }

    #[test]
    fn noise_is_deterministic() {
        let mut t = tier(500e9, 10e9, 100);
        t.noise = Some(NoiseSpec {
            degradation_fraction: 0.4,
            mean_interval: 50.0,
            mean_duration: 20.0,
        });
        let s = Stream::new(5, "noise").derive("t");
        let a: Vec<f64> = (0..500).map(|i| sample_noise_state(&t, i as f64 * 7.0, &s)).collect();
        let b: Vec<f64> = (0..500).map(|i| sample_noise_state(&t, i as f64 * 7.0, &s)).collect();
        assert_eq!(a, b);
        assert!(a.iter().any(|&m| m < 1.0));
    }
}
