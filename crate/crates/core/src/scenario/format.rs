//! Scenario files: TOML-compatible sections with unit suffixes.

use std::path::Path;

use sha2::{Digest, Sha256};
use toml::{Table, Value};

use super::{
    ClusterSpec, CommModelSpec, FailureModelSpec, Media, NoiseSpec, ParallelismLayout, ScenarioError, ScenarioSpec,
    SchedulerSpec, StorageTierSpec, VettingPolicy, Violations, WorkloadSpec,
};
use crate::resilience::{CheckpointInterval, CheckpointPolicy};
use crate::storage::DatasetSpec;
use crate::units::{parse_quantity, Unit};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Clone, Debug)]
pub struct LoadOptions {
    /// Reject keys the format does not define.
    pub strict: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { strict: true }
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioSpec, ScenarioError> {
    load_scenario_with(path, &LoadOptions::default())
}

pub fn load_scenario_with(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<ScenarioSpec, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario(&text, opts)
}

pub fn parse_scenario(text: &str, opts: &LoadOptions) -> Result<ScenarioSpec, ScenarioError> {
    let table: Table = text.parse().map_err(|e: toml::de::Error| {
        let line = e
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
            .unwrap_or(1);
        ScenarioError::Parse {
            line,
            message: e.message().trim().to_string(),
        }
    })?;
    from_table(&table, opts)
}

pub(crate) fn from_table(table: &Table, opts: &LoadOptions) -> Result<ScenarioSpec, ScenarioError> {
    let mut ctx = Ctx::default();
    let mut root = Reader::new("", table);
    let spec = read_spec(&mut root, &mut ctx);
    root.finish(&mut ctx);

    if opts.strict && !ctx.unknown.is_empty() {
        return Err(ScenarioError::UnknownKey { keys: ctx.unknown });
    }
    let mut v = ctx.v;
    spec.check(&mut v);
    v.into_result()?;
    Ok(spec)
}

fn read_spec(root: &mut Reader<'_>, ctx: &mut Ctx) -> ScenarioSpec {
    let seed = root.seed(ctx, "seed");
    let campaign_deadline = root.opt_num(ctx, "campaign_deadline", Unit::Seconds);

    let mut r = root.section(ctx, "cluster");
    let vboost = r.opt_bool(ctx, "vboost", false);
    let cluster = ClusterSpec {
        node_count: r.req_count(ctx, "node_count"),
        gpus_per_node: r.req_count(ctx, "gpus_per_node"),
        gpu_peak_flops: r.req_num(ctx, "gpu_peak_flops", Unit::Plain),
        node_mtbf: r.req_num(ctx, "node_mtbf", Unit::Seconds),
        prolog_mem_threshold: r
            .opt_num(ctx, "prolog_mem_threshold", Unit::Plain)
            .unwrap_or(ClusterSpec::DEFAULT_PROLOG_MEM_THRESHOLD),
        bad_node_prob: r.opt_num(ctx, "bad_node_prob", Unit::Plain).unwrap_or(0.0),
        vboost,
        boost_factor: r.opt_num(ctx, "boost_factor", Unit::Plain).unwrap_or(1.0),
        net_bw_per_node: r.req_num(ctx, "net_bw_per_node", Unit::BytesPerSecond),
    };
    r.finish(ctx);

    let mut tiers = Vec::new();
    let mut storage = root.section(ctx, "storage");
    for name in storage.table.keys().cloned().collect::<Vec<_>>() {
        let mut t = storage.section(ctx, &name);
        let media = match t.opt_str(ctx, "media").as_deref() {
            None | Some("flash") => Media::Flash,
            Some("hdd") => Media::Hdd,
            Some(other) => {
                ctx.v.push(&t.field("media"), &format!("`{other}` is not flash or hdd"));
                Media::Flash
            }
        };
        let noise = if t.table.contains_key("noise") {
            let mut n = t.section(ctx, "noise");
            let spec = NoiseSpec {
                degradation_fraction: n.req_num(ctx, "degradation_fraction", Unit::Plain),
                mean_interval: n.req_num(ctx, "mean_interval", Unit::Seconds),
                mean_duration: n.req_num(ctx, "mean_duration", Unit::Seconds),
            };
            n.finish(ctx);
            Some(spec)
        } else {
            None
        };
        tiers.push(StorageTierSpec {
            name: name.clone(),
            media,
            aggregate_bandwidth: t.req_num(ctx, "aggregate_bandwidth", Unit::BytesPerSecond),
            per_stream_bandwidth_cap: t.req_num(ctx, "per_stream_bandwidth_cap", Unit::BytesPerSecond),
            iops_cap: t.req_num(ctx, "iops_cap", Unit::Plain),
            ost_count: t.req_count(ctx, "ost_count"),
            random_penalty: t
                .opt_num(ctx, "random_penalty", Unit::Plain)
                .unwrap_or(media.default_random_penalty()),
            noise,
        });
        t.finish(ctx);
    }
    storage.finish(ctx);
    tiers.sort_by(|a, b| a.name.cmp(&b.name));

    let mut r = root.section(ctx, "workload");
    let mut l = r.section(ctx, "layout");
    let layout = ParallelismLayout {
        tp: l.req_count(ctx, "tp"),
        pp: l.req_count(ctx, "pp"),
        dp: l.req_count(ctx, "dp"),
        cp: l.opt_count(ctx, "cp", 1),
        vpp: l.opt_count(ctx, "vpp", 1),
    };
    l.finish(ctx);
    let workload = WorkloadSpec {
        param_count: r.req_count(ctx, "param_count"),
        token_budget: r.req_count(ctx, "token_budget"),
        global_batch_tokens: r.req_count(ctx, "global_batch_tokens"),
        microbatch_tokens: r.req_count(ctx, "microbatch_tokens"),
        layout,
        bytes_per_param: r.req_num(ctx, "bytes_per_param", Unit::Bytes),
        target_mfu: r.req_num(ctx, "target_mfu", Unit::Plain),
        checkpoint_bytes: r.req_num(ctx, "checkpoint_bytes", Unit::Bytes),
        io_sensitivity: r.opt_num(ctx, "io_sensitivity", Unit::Plain).unwrap_or(0.0),
    };
    r.finish(ctx);

    let mut r = root.section(ctx, "comm");
    let comm = CommModelSpec {
        alpha: r.req_num(ctx, "alpha", Unit::Seconds),
        beta_inverse: r.req_num(ctx, "beta_inverse", Unit::BytesPerSecond),
        bucket_bytes: r.req_num(ctx, "bucket_bytes", Unit::Bytes),
        overlap: r.opt_num(ctx, "overlap", Unit::Plain).unwrap_or(0.0),
        tp_volume_bytes: r.req_num(ctx, "tp_volume_bytes", Unit::Bytes),
        tp_count: r.req_count(ctx, "tp_count"),
        tp_bandwidth: r.req_num(ctx, "tp_bandwidth", Unit::BytesPerSecond),
        tp_alpha: r.opt_num(ctx, "tp_alpha", Unit::Seconds).unwrap_or(5e-6),
    };
    r.finish(ctx);

    let mut r = root.section(ctx, "scheduler");
    let vetting = if r.table.contains_key("vetting") {
        let mut s = r.section(ctx, "vetting");
        let p = VettingPolicy {
            enabled: s.opt_bool(ctx, "enabled", true),
            duration: s.req_num(ctx, "duration", Unit::Seconds),
            sensitivity: s.req_num(ctx, "sensitivity", Unit::Plain),
        };
        s.finish(ctx);
        p
    } else {
        VettingPolicy {
            enabled: false,
            duration: 0.0,
            sensitivity: 0.0,
        }
    };
    let scheduler = SchedulerSpec {
        walltime: r.req_num(ctx, "walltime", Unit::Seconds),
        signal_lead: r.req_num(ctx, "signal_lead", Unit::Seconds),
        requeue_delay: r.opt_num(ctx, "requeue_delay", Unit::Seconds).unwrap_or(0.0),
        startup_overhead_base: r.opt_num(ctx, "startup_overhead_base", Unit::Seconds).unwrap_or(0.0),
        image_bytes: r.opt_num(ctx, "image_bytes", Unit::Bytes).unwrap_or(0.0),
        image_tier: r.req_str(ctx, "image_tier"),
        image_stripe_count: r.opt_count(ctx, "image_stripe_count", 1),
        singleton: r.opt_bool(ctx, "singleton", true),
        alloc_nodes: r.req_count(ctx, "alloc_nodes"),
        vetting,
    };
    r.finish(ctx);

    let mut r = root.section(ctx, "failures");
    let failures = FailureModelSpec {
        p_rank_startup: r.opt_num(ctx, "p_rank_startup", Unit::Plain).unwrap_or(0.0),
        p_node_port: r.opt_num(ctx, "p_node_port", Unit::Plain).unwrap_or(0.0),
        oom_h0: r.opt_num(ctx, "oom_h0", Unit::Plain).unwrap_or(0.0),
        oom_growth: r.opt_num(ctx, "oom_growth", Unit::Plain).unwrap_or(0.0),
        cache_flush_prolog: r.opt_bool(ctx, "cache_flush_prolog", false),
        bad_node_ttf: r.opt_num(ctx, "bad_node_ttf", Unit::Seconds).unwrap_or(600.0),
    };
    // Redundant with cluster.node_mtbf; accepted when consistent.
    if let Some(rate) = r.opt_num(ctx, "node_failure_rate", Unit::Plain) {
        let expected = 1.0 / cluster.node_mtbf;
        if ((rate - expected) / expected).abs() > 1e-9 {
            ctx.v.push(
                "failures.node_failure_rate",
                &format!("must equal 1/cluster.node_mtbf = {expected}"),
            );
        }
    }
    r.finish(ctx);

    let mut r = root.section(ctx, "checkpoint");
    let iters = r.raw("interval_iterations").is_some();
    let secs = r.raw("interval_seconds").is_some();
    let interval = match (iters, secs) {
        (true, false) => CheckpointInterval::Iterations(r.req_count(ctx, "interval_iterations")),
        (false, true) => CheckpointInterval::Seconds(r.req_num(ctx, "interval_seconds", Unit::Seconds)),
        _ => {
            ctx.v.push(
                "checkpoint.interval_iterations",
                "exactly one of interval_iterations or interval_seconds must be set",
            );
            r.raw("interval_iterations");
            r.raw("interval_seconds");
            CheckpointInterval::Iterations(0)
        }
    };
    let write_cost = r.req_num(ctx, "write_cost", Unit::Seconds);
    let async_write = r.opt_bool(ctx, "async", false);
    let checkpoint = CheckpointPolicy {
        interval,
        write_cost,
        async_write,
        dip_factor: r.opt_num(ctx, "dip_factor", Unit::Plain).unwrap_or(1.0),
        write_duration: r
            .opt_num(ctx, "write_duration", Unit::Seconds)
            .unwrap_or(if async_write { f64::NAN } else { write_cost }),
        tier: r.req_str(ctx, "tier"),
        restore_cost: r.opt_num(ctx, "restore_cost", Unit::Seconds).unwrap_or(0.0),
    };
    r.finish(ctx);

    let mut r = root.section(ctx, "dataset");
    let dataset = DatasetSpec {
        total_bytes: r.req_num(ctx, "total_bytes", Unit::Bytes),
        shard_count: r.req_count(ctx, "shard_count"),
        total_tokens: r.req_count(ctx, "total_tokens"),
        tier: r.req_str(ctx, "tier"),
        stripe_count: r.opt_count(ctx, "stripe_count", 1),
    };
    r.finish(ctx);

    ScenarioSpec {
        cluster,
        tiers,
        workload,
        comm,
        scheduler,
        failures,
        checkpoint,
        dataset,
        seed,
        campaign_deadline,
    }
}

#[derive(Default)]
struct Ctx {
    v: Violations,
    unknown: Vec<String>,
}

static EMPTY: std::sync::LazyLock<Table> = std::sync::LazyLock::new(Table::new);

struct Reader<'t> {
    path: String,
    table: &'t Table,
    used: Vec<String>,
}

impl<'t> Reader<'t> {
    fn new(path: &str, table: &'t Table) -> Self {
        Self {
            path: path.to_string(),
            table,
            used: Vec::new(),
        }
    }

    fn field(&self, key: &str) -> String {
        if self.path.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.path)
        }
    }

    fn raw(&mut self, key: &str) -> Option<&'t Value> {
        self.used.push(key.to_string());
        self.table.get(key)
    }

    fn section(&mut self, ctx: &mut Ctx, key: &str) -> Reader<'t> {
        let path = self.field(key);
        match self.raw(key) {
            Some(Value::Table(t)) => Reader::new(&path, t),
            Some(_) => {
                ctx.v.push(&path, "expected a section");
                Reader::new(&path, &EMPTY)
            }
            None => {
                ctx.v.push(&path, "missing section");
                Reader::new(&path, &EMPTY)
            }
        }
    }

    fn finish(self, ctx: &mut Ctx) {
        for k in self.table.keys() {
            if !self.used.iter().any(|u| u == k) {
                ctx.unknown.push(self.field(k));
            }
        }
    }

    fn opt_num(&mut self, ctx: &mut Ctx, key: &str, unit: Unit) -> Option<f64> {
        let field = self.field(key);
        match self.raw(key)? {
            Value::Integer(i) => Some(*i as f64),
            Value::Float(f) => Some(*f),
            Value::String(s) => match parse_quantity(s, unit) {
                Ok(x) => Some(x),
                Err(e) => {
                    ctx.v.push(&field, &e);
                    Some(f64::NAN)
                }
            },
            other => {
                ctx.v
                    .push(&field, &format!("expected a number, found {}", other.type_str()));
                Some(f64::NAN)
            }
        }
    }

    fn req_num(&mut self, ctx: &mut Ctx, key: &str, unit: Unit) -> f64 {
        self.opt_num(ctx, key, unit).unwrap_or_else(|| {
            ctx.v.push(&self.field(key), "missing required field");
            f64::NAN
        })
    }

    fn count_from(&self, ctx: &mut Ctx, key: &str, x: f64) -> u64 {
        if x.is_finite() && x >= 0.0 && x.fract() == 0.0 && x <= u64::MAX as f64 {
            x as u64
        } else {
            if !x.is_nan() {
                ctx.v.push(&self.field(key), "expected a non-negative integer");
            }
            0
        }
    }

    fn opt_count(&mut self, ctx: &mut Ctx, key: &str, default: u64) -> u64 {
        match self.table.get(key) {
            Some(Value::Integer(i)) if *i >= 0 => {
                self.used.push(key.to_string());
                *i as u64
            }
            _ => match self.opt_num(ctx, key, Unit::Plain) {
                Some(x) => self.count_from(ctx, key, x),
                None => default,
            },
        }
    }

    fn req_count(&mut self, ctx: &mut Ctx, key: &str) -> u64 {
        if !self.table.contains_key(key) {
            self.used.push(key.to_string());
            ctx.v.push(&self.field(key), "missing required field");
            return 0;
        }
        self.opt_count(ctx, key, 0)
    }

    fn seed(&mut self, ctx: &mut Ctx, key: &str) -> u64 {
        let field = self.field(key);
        match self.raw(key) {
            None => DEFAULT_SEED,
            Some(Value::Integer(i)) if *i >= 0 => *i as u64,
            Some(Value::String(s)) if s.trim().parse::<u64>().is_ok() => s.trim().parse().unwrap(),
            Some(_) => {
                ctx.v.push(&field, "expected an unsigned 64-bit integer");
                DEFAULT_SEED
            }
        }
    }

    fn opt_bool(&mut self, ctx: &mut Ctx, key: &str, default: bool) -> bool {
        let field = self.field(key);
        match self.raw(key) {
            None => default,
            Some(Value::Boolean(b)) => *b,
            Some(other) => {
                ctx.v
                    .push(&field, &format!("expected a boolean, found {}", other.type_str()));
                default
            }
        }
    }

    fn opt_str(&mut self, ctx: &mut Ctx, key: &str) -> Option<String> {
        let field = self.field(key);
        match self.raw(key)? {
            Value::String(s) => Some(s.clone()),
            other => {
                ctx.v
                    .push(&field, &format!("expected a string, found {}", other.type_str()));
                Some(String::new())
            }
        }
    }

    fn req_str(&mut self, ctx: &mut Ctx, key: &str) -> String {
        self.opt_str(ctx, key).unwrap_or_else(|| {
            ctx.v.push(&self.field(key), "missing required field");
            String::new()
        })
    }
}

fn int(x: u64) -> Value {
    match i64::try_from(x) {
        Ok(i) => Value::Integer(i),
        Err(_) => Value::String(x.to_string()),
    }
}

fn float(x: f64) -> Value {
    Value::Float(x)
}

fn table<const N: usize>(entries: [(&str, Value); N]) -> Table {
    entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// The scenario as a table in canonical units, every field explicit.
pub(crate) fn to_table(s: &ScenarioSpec) -> Table {
    let c = &s.cluster;
    let mut root = Table::new();
    root.insert("seed".into(), int(s.seed));
    if let Some(d) = s.campaign_deadline {
        root.insert("campaign_deadline".into(), float(d));
    }
    root.insert(
        "cluster".into(),
        Value::Table(table([
            ("node_count", int(c.node_count)),
            ("gpus_per_node", int(c.gpus_per_node)),
            ("gpu_peak_flops", float(c.gpu_peak_flops)),
            ("node_mtbf", float(c.node_mtbf)),
            ("prolog_mem_threshold", float(c.prolog_mem_threshold)),
            ("bad_node_prob", float(c.bad_node_prob)),
            ("vboost", Value::Boolean(c.vboost)),
            ("boost_factor", float(c.boost_factor)),
            ("net_bw_per_node", float(c.net_bw_per_node)),
        ])),
    );

    let mut storage = Table::new();
    for t in &s.tiers {
        let mut tt = table([
            ("media", Value::String(t.media.as_str().into())),
            ("aggregate_bandwidth", float(t.aggregate_bandwidth)),
            ("per_stream_bandwidth_cap", float(t.per_stream_bandwidth_cap)),
            ("iops_cap", float(t.iops_cap)),
            ("ost_count", int(t.ost_count)),
            ("random_penalty", float(t.random_penalty)),
        ]);
        if let Some(n) = &t.noise {
            tt.insert(
                "noise".into(),
                Value::Table(table([
                    ("degradation_fraction", float(n.degradation_fraction)),
                    ("mean_interval", float(n.mean_interval)),
                    ("mean_duration", float(n.mean_duration)),
                ])),
            );
        }
        storage.insert(t.name.clone(), Value::Table(tt));
    }
    root.insert("storage".into(), Value::Table(storage));

    let w = &s.workload;
    let l = &w.layout;
    root.insert(
        "workload".into(),
        Value::Table(table([
            ("param_count", int(w.param_count)),
            ("token_budget", int(w.token_budget)),
            ("global_batch_tokens", int(w.global_batch_tokens)),
            ("microbatch_tokens", int(w.microbatch_tokens)),
            ("bytes_per_param", float(w.bytes_per_param)),
            ("target_mfu", float(w.target_mfu)),
            ("checkpoint_bytes", float(w.checkpoint_bytes)),
            ("io_sensitivity", float(w.io_sensitivity)),
            (
                "layout",
                Value::Table(table([
                    ("tp", int(l.tp)),
                    ("pp", int(l.pp)),
                    ("dp", int(l.dp)),
                    ("cp", int(l.cp)),
                    ("vpp", int(l.vpp)),
                ])),
            ),
        ])),
    );

    let m = &s.comm;
    root.insert(
        "comm".into(),
        Value::Table(table([
            ("alpha", float(m.alpha)),
            ("beta_inverse", float(m.beta_inverse)),
            ("bucket_bytes", float(m.bucket_bytes)),
            ("overlap", float(m.overlap)),
            ("tp_volume_bytes", float(m.tp_volume_bytes)),
            ("tp_count", int(m.tp_count)),
            ("tp_bandwidth", float(m.tp_bandwidth)),
            ("tp_alpha", float(m.tp_alpha)),
        ])),
    );

    let h = &s.scheduler;
    root.insert(
        "scheduler".into(),
        Value::Table(table([
            ("walltime", float(h.walltime)),
            ("signal_lead", float(h.signal_lead)),
            ("requeue_delay", float(h.requeue_delay)),
            ("startup_overhead_base", float(h.startup_overhead_base)),
            ("image_bytes", float(h.image_bytes)),
            ("image_tier", Value::String(h.image_tier.clone())),
            ("image_stripe_count", int(h.image_stripe_count)),
            ("singleton", Value::Boolean(h.singleton)),
            ("alloc_nodes", int(h.alloc_nodes)),
            (
                "vetting",
                Value::Table(table([
                    ("enabled", Value::Boolean(h.vetting.enabled)),
                    ("duration", float(h.vetting.duration)),
                    ("sensitivity", float(h.vetting.sensitivity)),
                ])),
            ),
        ])),
    );

    let f = &s.failures;
    root.insert(
        "failures".into(),
        Value::Table(table([
            ("p_rank_startup", float(f.p_rank_startup)),
            ("p_node_port", float(f.p_node_port)),
            ("oom_h0", float(f.oom_h0)),
            ("oom_growth", float(f.oom_growth)),
            ("cache_flush_prolog", Value::Boolean(f.cache_flush_prolog)),
            ("bad_node_ttf", float(f.bad_node_ttf)),
        ])),
    );

    let k = &s.checkpoint;
    let mut ck = table([
        ("write_cost", float(k.write_cost)),
        ("async", Value::Boolean(k.async_write)),
        ("dip_factor", float(k.dip_factor)),
        ("write_duration", float(k.write_duration)),
        ("tier", Value::String(k.tier.clone())),
        ("restore_cost", float(k.restore_cost)),
    ]);
    match k.interval {
        CheckpointInterval::Iterations(n) => ck.insert("interval_iterations".into(), int(n)),
        CheckpointInterval::Seconds(x) => ck.insert("interval_seconds".into(), float(x)),
    };
    root.insert("checkpoint".into(), Value::Table(ck));

    let d = &s.dataset;
    root.insert(
        "dataset".into(),
        Value::Table(table([
            ("total_bytes", float(d.total_bytes)),
            ("shard_count", int(d.shard_count)),
            ("total_tokens", int(d.total_tokens)),
            ("tier", Value::String(d.tier.clone())),
            ("stripe_count", int(d.stripe_count)),
        ])),
    );
    root
}

/// Serialize in canonical units; `parse_scenario` of the result yields an
/// equal spec.
pub fn to_toml(s: &ScenarioSpec) -> String {
    toml::to_string(&to_table(s)).expect("scenario tables always serialize")
}

/// Keys that describe operational policy rather than the system under study.
const POLICY_KEYS: &[(&str, &str)] = &[
    ("cluster", "vboost"),
    ("cluster", "boost_factor"),
    ("scheduler", "vetting"),
    ("failures", "cache_flush_prolog"),
];

pub(crate) fn digest(s: &ScenarioSpec) -> String {
    let mut rest = to_table(s);
    rest.remove("seed");
    let mut policy = Table::new();
    if let Some(ck) = rest.remove("checkpoint") {
        policy.insert("checkpoint".into(), ck);
    }
    for (section, key) in POLICY_KEYS {
        if let Some(Value::Table(t)) = rest.get_mut(*section) {
            if let Some(v) = t.remove(*key) {
                policy.insert(format!("{section}.{key}"), v);
            }
        }
    }
    format!("{}{}", hex16(&rest), hex16(&policy))
}

fn hex16(t: &Table) -> String {
    let text = toml::to_string(t).expect("scenario tables always serialize");
    Sha256::digest(text.as_bytes())[..8]
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Length of the digest prefix covering non-policy sections.
pub const DIGEST_SYSTEM_PREFIX: usize = 16;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::default_reference_scenario;

    fn reference_text() -> String {
        to_toml(&default_reference_scenario())
    }

    #[test]
    fn round_trip_reference() {
        let spec = default_reference_scenario();
        let back = parse_scenario(&to_toml(&spec), &LoadOptions::default()).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn syntax_error_reports_line() {
        let text = "seed = 1\n[cluster]\nnode_count = = 3\n";
        match parse_scenario(text, &LoadOptions::default()) {
            Err(ScenarioError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn strict_mode_rejects_unknown_keys() {
        let text = reference_text().replace("[comm]\n", "[comm]\nalhpa = 1.0\n");
        match parse_scenario(&text, &LoadOptions::default()) {
            Err(ScenarioError::UnknownKey { keys }) => assert_eq!(keys, vec!["comm.alhpa"]),
            other => panic!("expected unknown key, got {other:?}"),
        }
        assert!(parse_scenario(&text, &LoadOptions { strict: false }).is_ok());
    }

    #[test]
    fn suffixes_normalize() {
        let text = reference_text()
            .replace("walltime = 86400.0", "walltime = \"1d\"")
            .replace("image_bytes = 20000000000.0", "image_bytes = \"20GB\"");
        let spec = parse_scenario(&text, &LoadOptions::default()).unwrap();
        assert_eq!(spec, default_reference_scenario());
    }

    #[test]
    fn missing_threshold_defaults_to_ninety_percent() {
        let text = reference_text().replace("prolog_mem_threshold = 0.9\n", "");
        assert!(!text.contains("prolog_mem_threshold"));
        let spec = parse_scenario(&text, &LoadOptions::default()).unwrap();
        assert_eq!(spec.cluster.prolog_mem_threshold, 0.90);
    }

    #[test]
    fn all_violations_reported_together() {
        let text = reference_text()
            .replace("node_count = 2688", "node_count = 0")
            .replace("overlap = 0.5", "overlap = 1.5")
            .replace("sensitivity = 0.9", "sensitivity = \"high\"");
        match parse_scenario(&text, &LoadOptions::default()) {
            Err(ScenarioError::Validation(e)) => {
                assert!(e.mentions("cluster.node_count"), "{e}");
                assert!(e.mentions("comm.overlap"), "{e}");
                assert!(e.mentions("scheduler.vetting.sensitivity"), "{e}");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn missing_section_is_a_violation() {
        let spec = default_reference_scenario();
        let mut t = to_table(&spec);
        t.remove("comm");
        match from_table(&t, &LoadOptions::default()) {
            Err(ScenarioError::Validation(e)) => assert!(e.mentions("comm"), "{e}"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn digest_separates_policy() {
        let a = default_reference_scenario();
        let mut b = a.clone();
        b.checkpoint.interval = CheckpointInterval::Iterations(500);
        let mut c = a.clone();
        c.cluster.node_mtbf *= 2.0;
        let mut d = a.clone();
        d.seed = 7;
        let (da, db, dc) = (a.digest(), b.digest(), c.digest());
        assert_eq!(da.len(), 32);
        assert_eq!(da[..DIGEST_SYSTEM_PREFIX], db[..DIGEST_SYSTEM_PREFIX]);
        assert_ne!(da, db);
        assert_ne!(da[..DIGEST_SYSTEM_PREFIX], dc[..DIGEST_SYSTEM_PREFIX]);
        assert_eq!(da, d.digest());
    }
}
