//! Command-line front end. Every subcommand parses its inputs, calls the
//! matching library function and renders the result.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand};
use serde_json::json;

use crate::perf::{self, Ceilings, ScalingMode, TelemetrySample};
use crate::render::{canonical_json, render, Format, LoadReport, Reportable, SweepTable};
use crate::report::{aggregate, build_report, compare_policies, CampaignReport};
use crate::resilience::plan_checkpoint;
use crate::scenario::{
    default_reference_scenario, load_scenario_with, post_stabilization_scenario, pre_stabilization_scenario, to_toml,
    LoadOptions, ScenarioError, ScenarioSpec, Violation,
};
use crate::sim::{run_campaign, sweep, with_field, EventTrace, SimError};
use crate::storage::{plan_model_load, plan_tokenization, LoadStrategy};
use crate::units::{parse_quantity, Unit};

#[derive(Debug, Parser)]
#[command(
    name = "campaign-forge",
    version,
    about = "Plan and simulate LLM training campaigns on shared clusters"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one campaign and report goodput and waste.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Run a campaign for every (value, seed) pair of one scenario field.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Dotted scenario field, e.g. checkpoint.interval_iterations.
        #[arg(long)]
        field: String,
        /// Comma-separated values for the field.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Comma-separated seeds; defaults to the single --seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Simulations to run at once; all cores when omitted.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Young-Daly checkpoint interval with a sensitivity table.
    PlanCheckpoint {
        #[command(flatten)]
        common: Common,
        /// Checkpoint write cost, e.g. 60s; defaults to the scenario's.
        #[arg(long)]
        write_cost: Option<String>,
        /// Cluster MTBF, e.g. 2h; defaults to the scenario's allocation MTBF.
        #[arg(long)]
        mtbf: Option<String>,
        /// Restore cost added to each failure.
        #[arg(long, default_value = "0s")]
        restore_cost: String,
        /// Iteration time, for the interval in iterations; defaults to the
        /// scenario's modelled iteration time.
        #[arg(long)]
        iter_time: Option<String>,
    },
    /// Compare model-loading strategies.
    PlanLoad {
        #[command(flatten)]
        common: Common,
        /// Model payload, e.g. 150GB; defaults to the scenario checkpoint size.
        #[arg(long)]
        payload: Option<String>,
        /// Nodes loading the model; defaults to the allocation size.
        #[arg(long)]
        nodes: Option<u64>,
        /// Storage tier to read from; defaults to the checkpoint tier.
        #[arg(long)]
        tier: Option<String>,
        /// Per-node network bandwidth, e.g. 25GB/s.
        #[arg(long)]
        net: Option<String>,
        /// auto, all-ranks-read or rank0-broadcast.
        #[arg(long, default_value = "auto", value_parser = ["auto", "all-ranks-read", "rank0-broadcast"])]
        strategy: String,
    },
    /// Node-hours needed to tokenize the dataset.
    PlanTokenize {
        #[command(flatten)]
        common: Common,
        /// Tokenization rate per node, tokens/s.
        #[arg(long)]
        rate: String,
        /// Nodes working in parallel.
        #[arg(long, default_value_t = 1)]
        nodes: u64,
        /// Token count; defaults to the scenario dataset.
        #[arg(long)]
        tokens: Option<String>,
        /// Accept rates outside the sanity window.
        #[arg(long)]
        allow_out_of_range: bool,
    },
    /// Strong or weak scaling table.
    Scaling {
        #[command(flatten)]
        common: Common,
        /// strong or weak.
        #[arg(long, default_value = "strong", value_parser = ["strong", "weak"])]
        mode: String,
        /// Explicit comma-separated GPU counts, ascending.
        #[arg(long, value_delimiter = ',')]
        gpus: Vec<u64>,
        /// First GPU count of the doubling series.
        #[arg(long, default_value_t = 32)]
        from: u64,
        /// Last GPU count of the doubling series.
        #[arg(long, default_value_t = 4096)]
        to: u64,
    },
    /// Saturation scores from a telemetry CSV.
    Score {
        #[command(flatten)]
        common: Common,
        /// CSV with columns flops_rate,mem_bw,net_bw,timestamp.
        #[arg(long)]
        telemetry: PathBuf,
        /// Memory bandwidth ceiling per GPU, e.g. 4TB/s.
        #[arg(long)]
        mem_bw_peak: String,
        /// Network bandwidth ceiling per GPU, e.g. 25GB/s.
        #[arg(long)]
        net_bw_peak: String,
    },
    /// Campaign report from a saved trace, or a ranked comparison of
    /// scenarios simulated over several seeds.
    Report {
        #[command(flatten)]
        common: Common,
        /// NDJSON trace produced by `simulate` for --scenario.
        #[arg(long, conflicts_with = "compare")]
        trace: Option<PathBuf>,
        /// Scenario to compare, as LABEL=PATH or PATH; repeat for each policy.
        #[arg(long)]
        compare: Vec<String>,
        /// Comma-separated seeds; defaults to the single --seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// Scenario TOML file, or builtin:reference, builtin:pre-stabilization,
    /// builtin:post-stabilization.
    #[arg(long, default_value = "builtin:reference")]
    pub scenario: String,
    /// Override a scenario field, as FIELD=VALUE; repeatable.
    #[arg(long = "set", value_name = "FIELD=VALUE")]
    pub set: Vec<String>,
    /// Seed for stochastic runs; overrides the scenario's.
    #[arg(long)]
    pub seed: Option<u64>,
    /// json, csv or table; table on a terminal, json otherwise.
    #[arg(long)]
    pub format: Option<String>,
    /// Write the result here instead of standard output. For `simulate`
    /// this is the event trace (CSV when the name ends in .csv).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the effective scenario, after overrides, as TOML.
    #[arg(long)]
    pub dump_scenario: Option<PathBuf>,
    /// Ignore unknown keys in the scenario file.
    #[arg(long)]
    pub lenient: bool,
    /// Print progress details on standard error.
    #[arg(short, long, action = ArgAction::Count)]
    pub verbose: u8,
}

/// Output streams of one invocation.
pub struct Io<'a> {
    pub out: &'a mut dyn Write,
    pub err: &'a mut dyn Write,
    /// Whether standard output is a terminal.
    pub tty: bool,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Failed {
        kind: &'static str,
        message: String,
        violations: Vec<Violation>,
    },
}

impl CliError {
    fn failed(kind: &'static str, message: impl ToString) -> Self {
        CliError::Failed {
            kind,
            message: message.to_string(),
            violations: Vec::new(),
        }
    }

    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed { .. } => 1,
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        let violations = match &e {
            ScenarioError::Validation(v) => v.violations.clone(),
            _ => Vec::new(),
        };
        CliError::Failed {
            kind: "scenario",
            message: e.to_string(),
            violations,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        let violations = match &e {
            SimError::Invalid(v) => v.violations.clone(),
            _ => Vec::new(),
        };
        let kind = match &e {
            SimError::Invalid(_) | SimError::UnknownField(_) | SimError::IncompatibleValue { .. } => "scenario",
            _ => "simulation",
        };
        CliError::Failed {
            kind,
            message: e.to_string(),
            violations,
        }
    }
}

macro_rules! failed_from {
    ($($t:ty => $kind:literal),* $(,)?) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::failed($kind, e)
            }
        }
    )*};
}

failed_from! {
    crate::perf::PerfError => "perf",
    crate::storage::StorageError => "storage",
    crate::resilience::ResilienceError => "resilience",
    crate::report::ReportError => "report",
    crate::scenario::UnknownTier => "scenario",
    std::io::Error => "io",
}

impl From<crate::render::RenderError> for CliError {
    fn from(e: crate::render::RenderError) -> Self {
        CliError::Usage(e.to_string())
    }
}

/// Parses `args` (program name first) and runs the subcommand. Returns the
/// process exit status.
pub fn run<I, T>(args: I, io: &mut Io) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(io.err, "{}", e.render());
                return 2;
            }
            let _ = write!(io.out, "{}", e.render());
            return 0;
        }
    };
    let json_errors = cli.common().format.as_deref() == Some("json");
    match execute(&cli, io) {
        Ok(()) => 0,
        Err(e) => {
            report_error(&e, json_errors, io.err);
            e.exit_code()
        }
    }
}

fn report_error(e: &CliError, json_errors: bool, err: &mut dyn Write) {
    let (kind, message, violations) = match e {
        CliError::Usage(m) => ("usage", m.as_str(), &[][..]),
        CliError::Failed {
            kind,
            message,
            violations,
        } => (*kind, message.as_str(), violations.as_slice()),
    };
    if json_errors {
        let v = json!({
            "error": kind,
            "message": message,
            "violations": violations
                .iter()
                .map(|v| json!({"field": v.field, "message": v.message}))
                .collect::<Vec<_>>(),
        });
        let _ = write!(err, "{}", canonical_json(&v));
    } else {
        let head = if violations.is_empty() {
            message
        } else {
            message.lines().next().unwrap_or(message)
        };
        let _ = writeln!(err, "error: {head}");
        for v in violations {
            let _ = writeln!(err, "  {}: {}", v.field, v.message);
        }
    }
}

impl Cli {
    fn common(&self) -> &Common {
        match &self.command {
            Command::Simulate { common }
            | Command::Sweep { common, .. }
            | Command::PlanCheckpoint { common, .. }
            | Command::PlanLoad { common, .. }
            | Command::PlanTokenize { common, .. }
            | Command::Scaling { common, .. }
            | Command::Score { common, .. }
            | Command::Report { common, .. } => common,
        }
    }
}

fn quantity(flag: &str, text: &str, unit: Unit) -> Result<f64, CliError> {
    parse_quantity(text, unit).map_err(|e| CliError::Usage(format!("--{flag}: {e}")))
}

/// Reads a command-line value as a TOML scalar: boolean, integer, float, or
/// a quantity with a time or size suffix.
pub fn parse_value(text: &str) -> Result<toml::Value, String> {
    let t = text.trim();
    if let Ok(b) = t.parse::<bool>() {
        return Ok(toml::Value::Boolean(b));
    }
    if let Ok(i) = t.parse::<i64>() {
        return Ok(toml::Value::Integer(i));
    }
    for unit in [Unit::Plain, Unit::Seconds, Unit::Bytes, Unit::BytesPerSecond] {
        if let Ok(x) = parse_quantity(t, unit) {
            return Ok(toml::Value::Float(x));
        }
    }
    Err(format!("cannot read `{t}` as a number, quantity or boolean"))
}

pub fn builtin_scenario(name: &str) -> Option<ScenarioSpec> {
    match name {
        "reference" => Some(default_reference_scenario()),
        "pre-stabilization" => Some(pre_stabilization_scenario()),
        "post-stabilization" => Some(post_stabilization_scenario()),
        _ => None,
    }
}

fn load(source: &str, lenient: bool) -> Result<ScenarioSpec, CliError> {
    if let Some(name) = source.strip_prefix("builtin:") {
        return builtin_scenario(name).ok_or_else(|| CliError::Usage(format!("unknown builtin scenario `{name}`")));
    }
    Ok(load_scenario_with(source, &LoadOptions { strict: !lenient })?)
}

impl Common {
    fn format(&self, io: &Io) -> Result<Format, CliError> {
        match &self.format {
            Some(f) => Ok(f.parse()?),
            None if io.tty => Ok(Format::Table),
            None => Ok(Format::Json),
        }
    }

    /// Scenario with overrides applied, dumped if requested.
    fn scenario(&self, io: &mut Io) -> Result<ScenarioSpec, CliError> {
        let mut s = load(&self.scenario, self.lenient)?;
        for assignment in &self.set {
            let (field, value) = assignment
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects FIELD=VALUE, got `{assignment}`")))?;
            let value = parse_value(value).map_err(|e| CliError::Usage(format!("--set {field}: {e}")))?;
            s = with_field(&s, field.trim(), &value)?;
        }
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        if let Some(path) = &self.dump_scenario {
            fs::write(path, to_toml(&s))?;
        }
        if self.verbose > 0 {
            let _ = writeln!(io.err, "scenario {} digest {}", self.scenario, s.digest());
        }
        Ok(s)
    }

    fn seeds(&self, scenario: &ScenarioSpec, listed: &[u64]) -> Vec<u64> {
        if listed.is_empty() {
            vec![scenario.seed]
        } else {
            listed.to_vec()
        }
    }

    fn emit(&self, io: &mut Io, value: &dyn Reportable) -> Result<(), CliError> {
        let text = render(self.format(io)?, value)?;
        match &self.out {
            Some(path) => fs::write(path, text)?,
            None => io.out.write_all(text.as_bytes())?,
        }
        Ok(())
    }
}

fn print_seeds(io: &mut Io, seeds: &[u64]) {
    let list: Vec<String> = seeds.iter().map(u64::to_string).collect();
    let _ = writeln!(io.err, "seed: {}", list.join(","));
}

fn simulate_report(s: &ScenarioSpec, seeds: &[u64]) -> Result<CampaignReport, CliError> {
    let mut reports = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut run = s.clone();
        run.seed = seed;
        reports.push(build_report(&run_campaign(&run)?, &run)?);
    }
    Ok(aggregate(&reports)?)
}

fn label_of(spec: &str) -> (String, String) {
    if let Some((label, source)) = spec.split_once('=') {
        return (label.to_string(), source.to_string());
    }
    let label = spec.strip_prefix("builtin:").map(str::to_string).unwrap_or_else(|| {
        Path::new(spec)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    (label, spec.to_string())
}

fn execute(cli: &Cli, io: &mut Io) -> Result<(), CliError> {
    let common = cli.common();
    // Validate the format before doing any work.
    common.format(io)?;
    match &cli.command {
        Command::Simulate { common } => {
            let s = common.scenario(io)?;
            print_seeds(io, &[s.seed]);
            let trace = run_campaign(&s)?;
            let report = build_report(&trace, &s)?;
            if let Some(path) = &common.out {
                let is_csv = path.extension().is_some_and(|e| e == "csv");
                fs::write(path, if is_csv { trace.to_csv() } else { trace.to_ndjson() })?;
            }
            let text = render(common.format(io)?, &report)?;
            io.out.write_all(text.as_bytes())?;
        }
        Command::Sweep {
            common,
            field,
            values,
            seeds,
            jobs,
        } => {
            let s = common.scenario(io)?;
            let values = values
                .iter()
                .map(|v| parse_value(v).map_err(|e| CliError::Usage(format!("--values: {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            let seeds = common.seeds(&s, seeds);
            print_seeds(io, &seeds);
            let rows = sweep(&s, field, &values, &seeds, *jobs)?;
            common.emit(
                io,
                &SweepTable {
                    field: field.clone(),
                    rows,
                },
            )?;
        }
        Command::PlanCheckpoint {
            common,
            write_cost,
            mtbf,
            restore_cost,
            iter_time,
        } => {
            let s = common.scenario(io)?;
            let c = match write_cost {
                Some(t) => quantity("write-cost", t, Unit::Seconds)?,
                None => s.checkpoint.write_cost,
            };
            let m = match mtbf {
                Some(t) => quantity("mtbf", t, Unit::Seconds)?,
                None => s.cluster_mtbf(),
            };
            let r = quantity("restore-cost", restore_cost, Unit::Seconds)?;
            let it = match iter_time {
                Some(t) => quantity("iter-time", t, Unit::Seconds)?,
                None => perf::iteration_time(&s, s.alloc_gpus())?.t_iteration,
            };
            common.emit(io, &plan_checkpoint(c, m, r, Some(it))?)?;
        }
        Command::PlanLoad {
            common,
            payload,
            nodes,
            tier,
            net,
            strategy,
        } => {
            let s = common.scenario(io)?;
            let payload = match payload {
                Some(p) => quantity("payload", p, Unit::Bytes)?,
                None => s.workload.checkpoint_bytes,
            };
            let nodes = nodes.unwrap_or(s.scheduler.alloc_nodes);
            let tier = s.tier(tier.as_deref().unwrap_or(&s.checkpoint.tier))?;
            let net = match net {
                Some(n) => quantity("net", n, Unit::BytesPerSecond)?,
                None => s.cluster.net_bw_per_node,
            };
            let chosen = match strategy.as_str() {
                "all-ranks-read" => LoadStrategy::AllRanksRead,
                "rank0-broadcast" => LoadStrategy::Rank0Broadcast,
                _ => LoadStrategy::Auto,
            };
            let candidates = [LoadStrategy::AllRanksRead, LoadStrategy::Rank0Broadcast]
                .into_iter()
                .map(|k| plan_model_load(payload, nodes, tier, net, k))
                .collect::<Result<Vec<_>, _>>()?;
            let recommended = plan_model_load(payload, nodes, tier, net, chosen)?;
            common.emit(
                io,
                &LoadReport {
                    recommended,
                    candidates,
                },
            )?;
        }
        Command::PlanTokenize {
            common,
            rate,
            nodes,
            tokens,
            allow_out_of_range,
        } => {
            let s = common.scenario(io)?;
            let mut dataset = s.dataset.clone();
            if let Some(t) = tokens {
                dataset.total_tokens = quantity("tokens", t, Unit::Plain)?.round() as u64;
            }
            let rate = quantity("rate", rate, Unit::Plain)?;
            common.emit(io, &plan_tokenization(&dataset, rate, *nodes, *allow_out_of_range)?)?;
        }
        Command::Scaling {
            common,
            mode,
            gpus,
            from,
            to,
        } => {
            let s = common.scenario(io)?;
            let mode = if mode == "weak" {
                ScalingMode::Weak
            } else {
                ScalingMode::Strong
            };
            let counts = if gpus.is_empty() {
                perf::doubling_counts(*from, *to)
            } else {
                gpus.clone()
            };
            common.emit(io, &perf::scaling_table(&s, &counts, mode)?)?;
        }
        Command::Score {
            common,
            telemetry,
            mem_bw_peak,
            net_bw_peak,
        } => {
            let s = common.scenario(io)?;
            let samples = read_telemetry(telemetry)?;
            let ceilings = Ceilings {
                mem_bw_peak: quantity("mem-bw-peak", mem_bw_peak, Unit::BytesPerSecond)?,
                net_bw_peak: quantity("net-bw-peak", net_bw_peak, Unit::BytesPerSecond)?,
            };
            common.emit(io, &perf::saturation_score(&samples, &s.cluster, ceilings)?)?;
        }
        Command::Report {
            common,
            trace,
            compare,
            seeds,
        } => {
            if let Some(path) = trace {
                let s = common.scenario(io)?;
                let trace = EventTrace::from_ndjson(&fs::read_to_string(path)?)?;
                common.emit(io, &build_report(&trace, &s)?)?;
            } else if compare.is_empty() {
                let s = common.scenario(io)?;
                let seeds = common.seeds(&s, seeds);
                print_seeds(io, &seeds);
                common.emit(io, &simulate_report(&s, &seeds)?)?;
            } else {
                let mut labelled = Vec::new();
                let mut printed = false;
                for spec in compare {
                    let (label, source) = label_of(spec);
                    let sub = Common {
                        scenario: source,
                        set: common.set.clone(),
                        seed: common.seed,
                        format: None,
                        out: None,
                        dump_scenario: None,
                        lenient: common.lenient,
                        verbose: common.verbose,
                    };
                    let s = sub.scenario(io)?;
                    let seeds = common.seeds(&s, seeds);
                    if !printed {
                        print_seeds(io, &seeds);
                        printed = true;
                    }
                    labelled.push((label, simulate_report(&s, &seeds)?));
                }
                common.emit(io, &compare_policies(&labelled)?)?;
            }
        }
    }
    Ok(())
}

/// Telemetry CSV with a header naming flops_rate, mem_bw, net_bw and
/// timestamp in any order.
fn read_telemetry(path: &Path) -> Result<Vec<TelemetrySample>, CliError> {
    let text = fs::read_to_string(path)?;
    parse_telemetry(&text).map_err(|m| CliError::failed("telemetry", format!("{}: {m}", path.display())))
}

fn parse_telemetry(text: &str) -> Result<Vec<TelemetrySample>, String> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().ok_or("empty file")?.split(',').map(str::trim).collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| format!("missing column `{name}`"))
    };
    let idx = [col("flops_rate")?, col("mem_bw")?, col("net_bw")?, col("timestamp")?];
    lines
        .enumerate()
        .map(|(i, line)| {
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            let get = |j: usize| -> Result<f64, String> {
                cells
                    .get(j)
                    .ok_or_else(|| format!("line {}: too few columns", i + 2))?
                    .parse::<f64>()
                    .map_err(|e| format!("line {}: {e}", i + 2))
            };
            Ok(TelemetrySample {
                flops_rate: get(idx[0])?,
                mem_bw: get(idx[1])?,
                net_bw: get(idx[2])?,
                timestamp: get(idx[3])?,
            })
        })
        .collect()
}
