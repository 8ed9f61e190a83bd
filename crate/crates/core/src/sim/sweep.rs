use rayon::prelude::*;
use serde::Serialize;
use toml::Value;

use crate::report::{build_report, CampaignReport};
use crate::scenario::{from_table, to_table, LoadOptions, ScenarioError, ScenarioSpec};

use super::{run_campaign, SimError};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub value_index: usize,
    pub value: String,
    pub seed: u64,
    pub report: CampaignReport,
}

/// Scenario with the dotted `field` set to `value`.
pub fn with_field(scenario: &ScenarioSpec, field: &str, value: &Value) -> Result<ScenarioSpec, SimError> {
    let unknown = || SimError::UnknownField(field.to_string());
    let incompatible = |reason: &str| SimError::IncompatibleValue {
        field: field.to_string(),
        value: value.to_string(),
        reason: reason.to_string(),
    };
    let mut table = to_table(scenario);
    let mut parts: Vec<&str> = field.split('.').collect();
    let key = parts.pop().filter(|k| !k.is_empty()).ok_or_else(unknown)?;
    let mut cur = &mut table;
    for p in parts {
        cur = cur.get_mut(p).and_then(Value::as_table_mut).ok_or_else(unknown)?;
    }
    let slot = cur.get_mut(key).ok_or_else(unknown)?;
    let new = match (&*slot, value) {
        (Value::Integer(_), Value::Integer(v)) => Value::Integer(*v),
        (Value::Integer(_), Value::Float(f)) if f.fract() == 0.0 && *f >= 0.0 => Value::Integer(*f as i64),
        (Value::Float(_), Value::Float(f)) => Value::Float(*f),
        (Value::Float(_), Value::Integer(v)) => Value::Float(*v as f64),
        (Value::Boolean(_), Value::Boolean(b)) => Value::Boolean(*b),
        (Value::Integer(_) | Value::Float(_) | Value::Boolean(_), _) => {
            return Err(incompatible(&format!("expected a {}", slot.type_str())))
        }
        _ => return Err(incompatible("field is not numeric or boolean")),
    };
    *slot = new;
    from_table(&table, &LoadOptions::default()).map_err(|e| match e {
        ScenarioError::Validation(v) => SimError::Invalid(v),
        other => incompatible(&other.to_string()),
    })
}

/// Runs every (value, seed) pair, `jobs` at a time (all cores when `None`).
/// Rows come back ordered by value index, then seed index.
pub fn sweep(
    scenario: &ScenarioSpec,
    field: &str,
    values: &[Value],
    seeds: &[u64],
    jobs: Option<usize>,
) -> Result<Vec<SweepRow>, SimError> {
    let variants = values
        .iter()
        .map(|v| with_field(scenario, field, v))
        .collect::<Result<Vec<_>, _>>()?;
    let cases: Vec<(usize, u64)> = (0..variants.len())
        .flat_map(|i| seeds.iter().map(move |s| (i, *s)))
        .collect();
    let run = |&(i, seed): &(usize, u64)| -> Result<SweepRow, SimError> {
        let mut s = variants[i].clone();
        s.seed = seed;
        let trace = run_campaign(&s)?;
        Ok(SweepRow {
            value_index: i,
            value: values[i].to_string(),
            seed,
            report: build_report(&trace, &s)?,
        })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| SimError::WorkerPool(e.to_string()))?;
    pool.install(|| cases.par_iter().map(run).collect())
}
