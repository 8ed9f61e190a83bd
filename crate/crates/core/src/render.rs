//! Output rendering. JSON is canonical (sorted keys, shortest round-trip
//! numbers); CSV follows each result's schema; tables are for people and
//! drop precision.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use crate::perf::{SaturationScore, ScalingTable};
use crate::report::{CampaignReport, Comparison};
use crate::resilience::CheckpointPlan;
use crate::sim::{SweepRow, WasteCategory};
use crate::storage::{LoadPlan, TokenizationPlan};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
    Table,
}

impl FromStr for Format {
    type Err = RenderError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            "table" => Ok(Format::Table),
            other => Err(RenderError::UnsupportedFormat(other.to_string())),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RenderError {
    #[error("unsupported format `{0}`")]
    UnsupportedFormat(String),
}

/// A result that can be rendered. `csv` and `table` return `None` when the
/// result has no such form.
pub trait Reportable {
    fn json(&self) -> Value;

    fn csv(&self) -> Option<String> {
        Some(metric_csv(&self.json()))
    }

    fn table(&self) -> Option<String> {
        let rows: Vec<Vec<String>> = flatten(&self.json())
            .into_iter()
            .map(|(k, v)| vec![k, short(&v)])
            .collect();
        Some(aligned(&["metric", "value"], &rows))
    }
}

pub fn render(format: Format, value: &dyn Reportable) -> Result<String, RenderError> {
    let unsupported = |f: &str| RenderError::UnsupportedFormat(f.to_string());
    match format {
        Format::Json => Ok(canonical_json(&value.json())),
        Format::Csv => value.csv().ok_or_else(|| unsupported("csv")),
        Format::Table => value.table().ok_or_else(|| unsupported("table")),
    }
}

pub fn canonical_json(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("values serialize");
    s.push('\n');
    s
}

pub fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("results serialize")
}

/// Shortest decimal that reads back to the same `f64`.
pub fn fmt_num(x: f64) -> String {
    match serde_json::Number::from_f64(x) {
        Some(n) => n.to_string(),
        None if x.is_nan() => "NaN".into(),
        None if x > 0.0 => "inf".into(),
        None => "-inf".into(),
    }
}

fn scalar(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Leaf values keyed by dotted path; arrays use the element index.
pub fn flatten(v: &Value) -> Vec<(String, Value)> {
    fn walk(prefix: &str, v: &Value, out: &mut Vec<(String, Value)>) {
        let join = |k: &str| {
            if prefix.is_empty() {
                k.to_string()
            } else {
                format!("{prefix}.{k}")
            }
        };
        match v {
            Value::Object(m) => m.iter().for_each(|(k, x)| walk(&join(k), x, out)),
            Value::Array(a) => a
                .iter()
                .enumerate()
                .for_each(|(i, x)| walk(&join(&i.to_string()), x, out)),
            leaf => out.push((prefix.to_string(), leaf.clone())),
        }
    }
    let mut out = Vec::new();
    walk("", v, &mut out);
    out
}

pub fn metric_csv(v: &Value) -> String {
    let mut out = String::from("metric,value\n");
    for (k, x) in flatten(v) {
        let _ = writeln!(out, "{},{}", csv_cell(&k), csv_cell(&scalar(&x)));
    }
    out
}

fn csv_cell(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.iter().map(|c| csv_cell(c)).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}

/// Four significant digits, for tables.
fn short(v: &Value) -> String {
    match v.as_f64() {
        Some(x) if v.is_f64() => short_num(x),
        _ => scalar(v),
    }
}

fn short_num(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return fmt_num(x);
    }
    let mag = x.abs().log10().floor() as i32;
    if (-3..6).contains(&mag) {
        format!("{:.*}", (3 - mag).max(0) as usize, x)
    } else {
        format!("{x:.3e}")
    }
}

pub fn aligned(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ");
        s.truncate(s.trim_end().len());
        s.push('\n');
        s
    };
    let mut out = line(header.to_vec());
    out.push_str(&line(
        widths
            .iter()
            .map(|w| "-".repeat(*w))
            .collect::<Vec<_>>()
            .iter()
            .map(String::as_str)
            .collect(),
    ));
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
    }
    out
}

impl Reportable for ScalingTable {
    fn json(&self) -> Value {
        to_value(self)
    }

    fn csv(&self) -> Option<String> {
        Some(csv(&SCALING_HEADER, &self.cells(fmt_num)))
    }

    fn table(&self) -> Option<String> {
        Some(aligned(&SCALING_HEADER, &self.cells(short_num)))
    }
}

const SCALING_HEADER: [&str; 3] = ["gpus", "tokens_per_s_per_gpu", "efficiency"];

trait Cells {
    fn cells(&self, num: fn(f64) -> String) -> Vec<Vec<String>>;
}

impl Cells for ScalingTable {
    fn cells(&self, num: fn(f64) -> String) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| vec![r.gpus.to_string(), num(r.tokens_per_s_per_gpu), num(r.efficiency)])
            .collect()
    }
}

impl Reportable for CheckpointPlan {
    fn json(&self) -> Value {
        to_value(self)
    }
}

impl Reportable for TokenizationPlan {
    fn json(&self) -> Value {
        to_value(self)
    }
}

impl Reportable for SaturationScore {
    fn json(&self) -> Value {
        to_value(self)
    }
}

impl Reportable for CampaignReport {
    fn json(&self) -> Value {
        to_value(self)
    }
}

/// Recommended model-load plan and every strategy considered.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LoadReport {
    pub recommended: LoadPlan,
    pub candidates: Vec<LoadPlan>,
}

const LOAD_HEADER: [&str; 6] = [
    "strategy",
    "read_time",
    "redistribution_time",
    "total_time",
    "fs_bytes_moved",
    "recommended",
];

impl Cells for LoadReport {
    fn cells(&self, num: fn(f64) -> String) -> Vec<Vec<String>> {
        self.candidates
            .iter()
            .map(|p| {
                vec![
                    p.strategy.as_str().to_string(),
                    num(p.read_time),
                    num(p.redistribution_time),
                    num(p.total_time),
                    num(p.fs_bytes_moved),
                    (p.strategy == self.recommended.strategy).to_string(),
                ]
            })
            .collect()
    }
}

impl Reportable for LoadReport {
    fn json(&self) -> Value {
        to_value(self)
    }

    fn csv(&self) -> Option<String> {
        Some(csv(&LOAD_HEADER, &self.cells(fmt_num)))
    }

    fn table(&self) -> Option<String> {
        Some(aligned(&LOAD_HEADER, &self.cells(short_num)))
    }
}

const COMPARISON_HEADER: [&str; 4] = ["label", "tokens_per_s", "gpu_hours", "delta_vs_best"];

impl Cells for Comparison {
    fn cells(&self, num: fn(f64) -> String) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    r.label.clone(),
                    num(r.tokens_per_s),
                    num(r.gpu_hours),
                    num(r.delta_vs_best),
                ]
            })
            .collect()
    }
}

impl Reportable for Comparison {
    fn json(&self) -> Value {
        to_value(self)
    }

    fn csv(&self) -> Option<String> {
        Some(csv(&COMPARISON_HEADER, &self.cells(fmt_num)))
    }

    fn table(&self) -> Option<String> {
        Some(aligned(&COMPARISON_HEADER, &self.cells(short_num)))
    }
}

/// Rows of a parameter sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepTable {
    pub field: String,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    fn header(&self) -> Vec<&'static str> {
        let mut h = vec!["value", "seed", "tokens_per_s", "gpu_hours"];
        h.extend(WasteCategory::ALL.iter().map(|c| c.as_str()));
        h
    }
}

impl Cells for SweepTable {
    fn cells(&self, num: fn(f64) -> String) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                let mut row = vec![
                    r.value.clone(),
                    r.seed.to_string(),
                    num(r.report.useful_tokens_per_s),
                    num(r.report.gpu_hours),
                ];
                row.extend(WasteCategory::ALL.iter().map(|c| num(r.report.waste_shares[c])));
                row
            })
            .collect()
    }
}

impl Reportable for SweepTable {
    fn json(&self) -> Value {
        to_value(self)
    }

    fn csv(&self) -> Option<String> {
        Some(csv(&self.header(), &self.cells(fmt_num)))
    }

    fn table(&self) -> Option<String> {
        Some(aligned(&self.header(), &self.cells(short_num)))
    }
}
