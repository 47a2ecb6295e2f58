use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::metrics::MeanStd;
use super::EvalError;
use crate::similarity::Measure;

/// Scores of one query under one (backend, measure) combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub query_id: String,
    pub backend_id: String,
    pub measure: Measure,
    pub precision_at_3: f64,
    pub precision_at_10: f64,
    pub precision_at_25: f64,
    pub r_precision: f64,
    pub relevant_count: usize,
}

/// Mean ± sample std over all queries of one (backend, measure) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub backend_id: String,
    pub architecture_name: String,
    pub measure: Measure,
    pub query_count: usize,
    pub precision_at_3: MeanStd,
    pub precision_at_10: MeanStd,
    pub precision_at_25: MeanStd,
    pub r_precision: MeanStd,
}

/// A grid cell that could not be evaluated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellFailure {
    pub backend_id: String,
    pub measure: Measure,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub corpus_fingerprint: String,
    pub created_at: DateTime<Utc>,
    pub per_query: Vec<MetricsRow>,
    pub aggregates: Vec<AggregateRow>,
    pub failures: Vec<CellFailure>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Markdown,
    Json,
}

impl ReportFormat {
    /// Picks the format from a file extension (`.csv`, `.md`, `.json`).
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(ReportFormat::Csv),
            "md" | "markdown" => Some(ReportFormat::Markdown),
            "json" => Some(ReportFormat::Json),
            _ => None,
        }
    }
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown report format `{other}`")),
        }
    }
}

/// Decimal half-up rounding to `decimals` places, rendered as a string.
///
/// The value is first printed with 12 decimals so that binary
/// representation noise (0.1785 stored as 0.17849999…) rounds the way the
/// decimal value would.
pub fn round_half_up(value: f64, decimals: usize) -> String {
    assert!(decimals <= 9, "at most 9 decimals supported");
    let text = format!("{:.12}", value.abs());
    let (int_part, frac) = text.split_once('.').expect("fixed-point output has a dot");
    let scale = 10u128.pow(decimals as u32);
    let mut scaled = int_part.parse::<u128>().expect("digits") * scale
        + frac[..decimals].parse::<u128>().unwrap_or(0);
    if frac.as_bytes()[decimals] >= b'5' {
        scaled += 1;
    }
    let sign = if value.is_sign_negative() && scaled != 0 { "-" } else { "" };
    if decimals == 0 {
        format!("{sign}{scaled}")
    } else {
        format!(
            "{sign}{}.{:0width$}",
            scaled / scale,
            scaled % scale,
            width = decimals
        )
    }
}

/// `mean ± std`, both rounded half-up to three decimals.
pub fn format_mean_std(ms: &MeanStd) -> String {
    format!("{} ± {}", round_half_up(ms.mean, 3), round_half_up(ms.std, 3))
}

/// Serializes the report. Markdown follows the layout of a per-architecture
/// results table: one row per (architecture, measure), metric columns
/// Prec@3, Prec@10, Prec@25, R-Prec, each as `Avg ± Std`.
pub fn emit_report(report: &EvaluationReport, format: ReportFormat) -> Result<Vec<u8>, EvalError> {
    if report.aggregates.is_empty() && report.failures.is_empty() {
        return Err(EvalError::EmptyReport);
    }
    Ok(match format {
        ReportFormat::Json => serde_json::to_vec_pretty(report).expect("report serializes"),
        ReportFormat::Csv => emit_csv(report),
        ReportFormat::Markdown => emit_markdown(report).into_bytes(),
    })
}

fn emit_csv(report: &EvaluationReport) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "backend_id",
        "architecture",
        "measure",
        "queries",
        "prec_at_3_mean",
        "prec_at_3_std",
        "prec_at_10_mean",
        "prec_at_10_std",
        "prec_at_25_mean",
        "prec_at_25_std",
        "r_prec_mean",
        "r_prec_std",
    ])
    .expect("in-memory csv");
    for row in &report.aggregates {
        let mut record = vec![
            row.backend_id.clone(),
            row.architecture_name.clone(),
            row.measure.label().to_owned(),
            row.query_count.to_string(),
        ];
        for m in [&row.precision_at_3, &row.precision_at_10, &row.precision_at_25, &row.r_precision] {
            record.push(m.mean.to_string());
            record.push(m.std.to_string());
        }
        w.write_record(&record).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

fn emit_markdown(report: &EvaluationReport) -> String {
    // Disambiguate architectures that appear under several backend ids.
    let mut ids_per_arch: HashMap<&str, Vec<&str>> = HashMap::new();
    for row in &report.aggregates {
        let ids = ids_per_arch.entry(&row.architecture_name).or_default();
        if !ids.contains(&row.backend_id.as_str()) {
            ids.push(&row.backend_id);
        }
    }
    let label = |row: &AggregateRow| {
        if ids_per_arch[row.architecture_name.as_str()].len() > 1 {
            format!("{} ({})", row.architecture_name, row.backend_id)
        } else {
            row.architecture_name.clone()
        }
    };

    let mut out = String::new();
    let queries = report.aggregates.iter().map(|r| r.query_count).max().unwrap_or(0);
    let _ = writeln!(out, "Metric values: Avg ± Std over {queries} queries.\n");
    out.push_str("| Architecture | Sim. Measure | Prec@3 | Prec@10 | Prec@25 | R-Prec |\n");
    out.push_str("|---|---|---|---|---|---|\n");
    for row in &report.aggregates {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} |",
            label(row),
            row.measure.label(),
            format_mean_std(&row.precision_at_3),
            format_mean_std(&row.precision_at_10),
            format_mean_std(&row.precision_at_25),
            format_mean_std(&row.r_precision),
        );
    }
    if !report.failures.is_empty() {
        out.push_str("\nFailed cells:\n\n");
        for f in &report.failures {
            let _ = writeln!(out, "- {} / {}: {} ({})", f.backend_id, f.measure.label(), f.code, f.message);
        }
    }
    out
}
