//! Rendering of fairness reports.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::metrics::FairnessReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    #[default]
    TextTable,
    Structured,
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("unknown report format `{0}` (expected text or json)")]
    UnknownFormat(String),
    #[error("malformed report: {0}")]
    Malformed(#[from] serde_json::Error),
}

impl FromStr for ReportFormat {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" | "table" | "text_table" => Ok(ReportFormat::TextTable),
            "json" | "structured" => Ok(ReportFormat::Structured),
            other => Err(ReportError::UnknownFormat(other.into())),
        }
    }
}

pub fn render_report(report: &FairnessReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::TextTable => render_table(report),
        ReportFormat::Structured => {
            let mut s = serde_json::to_string_pretty(report).expect("reports always serialize");
            s.push('\n');
            s
        }
    }
}

/// Inverse of the structured rendering.
pub fn parse_structured(text: &str) -> Result<FairnessReport, ReportError> {
    Ok(serde_json::from_str(text)?)
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"))
}

fn signed_percent(v: f64) -> String {
    format!("{v:+.1}%")
}

fn render_table(r: &FairnessReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "model: {}   tau: {:.2}", r.model_tag, r.tau);

    out.push_str("\nDistribution\n");
    let _ = writeln!(out, "{:<20} {:<13} {:>7} {:>6}", "axis", "label", "count", "share");
    for m in &r.marginals {
        for (label, count) in &m.counts {
            let share = if label.is_sink() { "-".to_string() } else { cell(m.probability(*label)) };
            let _ = writeln!(out, "{:<20} {:<13} {:>7} {:>6}", m.axis.as_str(), label.as_str(), count, share);
        }
        let _ = writeln!(out, "{:<20} {:<13} {:>7}", m.axis.as_str(), "(support)", m.support);
    }

    out.push_str("\nPair shares\n");
    let _ = writeln!(out, "{:<20} {:<14} {:>6} {:>6}", "axis", "pair", "x1", "x2");
    for p in &r.pair_shares {
        let pair = format!("{}/{}", p.group_x1, p.group_x2);
        let _ = writeln!(out, "{:<20} {:<14} {:>6} {:>6}", p.axis.as_str(), pair, cell(p.share_x1), cell(p.share_x2));
    }

    out.push_str("\nDisparate impact\n");
    let _ = writeln!(out, "{:<20} {:<14} {:>6} {:<9}", "axis", "pair", "DI", "verdict");
    for d in &r.di_results {
        let pair = format!("{}/{}", d.group_x1, d.group_x2);
        let _ = writeln!(out, "{:<20} {:<14} {:>6} {:<9}", d.axis.as_str(), pair, cell(d.di), d.verdict.as_str());
    }

    if let Some(rows) = r.comparisons.as_ref().filter(|c| !c.is_empty()) {
        out.push_str("\nImprovement over baseline\n");
        let _ = writeln!(out, "{:<20} {:<14} {:>6} {:>6} {:>9}", "axis", "pair", "before", "after", "change");
        for c in rows {
            let pair = format!("{}/{}", c.group_x1, c.group_x2);
            let change = match c.relative_improvement {
                Some(v) => signed_percent(v),
                None => format!("d={}", cell(c.raw_delta)),
            };
            let _ = writeln!(
                out,
                "{:<20} {:<14} {:>6} {:>6} {:>9}",
                c.axis.as_str(),
                pair,
                cell(c.di_before),
                cell(c.di_after),
                change
            );
        }
    }
    out
}
