//! Run reports.
//!
//! A report is plain text in four sections:
//!
//! ```text
//! [config]      key = value lines echoing the effective configuration
//! [summary]     key = value lines: status, iteration count, Obj before/after
//! [history]     CSV, one row per outer iteration (row 0 is the initial state)
//! [motions]     final global motions, 4 rows of 4 numbers per scan
//! ```
//!
//! Nothing in the report depends on the clock or on absolute paths, so a
//! rerun with the same inputs reproduces it byte for byte. Wall-clock stage
//! timings are written separately by [`format_timings`].

use std::fmt::Write as _;
use std::time::Duration;

use mvreg_core::pipeline::{IterationRecord, Stage};
use mvreg_core::RegistrationRun;

use crate::formats::{fmt_f64, format_motions};

pub const HISTORY_HEADER: &str = "iteration,objective,selected_pairs,observed_blocks,decomposition_iterations,decomposition_converged,max_rotation_change,max_translation_change";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    NotConverged,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Converged => "converged",
            Status::NotConverged => "not-converged",
        }
    }
}

pub fn history_row(r: &IterationRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        r.iteration,
        fmt_f64(r.objective),
        r.selected_pairs,
        r.observed_blocks,
        r.decomposition_iterations,
        r.decomposition_converged,
        fmt_f64(r.max_rotation_change),
        fmt_f64(r.max_translation_change)
    )
}

pub fn format_report(config: &[(String, String)], run: &RegistrationRun, status: Status) -> String {
    let mut out = String::new();
    out.push_str("[config]\n");
    for (k, v) in config {
        let _ = writeln!(out, "{k} = {v}");
    }
    out.push_str("\n[summary]\n");
    let _ = writeln!(out, "status = {}", status.name());
    let _ = writeln!(out, "scans = {}", run.scans.len());
    let _ = writeln!(out, "iterations = {}", run.history.len().saturating_sub(1));
    if let (Some(a), Some(b)) = (run.initial_objective(), run.final_objective()) {
        let _ = writeln!(out, "initial_objective = {}", fmt_f64(a));
        let _ = writeln!(out, "final_objective = {}", fmt_f64(b));
    }
    out.push_str("\n[history]\n");
    out.push_str(HISTORY_HEADER);
    out.push('\n');
    for r in &run.history {
        out.push_str(&history_row(r));
        out.push('\n');
    }
    out.push_str("\n[motions]\n");
    out.push_str(&format_motions(&run.motions));
    out
}

/// Value of `key` in the `[summary]` section of a report.
pub fn summary_value<'a>(report: &'a str, key: &str) -> Option<&'a str> {
    let mut in_summary = false;
    for line in report.lines() {
        if line.starts_with('[') {
            in_summary = line == "[summary]";
            continue;
        }
        if in_summary {
            if let Some((k, v)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(v.trim());
                }
            }
        }
    }
    None
}

/// Stage timings as CSV (`stage,iteration,seconds`).
pub fn format_timings(timings: &[(Stage, Duration)]) -> String {
    let mut out = String::from("stage,iteration,seconds\n");
    for (stage, d) in timings {
        let (name, iteration) = match *stage {
            Stage::Initialized => ("initialized", 0),
            Stage::PairsSelected { iteration } => ("pairs-selected", iteration),
            Stage::PairsRefined { iteration } => ("pairs-refined", iteration),
            Stage::Decomposed { iteration } => ("decomposed", iteration),
            Stage::IterationDone { iteration } => ("iteration-done", iteration),
        };
        let _ = writeln!(out, "{name},{iteration},{:.6}", d.as_secs_f64());
    }
    out
}
