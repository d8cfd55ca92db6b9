//! Run report and its JSON and text renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::analysis::{CandidateEntry, ManipulableSet, UsageStats};
use crate::boundary::DAppIdentity;
use crate::pipeline::{BoundaryMode, Format, RunConfig};
use crate::types::Address;
use crate::verify::RorFinding;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DatasetSummary {
    pub victim: Address,
    pub victim_dapp: DAppIdentity,
    pub txs_replayed: usize,
    pub revert_count: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VerificationSummary {
    pub verify_calls: usize,
    pub budget_exhausted: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub tool: String,
    pub config: RunConfig,
    /// Number of builder labels in effect (0 with boundaries off).
    pub builders: usize,
    pub dataset: DatasetSummary,
    pub manipulable: ManipulableSet,
    pub ranking: Vec<UsageStats>,
    pub candidates: Vec<CandidateEntry>,
    /// Absent for analysis-only runs.
    pub verification: Option<VerificationSummary>,
    pub findings: Vec<RorFinding>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings_ms: Option<BTreeMap<String, f64>>,
}

pub fn render_report(report: &Report, format: Format) -> String {
    match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
        Format::Text => render_text(report),
    }
}

fn render_text(r: &Report) -> String {
    let mut out = String::new();
    let d = &r.dataset;
    let _ = writeln!(out, "{} (report schema {})", r.tool, r.schema_version);
    let _ = writeln!(out, "target        {} [{}]", d.victim, d.victim_dapp);
    let mode = match r.config.boundary_mode {
        BoundaryMode::On => "on",
        BoundaryMode::Off => "off",
    };
    let _ = writeln!(out, "boundaries    {mode}, {} builder label(s)", r.builders);
    let _ = writeln!(out, "dataset       {} replayed, {} reverted, {} skipped", d.txs_replayed, d.revert_count, d.skipped);

    let _ = writeln!(out, "\nmanipulable functions");
    if r.ranking.is_empty() {
        let _ = writeln!(out, "  (none)");
    }
    for (i, u) in r.ranking.iter().enumerate() {
        let _ = writeln!(
            out,
            "  {:>2}. {} [{}]{} importance {} (invoke {}, read {}, write {})",
            i + 1,
            u.function,
            u.dapp,
            if u.is_view { " view" } else { "" },
            u.importance,
            u.c_invoke,
            u.c_read,
            u.c_write
        );
    }
    for p in &r.manipulable.pruned_calls {
        let _ = writeln!(out, "      pruned call {} -> {}", p.caller, p.callee);
    }

    let _ = writeln!(out, "\ncandidate entries");
    if r.candidates.is_empty() {
        let _ = writeln!(out, "  (none)");
    }
    for c in &r.candidates {
        let shared: Vec<_> = c.shared_state.iter().map(String::as_str).collect();
        let _ = writeln!(
            out,
            "  {} via {} on {{{}}} importance {}",
            c.entry_fn,
            c.manipulable_fn,
            shared.join(", "),
            c.importance
        );
    }

    match &r.verification {
        None => {
            let _ = writeln!(out, "\nverification skipped (analysis only)");
        }
        Some(v) => {
            let _ = writeln!(
                out,
                "\nverification  {} call(s){}",
                v.verify_calls,
                if v.budget_exhausted { ", budget exhausted" } else { "" }
            );
        }
    }
    let _ = writeln!(out, "findings      {}", r.findings.len());
    for (i, f) in r.findings.iter().enumerate() {
        let _ = writeln!(out, "\nfinding {}: {} -> {}", i + 1, f.entry_fn, f.victim_fn);
        let _ = writeln!(out, "  entry        {} at {} [{}]", f.entry_fn, f.entry_fn.function.contract, f.entry_fn.dapp);
        let _ = writeln!(out, "  victim       {} at {} [{}]", f.victim_fn, f.victim_fn.function.contract, f.victim_fn.dapp);
        let _ = writeln!(
            out,
            "  manipulable  {} at {} [{}]{}",
            f.manipulable_fn,
            f.manipulable_fn.function.contract,
            f.manipulable_fn.dapp,
            if f.manipulable_is_view { " view" } else { "" }
        );
        let _ = writeln!(out, "  hijack site  {}", f.hijack_site);
        for s in &f.overlap_slots {
            let key = s.key.map(|k| format!("[{k:#x}]")).unwrap_or_default();
            let _ = writeln!(out, "  overlap      {} {}{} (slot {:#x})", s.address, s.var, key, s.slot);
        }
        for step in &f.narrative {
            let _ = writeln!(out, "  {step}");
        }
    }
    if let Some(t) = &r.timings_ms {
        let _ = writeln!(out, "\ntimings (ms)");
        for (k, v) in t {
            let _ = writeln!(out, "  {k:<13}{v:.2}");
        }
    }
    out
}
