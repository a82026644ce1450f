//! Turning run sets into listings, comparison tables and export files.

mod compare;
mod export;
mod listing;

pub use compare::{compare, render_comparison, significant, Comparison, ComparisonRow, DEFAULT_SIGMA};
pub use export::{export, plotdata, ExportFormat};
pub use listing::{listing_lines, render_lines, render_topdown, two_decimals, ListingLine, DEFAULT_MIN_RATIO};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{AuditReport, Verdict};
use crate::microbench::ProbeResult;
use crate::run::{validate_hygiene, RunSet, WALL_CLOCK};
use crate::stat::{Measurement, PropagationPolicy, StatError};
use crate::topdown::{
    annotate_penalties, drill_down, evaluate_selected, evaluate_tree, ipc, ipc0, Diagnostic,
    MachineModel, NodeSelection, PenaltyAnnotation, TopdownError,
};

pub const IPC: &str = "IPC";
pub const IPC0: &str = "IPC0";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("the two sides share no events or metrics")]
    DisjointEventSets,
    #[error(transparent)]
    Topdown(#[from] TopdownError),
    #[error(transparent)]
    Stat(#[from] StatError),
    #[error("report json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportOptions {
    pub min_ratio: f64,
    pub policy: PropagationPolicy,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            min_ratio: DEFAULT_MIN_RATIO,
            policy: PropagationPolicy::Independent,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub label: String,
    pub machine_model: String,
    pub regime: String,
    pub repeats: u32,
    pub snapshot_hash: String,
    pub verdict: Option<Verdict>,
    pub backend: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub name: String,
    pub value: Measurement,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub header: ReportHeader,
    /// The selected top-down nodes that passed the min-ratio filter.
    pub topdown: Vec<ListingLine>,
    /// All level-1 nodes, unfiltered.
    pub level1: Vec<ListingLine>,
    pub bottleneck: Vec<String>,
    pub events: Vec<Row>,
    pub derived: Vec<Row>,
    pub diagnostics: Vec<String>,
    pub hygiene: Vec<String>,
    pub penalties: PenaltyAnnotation,
    pub probes: Vec<ProbeResult>,
    /// The run set the report was built from, in run-record file form.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_set: Option<serde_json::Value>,
}

fn diagnostic_text(d: &Diagnostic) -> String {
    match d {
        Diagnostic::InconsistentCounters { node, value } => {
            format!("{node} evaluates to {value:.2}%, outside 0..100; counters look inconsistent")
        }
    }
}

/// Top-down values and throughput figures that a run set supports. Nodes
/// whose counters are missing are left out.
pub fn derived_metrics(
    rs: &RunSet,
    model: &MachineModel,
    policy: PropagationPolicy,
) -> BTreeMap<String, Measurement> {
    let mut out = BTreeMap::new();
    let m = &rs.measurements;
    if let (Some(i), Some(c)) = (m.get(&model.instructions_event), m.get(&model.cycles_event)) {
        if let Ok(v) = ipc(i, c) {
            out.insert(IPC.to_string(), v);
        }
    }
    if let (Some(i), Some(w)) = (m.get(&model.instructions_event), m.get(WALL_CLOCK)) {
        if let Ok(v) = ipc0(i, model.frequency_hz, w) {
            out.insert(IPC0.to_string(), v);
        }
    }
    let all: BTreeSet<String> = model.tree.nodes().iter().map(|n| n.name.clone()).collect();
    for name in all {
        let sel = NodeSelection::Nodes(BTreeSet::from([name.clone()]));
        if let Ok(ev) = evaluate_selected(&model.tree, m, policy, &sel) {
            if let Some(v) = ev.value(&name) {
                out.insert(name, v.clone());
            }
        }
    }
    out
}

/// Event measurements plus derived metrics, the input of a comparison.
pub fn comparison_inputs(rs: &RunSet, model: &MachineModel) -> BTreeMap<String, Measurement> {
    let mut all = rs.measurements.clone();
    all.extend(derived_metrics(rs, model, PropagationPolicy::Independent));
    all
}

pub fn build_report(
    rs: &RunSet,
    model: &MachineModel,
    audit: Option<&AuditReport>,
    opts: &ReportOptions,
) -> Result<Report, ReportError> {
    let m = &rs.measurements;
    let selection = if rs.plan.nodes.is_empty() {
        NodeSelection::UpToLevel(1)
    } else {
        NodeSelection::Nodes(rs.plan.nodes.iter().cloned().collect())
    };
    let mut diagnostics = Vec::new();
    let topdown = match evaluate_selected(&model.tree, m, opts.policy, &selection) {
        Ok(selected) => {
            diagnostics.extend(selected.diagnostics.iter().map(diagnostic_text));
            listing_lines(&selected.tree, opts.min_ratio)
        }
        Err(e) if rs.plan.nodes.is_empty() => {
            diagnostics.push(format!("top-down listing not available: {e}"));
            Vec::new()
        }
        Err(e) => return Err(e.into()),
    };
    let level1 = match evaluate_tree(&model.tree, m, opts.policy) {
        Ok(ev) => listing_lines(&ev.tree, f64::NEG_INFINITY),
        Err(_) => Vec::new(),
    };
    let bottleneck = drill_down(&model.tree, m, opts.min_ratio, opts.policy)
        .into_iter()
        .map(|n| n.name)
        .collect();
    let events = m
        .iter()
        .map(|(name, value)| Row {
            name: name.clone(),
            value: value.clone(),
        })
        .collect();
    let metrics = derived_metrics(rs, model, opts.policy);
    let derived = [IPC, IPC0]
        .iter()
        .filter_map(|k| {
            metrics.get(*k).map(|v| Row {
                name: k.to_string(),
                value: v.clone(),
            })
        })
        .collect();
    let penalties = match m.get(&model.cycles_event) {
        Some(cycles) => {
            let counted: BTreeMap<String, Measurement> = m
                .iter()
                .filter(|(k, _)| model.penalties.get(k).is_some())
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect();
            annotate_penalties(&counted, &model.penalties, cycles).unwrap_or_default()
        }
        None => PenaltyAnnotation::default(),
    };
    let hygiene = validate_hygiene(rs, audit)
        .iter()
        .map(ToString::to_string)
        .collect();
    Ok(Report {
        header: ReportHeader {
            label: rs
                .meta_str("config")
                .map(String::from)
                .unwrap_or_else(|| rs.plan.label.clone()),
            machine_model: model.name.clone(),
            regime: rs.plan.schedule.regime.as_str().to_string(),
            repeats: rs.plan.repeats,
            snapshot_hash: rs.snapshot_hash.clone(),
            verdict: audit.map(|a| a.verdict),
            backend: rs.meta_str("backend").map(String::from),
        },
        topdown,
        level1,
        bottleneck,
        events,
        derived,
        diagnostics,
        hygiene,
        penalties,
        probes: Vec::new(),
        run_set: Some(rs.to_value()),
    })
}

fn value_cell(m: &Measurement) -> String {
    if m.n <= 1 {
        format!("{:.6e} (n=1)", m.mean)
    } else {
        format!("{:.6e} +- {:.3e}", m.mean, m.sd)
    }
}

impl Report {
    pub fn render_text(&self) -> String {
        let h = &self.header;
        let mut out = format!(
            "# {}  model {}  regime {}  repeats {}\n# snapshot {}  verdict {}\n",
            if h.label.is_empty() { "run" } else { &h.label },
            h.machine_model,
            h.regime,
            h.repeats,
            if h.snapshot_hash.is_empty() { "-" } else { &h.snapshot_hash },
            h.verdict.map_or("not audited", |v| v.as_str()),
        );
        out.push_str(&render_lines(&self.topdown));
        if !self.bottleneck.is_empty() {
            out.push_str(&format!("\nbottleneck: {}\n", self.bottleneck.join(" -> ")));
        }
        if !self.derived.is_empty() {
            out.push('\n');
            for r in &self.derived {
                let v = &r.value;
                let sd = if v.n <= 1 { "(n=1)".to_string() } else { format!("+- {:.3}", v.sd) };
                out.push_str(&format!("{:<6}{:.3} {sd}\n", r.name, v.mean));
            }
        }
        if !self.events.is_empty() {
            let w = self.events.iter().map(|r| r.name.len()).max().unwrap_or(0);
            out.push_str("\nevents:\n");
            for r in &self.events {
                out.push_str(&format!("  {:<w$}  {}\n", r.name, value_cell(&r.value)));
            }
        }
        if !self.penalties.shares.is_empty() {
            out.push_str("\npenalty estimates (upper bounds, % of cycles):\n");
            for s in &self.penalties.shares {
                out.push_str(&format!(
                    "  {:<36} {:>7.2}..{:<7.2} {}\n",
                    s.event, s.share_low, s.share_high, s.label
                ));
            }
        }
        for d in &self.diagnostics {
            out.push_str(&format!("diagnostic: {d}\n"));
        }
        for w in &self.hygiene {
            out.push_str(&format!("warning: {w}\n"));
        }
        for p in &self.probes {
            out.push('\n');
            out.push_str(&p.report());
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Report, ReportError> {
        Ok(serde_json::from_str(text)?)
    }
}

#[cfg(test)]
mod tests;
