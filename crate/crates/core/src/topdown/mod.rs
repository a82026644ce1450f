//! Hierarchical bottleneck breakdown over pipeline slots, plus IPC-style
//! derived metrics and penalty annotations.
//!
//! Level-1 categories partition the issue slots of all unhalted cycles:
//! Frontend_Bound, Bad_Speculation, Retiring, and Backend_Bound as the
//! residual. The formulas themselves live in a machine-model file.

mod model;
mod tree;

pub use model::{MachineModel, MachineModelFile, NodeDef, PenaltyDef};
pub use tree::{
    drill_down, evaluate_selected, evaluate_tree, Diagnostic, Evaluation, MetricNode,
    MetricTree, NodeSelection, ISSUE_WIDTH,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stat::{Measurement, PropagationPolicy, StatError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TopdownError {
    #[error(transparent)]
    Stat(#[from] StatError),
    #[error("machine model: {0}")]
    Model(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("formula cycle through `{0}`")]
    Cycle(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotModel {
    /// uops issued per cycle at most.
    pub issue_width: u32,
}

impl SlotModel {
    pub fn new(issue_width: u32) -> Result<Self, TopdownError> {
        if issue_width == 0 {
            return Err(TopdownError::Model("issue width must be at least 1".into()));
        }
        Ok(SlotModel { issue_width })
    }

    pub fn total_slots(&self, cycles: &Measurement) -> Measurement {
        cycles.scale(self.issue_width as f64)
    }
}

impl Default for SlotModel {
    fn default() -> Self {
        SlotModel { issue_width: 4 }
    }
}

pub fn ipc(instructions: &Measurement, cycles: &Measurement) -> Result<Measurement, TopdownError> {
    if cycles.mean <= 0.0 {
        return Err(StatError::DivisionByZeroMean.into());
    }
    Ok(instructions.div(cycles, PropagationPolicy::Independent)?)
}

/// Instructions per nominal cycle of wall-clock time: I / (f * t_wall).
/// Unlike IPC over task-clock this also charges time spent off the CPU.
pub fn ipc0(
    instructions: &Measurement,
    frequency_hz: f64,
    wallclock_s: &Measurement,
) -> Result<Measurement, TopdownError> {
    if !(frequency_hz > 0.0) {
        return Err(TopdownError::Invalid(format!(
            "frequency must be positive, got {frequency_hz}"
        )));
    }
    if wallclock_s.mean <= 0.0 {
        return Err(StatError::DivisionByZeroMean.into());
    }
    let nominal_cycles = wallclock_s.scale(frequency_hz);
    Ok(instructions.div(&nominal_cycles, PropagationPolicy::Independent)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyRange {
    pub low: f64,
    pub high: f64,
    pub label: String,
}

impl PenaltyRange {
    pub fn new(low: f64, high: f64, label: impl Into<String>) -> Result<Self, TopdownError> {
        if !(low > 0.0 && high > 0.0) || low > high {
            return Err(TopdownError::Model(format!(
                "penalty range [{low}, {high}] must be positive and ordered"
            )));
        }
        Ok(PenaltyRange {
            low,
            high,
            label: label.into(),
        })
    }
}

/// Per-event latency ranges in cycles.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PenaltyTable {
    entries: BTreeMap<String, PenaltyRange>,
}

impl PenaltyTable {
    pub fn insert(&mut self, event: &str, range: PenaltyRange) -> Result<(), TopdownError> {
        if self.entries.insert(event.to_string(), range).is_some() {
            return Err(TopdownError::Model(format!("duplicate penalty for {event}")));
        }
        Ok(())
    }

    pub fn get(&self, event: &str) -> Option<&PenaltyRange> {
        self.entries.get(event)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &PenaltyRange)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Estimated share of cycles charged to one event type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyShare {
    pub event: String,
    pub label: String,
    pub count: f64,
    /// Percent of total cycles at the low and high end of the penalty range.
    pub share_low: f64,
    pub share_high: f64,
    /// Always true: out-of-order execution may hide part of the penalty, so
    /// the share is an upper bound on the real cost.
    pub upper_bound: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PenaltyAnnotation {
    pub shares: Vec<PenaltyShare>,
    /// Events with no entry in the table; they are skipped.
    pub unknown_events: Vec<String>,
}

pub fn annotate_penalties(
    counters: &BTreeMap<String, Measurement>,
    table: &PenaltyTable,
    cycles: &Measurement,
) -> Result<PenaltyAnnotation, TopdownError> {
    if cycles.mean <= 0.0 {
        return Err(StatError::DivisionByZeroMean.into());
    }
    let mut out = PenaltyAnnotation::default();
    for (event, count) in counters {
        let Some(range) = table.get(event) else {
            out.unknown_events.push(event.clone());
            continue;
        };
        out.shares.push(PenaltyShare {
            event: event.clone(),
            label: range.label.clone(),
            count: count.mean,
            share_low: 100.0 * count.mean * range.low / cycles.mean,
            share_high: 100.0 * count.mean * range.high / cycles.mean,
            upper_bound: true,
        });
    }
    Ok(out)
}
