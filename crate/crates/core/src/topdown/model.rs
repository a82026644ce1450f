use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tree::{MetricNode, MetricTree};
use super::{PenaltyRange, PenaltyTable, SlotModel, TopdownError};
use crate::counter_model::{CounterBudget, EventSpec};
use crate::stat::Expr;

const BUNDLED_SANDY_BRIDGE: &str = include_str!("../../models/sandy-bridge.json");

/// Node as written in a machine-model file; children nest, names are short.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeDef {
    pub name: String,
    pub tag: String,
    pub formula: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<NodeDef>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PenaltyDef {
    pub event: String,
    pub label: String,
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MachineModelFile {
    pub name: String,
    #[serde(default)]
    pub cpu: String,
    #[serde(default)]
    pub notes: String,
    pub issue_width: u32,
    pub frequency_hz: f64,
    pub counter_budget: CounterBudget,
    pub cycles_event: String,
    pub instructions_event: String,
    #[serde(default)]
    pub fixed_counters: Vec<String>,
    #[serde(default)]
    pub aliases: BTreeMap<String, String>,
    pub nodes: Vec<NodeDef>,
    #[serde(default)]
    pub penalties: Vec<PenaltyDef>,
    /// How the native backend programs each event: a perf generic name,
    /// `rUUEE`, or `event=..,umask=..[,cmask=..][,inv][,edge]`.
    #[serde(default)]
    pub encodings: BTreeMap<String, String>,
}

/// A CPU description: slot width, counter budget, top-down tree and
/// penalty table.
#[derive(Debug, Clone)]
pub struct MachineModel {
    pub name: String,
    pub cpu: String,
    pub slots: SlotModel,
    pub frequency_hz: f64,
    pub budget: CounterBudget,
    pub cycles_event: String,
    pub instructions_event: String,
    pub fixed_counters: Vec<String>,
    pub tree: MetricTree,
    pub penalties: PenaltyTable,
    pub encodings: BTreeMap<String, String>,
}

impl MachineModel {
    /// The bundled model of the dual-core Sandy Bridge laptop part.
    pub fn sandy_bridge() -> MachineModel {
        MachineModel::from_json(BUNDLED_SANDY_BRIDGE).expect("bundled machine model is valid")
    }

    pub fn load(path: &Path) -> Result<MachineModel, TopdownError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TopdownError::Model(format!("{}: {e}", path.display())))?;
        MachineModel::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<MachineModel, TopdownError> {
        let file: MachineModelFile =
            serde_json::from_str(text).map_err(|e| TopdownError::Model(e.to_string()))?;
        MachineModel::from_file(file)
    }

    pub fn from_file(file: MachineModelFile) -> Result<MachineModel, TopdownError> {
        let slots = SlotModel::new(file.issue_width)?;
        if file.counter_budget.programmable == 0 {
            return Err(TopdownError::Model("counter budget must be positive".into()));
        }
        if !(file.frequency_hz > 0.0) {
            return Err(TopdownError::Model("frequency must be positive".into()));
        }
        let mut aliases = BTreeMap::new();
        for (k, v) in &file.aliases {
            let e = Expr::parse(v).map_err(|e| TopdownError::Model(format!("alias {k}: {e}")))?;
            aliases.insert(k.clone(), e);
        }
        let mut roots = Vec::new();
        for def in &file.nodes {
            roots.push(build_node(def, None, 1)?);
        }
        let tree = MetricTree::new(roots, aliases, slots)?;
        let mut penalties = PenaltyTable::default();
        for p in &file.penalties {
            penalties.insert(
                &p.event,
                PenaltyRange::new(p.low, p.high, p.label.clone())?,
            )?;
        }
        Ok(MachineModel {
            name: file.name,
            cpu: file.cpu,
            slots,
            frequency_hz: file.frequency_hz,
            budget: file.counter_budget,
            cycles_event: file.cycles_event,
            instructions_event: file.instructions_event,
            fixed_counters: file.fixed_counters,
            tree,
            penalties,
            encodings: file.encodings,
        })
    }

    /// Every hardware event referenced by the tree, in first-use order, with
    /// fixed-function counters marked.
    pub fn events(&self) -> Vec<EventSpec> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        let mut push = |name: &str| {
            if seen.insert(name.to_string()) {
                out.push(match self.fixed_counters.iter().position(|f| f == name) {
                    Some(slot) => EventSpec::fixed(name, slot as u32),
                    None => EventSpec::hardware(name),
                });
            }
        };
        push(&self.instructions_event);
        push(&self.cycles_event);
        for name in self.tree.counter_names() {
            push(&name);
        }
        out
    }
}

fn build_node(def: &NodeDef, parent: Option<&str>, level: u32) -> Result<MetricNode, TopdownError> {
    let name = match parent {
        Some(p) => format!("{p}.{}", def.name),
        None => def.name.clone(),
    };
    let formula = Expr::parse(&def.formula)
        .map_err(|e| TopdownError::Model(format!("node {name}: {e}")))?;
    let mut children = Vec::new();
    for c in &def.children {
        children.push(build_node(c, Some(&name), level + 1)?);
    }
    Ok(MetricNode {
        name,
        tag: def.tag.clone(),
        level,
        formula,
        children,
        value: None,
    })
}
