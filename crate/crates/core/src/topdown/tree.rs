use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{SlotModel, TopdownError};
use crate::stat::{Bindings, Expr, Measurement, PropagationPolicy, StatError};

/// Name bound to the model's issue width inside formulas.
pub const ISSUE_WIDTH: &str = "ISSUE_WIDTH";

/// One node of the bottleneck hierarchy. `value` is in percent of total
/// slots once evaluated; formulas produce fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricNode {
    pub name: String,
    pub tag: String,
    pub level: u32,
    pub formula: Expr,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<MetricNode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<Measurement>,
}

impl MetricNode {
    pub fn short_name(&self) -> &str {
        self.name.rsplit('.').next().unwrap_or(&self.name)
    }

    fn walk<'a>(&'a self, out: &mut Vec<&'a MetricNode>) {
        out.push(self);
        for c in &self.children {
            c.walk(out);
        }
    }

    fn walk_mut(&mut self, f: &mut dyn FnMut(&mut MetricNode)) {
        f(self);
        for c in &mut self.children {
            c.walk_mut(f);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricTree {
    pub roots: Vec<MetricNode>,
    pub aliases: BTreeMap<String, Expr>,
    pub slots: SlotModel,
}

/// Which nodes get a value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeSelection {
    /// Every node up to and including this level.
    UpToLevel(u32),
    /// Exactly these nodes (full dotted names).
    Nodes(BTreeSet<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diagnostic {
    /// A node fell outside [0, 100] percent: the counters contradict each
    /// other (e.g. more retired than issued slots).
    InconsistentCounters { node: String, value: f64 },
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub tree: MetricTree,
    pub diagnostics: Vec<Diagnostic>,
}

impl Evaluation {
    /// Sum of the evaluated level-1 values, if all level-1 nodes have one.
    pub fn level1_sum(&self) -> Option<f64> {
        self.tree
            .roots
            .iter()
            .map(|n| n.value.as_ref().map(|v| v.mean))
            .sum()
    }

    pub fn value(&self, name: &str) -> Option<&Measurement> {
        self.tree.find(name).and_then(|n| n.value.as_ref())
    }
}

impl MetricTree {
    pub fn new(
        roots: Vec<MetricNode>,
        aliases: BTreeMap<String, Expr>,
        slots: SlotModel,
    ) -> Result<MetricTree, TopdownError> {
        let tree = MetricTree {
            roots,
            aliases,
            slots,
        };
        let mut names = BTreeSet::new();
        for n in tree.nodes() {
            if !names.insert(n.name.as_str()) {
                return Err(TopdownError::Model(format!("duplicate node {}", n.name)));
            }
            if n.level == 0 {
                return Err(TopdownError::Model(format!("node {} has level 0", n.name)));
            }
            for c in &n.children {
                if c.level != n.level + 1 {
                    return Err(TopdownError::Model(format!(
                        "child {} of {} has level {}",
                        c.name, n.name, c.level
                    )));
                }
            }
        }
        for a in tree.aliases.keys() {
            if names.contains(a.as_str()) {
                return Err(TopdownError::Model(format!("alias {a} shadows a node")));
            }
        }
        Ok(tree)
    }

    /// All nodes, depth first in tree order.
    pub fn nodes(&self) -> Vec<&MetricNode> {
        let mut out = Vec::new();
        for r in &self.roots {
            r.walk(&mut out);
        }
        out
    }

    /// All nodes ordered level by level, tree order within a level.
    pub fn nodes_by_level(&self) -> Vec<&MetricNode> {
        let mut out = Vec::new();
        let mut frontier: Vec<&MetricNode> = self.roots.iter().collect();
        while !frontier.is_empty() {
            out.extend(frontier.iter().copied());
            frontier = frontier.iter().flat_map(|n| n.children.iter()).collect();
        }
        out
    }

    pub fn find(&self, name: &str) -> Option<&MetricNode> {
        self.nodes().into_iter().find(|n| n.name == name)
    }

    fn is_internal_name(&self, name: &str) -> bool {
        name == ISSUE_WIDTH || self.aliases.contains_key(name) || self.find(name).is_some()
    }

    /// Counter names referenced anywhere in the tree or its aliases.
    pub fn counter_names(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        let exprs = self
            .aliases
            .values()
            .chain(self.nodes().into_iter().map(|n| &n.formula));
        for e in exprs {
            for name in e.names() {
                if !self.is_internal_name(&name) && seen.insert(name.clone()) {
                    out.push(name);
                }
            }
        }
        out
    }

    /// Counters needed to evaluate one node, following node and alias
    /// references.
    pub fn counters_for(&self, node: &str) -> Result<BTreeSet<String>, TopdownError> {
        let mut out = BTreeSet::new();
        let mut stack = vec![node.to_string()];
        let mut visited = BTreeSet::new();
        while let Some(n) = stack.pop() {
            if !visited.insert(n.clone()) {
                continue;
            }
            let expr = if let Some(node) = self.find(&n) {
                &node.formula
            } else if let Some(a) = self.aliases.get(&n) {
                a
            } else {
                return Err(TopdownError::UnknownNode(n));
            };
            for name in expr.names() {
                if name == ISSUE_WIDTH {
                    continue;
                }
                if self.is_internal_name(&name) {
                    stack.push(name);
                } else {
                    out.insert(name);
                }
            }
        }
        Ok(out)
    }

    pub fn clear_values(&mut self) {
        for r in &mut self.roots {
            r.walk_mut(&mut |n| n.value = None);
        }
    }

    fn set_value(&mut self, name: &str, value: Measurement) {
        for r in &mut self.roots {
            r.walk_mut(&mut |n| {
                if n.name == name {
                    n.value = Some(value.clone());
                }
            });
        }
    }
}

/// Resolves names to fractions with memoisation and cycle detection.
struct Resolver<'a> {
    tree: &'a MetricTree,
    counters: &'a dyn Bindings,
    policy: PropagationPolicy,
    cache: BTreeMap<String, Result<Measurement, TopdownError>>,
    active: BTreeSet<String>,
}

impl<'a> Resolver<'a> {
    fn new(tree: &'a MetricTree, counters: &'a dyn Bindings, policy: PropagationPolicy) -> Self {
        Resolver {
            tree,
            counters,
            policy,
            cache: BTreeMap::new(),
            active: BTreeSet::new(),
        }
    }

    fn resolve(&mut self, name: &str) -> Result<Measurement, TopdownError> {
        if name == ISSUE_WIDTH {
            return Ok(Measurement::exact(self.tree.slots.issue_width as f64));
        }
        if let Some(hit) = self.cache.get(name) {
            return hit.clone();
        }
        let expr = if let Some(node) = self.tree.find(name) {
            node.formula.clone()
        } else if let Some(a) = self.tree.aliases.get(name) {
            a.clone()
        } else {
            return self
                .counters
                .lookup(name)
                .ok_or_else(|| StatError::UnboundName(name.to_string()).into());
        };
        if !self.active.insert(name.to_string()) {
            return Err(TopdownError::Cycle(name.to_string()));
        }
        let result = self.eval_expr(&expr);
        self.active.remove(name);
        self.cache.insert(name.to_string(), result.clone());
        result
    }

    fn eval_expr(&mut self, expr: &Expr) -> Result<Measurement, TopdownError> {
        let mut local = BTreeMap::new();
        for n in expr.names() {
            let v = self.resolve(&n)?;
            local.insert(n, v);
        }
        Ok(expr.eval(&local, self.policy)?)
    }

    fn node_percent(&mut self, name: &str) -> Result<Measurement, TopdownError> {
        Ok(self.resolve(name)?.scale(100.0))
    }
}

const CONSISTENCY_SLACK: f64 = 1e-6;

fn check_range(name: &str, v: &Measurement, diags: &mut Vec<Diagnostic>) {
    if v.mean < -CONSISTENCY_SLACK || v.mean > 100.0 + CONSISTENCY_SLACK {
        diags.push(Diagnostic::InconsistentCounters {
            node: name.to_string(),
            value: v.mean,
        });
    }
}

/// Evaluates level-1 nodes; deeper levels are left for [`drill_down`] or
/// [`evaluate_selected`].
pub fn evaluate_tree(
    tree: &MetricTree,
    counters: &dyn Bindings,
    policy: PropagationPolicy,
) -> Result<Evaluation, TopdownError> {
    evaluate_selected(tree, counters, policy, &NodeSelection::UpToLevel(1))
}

pub fn evaluate_selected(
    tree: &MetricTree,
    counters: &dyn Bindings,
    policy: PropagationPolicy,
    selection: &NodeSelection,
) -> Result<Evaluation, TopdownError> {
    let wanted: Vec<String> = match selection {
        NodeSelection::UpToLevel(l) => tree
            .nodes_by_level()
            .into_iter()
            .filter(|n| n.level <= *l)
            .map(|n| n.name.clone())
            .collect(),
        NodeSelection::Nodes(set) => {
            for n in set {
                if tree.find(n).is_none() {
                    return Err(TopdownError::UnknownNode(n.clone()));
                }
            }
            tree.nodes_by_level()
                .into_iter()
                .filter(|n| set.contains(&n.name))
                .map(|n| n.name.clone())
                .collect()
        }
    };
    let mut out = tree.clone();
    out.clear_values();
    let mut resolver = Resolver::new(tree, counters, policy);
    let mut diagnostics = Vec::new();
    for name in wanted {
        let v = resolver.node_percent(&name)?;
        check_range(&name, &v, &mut diagnostics);
        out.set_value(&name, v);
    }
    Ok(Evaluation {
        tree: out,
        diagnostics,
    })
}

/// Follows the dominant node downwards: at each level the child with the
/// largest value, while that value is at least `threshold` percent.
/// Children whose counters were not collected are skipped.
pub fn drill_down(
    tree: &MetricTree,
    counters: &dyn Bindings,
    threshold: f64,
    policy: PropagationPolicy,
) -> Vec<MetricNode> {
    let mut resolver = Resolver::new(tree, counters, policy);
    let mut chain = Vec::new();
    let mut siblings: &Vec<MetricNode> = &tree.roots;
    loop {
        let mut best: Option<(&MetricNode, Measurement)> = None;
        for node in siblings {
            let value = match &node.value {
                Some(v) => v.clone(),
                None => match resolver.node_percent(&node.name) {
                    Ok(v) => v,
                    Err(_) => continue,
                },
            };
            if best.as_ref().is_none_or(|(_, b)| value.mean > b.mean) {
                best = Some((node, value));
            }
        }
        match best {
            Some((node, value)) if value.mean >= threshold => {
                let mut picked = node.clone();
                picked.children.clear();
                picked.value = Some(value);
                chain.push(picked);
                siblings = &node.children;
                if siblings.is_empty() {
                    break;
                }
            }
            _ => break,
        }
    }
    chain
}
