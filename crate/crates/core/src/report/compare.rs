use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::listing::two_decimals;
use super::ReportError;
use crate::stat::{Measurement, PropagationPolicy};

/// Differences larger than this many combined standard deviations are
/// marked significant.
pub const DEFAULT_SIGMA: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub a: Measurement,
    pub b: Measurement,
    /// b / a; absent when a is zero.
    pub ratio: Option<Measurement>,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub label_a: String,
    pub label_b: String,
    pub sigma: f64,
    pub rows: Vec<ComparisonRow>,
    /// Names present on one side only.
    pub only_a: Vec<String>,
    pub only_b: Vec<String>,
}

pub fn significant(a: &Measurement, b: &Measurement, sigma: f64) -> bool {
    let combined = (a.sd * a.sd + b.sd * b.sd).sqrt();
    (b.mean - a.mean).abs() > sigma * combined
}

pub fn compare(
    label_a: &str,
    a: &BTreeMap<String, Measurement>,
    label_b: &str,
    b: &BTreeMap<String, Measurement>,
    sigma: f64,
) -> Result<Comparison, ReportError> {
    let mut rows = Vec::new();
    for (name, ma) in a {
        let Some(mb) = b.get(name) else { continue };
        let ratio = if ma.mean != 0.0 {
            Some(mb.div(ma, PropagationPolicy::Independent)?)
        } else {
            None
        };
        rows.push(ComparisonRow {
            name: name.clone(),
            a: ma.clone(),
            b: mb.clone(),
            ratio,
            significant: significant(ma, mb, sigma),
        });
    }
    if rows.is_empty() {
        return Err(ReportError::DisjointEventSets);
    }
    Ok(Comparison {
        label_a: label_a.to_string(),
        label_b: label_b.to_string(),
        sigma,
        rows,
        only_a: a.keys().filter(|k| !b.contains_key(*k)).cloned().collect(),
        only_b: b.keys().filter(|k| !a.contains_key(*k)).cloned().collect(),
    })
}

fn cell(m: &Measurement) -> String {
    if m.n <= 1 {
        return format!("{} (n=1)", number(m.mean));
    }
    format!("{} +- {}", number(m.mean), number(m.sd))
}

/// Large counts in scientific notation, small values with two decimals.
fn number(x: f64) -> String {
    if x != 0.0 && (x.abs() >= 1e6 || x.abs() < 1e-2) {
        format!("{x:.3e}")
    } else {
        two_decimals(x)
    }
}

pub fn render_comparison(c: &Comparison) -> String {
    let w = c
        .rows
        .iter()
        .map(|r| r.name.len())
        .max()
        .unwrap_or(0)
        .max(5);
    let mut out = format!(
        "{:<w$}  {:>24}  {:>24}  {:>18}\n",
        "event",
        c.label_a,
        c.label_b,
        format!("{}/{}", c.label_b, c.label_a)
    );
    for r in &c.rows {
        let ratio = match &r.ratio {
            Some(q) => format!("{:.3} +- {:.3}", q.mean, q.sd),
            None => "n/a".into(),
        };
        out.push_str(&format!(
            "{:<w$}  {:>24}  {:>24}  {:>18}{}\n",
            r.name,
            cell(&r.a),
            cell(&r.b),
            ratio,
            if r.significant { " *" } else { "" }
        ));
    }
    if !c.only_a.is_empty() || !c.only_b.is_empty() {
        out.push_str(&format!(
            "warning: compared the common subset; only in {}: {}; only in {}: {}\n",
            c.label_a,
            c.only_a.join(", "),
            c.label_b,
            c.only_b.join(", ")
        ));
    }
    out.push_str(&format!(
        "* difference above {} combined standard deviations\n",
        c.sigma
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(mean: f64, sd: f64) -> Measurement {
        Measurement::new(mean, sd, 5).unwrap()
    }

    fn map(items: &[(&str, f64, f64)]) -> BTreeMap<String, Measurement> {
        items.iter().map(|(k, a, s)| (k.to_string(), m(*a, *s))).collect()
    }

    #[test]
    fn self_comparison_is_flat() {
        let a = map(&[("x", 10.0, 1.0), ("y", 3.0, 0.1)]);
        let c = compare("a", &a, "a", &a, DEFAULT_SIGMA).unwrap();
        for r in &c.rows {
            assert_eq!(r.ratio.as_ref().unwrap().mean, 1.0);
            assert!(!r.significant);
        }
    }

    #[test]
    fn disjoint_sets_are_an_error() {
        let a = map(&[("x", 1.0, 0.1)]);
        let b = map(&[("y", 1.0, 0.1)]);
        assert!(matches!(
            compare("a", &a, "b", &b, DEFAULT_SIGMA),
            Err(ReportError::DisjointEventSets)
        ));
    }

    #[test]
    fn partial_overlap_warns() {
        let a = map(&[("x", 1.0, 0.1), ("only", 2.0, 0.0)]);
        let b = map(&[("x", 2.0, 0.1)]);
        let c = compare("a", &a, "b", &b, DEFAULT_SIGMA).unwrap();
        assert_eq!(c.only_a, ["only"]);
        assert!(c.rows[0].significant);
        assert!(render_comparison(&c).contains("warning"));
    }

    #[test]
    fn significance_threshold() {
        assert!(!significant(&m(10.0, 3.0), &m(18.0, 3.0), 2.0));
        assert!(significant(&m(10.0, 3.0), &m(19.0, 3.0), 2.0));
    }
}
