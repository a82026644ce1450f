use serde::{Deserialize, Serialize};

use crate::stat::Measurement;
use crate::topdown::MetricTree;

pub const DEFAULT_MIN_RATIO: f64 = 1.0;

const TAG_WIDTH: usize = 10;
const NAME_WIDTH: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ListingLine {
    pub tag: String,
    pub name: String,
    pub value: Measurement,
}

impl ListingLine {
    pub fn render(&self) -> String {
        format!(
            "{:<TAG_WIDTH$}{:<NAME_WIDTH$}{:>6} +- {} ",
            self.tag,
            format!("{}:", self.name),
            two_decimals(self.value.mean),
            two_decimals(self.value.sd),
        )
    }
}

/// Rounds to two decimals, printing negative zero as `0.00`.
pub fn two_decimals(x: f64) -> String {
    let s = format!("{x:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

/// Evaluated nodes in breadth-first order, without those under
/// `min_ratio` percent. Nodes without a value are not listed.
pub fn listing_lines(tree: &MetricTree, min_ratio: f64) -> Vec<ListingLine> {
    tree.nodes_by_level()
        .into_iter()
        .filter_map(|n| {
            let v = n.value.as_ref()?;
            (v.mean >= min_ratio).then(|| ListingLine {
                tag: n.tag.clone(),
                name: n.name.clone(),
                value: v.clone(),
            })
        })
        .collect()
}

pub fn render_lines(lines: &[ListingLine]) -> String {
    lines.iter().map(|l| l.render() + "\n").collect()
}

pub fn render_topdown(tree: &MetricTree, min_ratio: f64) -> String {
    render_lines(&listing_lines(tree, min_ratio))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(tag: &str, name: &str, mean: f64, sd: f64) -> String {
        ListingLine {
            tag: tag.into(),
            name: name.into(),
            value: Measurement::new(mean, sd, 5).unwrap(),
        }
        .render()
    }

    #[test]
    fn fixed_width_lines() {
        assert_eq!(
            line("FE", "Frontend_Bound", 43.94, 0.02),
            "FE        Frontend_Bound:                                    43.94 +- 0.02 "
        );
        assert_eq!(
            line("BE/Mem", "Backend_Bound.Memory_Bound.DRAM_Bound", 36.126, 0.0449),
            "BE/Mem    Backend_Bound.Memory_Bound.DRAM_Bound:             36.13 +- 0.04 "
        );
        assert_eq!(
            line("FE", "Frontend_Bound", 5.62, 0.0),
            "FE        Frontend_Bound:                                     5.62 +- 0.00 "
        );
    }

    #[test]
    fn negative_zero_is_printed_plain() {
        assert_eq!(two_decimals(-0.001), "0.00");
        assert_eq!(two_decimals(-0.5), "-0.50");
    }
}
