use std::fmt::Write as _;
use std::str::FromStr;

use super::Report;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Json,
    Csv,
    /// Whitespace-separated stacked-bar series, one row per configuration.
    Plotdata,
}

impl FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ExportFormat::Json),
            "csv" => Ok(ExportFormat::Csv),
            "plotdata" => Ok(ExportFormat::Plotdata),
            other => Err(format!("unknown export format `{other}` (json, csv, plotdata)")),
        }
    }
}

const LEVEL1_TAGS: [&str; 4] = ["FE", "BAD", "BE", "RET"];

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn csv(report: &Report) -> String {
    let mut out = String::from("name,mean,sd,n\n");
    let mut seen = std::collections::BTreeSet::new();
    let lines = report.level1.iter().chain(&report.topdown);
    let rows = lines
        .map(|l| (&l.name, &l.value))
        .chain(report.derived.iter().map(|r| (&r.name, &r.value)))
        .chain(report.events.iter().map(|r| (&r.name, &r.value)));
    for (name, v) in rows {
        if seen.insert(name.clone()) {
            let _ = writeln!(out, "{},{},{},{}", csv_field(name), v.mean, v.sd, v.n);
        }
    }
    out
}

/// Level-1 series for several configurations; columns are value and
/// standard deviation per category.
pub fn plotdata(reports: &[Report]) -> String {
    let mut out = String::from("config");
    for t in LEVEL1_TAGS {
        let _ = write!(out, " {t} {t}_sd");
    }
    out.push('\n');
    for r in reports.iter().filter(|r| !r.level1.is_empty()) {
        let label = if r.header.label.is_empty() {
            "run".to_string()
        } else {
            r.header.label.replace(char::is_whitespace, "_")
        };
        out.push_str(&label);
        for t in LEVEL1_TAGS {
            match r.level1.iter().find(|l| l.tag == t) {
                Some(l) => {
                    let _ = write!(out, " {:.2} {:.2}", l.value.mean, l.value.sd);
                }
                None => out.push_str(" nan nan"),
            }
        }
        out.push('\n');
    }
    out
}

pub fn export(report: &Report, format: ExportFormat) -> Vec<u8> {
    match format {
        ExportFormat::Json => (report.to_json() + "\n").into_bytes(),
        ExportFormat::Csv => csv(report).into_bytes(),
        ExportFormat::Plotdata => plotdata(std::slice::from_ref(report)).into_bytes(),
    }
}
