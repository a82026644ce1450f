//! Environment audit: probes the kernel and CPU configuration that
//! disturbs counter measurements and tells what to change.

mod checks;
mod remediate;
pub mod snapshot;
pub mod sources;
mod warm;

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use checks::{audit, default_targets, CHECK_COUNT};
pub use remediate::{remediate, Action, ActionOutcome, RemediationStep};
pub use snapshot::{snapshot, CpuFreq, SystemSnapshot};
pub use sources::{error_source, ErrorSource, ERROR_SOURCES};
pub use warm::{resident_fraction, warm_page_cache, WarmEntry};

use crate::run::{MeasurementPlan, PrefetcherMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Unknown,
    NotApplicable,
}

impl CheckStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CheckStatus::Pass => "pass",
            CheckStatus::Fail => "fail",
            CheckStatus::Unknown => "unknown",
            CheckStatus::NotApplicable => "not_applicable",
        }
    }
}

impl fmt::Display for CheckStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Clean,
    Degraded,
    Unusable,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Clean => "clean",
            Verdict::Degraded => "degraded",
            Verdict::Unusable => "unusable",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A concrete change that would fix a failed check.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Fix {
    /// Write `value` to the file at `path` (relative to the audit root).
    WriteFile { path: String, value: String },
    /// Write a 64-bit value to an MSR through the msr device file.
    WriteMsr { path: String, register: u64, value: u64 },
    /// Add or change a kernel boot parameter.
    BootParam { param: String },
    /// Something a person has to do by hand (BIOS settings, kernel build).
    Manual { instruction: String },
}

impl Fix {
    pub fn runtime_settable(&self) -> bool {
        matches!(self, Fix::WriteFile { .. } | Fix::WriteMsr { .. })
    }
}

impl fmt::Display for Fix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fix::WriteFile { path, value } => write!(f, "echo {value} > /{path}"),
            Fix::WriteMsr {
                path,
                register,
                value,
            } => write!(f, "write {value:#x} to MSR {register:#x} via /{path}"),
            Fix::BootParam { param } => write!(f, "add kernel boot parameter {param}"),
            Fix::Manual { instruction } => f.write_str(instruction),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditCheck {
    pub number: u32,
    pub id: String,
    pub description: String,
    pub error_sources: Vec<String>,
    pub observed: String,
    pub expected: String,
    pub status: CheckStatus,
    pub remediation: Option<String>,
    pub requires_reboot: bool,
    pub security_warning: Option<String>,
    #[serde(default)]
    pub fixes: Vec<Fix>,
}

impl AuditCheck {
    /// Informational checks never influence the verdict.
    pub fn applicable(&self) -> bool {
        self.status != CheckStatus::NotApplicable
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub checks: Vec<AuditCheck>,
    pub isolated_cpus: Vec<u32>,
    pub target_cpus: Vec<u32>,
    pub verdict: Verdict,
    pub snapshot_hash: String,
    pub root: PathBuf,
    #[serde(default)]
    pub smt_active: Option<bool>,
}

impl AuditReport {
    pub fn check(&self, number: u32) -> Option<&AuditCheck> {
        self.checks.iter().find(|c| c.number == number)
    }

    pub fn status(&self, number: u32) -> Option<CheckStatus> {
        self.check(number).map(|c| c.status)
    }

    pub fn rt_throttling_disabled(&self) -> bool {
        self.status(9) == Some(CheckStatus::Pass)
    }

    pub fn hyperthreading_on(&self) -> bool {
        self.smt_active == Some(true)
    }

    pub fn failed(&self) -> impl Iterator<Item = &AuditCheck> {
        self.checks.iter().filter(|c| c.status == CheckStatus::Fail)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<4}{:<22}{:<16}{:<34}{}\n",
            "#", "check", "status", "observed", "expected"
        ));
        for c in &self.checks {
            out.push_str(&format!(
                "{:<4}{:<22}{:<16}{:<34}{}\n",
                c.number,
                c.id,
                c.status.as_str(),
                truncate(&c.observed, 32),
                c.expected
            ));
            if c.status == CheckStatus::Fail {
                if let Some(r) = &c.remediation {
                    let reboot = if c.requires_reboot { " (reboot)" } else { "" };
                    out.push_str(&format!("    fix{reboot}: {r}\n"));
                }
                out.push_str(&format!("    affects: {}\n", c.error_sources.join(", ")));
            }
            if let Some(w) = &c.security_warning {
                out.push_str(&format!("    warning: {w}\n"));
            }
        }
        out.push_str(&format!(
            "isolated cpus: {:?}  target cpus: {:?}\nverdict: {}\nsnapshot: {}\n",
            self.isolated_cpus, self.target_cpus, self.verdict, self.snapshot_hash
        ));
        out
    }
}

fn truncate(s: &str, n: usize) -> String {
    if s.chars().count() <= n {
        s.to_string()
    } else {
        let mut t: String = s.chars().take(n - 1).collect();
        t.push('~');
        t
    }
}

/// What the audit needs to know about the intended measurement.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AuditTarget {
    /// Empty means: pick defaults from the snapshot.
    pub target_cpus: Vec<u32>,
    pub prefetcher_mode: PrefetcherMode,
    pub bios_frequency_pinned: bool,
}

impl From<&MeasurementPlan> for AuditTarget {
    fn from(plan: &MeasurementPlan) -> Self {
        AuditTarget {
            target_cpus: plan.target_cpus.clone(),
            prefetcher_mode: plan.prefetcher_mode,
            bios_frequency_pinned: plan.bios_frequency_pinned,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AuditError {
    #[error("audit root {0} is not readable")]
    RootUnreadable(PathBuf),
    #[error("cannot read {path}: {source}")]
    FileUnreadable {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[cfg(test)]
mod tests;
