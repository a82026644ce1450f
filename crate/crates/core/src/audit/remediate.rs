use std::fs;
use std::io;

use serde::Serialize;

use super::snapshot::write_msr;
use super::{AuditReport, CheckStatus, Fix};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Action {
    pub description: String,
    pub fix: Fix,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ActionOutcome {
    DryRun,
    Applied,
    PermissionDenied { error: String },
    Failed { error: String },
    InstructionOnly { requires_reboot: bool },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RemediationStep {
    pub check: u32,
    pub check_id: String,
    pub action: Action,
    pub outcome: ActionOutcome,
}

fn error_outcome(e: io::Error) -> ActionOutcome {
    if e.kind() == io::ErrorKind::PermissionDenied {
        ActionOutcome::PermissionDenied {
            error: e.to_string(),
        }
    } else {
        ActionOutcome::Failed {
            error: e.to_string(),
        }
    }
}

fn write_existing(path: &std::path::Path, value: &str) -> io::Result<()> {
    let mut f = fs::OpenOptions::new().write(true).truncate(true).open(path)?;
    io::Write::write_all(&mut f, format!("{value}\n").as_bytes())
}

/// Lists, and with `apply` performs, the fixes for every failed check in
/// check order. Only file and MSR writes are ever performed; boot
/// parameters and manual steps come back as instructions.
pub fn remediate(report: &AuditReport, apply: bool) -> Vec<RemediationStep> {
    let mut steps = Vec::new();
    for check in report.checks.iter().filter(|c| c.status == CheckStatus::Fail) {
        for fix in &check.fixes {
            let outcome = if !fix.runtime_settable() {
                ActionOutcome::InstructionOnly {
                    requires_reboot: true,
                }
            } else if !apply {
                ActionOutcome::DryRun
            } else {
                let result = match fix {
                    Fix::WriteFile { path, value } => write_existing(&report.root.join(path), value),
                    Fix::WriteMsr {
                        path,
                        register,
                        value,
                    } => write_msr(&report.root.join(path), *register, *value),
                    _ => unreachable!("only runtime-settable fixes reach here"),
                };
                result.map_or_else(error_outcome, |_| ActionOutcome::Applied)
            };
            steps.push(RemediationStep {
                check: check.number,
                check_id: check.id.clone(),
                action: Action {
                    description: fix.to_string(),
                    fix: fix.clone(),
                },
                outcome,
            });
        }
    }
    steps
}
