use serde::Serialize;

use super::{Aggregation, RunSet};
use crate::audit::AuditReport;

/// Conditions under which a run set's numbers should not be trusted at
/// face value.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HygieneWarning {
    /// More than the one unavoidable context switch per run.
    ContextSwitches { run_index: u32, count: u64 },
    CpuMigrations { run_index: u32, count: u64 },
    /// Major faults although the page cache was meant to be warm.
    MajorFaults { run_index: u32, count: u64 },
    /// Per-core results summed over HT siblings hide the spread.
    UncertaintySuppressed,
    /// Scaled counts in a regime that was supposed to count everything.
    ExtrapolatedInNomux { run_index: u32 },
    WorkloadFailed { run_index: u32, status: i32 },
}

impl std::fmt::Display for HygieneWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HygieneWarning::ContextSwitches { run_index, count } => write!(
                f,
                "run {run_index}: {count} context switches (only one is expected)"
            ),
            HygieneWarning::CpuMigrations { run_index, count } => {
                write!(f, "run {run_index}: {count} CPU migrations")
            }
            HygieneWarning::MajorFaults { run_index, count } => write!(
                f,
                "run {run_index}: {count} major page faults despite a warm page cache"
            ),
            HygieneWarning::UncertaintySuppressed => write!(
                f,
                "system-wide aggregation with hyperthreading on suppresses the standard deviation"
            ),
            HygieneWarning::ExtrapolatedInNomux { run_index } => write!(
                f,
                "run {run_index}: extrapolated counts in a regime without multiplexing"
            ),
            HygieneWarning::WorkloadFailed { run_index, status } => {
                write!(f, "run {run_index}: workload exited with status {status}")
            }
        }
    }
}

pub fn validate_hygiene(rs: &RunSet, audit: Option<&AuditReport>) -> Vec<HygieneWarning> {
    let mut out = Vec::new();
    let warm = rs.plan.discard_first || rs.plan.warm_cache;
    let nomux = !rs.plan.schedule.regime.multiplexes();
    for r in rs.kept() {
        let run_index = r.run_index;
        if r.software.context_switches > 1 {
            out.push(HygieneWarning::ContextSwitches {
                run_index,
                count: r.software.context_switches,
            });
        }
        if r.software.cpu_migrations > 0 {
            out.push(HygieneWarning::CpuMigrations {
                run_index,
                count: r.software.cpu_migrations,
            });
        }
        if warm && r.software.major_faults > 0 {
            out.push(HygieneWarning::MajorFaults {
                run_index,
                count: r.software.major_faults,
            });
        }
        if nomux && r.extrapolated() {
            out.push(HygieneWarning::ExtrapolatedInNomux { run_index });
        }
        if r.exit_status != 0 {
            out.push(HygieneWarning::WorkloadFailed {
                run_index,
                status: r.exit_status,
            });
        }
    }
    if rs.plan.aggregation == Aggregation::SystemWideAggregated
        && audit.is_some_and(AuditReport::hyperthreading_on)
    {
        out.push(HygieneWarning::UncertaintySuppressed);
    }
    out
}
