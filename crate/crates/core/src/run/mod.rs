//! Executing a workload under a counter schedule and turning the raw
//! readings into per-event measurements.

pub mod backend;
mod hygiene;
pub mod launch;
mod record;

pub use hygiene::{validate_hygiene, HygieneWarning};
pub use record::{load_run_set, save_run_set, RunSetFile, SCHEMA_VERSION};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{AuditReport, Verdict};
use crate::counter_model::{Schedule, ScheduleError};
use crate::stat::{Measurement, StatError};
use backend::{CounterBackend, PassResult};

pub const TASK_CLOCK: &str = "task-clock";
pub const WALL_CLOCK: &str = "wall-clock";
pub const CONTEXT_SWITCHES: &str = "context-switches";
pub const CPU_MIGRATIONS: &str = "cpu-migrations";
pub const MINOR_FAULTS: &str = "minor-faults";
pub const MAJOR_FAULTS: &str = "major-faults";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrefetcherMode {
    #[default]
    On,
    Off,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    PerProcess,
    SystemWideSingleCore,
    SystemWideAggregated,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementPlan {
    #[serde(default)]
    pub label: String,
    pub command: Vec<String>,
    pub target_cpus: Vec<u32>,
    #[serde(default)]
    pub rt_priority: Option<i32>,
    pub repeats: u32,
    pub schedule: Schedule,
    #[serde(default)]
    pub prefetcher_mode: PrefetcherMode,
    #[serde(default)]
    pub discard_first: bool,
    #[serde(default)]
    pub aggregation: Aggregation,
    /// Report standard deviations; needs at least two kept runs.
    #[serde(default = "default_true")]
    pub uncertainty: bool,
    #[serde(default)]
    pub repeatable_workload: bool,
    /// Run even when the audit verdict is unusable.
    #[serde(default)]
    pub override_verdict: bool,
    #[serde(default)]
    pub warm_cache: bool,
    /// The core clock is fixed in firmware, so cpufreq may be absent.
    #[serde(default)]
    pub bios_frequency_pinned: bool,
    /// Extra environment variables for the workload.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub env: BTreeMap<String, String>,
    /// Top-down nodes to report; empty means level 1.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub nodes: Vec<String>,
}

impl MeasurementPlan {
    pub fn new(command: Vec<String>, target_cpus: Vec<u32>, repeats: u32, schedule: Schedule) -> Self {
        MeasurementPlan {
            label: String::new(),
            command,
            target_cpus,
            rt_priority: None,
            repeats,
            schedule,
            prefetcher_mode: PrefetcherMode::On,
            discard_first: false,
            aggregation: Aggregation::PerProcess,
            uncertainty: true,
            repeatable_workload: false,
            override_verdict: false,
            warm_cache: false,
            bios_frequency_pinned: false,
            env: BTreeMap::new(),
            nodes: Vec::new(),
        }
    }

    pub fn total_runs(&self) -> u32 {
        self.repeats + self.discard_first as u32
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.target_cpus.is_empty() {
            return Err(RunError::Plan("target_cpus must not be empty".into()));
        }
        if self.repeats == 0 {
            return Err(RunError::Plan("repeats must be at least 1".into()));
        }
        if self.uncertainty && self.repeats < 2 {
            return Err(RunError::Plan(
                "a standard deviation needs at least 2 repeats; pass --repeats 2 or more".into(),
            ));
        }
        if self.schedule.passes.len() > 1 && !self.repeatable_workload {
            return Err(RunError::Schedule(ScheduleError::RegimeRequiresRepeatableWorkload(
                self.schedule.regime,
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventReading {
    pub raw: u64,
    pub enabled_ns: u64,
    pub running_ns: u64,
    /// Count after scaling by enabled/running.
    pub value: f64,
}

impl EventReading {
    pub fn new(raw: u64, enabled_ns: u64, running_ns: u64) -> Self {
        EventReading {
            raw,
            enabled_ns,
            running_ns,
            value: extrapolate(raw, enabled_ns, running_ns),
        }
    }

    pub fn extrapolated(&self) -> bool {
        self.running_ns < self.enabled_ns
    }
}

/// Scale a count observed for `running` out of `enabled` nanoseconds to
/// the full window. A counter that never ran yields 0.
pub fn extrapolate(raw: u64, enabled_ns: u64, running_ns: u64) -> f64 {
    if running_ns == enabled_ns {
        raw as f64
    } else if running_ns == 0 {
        0.0
    } else {
        raw as f64 * (enabled_ns as f64 / running_ns as f64)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SoftwareCounts {
    pub context_switches: u64,
    pub cpu_migrations: u64,
    pub minor_faults: u64,
    pub major_faults: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_index: u32,
    #[serde(default)]
    pub discarded: bool,
    pub events: BTreeMap<String, EventReading>,
    pub wallclock_s: f64,
    pub task_clock_s: f64,
    pub exit_status: i32,
    pub snapshot_hash: String,
    pub software: SoftwareCounts,
}

impl RunRecord {
    pub fn extrapolated(&self) -> bool {
        self.events.values().any(EventReading::extrapolated)
    }

    fn check(&self) -> Result<(), RunError> {
        for (name, r) in &self.events {
            if r.running_ns > r.enabled_ns {
                return Err(RunError::InvalidRecord(format!(
                    "run {}: {name} running {} > enabled {}",
                    self.run_index, r.running_ns, r.enabled_ns
                )));
            }
            if !(r.value.is_finite() && r.value >= 0.0) {
                return Err(RunError::InvalidRecord(format!(
                    "run {}: {name} has count {}",
                    self.run_index, r.value
                )));
            }
        }
        if !(self.wallclock_s >= 0.0 && self.task_clock_s >= 0.0) {
            return Err(RunError::InvalidRecord(format!("run {}: negative time", self.run_index)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSet {
    pub plan: MeasurementPlan,
    pub records: Vec<RunRecord>,
    pub snapshot_hash: String,
    /// Free-form provenance, e.g. the configuration name and published
    /// reference numbers for fixtures.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, serde_json::Value>,
    /// Per-event aggregates over the kept runs.
    #[serde(skip)]
    pub measurements: BTreeMap<String, Measurement>,
}

impl RunSet {
    /// Builds a run set and its aggregates. The first record is marked
    /// discarded when the plan asks for a warm-up run.
    pub fn new(
        plan: MeasurementPlan,
        mut records: Vec<RunRecord>,
        snapshot_hash: String,
        meta: BTreeMap<String, serde_json::Value>,
    ) -> Result<RunSet, RunError> {
        if plan.discard_first {
            if let Some(first) = records.first_mut() {
                first.discarded = true;
            }
        }
        let mut rs = RunSet {
            plan,
            records,
            snapshot_hash,
            meta,
            measurements: BTreeMap::new(),
        };
        rs.check()?;
        rs.measurements = aggregate(&rs.kept())?;
        Ok(rs)
    }

    fn check(&self) -> Result<(), RunError> {
        let want = self.plan.total_runs() as usize;
        if self.records.len() != want {
            return Err(RunError::InvalidRecord(format!(
                "expected {want} records, found {}",
                self.records.len()
            )));
        }
        for (i, r) in self.records.iter().enumerate() {
            r.check()?;
            let should_discard = self.plan.discard_first && i == 0;
            if r.discarded != should_discard {
                return Err(RunError::InvalidRecord(format!(
                    "run {} discarded flag is {}",
                    r.run_index, r.discarded
                )));
            }
        }
        Ok(())
    }

    pub fn kept(&self) -> Vec<&RunRecord> {
        self.records.iter().filter(|r| !r.discarded).collect()
    }

    pub fn measurement(&self, name: &str) -> Option<&Measurement> {
        self.measurements.get(name)
    }

    pub fn failed_runs(&self) -> Vec<u32> {
        self.records
            .iter()
            .filter(|r| r.exit_status != 0)
            .map(|r| r.run_index)
            .collect()
    }

    pub fn meta_str(&self, key: &str) -> Option<&str> {
        self.meta.get(key).and_then(|v| v.as_str())
    }

    pub fn meta_f64(&self, key: &str) -> Option<f64> {
        self.meta.get(key).and_then(|v| v.as_f64())
    }
}

/// Per-event Measurements over the given runs, plus timing and software
/// event aggregates. The record-level timing and software fields replace
/// counter readings of the same name, so `task-clock` is always seconds.
pub fn aggregate(records: &[&RunRecord]) -> Result<BTreeMap<String, Measurement>, RunError> {
    let mut out = BTreeMap::new();
    if records.is_empty() {
        return Ok(out);
    }
    let mut series: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in records {
        for (name, reading) in &r.events {
            series.entry(name).or_default().push(reading.value);
        }
    }
    for (name, values) in series {
        if values.len() != records.len() {
            return Err(RunError::InvalidRecord(format!(
                "event {name} present in {} of {} runs",
                values.len(),
                records.len()
            )));
        }
        out.insert(name.to_string(), Measurement::from_samples(&values)?);
    }
    let derived: [(&str, fn(&RunRecord) -> f64); 6] = [
        (TASK_CLOCK, |r| r.task_clock_s),
        (WALL_CLOCK, |r| r.wallclock_s),
        (CONTEXT_SWITCHES, |r| r.software.context_switches as f64),
        (CPU_MIGRATIONS, |r| r.software.cpu_migrations as f64),
        (MINOR_FAULTS, |r| r.software.minor_faults as f64),
        (MAJOR_FAULTS, |r| r.software.major_faults as f64),
    ];
    for (name, get) in derived {
        let values: Vec<f64> = records.iter().map(|r| get(r)).collect();
        out.insert(name.to_string(), Measurement::from_samples(&values)?);
    }
    Ok(out)
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("permission denied: {0}")]
    PermissionDenied(String),
    #[error("workload exited with status {status} in run {run_index}; counts are kept in the run set")]
    WorkloadFailed {
        run_index: u32,
        status: i32,
        run_set: Box<RunSet>,
    },
    #[error("event {event} was multiplexed in run {run_index} (running {running_ns} of {enabled_ns} ns) although the regime forbids it")]
    ImplicitMultiplexDetected {
        event: String,
        run_index: u32,
        enabled_ns: u64,
        running_ns: u64,
    },
    #[error("audit verdict is unusable; fix the failing checks (see `perfrig audit`) or set the override flag")]
    VerdictUnusable,
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("unsupported run-record schema version {found} (this build reads version {expected})")]
    SchemaMismatch { found: u64, expected: u64 },
    #[error("invalid run record: {0}")]
    InvalidRecord(String),
    #[error("event {event} missing for run {run_index}")]
    MissingEvent { event: String, run_index: u32 },
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Stat(#[from] StatError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("perf stat output line {line}: {msg}")]
    Csv { line: usize, msg: String },
}

/// Runs every pass of the schedule `total_runs` times and merges the
/// passes of one repeat into a single record. Timings and software counts
/// come from the first pass.
pub fn execute(
    plan: &MeasurementPlan,
    backend: &mut dyn CounterBackend,
    audit: Option<&AuditReport>,
) -> Result<RunSet, RunError> {
    plan.validate()?;
    if let Some(report) = audit {
        if report.verdict == Verdict::Unusable && !plan.override_verdict {
            return Err(RunError::VerdictUnusable);
        }
        if plan.rt_priority.is_some() && !report.rt_throttling_disabled() {
            return Err(RunError::PermissionDenied(
                "real-time priority requested but RT throttling is active (audit check 9); \
                 set kernel.sched_rt_runtime_us=-1 first"
                    .into(),
            ));
        }
    }
    backend.available()?;
    let snapshot_hash = audit.map(|a| a.snapshot_hash.clone()).unwrap_or_default();
    let nomux = !plan.schedule.regime.multiplexes();
    let mut records = Vec::new();
    let mut first_failure = None;
    for run_index in 0..plan.total_runs() {
        let mut merged: Option<PassResult> = None;
        for pass in &plan.schedule.passes {
            let result = backend.run_pass(plan, pass, run_index)?;
            if nomux {
                if let Some((event, r)) = result.events.iter().find(|(_, r)| r.extrapolated()) {
                    return Err(RunError::ImplicitMultiplexDetected {
                        event: event.clone(),
                        run_index,
                        enabled_ns: r.enabled_ns,
                        running_ns: r.running_ns,
                    });
                }
            }
            match merged.as_mut() {
                None => merged = Some(result),
                Some(m) => {
                    if m.exit_status == 0 {
                        m.exit_status = result.exit_status;
                    }
                    m.events.extend(result.events);
                }
            }
        }
        let m = merged.ok_or_else(|| RunError::Plan("schedule has no passes".into()))?;
        if m.exit_status != 0 && first_failure.is_none() {
            first_failure = Some((run_index, m.exit_status));
        }
        records.push(RunRecord {
            run_index,
            discarded: false,
            events: m.events,
            wallclock_s: m.wallclock_s,
            task_clock_s: m.task_clock_s,
            exit_status: m.exit_status,
            snapshot_hash: snapshot_hash.clone(),
            software: m.software,
        });
    }
    let mut meta = BTreeMap::new();
    meta.insert("backend".into(), backend.name().into());
    let rs = RunSet::new(plan.clone(), records, snapshot_hash, meta)?;
    if let Some((run_index, status)) = first_failure {
        return Err(RunError::WorkloadFailed {
            run_index,
            status,
            run_set: Box::new(rs),
        });
    }
    Ok(rs)
}
