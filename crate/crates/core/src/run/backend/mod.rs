//! Sources of counter readings.

mod native;
mod perf_stat;

pub use native::{resolve_event, NativeBackend, ResolvedEvent};
pub use perf_stat::{parse_perf_stat_csv, run_set_from_perf_stat, PerfStatBackend, PerfStatLine};

use std::collections::BTreeMap;

use super::{EventReading, MeasurementPlan, RunError, RunSet, SoftwareCounts};
use crate::counter_model::Pass;

/// Everything one execution of one pass produced.
#[derive(Debug, Clone, PartialEq)]
pub struct PassResult {
    pub events: BTreeMap<String, EventReading>,
    pub wallclock_s: f64,
    pub task_clock_s: f64,
    pub exit_status: i32,
    pub software: SoftwareCounts,
}

pub trait CounterBackend {
    fn name(&self) -> &'static str;

    /// Cheap probe run before any workload is started.
    fn available(&self) -> Result<(), RunError>;

    fn run_pass(
        &mut self,
        plan: &MeasurementPlan,
        pass: &Pass,
        run_index: u32,
    ) -> Result<PassResult, RunError>;
}

/// Serves readings from a recorded run set, keyed by run index and event
/// name, so any schedule over the recorded events yields the same counts.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    source: RunSet,
}

impl ReplayBackend {
    pub fn new(source: RunSet) -> Self {
        ReplayBackend { source }
    }
}

impl CounterBackend for ReplayBackend {
    fn name(&self) -> &'static str {
        "replay"
    }

    fn available(&self) -> Result<(), RunError> {
        Ok(())
    }

    fn run_pass(
        &mut self,
        _plan: &MeasurementPlan,
        pass: &Pass,
        run_index: u32,
    ) -> Result<PassResult, RunError> {
        let rec = self
            .source
            .records
            .iter()
            .find(|r| r.run_index == run_index)
            .ok_or_else(|| RunError::BackendUnavailable(format!("no recorded run {run_index}")))?;
        let mut events = BTreeMap::new();
        for e in pass.events() {
            let reading = rec.events.get(&e.name).ok_or_else(|| RunError::MissingEvent {
                event: e.name.clone(),
                run_index,
            })?;
            events.insert(e.name.clone(), *reading);
        }
        Ok(PassResult {
            events,
            wallclock_s: rec.wallclock_s,
            task_clock_s: rec.task_clock_s,
            exit_status: rec.exit_status,
            software: rec.software,
        })
    }
}
