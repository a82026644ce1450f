#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use perfrig::counter_model::{plan_schedule, CounterBudget, EventSpec, Regime};
use perfrig::run::{load_run_set, EventReading, MeasurementPlan, RunRecord, RunSet, SoftwareCounts};
use rand::Rng;

pub const RUN_FIXTURES: [&str; 8] = [
    "gnugo-dfl",
    "gnugo-tune",
    "stream-dfl",
    "stream-tune",
    "syscalls-dfl",
    "syscalls-tune",
    "gnugo-dfl-stress",
    "gnugo-tune-stress",
];

pub const FIG5: [&str; 6] = [
    "gnugo-dfl",
    "gnugo-tune",
    "stream-dfl",
    "stream-tune",
    "syscalls-dfl",
    "syscalls-tune",
];

pub fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn run_fixture_path(name: &str) -> PathBuf {
    crate_dir().join(format!("fixtures/runs/{name}.json"))
}

pub fn run_fixture(name: &str) -> RunSet {
    load_run_set(&run_fixture_path(name)).unwrap()
}

pub fn audit_fixture(name: &str) -> PathBuf {
    crate_dir().join("fixtures/audit").join(name)
}

pub fn golden(name: &str) -> String {
    std::fs::read_to_string(crate_dir().join(format!("fixtures/golden/{name}.txt"))).unwrap()
}

/// A run set with `n_events` hardware events over a nomux-group schedule
/// and counts drawn from `rng`. Counters always run for their whole
/// window.
pub fn random_run_set<R: Rng>(rng: &mut R, n_events: usize, budget: u32, repeats: u32, discard_first: bool) -> RunSet {
    let events: Vec<EventSpec> = (0..n_events).map(|i| EventSpec::hardware(format!("EV{i}"))).collect();
    let schedule = plan_schedule(&events, CounterBudget::new(budget, 3).unwrap(), Regime::NomuxGroup, true).unwrap();
    let mut plan = MeasurementPlan::new(vec!["true".into()], vec![1], repeats, schedule);
    plan.repeatable_workload = true;
    plan.discard_first = discard_first;
    let records = (0..plan.total_runs())
        .map(|run_index| {
            let window = rng.random_range(1_000_000..10_000_000_000u64);
            RunRecord {
                run_index,
                discarded: false,
                events: events
                    .iter()
                    .map(|e| {
                        let raw = rng.random_range(0..1u64 << 40);
                        (e.name.clone(), EventReading::new(raw, window, window))
                    })
                    .collect(),
                wallclock_s: rng.random_range(0.5..20.0),
                task_clock_s: rng.random_range(0.4..19.0),
                exit_status: 0,
                snapshot_hash: String::new(),
                software: SoftwareCounts {
                    context_switches: rng.random_range(0..2000),
                    cpu_migrations: rng.random_range(0..50),
                    minor_faults: rng.random_range(0..10000),
                    major_faults: rng.random_range(0..5),
                },
            }
        })
        .collect();
    RunSet::new(plan, records, String::new(), BTreeMap::new()).unwrap()
}
