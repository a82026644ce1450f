//! Acceptance criteria, one `PASS` or `FAIL` line each.
//!
//! The live smoke test needs hardware counters. When the host has none it
//! is reported as `FAIL` with the reason, but does not fail the process,
//! so the remaining test targets still run.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use perfrig::audit::{audit, snapshot, AuditTarget, CheckStatus, CHECK_COUNT};
use perfrig::cli::cli_main;
use perfrig::counter_model::{plan_schedule, CounterBudget, EventSpec, Regime, ScheduleError};
use perfrig::microbench;
use perfrig::report::{build_report, ReportOptions, IPC0};
use perfrig::run::backend::{NativeBackend, ReplayBackend};
use perfrig::run::{execute, extrapolate, MeasurementPlan, RunError, RunSet};
use perfrig::stat::{Measurement, PropagationPolicy};
use perfrig::topdown::{drill_down, evaluate_tree, MachineModel};
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};

enum Outcome {
    Pass(String),
    Fail(String),
    Unavailable(String),
}

use Outcome::{Fail, Pass, Unavailable};

const P: PropagationPolicy = PropagationPolicy::Independent;

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

fn mc_sd(a: &Measurement, b: &Measurement, f: fn(f64, f64) -> f64, rng: &mut impl Rng) -> f64 {
    const SAMPLES: usize = 1_000_000;
    let da = Normal::new(a.mean, a.sd).unwrap();
    let db = Normal::new(b.mean, b.sd).unwrap();
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..SAMPLES {
        let v = f(da.sample(rng), db.sample(rng));
        sum += v;
        sq += v * v;
    }
    let n = SAMPLES as f64;
    let mean = sum / n;
    ((sq / n - mean * mean) * n / (n - 1.0)).sqrt()
}

fn propagation_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = rand::rngs::StdRng::seed_from_u64(0x5eed_0001);
    let mut worst = (0.0f64, String::new());
    for pair in 0..100 {
        let mean_a = rng.random_range(1.0..1e4);
        let mean_b = rng.random_range(1.0..1e4);
        let a = Measurement::new(mean_a, mean_a * rng.random_range(0.0005..=0.05), 5).unwrap();
        let b = Measurement::new(mean_b, mean_b * rng.random_range(0.0005..=0.05), 5).unwrap();
        let ops: [(&str, Measurement, fn(f64, f64) -> f64); 4] = [
            ("a+b", a.add(&b, P).unwrap(), |x, y| x + y),
            ("a-b", a.sub(&b, P).unwrap(), |x, y| x - y),
            ("a*b", a.mul(&b, P).unwrap(), |x, y| x * y),
            ("a/b", a.div(&b, P).unwrap(), |x, y| x / y),
        ];
        for (op, m, f) in ops {
            let mc = mc_sd(&a, &b, f, &mut rng);
            let rel = (m.sd - mc).abs() / mc;
            if rel > worst.0 {
                worst = (rel, format!("pair {pair} {op}"));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst.0 < 0.03 && secs < 60.0,
        format!(
            "100 pairs x 4 ops vs 1e6-sample Monte Carlo, worst relative error {:.3}% ({}), {secs:.1}s",
            worst.0 * 100.0,
            worst.1
        ),
    )
}

fn level1_closure() -> Outcome {
    let model = MachineModel::sandy_bridge();
    let mut ok = true;
    let mut parts = Vec::new();
    for name in common::FIG5 {
        let rs = common::run_fixture(name);
        let ev = evaluate_tree(&model.tree, &rs.measurements, P).unwrap();
        let sum = ev.level1_sum().unwrap();
        let published: f64 = ["FE", "BAD", "BE", "RET"]
            .iter()
            .map(|t| rs.meta["published_level1"][t].as_f64().unwrap())
            .sum();
        ok &= (sum - 100.0).abs() <= 0.5 && (published - 100.0).abs() <= 0.5;
        parts.push(format!("{name} {sum:.2} (bars {published:.1})"));
    }
    verdict(ok, parts.join(", "))
}

fn golden_listings() -> Outcome {
    let cases = [
        ("gnugo-tune", "1", "FE        Frontend_Bound:                                    43.94 +- 0.02 "),
        ("stream-tune", "0", "BE/Mem    Backend_Bound.Memory_Bound.DRAM_Bound:             36.13 +- 0.04 "),
        ("syscalls-tune", "0", "BE/Core   Backend_Bound.Core_Bound.Ports_Utilization:        39.88 +- 0.20 "),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, min_ratio, line) in cases {
        let file = common::run_fixture_path(name);
        let argv = ["perfrig", "replay", "--min-ratio", min_ratio, file.to_str().unwrap()];
        let mut out = Vec::new();
        let code = cli_main(argv, &mut out, &mut std::io::sink());
        let text = String::from_utf8(out).unwrap();
        let want = common::golden(name);
        let hit = code == 0 && text.contains(&want) && text.lines().any(|l| l == line);
        ok &= hit;
        parts.push(format!("{name} {} lines {}", want.lines().count(), if hit { "identical" } else { "differ" }));
    }
    verdict(ok, parts.join(", "))
}

fn drill_down_chains() -> Outcome {
    let model = MachineModel::sandy_bridge();
    let cases = [
        ("stream-tune", ["Backend_Bound", "Backend_Bound.Memory_Bound", "Backend_Bound.Memory_Bound.DRAM_Bound"]),
        ("gnugo-tune", ["Frontend_Bound", "Frontend_Bound.Frontend_Latency", "Frontend_Bound.Frontend_Latency.ICache_Misses"]),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, want) in cases {
        let rs = common::run_fixture(name);
        let chain: Vec<String> = drill_down(&model.tree, &rs.measurements, 1.0, P)
            .into_iter()
            .map(|n| n.short_name().to_string())
            .collect();
        let want_short: Vec<&str> = want.iter().map(|n| n.rsplit('.').next().unwrap()).collect();
        ok &= chain == want_short;
        parts.push(format!("{name}: {}", chain.join(" -> ")));
    }
    verdict(ok, parts.join("; "))
}

fn scheduler_properties() -> Outcome {
    let start = Instant::now();
    let mut rng = rand::rngs::StdRng::seed_from_u64(0x5eed_0005);
    let mut failures = Vec::new();
    let mut rejected = 0;
    for case in 0..1000 {
        let n = rng.random_range(1..=64);
        let mut fixed = 0;
        let events: Vec<EventSpec> = (0..n)
            .map(|i| match rng.random_range(0..10) {
                0 if fixed < 3 => {
                    fixed += 1;
                    EventSpec::fixed(format!("F{i}"), fixed - 1)
                }
                1 => EventSpec::software(format!("S{i}")),
                _ => EventSpec::hardware(format!("H{i}")),
            })
            .collect();
        let budget = rng.random_range(1..=16);
        let regime = Regime::ALL[rng.random_range(0..Regime::ALL.len())];
        let repeatable = rng.random_bool(0.5);
        let b = CounterBudget::new(budget, 3).unwrap();
        match plan_schedule(&events, b, regime, repeatable) {
            Err(ScheduleError::RegimeRequiresRepeatableWorkload(_)) if !regime.multiplexes() && !repeatable => {
                rejected += 1;
            }
            Err(e) => failures.push(format!("case {case}: {e}")),
            Ok(_) if !regime.multiplexes() && !repeatable => failures.push(format!("case {case}: accepted")),
            Ok(s) => {
                let want: BTreeSet<&str> = events.iter().map(|e| e.name.as_str()).collect();
                let have: Vec<&str> = s.events().map(|e| e.name.as_str()).collect();
                if have.len() != want.len() || have.into_iter().collect::<BTreeSet<_>>() != want {
                    failures.push(format!("case {case}: coverage"));
                }
                if !regime.multiplexes() && s.passes.iter().any(|p| p.demand() > budget) {
                    failures.push(format!("case {case}: budget"));
                }
                if plan_schedule(&events, b, regime, repeatable).ok() != Some(s) {
                    failures.push(format!("case {case}: not deterministic"));
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        failures.is_empty() && secs < 10.0,
        format!(
            "1000 instances, {rejected} correctly rejected, {} violations{}, {secs:.2}s",
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    )
}

fn audit_matrix() -> Outcome {
    use CheckStatus::{Fail as F, Pass as P, Unknown as U};
    let expected: [(&str, [CheckStatus; 13]); 4] = [
        ("paper-setup", [P, P, P, P, P, P, P, P, P, P, P, P, P]),
        ("debian-default", [F, F, F, F, F, F, F, F, F, F, P, U, F]),
        ("partial-isolation", [P, P, P, P, P, F, P, F, P, P, P, U, P]),
        ("kpti-on-no-pcid", [P, P, P, P, P, P, P, P, P, P, F, P, P]),
    ];
    let mut mismatches = Vec::new();
    for (name, want) in expected {
        let s = match snapshot(&common::audit_fixture(name)) {
            Ok(s) => s,
            Err(e) => return Fail(format!("{name}: {e}")),
        };
        let report = audit(&s, &AuditTarget::default());
        for n in 1..=CHECK_COUNT {
            let got = report.status(n);
            if got != Some(want[n as usize - 1]) {
                mismatches.push(format!("{name} check {n}: {got:?}"));
            }
        }
    }
    verdict(
        mismatches.is_empty(),
        format!(
            "4 fixture trees x {CHECK_COUNT} checks, {} mismatches{}",
            mismatches.len(),
            if mismatches.is_empty() { String::new() } else { format!(": {}", mismatches.join(", ")) }
        ),
    )
}

fn ipc0_regression() -> Outcome {
    let model = MachineModel::sandy_bridge();
    let ipc0 = |name: &str| -> (f64, f64) {
        let rs = common::run_fixture(name);
        let r = build_report(&rs, &model, None, &ReportOptions::default()).unwrap();
        let got = r.derived.iter().find(|d| d.name == IPC0).unwrap().value.mean;
        (got, rs.meta_f64("published_ipc0").unwrap())
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for (idle, load, drop_pct) in [("gnugo-tune", "gnugo-tune-stress", 4.0), ("gnugo-dfl", "gnugo-dfl-stress", 64.0)] {
        let (a, a_ref) = ipc0(idle);
        let (b, b_ref) = ipc0(load);
        let degradation = (a - b) / a * 100.0;
        ok &= (a - a_ref).abs() <= 0.01 && (b - b_ref).abs() <= 0.01 && (degradation - drop_pct).abs() < 1.0;
        parts.push(format!("{idle} {a:.3} -> {b:.3} ({degradation:.1}% drop, stored {a_ref} -> {b_ref})"));
    }
    verdict(ok, parts.join("; "))
}

fn check_run_set(rs: &RunSet) -> Result<(), String> {
    for r in &rs.records {
        for (name, e) in &r.events {
            if e.running_ns == e.enabled_ns && extrapolate(e.raw, e.enabled_ns, e.running_ns) != e.raw as f64 {
                return Err(format!("{name}: scaled without multiplexing"));
            }
        }
    }
    let back = RunSet::from_json(&rs.to_json()).map_err(|e| e.to_string())?;
    if &back != rs || back.to_json() != rs.to_json() {
        return Err("json round trip differs".into());
    }
    let replayed = execute(&rs.plan, &mut ReplayBackend::new(rs.clone()), None).map_err(|e| e.to_string())?;
    if replayed.records != rs.records || replayed.measurements != rs.measurements {
        return Err("replay differs".into());
    }
    let mut plan = rs.plan.clone();
    plan.discard_first = true;
    plan.repeats = rs.kept().len() as u32 - 1;
    let mut records: Vec<_> = rs.kept().into_iter().cloned().collect();
    records.iter_mut().for_each(|r| r.discarded = false);
    let warm = RunSet::new(plan, records.clone(), rs.snapshot_hash.clone(), BTreeMap::new()).map_err(|e| e.to_string())?;
    let dropped = warm.records.iter().filter(|r| r.discarded).count();
    let rest: Vec<_> = records[1..].iter().collect();
    if dropped != 1 || !warm.records[0].discarded || warm.measurements != perfrig::run::aggregate(&rest).map_err(|e| e.to_string())? {
        return Err("discard_first did not drop exactly the first record".into());
    }
    Ok(())
}

fn round_trip_properties() -> Outcome {
    let mut failures = Vec::new();
    for name in common::RUN_FIXTURES {
        if let Err(e) = check_run_set(&common::run_fixture(name)) {
            failures.push(format!("{name}: {e}"));
        }
    }
    let mut rng = rand::rngs::StdRng::seed_from_u64(0x5eed_0008);
    for i in 0..200 {
        let n = rng.random_range(1..40);
        let budget = rng.random_range(1..=8);
        let repeats = rng.random_range(3..7);
        let discard = rng.random_bool(0.5);
        let rs = common::random_run_set(&mut rng, n, budget, repeats, discard);
        if let Err(e) = check_run_set(&rs) {
            failures.push(format!("random {i}: {e}"));
        }
    }
    verdict(
        failures.is_empty(),
        format!(
            "{} fixtures + 200 random run sets, {} failures{}",
            common::RUN_FIXTURES.len(),
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    )
}

const SPIN_ITERATIONS: u64 = 50_000_000;

/// Instructions retired by the spin binary, user space only, or why the
/// count could not be taken.
fn spin_instructions(iterations: u64, model: &MachineModel) -> Result<f64, String> {
    let events = [EventSpec::fixed(model.instructions_event.clone(), 0)];
    let schedule = plan_schedule(&events, model.budget, Regime::NomuxGroup, true).map_err(|e| e.to_string())?;
    let argv = vec![env!("CARGO_BIN_EXE_perfrig-spin").to_string(), iterations.to_string()];
    let mut plan = MeasurementPlan::new(argv, vec![0], 2, schedule);
    plan.repeatable_workload = true;
    let mut backend = NativeBackend::new(model.encodings.clone());
    backend.exclude_kernel = true;
    match execute(&plan, &mut backend, None) {
        Ok(rs) => Ok(rs.measurements[&model.instructions_event].mean),
        Err(RunError::BackendUnavailable(why)) | Err(RunError::PermissionDenied(why)) => Err(why),
        Err(e) => Err(e.to_string()),
    }
}

fn live_smoke() -> Outcome {
    if !microbench::timer_available() {
        return Unavailable("no cycle counter on this architecture".into());
    }
    let series = match microbench::mode_switch_series(&[1_000, 1_000_000]) {
        Ok(s) => s,
        Err(e) => return Fail(format!("mode-switch probe: {e}")),
    };
    let (small, large) = (&series[0], &series[1]);
    let probe_ok = small.net_cycles > 0 && large.net_cycles > 0 && large.min_cycles <= small.min_cycles;
    let probe = format!(
        "getuid net {} cycles at 1e3 trials, {} at 1e6 (min {} -> {})",
        small.net_cycles, large.net_cycles, small.min_cycles, large.min_cycles
    );
    if !probe_ok {
        return Fail(probe);
    }
    let model = MachineModel::sandy_bridge();
    let counted = spin_instructions(SPIN_ITERATIONS, &model)
        .and_then(|n| spin_instructions(0, &model).map(|base| n - base));
    match counted {
        Ok(delta) => {
            let oracle = 2.0 * SPIN_ITERATIONS as f64;
            let rel = (delta - oracle).abs() / oracle;
            verdict(
                rel <= 0.05,
                format!("{probe}; spin loop {delta:.0} instructions vs {oracle:.0} static ({:.2}% off)", rel * 100.0),
            )
        }
        Err(why) => Unavailable(format!("{probe}; instruction count not measured, hardware counters unavailable: {why}")),
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("propagation matches Monte Carlo", propagation_oracle),
        ("level-1 closure on six configurations", level1_closure),
        ("golden listings reproduced", golden_listings),
        ("drill-down chains", drill_down_chains),
        ("scheduler properties", scheduler_properties),
        ("audit fixture matrix", audit_matrix),
        ("IPC0 idle vs load", ipc0_regression),
        ("extrapolation and round trip", round_trip_properties),
        ("live smoke test", live_smoke),
    ];
    let mut failed = 0;
    for (i, (title, run)) in criteria.iter().enumerate() {
        let (tag, detail) = match run() {
            Pass(d) => ("PASS", d),
            Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Unavailable(d) => ("FAIL", format!("not runnable on this host: {d}")),
        };
        println!("{tag} {} {title}: {detail}", i + 1);
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
