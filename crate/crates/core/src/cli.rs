//! The `perfrig` command line.
//!
//! Exit codes: 0 success, 1 a run or audit that completed on a degraded
//! (or overridden unusable) setup, 2 errors and usage problems.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::audit::snapshot::parse_cpu_list;
use crate::audit::{self, AuditTarget, Verdict};
use crate::counter_model::{classify_regime_safety, parse_event_list, plan_schedule, EventSpec, Regime, Schedule};
use crate::microbench::{self, DEFAULT_TRIALS};
use crate::report::{
    build_report, compare, comparison_inputs, export, plotdata, render_comparison, ExportFormat,
    Report, ReportOptions, DEFAULT_MIN_RATIO, DEFAULT_SIGMA,
};
use crate::run::backend::{CounterBackend, NativeBackend, PerfStatBackend};
use crate::run::{execute, load_run_set, save_run_set, MeasurementPlan, PrefetcherMode, RunError, RunSet};
use crate::topdown::MachineModel;

pub const MACHINE_MODEL_ENV: &str = "PERFRIG_MACHINE_MODEL";

type Failure = Box<dyn std::error::Error>;

#[derive(Debug, Parser)]
#[command(name = "perfrig", version, about = "Counter measurements on a controlled machine")]
pub struct Cli {
    /// Machine model JSON; the bundled Sandy Bridge model when omitted.
    #[arg(long, global = true, env = MACHINE_MODEL_ENV, value_name = "FILE")]
    pub machine_model: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Hide top-down nodes below this percentage.
    #[arg(long, default_value_t = DEFAULT_MIN_RATIO)]
    pub min_ratio: f64,
    /// text, json, csv or plotdata.
    #[arg(long, default_value = "text")]
    pub format: String,
}

#[derive(Debug, Args)]
pub struct TargetArgs {
    /// CPUs to measure on, e.g. `1` or `2-3`.
    #[arg(long, value_name = "LIST")]
    pub cpus: Option<String>,
    #[arg(long, default_value = "on", value_parser = parse_prefetcher)]
    pub prefetcher: PrefetcherMode,
    /// The core clock is fixed in firmware.
    #[arg(long)]
    pub bios_frequency_pinned: bool,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    #[arg(long, default_value = "nomux_group")]
    pub regime: String,
    /// Event list file instead of the model's events.
    #[arg(long, value_name = "FILE")]
    pub events: Option<PathBuf>,
    /// Programmable counters; the model's budget when omitted.
    #[arg(long)]
    pub budget: Option<u32>,
    /// The workload does not behave the same on every execution.
    #[arg(long)]
    pub non_repeatable: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the machine configuration and optionally fix it.
    Audit {
        #[arg(long)]
        apply: bool,
        #[arg(long, default_value = "/")]
        root: PathBuf,
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        target: TargetArgs,
    },
    /// Show how the events are split into passes and groups.
    Plan {
        #[command(flatten)]
        schedule: ScheduleArgs,
        #[arg(long)]
        json: bool,
    },
    /// Audit, measure a command, and report.
    Run {
        #[command(flatten)]
        schedule: ScheduleArgs,
        #[command(flatten)]
        target: TargetArgs,
        #[command(flatten)]
        report: ReportArgs,
        #[arg(long, default_value_t = 5)]
        repeats: u32,
        #[arg(long)]
        discard_first: bool,
        #[arg(long)]
        rt_priority: Option<i32>,
        /// native or perf-stat.
        #[arg(long, default_value = "native")]
        backend: String,
        /// Top-down nodes to list, comma separated; level 1 when omitted.
        #[arg(long, value_delimiter = ',')]
        nodes: Vec<String>,
        /// Measure even if the audit verdict is unusable.
        #[arg(long)]
        override_verdict: bool,
        #[arg(long, default_value = "/")]
        root: PathBuf,
        /// Write the run records here.
        #[arg(long, short, value_name = "FILE")]
        output: Option<PathBuf>,
        #[arg(long)]
        label: Option<String>,
        #[arg(required = true, last = true)]
        command: Vec<String>,
    },
    /// Report from stored run records or a report JSON.
    Replay {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Timing microbenchmarks.
    Bench {
        #[command(subcommand)]
        probe: BenchProbe,
    },
    /// Compare two run sets event by event.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SIGMA)]
        sigma: f64,
    },
    /// Read files into the page cache.
    Warm {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum BenchProbe {
    /// Minimum cost of a getuid() round trip into the kernel.
    ModeSwitch {
        #[arg(long, default_value_t = DEFAULT_TRIALS)]
        trials: u64,
        #[arg(long)]
        json: bool,
    },
}

fn parse_prefetcher(s: &str) -> Result<PrefetcherMode, String> {
    match s {
        "on" => Ok(PrefetcherMode::On),
        "off" => Ok(PrefetcherMode::Off),
        "both" => Ok(PrefetcherMode::Both),
        _ => Err(format!("`{s}` is not one of on, off, both")),
    }
}

enum Output {
    Text,
    Export(ExportFormat),
}

fn output_format(s: &str) -> Result<Output, Failure> {
    if s == "text" {
        return Ok(Output::Text);
    }
    Ok(Output::Export(s.parse::<ExportFormat>()?))
}

fn load_model(path: Option<&Path>) -> Result<MachineModel, Failure> {
    Ok(match path {
        Some(p) => MachineModel::load(p)?,
        None => MachineModel::sandy_bridge(),
    })
}

fn model_events(model: &MachineModel) -> Vec<EventSpec> {
    let mut events = model.events();
    for (name, _) in model.penalties.iter() {
        if model.encodings.contains_key(name) && !events.iter().any(|e| &e.name == name) {
            events.push(EventSpec::hardware(name.clone()));
        }
    }
    events
}

fn schedule_from(args: &ScheduleArgs, model: &MachineModel) -> Result<Schedule, Failure> {
    let regime: Regime = args.regime.parse()?;
    let events = match &args.events {
        Some(p) => parse_event_list(&std::fs::read_to_string(p)?)?,
        None => model_events(model),
    };
    let mut budget = model.budget;
    if let Some(b) = args.budget {
        budget.programmable = b;
    }
    Ok(plan_schedule(&events, budget, regime, !args.non_repeatable)?)
}

fn audit_target(t: &TargetArgs) -> AuditTarget {
    AuditTarget {
        target_cpus: t.cpus.as_deref().map(parse_cpu_list).unwrap_or_default(),
        prefetcher_mode: t.prefetcher,
        bios_frequency_pinned: t.bios_frequency_pinned,
    }
}

fn verdict_code(v: Verdict) -> i32 {
    match v {
        Verdict::Clean => 0,
        Verdict::Degraded => 1,
        Verdict::Unusable => 2,
    }
}

fn audit_cmd(root: &Path, target: &AuditTarget, apply: bool, json: bool, out: &mut dyn Write) -> Result<i32, Failure> {
    let report = audit::audit(&audit::snapshot(root)?, target);
    if json && !apply {
        writeln!(out, "{}", report.to_json())?;
        return Ok(verdict_code(report.verdict));
    }
    if !json {
        write!(out, "{}", report.render_table())?;
    }
    let steps = audit::remediate(&report, apply);
    if !apply {
        if !steps.is_empty() {
            writeln!(out, "\nproposed fixes (rerun with --apply):")?;
            for s in &steps {
                writeln!(out, "  [{}] {}", s.check, s.action.description)?;
            }
        }
        return Ok(verdict_code(report.verdict));
    }
    let after = audit::audit(&audit::snapshot(root)?, target);
    if json {
        let doc = serde_json::json!({ "before": report, "steps": steps, "after": after });
        writeln!(out, "{}", serde_json::to_string_pretty(&doc)?)?;
    } else {
        writeln!(out, "\nremediation:")?;
        for s in &steps {
            writeln!(out, "  [{}] {}: {:?}", s.check, s.action.description, s.outcome)?;
        }
        writeln!(out)?;
        write!(out, "{}", after.render_table())?;
    }
    Ok(verdict_code(after.verdict))
}

fn plan_cmd(args: &ScheduleArgs, model: &MachineModel, json: bool, out: &mut dyn Write) -> Result<i32, Failure> {
    let s = schedule_from(args, model)?;
    if json {
        writeln!(out, "{}", serde_json::to_string_pretty(&s)?)?;
        return Ok(0);
    }
    let safety = classify_regime_safety(s.regime);
    writeln!(
        out,
        "regime {}  budget {}  passes {}  extrapolated {}",
        s.regime,
        s.counter_budget,
        s.passes.len(),
        s.extrapolated
    )?;
    writeln!(
        out,
        "consistent counts: {}  complete coverage: {}",
        safety.safe, safety.complete
    )?;
    for p in &s.passes {
        writeln!(out, "pass {}:", p.run_index)?;
        for (i, g) in p.groups.iter().enumerate() {
            let names: Vec<&str> = g.members.iter().map(|e| e.name.as_str()).collect();
            let weak = if g.weak { " (weak)" } else { "" };
            writeln!(out, "  group {i}{weak}: {}", names.join(", "))?;
        }
    }
    Ok(0)
}

fn emit(reports: &[Report], format: &str, out: &mut dyn Write) -> Result<(), Failure> {
    match output_format(format)? {
        Output::Text => {
            for (i, r) in reports.iter().enumerate() {
                if i > 0 {
                    writeln!(out)?;
                }
                write!(out, "{}", r.render_text())?;
            }
        }
        Output::Export(ExportFormat::Plotdata) => write!(out, "{}", plotdata(reports))?,
        Output::Export(fmt) => match reports {
            [one] => out.write_all(&export(one, fmt))?,
            _ if fmt == ExportFormat::Json => {
                writeln!(out, "{}", serde_json::to_string_pretty(reports)?)?;
            }
            _ => return Err("csv export takes exactly one input".into()),
        },
    }
    Ok(())
}

fn options(args: &ReportArgs) -> ReportOptions {
    ReportOptions {
        min_ratio: args.min_ratio,
        ..ReportOptions::default()
    }
}

fn replay_cmd(files: &[PathBuf], args: &ReportArgs, model: &MachineModel, out: &mut dyn Write) -> Result<i32, Failure> {
    let mut reports = Vec::new();
    for f in files {
        let rs = load_run_set(f).map_err(|e| format!("{}: {e}", f.display()))?;
        reports.push(build_report(&rs, model, None, &options(args))?);
    }
    emit(&reports, &args.format, out)?;
    Ok(0)
}

fn compare_cmd(a: &Path, b: &Path, sigma: f64, model: &MachineModel, out: &mut dyn Write) -> Result<i32, Failure> {
    let load = |p: &Path| -> Result<(String, RunSet), Failure> {
        let rs = load_run_set(p).map_err(|e| format!("{}: {e}", p.display()))?;
        let label = rs
            .meta_str("config")
            .map(String::from)
            .or_else(|| (!rs.plan.label.is_empty()).then(|| rs.plan.label.clone()))
            .unwrap_or_else(|| p.display().to_string());
        Ok((label, rs))
    };
    let (la, ra) = load(a)?;
    let (lb, rb) = load(b)?;
    let c = compare(&la, &comparison_inputs(&ra, model), &lb, &comparison_inputs(&rb, model), sigma)?;
    write!(out, "{}", render_comparison(&c))?;
    Ok(0)
}

fn bench_cmd(probe: &BenchProbe, out: &mut dyn Write) -> Result<i32, Failure> {
    match probe {
        BenchProbe::ModeSwitch { trials, json } => {
            let r = microbench::mode_switch_benchmark(*trials)?;
            if *json {
                writeln!(out, "{}", r.to_json())?;
            } else {
                write!(out, "{}", r.report())?;
            }
        }
    }
    Ok(0)
}

fn warm_cmd(files: &[PathBuf], out: &mut dyn Write) -> Result<i32, Failure> {
    for e in audit::warm_page_cache(files)? {
        writeln!(
            out,
            "{}: {} bytes, resident {:.0}% -> {:.0}%",
            e.path.display(),
            e.bytes,
            e.resident_before * 100.0,
            e.resident_after * 100.0
        )?;
    }
    Ok(0)
}

struct RunRequest<'a> {
    schedule: &'a ScheduleArgs,
    target: &'a TargetArgs,
    report: &'a ReportArgs,
    repeats: u32,
    discard_first: bool,
    rt_priority: Option<i32>,
    backend: &'a str,
    nodes: &'a [String],
    override_verdict: bool,
    root: &'a Path,
    output: Option<&'a Path>,
    label: Option<&'a str>,
    command: &'a [String],
}

fn run_cmd(req: RunRequest<'_>, model: &MachineModel, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, Failure> {
    let schedule = schedule_from(req.schedule, model)?;
    let snap = audit::snapshot(req.root)?;
    let mut target = audit_target(req.target);
    if target.target_cpus.is_empty() {
        target.target_cpus = audit::default_targets(&snap);
    }
    let mut plan = MeasurementPlan::new(req.command.to_vec(), target.target_cpus.clone(), req.repeats, schedule);
    plan.label = req.label.unwrap_or_default().to_string();
    plan.rt_priority = req.rt_priority;
    plan.discard_first = req.discard_first;
    plan.repeatable_workload = !req.schedule.non_repeatable;
    plan.override_verdict = req.override_verdict;
    plan.prefetcher_mode = target.prefetcher_mode;
    plan.bios_frequency_pinned = target.bios_frequency_pinned;
    plan.nodes = req.nodes.to_vec();
    let report = audit::audit(&snap, &target);
    if report.verdict == Verdict::Unusable && !plan.override_verdict {
        write!(err, "{}", report.render_table())?;
        writeln!(
            err,
            "error: the machine is not set up for measurement; see `perfrig audit --root {}` \
             or pass --override-verdict",
            req.root.display()
        )?;
        return Ok(2);
    }
    let mut backend: Box<dyn CounterBackend> = match req.backend {
        "native" => Box::new(NativeBackend::new(model.encodings.clone())),
        "perf-stat" => Box::new(PerfStatBackend::default()),
        other => return Err(format!("unknown backend `{other}` (native, perf-stat)").into()),
    };
    let rs = match execute(&plan, backend.as_mut(), Some(&report)) {
        Ok(rs) => rs,
        Err(RunError::WorkloadFailed { run_index, status, run_set }) => {
            writeln!(err, "error: run {run_index} exited with status {status}")?;
            if let Some(p) = req.output {
                save_run_set(&run_set, p)?;
            }
            return Ok(2);
        }
        Err(e) => return Err(e.into()),
    };
    if let Some(p) = req.output {
        save_run_set(&rs, p)?;
    }
    let r = build_report(&rs, model, Some(&report), &options(req.report))?;
    emit(std::slice::from_ref(&r), &req.report.format, out)?;
    Ok(match report.verdict {
        Verdict::Clean => 0,
        _ => 1,
    })
}

fn dispatch(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, Failure> {
    let model = load_model(cli.machine_model.as_deref())?;
    match &cli.command {
        Command::Audit { apply, root, json, target } => audit_cmd(root, &audit_target(target), *apply, *json, out),
        Command::Plan { schedule, json } => plan_cmd(schedule, &model, *json, out),
        Command::Run {
            schedule,
            target,
            report,
            repeats,
            discard_first,
            rt_priority,
            backend,
            nodes,
            override_verdict,
            root,
            output,
            label,
            command,
        } => run_cmd(
            RunRequest {
                schedule,
                target,
                report,
                repeats: *repeats,
                discard_first: *discard_first,
                rt_priority: *rt_priority,
                backend,
                nodes,
                override_verdict: *override_verdict,
                root,
                output: output.as_deref(),
                label: label.as_deref(),
                command,
            },
            &model,
            out,
            err,
        ),
        Command::Replay { files, report } => replay_cmd(files, report, &model, out),
        Command::Bench { probe } => bench_cmd(probe, out),
        Command::Compare { a, b, sigma } => compare_cmd(a, b, *sigma, &model, out),
        Command::Warm { files } => warm_cmd(files, out),
    }
}

/// Parses `argv` (program name first), runs the command, and returns the
/// process exit code.
pub fn cli_main<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
    }
}
