//! Interop with `perf stat -x<sep>` machine-readable output.

use std::collections::BTreeMap;
use std::os::unix::process::CommandExt;
use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use super::{CounterBackend, PassResult};
use crate::counter_model::{EventGroup, Pass};
use crate::run::{EventReading, MeasurementPlan, RunError, RunRecord, RunSet, SoftwareCounts};

/// One counter line of `perf stat -x` output.
#[derive(Debug, Clone, PartialEq)]
pub struct PerfStatLine {
    /// `None` for `<not counted>` and `<not supported>`.
    pub value: Option<f64>,
    pub unit: String,
    pub event: String,
    /// Relative spread printed with `-r`, in percent.
    pub variance_pct: Option<f64>,
    pub running_ns: Option<u64>,
    /// Share of the enabled time the counter was actually running.
    pub running_pct: Option<f64>,
}

impl PerfStatLine {
    fn reading(&self) -> Option<EventReading> {
        let value = self.value?;
        let pct = self.running_pct.unwrap_or(100.0);
        let running = self.running_ns.unwrap_or(0);
        if pct >= 100.0 || pct <= 0.0 || running == 0 {
            let raw = value.round().max(0.0) as u64;
            return Some(EventReading {
                raw,
                enabled_ns: running,
                running_ns: running,
                value: raw as f64,
            });
        }
        Some(EventReading {
            raw: (value * pct / 100.0).round() as u64,
            enabled_ns: (running as f64 * 100.0 / pct).round() as u64,
            running_ns: running,
            value,
        })
    }
}

fn parse_num(s: &str) -> Option<f64> {
    s.trim().trim_end_matches('%').parse::<f64>().ok()
}

pub fn parse_perf_stat_csv(text: &str, sep: char) -> Result<Vec<PerfStatLine>, RunError> {
    let mut out = Vec::new();
    for (i, raw_line) in text.lines().enumerate() {
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(sep).collect();
        if fields.len() < 3 {
            return Err(RunError::Csv {
                line: i + 1,
                msg: format!("expected at least 3 fields, found {}", fields.len()),
            });
        }
        let value = match fields[0].trim() {
            v if v.starts_with('<') => None,
            v => Some(v.parse::<f64>().map_err(|_| RunError::Csv {
                line: i + 1,
                msg: format!("bad counter value `{v}`"),
            })?),
        };
        let event = fields[2].trim().to_string();
        if event.is_empty() {
            return Err(RunError::Csv {
                line: i + 1,
                msg: "empty event name".into(),
            });
        }
        let mut rest = fields[3..].iter();
        let mut variance_pct = None;
        let mut next = rest.next();
        if let Some(f) = next {
            if f.trim().ends_with('%') {
                variance_pct = parse_num(f);
                next = rest.next();
            }
        }
        let running_ns = next.and_then(|f| f.trim().parse::<u64>().ok());
        let running_pct = rest.next().and_then(|f| parse_num(f));
        out.push(PerfStatLine {
            value,
            unit: fields[1].trim().to_string(),
            event,
            variance_pct,
            running_ns,
            running_pct,
        });
    }
    Ok(out)
}

fn canonical_software(event: &str) -> Option<&'static str> {
    Some(match event.split(':').next().unwrap_or(event) {
        "context-switches" | "cs" => "context-switches",
        "cpu-migrations" | "migrations" => "cpu-migrations",
        "minor-faults" => "minor-faults",
        "major-faults" => "major-faults",
        "task-clock" => "task-clock",
        _ => return None,
    })
}

/// Converts one `perf stat` output into a pass result. `wallclock_s` is
/// measured by the caller since the CSV mode does not print it.
pub fn pass_from_lines(lines: &[PerfStatLine], wallclock_s: f64, exit_status: i32) -> PassResult {
    let mut events = BTreeMap::new();
    let mut software = SoftwareCounts::default();
    let mut task_clock_s = 0.0;
    for l in lines {
        match canonical_software(&l.event) {
            Some("task-clock") => {
                let v = l.value.unwrap_or(0.0);
                task_clock_s = match l.unit.as_str() {
                    "msec" | "ms" => v / 1e3,
                    "usec" | "us" => v / 1e6,
                    "sec" | "s" => v,
                    _ => v / 1e9,
                };
            }
            Some(sw) => {
                let v = l.value.unwrap_or(0.0).max(0.0).round() as u64;
                match sw {
                    "context-switches" => software.context_switches = v,
                    "cpu-migrations" => software.cpu_migrations = v,
                    "minor-faults" => software.minor_faults = v,
                    _ => software.major_faults = v,
                }
            }
            None => {
                if let Some(r) = l.reading() {
                    events.insert(l.event.clone(), r);
                }
            }
        }
    }
    PassResult {
        events,
        wallclock_s,
        task_clock_s,
        exit_status,
        software,
    }
}

/// Imports several `perf stat` outputs, one per run, as a run set.
/// Every counter found in the first output is expected in all of them.
pub fn run_set_from_perf_stat(
    plan: MeasurementPlan,
    outputs: &[(String, f64)],
    sep: char,
) -> Result<RunSet, RunError> {
    let mut records = Vec::new();
    for (i, (text, wall)) in outputs.iter().enumerate() {
        let lines = parse_perf_stat_csv(text, sep)?;
        let pass = pass_from_lines(&lines, *wall, 0);
        records.push(RunRecord {
            run_index: i as u32,
            discarded: false,
            events: pass.events,
            wallclock_s: pass.wallclock_s,
            task_clock_s: pass.task_clock_s,
            exit_status: 0,
            snapshot_hash: String::new(),
            software: pass.software,
        });
    }
    let mut meta = BTreeMap::new();
    meta.insert("backend".into(), "perf-stat-import".into());
    RunSet::new(plan, records, String::new(), meta)
}

/// Runs the workload under an external `perf stat` binary.
#[derive(Debug, Clone)]
pub struct PerfStatBackend {
    pub perf: PathBuf,
}

impl Default for PerfStatBackend {
    fn default() -> Self {
        PerfStatBackend {
            perf: PathBuf::from("perf"),
        }
    }
}

const SEP: char = ';';
const SOFTWARE_EVENTS: &str = "task-clock,context-switches,cpu-migrations,minor-faults,major-faults";

fn group_spec(g: &EventGroup, grouped: bool) -> String {
    let names: Vec<&str> = g.members.iter().map(|e| e.name.as_str()).collect();
    if grouped && names.len() > 1 {
        format!("{{{}}}{}", names.join(","), if g.weak { ":W" } else { "" })
    } else {
        names.join(",")
    }
}

impl CounterBackend for PerfStatBackend {
    fn name(&self) -> &'static str {
        "perf-stat"
    }

    fn available(&self) -> Result<(), RunError> {
        match Command::new(&self.perf).arg("--version").output() {
            Ok(o) if o.status.success() => Ok(()),
            Ok(o) => Err(RunError::BackendUnavailable(format!(
                "{} --version exited with {}",
                self.perf.display(),
                o.status
            ))),
            Err(e) => Err(RunError::BackendUnavailable(format!(
                "cannot run {}: {e}",
                self.perf.display()
            ))),
        }
    }

    fn run_pass(
        &mut self,
        plan: &MeasurementPlan,
        pass: &Pass,
        run_index: u32,
    ) -> Result<PassResult, RunError> {
        let grouped = plan.schedule.regime.groups();
        let mut specs: Vec<String> = pass.groups.iter().map(|g| group_spec(g, grouped)).collect();
        specs.push(SOFTWARE_EVENTS.into());
        let out_path = std::env::temp_dir().join(format!(
            "perfrig-perf-stat-{}-{run_index}-{}.csv",
            std::process::id(),
            pass.run_index
        ));
        let mut cmd = Command::new(&self.perf);
        cmd.arg("stat")
            .arg(format!("-x{SEP}"))
            .arg("-o")
            .arg(&out_path)
            .arg("-e")
            .arg(specs.join(","))
            .arg("--")
            .args(&plan.command)
            .envs(&plan.env);
        let cpus = plan.target_cpus.clone();
        let rt = plan.rt_priority;
        unsafe {
            cmd.pre_exec(move || {
                let mut set: libc::cpu_set_t = std::mem::zeroed();
                for &c in &cpus {
                    libc::CPU_SET(c as usize, &mut set);
                }
                if libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &set) != 0 {
                    return Err(std::io::Error::last_os_error());
                }
                if let Some(p) = rt {
                    let param = libc::sched_param { sched_priority: p };
                    if libc::sched_setscheduler(0, libc::SCHED_FIFO, &param) != 0 {
                        return Err(std::io::Error::last_os_error());
                    }
                }
                Ok(())
            });
        }
        let start = Instant::now();
        let status = cmd.status().map_err(|e| match e.kind() {
            std::io::ErrorKind::PermissionDenied => RunError::PermissionDenied(e.to_string()),
            _ => RunError::BackendUnavailable(e.to_string()),
        })?;
        let wall = start.elapsed().as_secs_f64();
        let text = std::fs::read_to_string(&out_path);
        let _ = std::fs::remove_file(&out_path);
        let text = text.map_err(|e| {
            RunError::BackendUnavailable(format!("perf stat wrote no output ({e}); status {status}"))
        })?;
        let lines = parse_perf_stat_csv(&text, SEP)?;
        let code = status.code().unwrap_or(-1);
        let result = pass_from_lines(&lines, wall, code);
        for e in pass.events() {
            if !result.events.contains_key(&e.name) && canonical_software(&e.name).is_none() {
                return Err(RunError::MissingEvent {
                    event: e.name.clone(),
                    run_index,
                });
            }
        }
        Ok(result)
    }
}
