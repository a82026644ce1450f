//! Counting through `perf_event_open(2)` directly.

use std::collections::BTreeMap;
use std::io;

use perf_event_open_sys as sys;
use sys::bindings::{self, perf_event_attr};

use super::{CounterBackend, PassResult};
use crate::counter_model::{EventGroup, Pass};
use crate::run::launch::{spawn_paused, LaunchSpec};
use crate::run::{EventReading, MeasurementPlan, RunError, SoftwareCounts};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResolvedEvent {
    pub type_: u32,
    pub config: u64,
}

impl ResolvedEvent {
    fn hw(config: u32) -> Self {
        ResolvedEvent {
            type_: bindings::PERF_TYPE_HARDWARE,
            config: config as u64,
        }
    }

    fn sw(config: u32) -> Self {
        ResolvedEvent {
            type_: bindings::PERF_TYPE_SOFTWARE,
            config: config as u64,
        }
    }

    fn raw(config: u64) -> Self {
        ResolvedEvent {
            type_: bindings::PERF_TYPE_RAW,
            config,
        }
    }
}

fn parse_u64(s: &str) -> Option<u64> {
    let s = s.trim();
    match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16).ok(),
        None => s.parse().ok(),
    }
}

/// `event=0x9c,umask=0x01,cmask=4,inv,edge`, optionally wrapped in
/// `cpu/.../`, into an Intel raw config.
fn parse_terms(spec: &str) -> Option<u64> {
    let body = spec
        .strip_prefix("cpu/")
        .map(|s| s.trim_end_matches('/'))
        .unwrap_or(spec);
    let mut config = 0u64;
    let mut saw_event = false;
    for term in body.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let (key, value) = match term.split_once('=') {
            Some((k, v)) => (k.trim(), parse_u64(v)?),
            None => (term, 1),
        };
        match key {
            "event" => {
                config |= value & 0xff;
                saw_event = true;
            }
            "umask" => config |= (value & 0xff) << 8,
            "edge" => config |= (value & 1) << 18,
            "any" => config |= (value & 1) << 21,
            "inv" => config |= (value & 1) << 23,
            "cmask" => config |= (value & 0xff) << 24,
            _ => return None,
        }
    }
    saw_event.then_some(config)
}

/// Maps an event name to a kernel event type and config. Names are looked
/// up in `encodings` first (machine-model aliases), then as perf generic
/// names, then as raw `rUUEE` codes or `event=..,umask=..` terms.
pub fn resolve_event(name: &str, encodings: &BTreeMap<String, String>) -> Option<ResolvedEvent> {
    let name = encodings.get(name).map(String::as_str).unwrap_or(name);
    let generic = match name {
        "cycles" | "cpu-cycles" => Some(ResolvedEvent::hw(bindings::PERF_COUNT_HW_CPU_CYCLES)),
        "instructions" => Some(ResolvedEvent::hw(bindings::PERF_COUNT_HW_INSTRUCTIONS)),
        "ref-cycles" => Some(ResolvedEvent::hw(bindings::PERF_COUNT_HW_REF_CPU_CYCLES)),
        "branches" | "branch-instructions" => Some(ResolvedEvent::hw(
            bindings::PERF_COUNT_HW_BRANCH_INSTRUCTIONS,
        )),
        "branch-misses" => Some(ResolvedEvent::hw(bindings::PERF_COUNT_HW_BRANCH_MISSES)),
        "cache-references" => Some(ResolvedEvent::hw(bindings::PERF_COUNT_HW_CACHE_REFERENCES)),
        "cache-misses" => Some(ResolvedEvent::hw(bindings::PERF_COUNT_HW_CACHE_MISSES)),
        "task-clock" => Some(ResolvedEvent::sw(bindings::PERF_COUNT_SW_TASK_CLOCK)),
        "context-switches" | "cs" => Some(ResolvedEvent::sw(bindings::PERF_COUNT_SW_CONTEXT_SWITCHES)),
        "cpu-migrations" | "migrations" => {
            Some(ResolvedEvent::sw(bindings::PERF_COUNT_SW_CPU_MIGRATIONS))
        }
        "page-faults" | "faults" => Some(ResolvedEvent::sw(bindings::PERF_COUNT_SW_PAGE_FAULTS)),
        "minor-faults" => Some(ResolvedEvent::sw(bindings::PERF_COUNT_SW_PAGE_FAULTS_MIN)),
        "major-faults" => Some(ResolvedEvent::sw(bindings::PERF_COUNT_SW_PAGE_FAULTS_MAJ)),
        _ => None,
    };
    if generic.is_some() {
        return generic;
    }
    if let Some(hex) = name.strip_prefix('r') {
        if !hex.is_empty() && hex.chars().all(|c| c.is_ascii_hexdigit()) {
            return u64::from_str_radix(hex, 16).ok().map(ResolvedEvent::raw);
        }
    }
    if name.contains("event=") {
        return parse_terms(name).map(ResolvedEvent::raw);
    }
    None
}

struct Counter {
    name: String,
    fd: libc::c_int,
}

impl Drop for Counter {
    fn drop(&mut self) {
        unsafe { libc::close(self.fd) };
    }
}

fn open_counter(
    ev: ResolvedEvent,
    pid: libc::pid_t,
    group_fd: libc::c_int,
    exclude_kernel: bool,
) -> io::Result<libc::c_int> {
    let mut attr = perf_event_attr {
        type_: ev.type_,
        size: std::mem::size_of::<perf_event_attr>() as u32,
        config: ev.config,
        read_format: (bindings::PERF_FORMAT_TOTAL_TIME_ENABLED
            | bindings::PERF_FORMAT_TOTAL_TIME_RUNNING) as u64,
        ..Default::default()
    };
    if group_fd < 0 {
        attr.set_disabled(1);
        attr.set_enable_on_exec(1);
    }
    attr.set_inherit(1);
    attr.set_exclude_kernel(exclude_kernel as u64);
    attr.set_exclude_hv(1);
    let fd = unsafe {
        sys::perf_event_open(
            &mut attr,
            pid,
            -1,
            group_fd,
            bindings::PERF_FLAG_FD_CLOEXEC as libc::c_ulong,
        )
    };
    if fd < 0 {
        Err(io::Error::last_os_error())
    } else {
        Ok(fd)
    }
}

fn read_counter(fd: libc::c_int) -> io::Result<EventReading> {
    let mut buf = [0u64; 3];
    let n = unsafe { libc::read(fd, buf.as_mut_ptr().cast(), std::mem::size_of_val(&buf)) };
    if n != std::mem::size_of_val(&buf) as isize {
        return Err(io::Error::last_os_error());
    }
    Ok(EventReading::new(buf[0], buf[1], buf[2]))
}

fn open_error(name: &str, e: io::Error) -> RunError {
    match e.raw_os_error() {
        Some(libc::EACCES) | Some(libc::EPERM) => RunError::PermissionDenied(format!(
            "opening {name}: {e}; check /proc/sys/kernel/perf_event_paranoid"
        )),
        Some(libc::ENOENT) | Some(libc::EOPNOTSUPP) | Some(libc::ENODEV) => {
            RunError::BackendUnavailable(format!("event {name} is not supported here: {e}"))
        }
        _ => RunError::BackendUnavailable(format!("opening {name}: {e}")),
    }
}

/// Counts with `perf_event_open(2)` on a child started through
/// [`spawn_paused`]. Event names are resolved with [`resolve_event`].
#[derive(Debug, Clone, Default)]
pub struct NativeBackend {
    pub encodings: BTreeMap<String, String>,
    pub exclude_kernel: bool,
}

impl NativeBackend {
    pub fn new(encodings: BTreeMap<String, String>) -> Self {
        NativeBackend {
            encodings,
            exclude_kernel: false,
        }
    }

    fn resolve(&self, name: &str) -> Result<ResolvedEvent, RunError> {
        resolve_event(name, &self.encodings).ok_or_else(|| {
            RunError::BackendUnavailable(format!(
                "no encoding for event `{name}`; add one to the machine model"
            ))
        })
    }

    fn open_group(
        &self,
        g: &EventGroup,
        pid: libc::pid_t,
        grouped: bool,
        out: &mut Vec<Counter>,
    ) -> Result<(), RunError> {
        let start = out.len();
        let mut leader = -1;
        for e in &g.members {
            let ev = self.resolve(&e.name)?;
            let group_fd = if grouped { leader } else { -1 };
            match open_counter(ev, pid, group_fd, self.exclude_kernel) {
                Ok(fd) => {
                    if leader < 0 || !grouped {
                        leader = fd;
                    }
                    out.push(Counter {
                        name: e.name.clone(),
                        fd,
                    });
                }
                Err(err) if g.weak && grouped => {
                    // A weak group that cannot be scheduled as a unit is
                    // reopened as independent counters.
                    drop(err);
                    out.truncate(start);
                    return self.open_group(g, pid, false, out);
                }
                Err(err) => return Err(open_error(&e.name, err)),
            }
        }
        Ok(())
    }
}

const SOFTWARE: [(&str, u32); 5] = [
    ("task-clock", bindings::PERF_COUNT_SW_TASK_CLOCK),
    ("context-switches", bindings::PERF_COUNT_SW_CONTEXT_SWITCHES),
    ("cpu-migrations", bindings::PERF_COUNT_SW_CPU_MIGRATIONS),
    ("minor-faults", bindings::PERF_COUNT_SW_PAGE_FAULTS_MIN),
    ("major-faults", bindings::PERF_COUNT_SW_PAGE_FAULTS_MAJ),
];

impl CounterBackend for NativeBackend {
    fn name(&self) -> &'static str {
        "native"
    }

    fn available(&self) -> Result<(), RunError> {
        let ev = ResolvedEvent::sw(bindings::PERF_COUNT_SW_TASK_CLOCK);
        let fd = open_counter(ev, 0, -1, true).map_err(|e| open_error("task-clock", e))?;
        unsafe { libc::close(fd) };
        Ok(())
    }

    fn run_pass(
        &mut self,
        plan: &MeasurementPlan,
        pass: &Pass,
        _run_index: u32,
    ) -> Result<PassResult, RunError> {
        let spec = LaunchSpec {
            argv: &plan.command,
            cpus: &plan.target_cpus,
            rt_priority: plan.rt_priority,
            env: &plan.env,
        };
        let mut child = spawn_paused(&spec)?;
        let grouped = plan.schedule.regime.groups();
        let mut counters = Vec::new();
        for g in &pass.groups {
            self.open_group(g, child.pid(), grouped, &mut counters)?;
        }
        let mut software = Vec::new();
        for (name, id) in SOFTWARE {
            let fd = open_counter(ResolvedEvent::sw(id), child.pid(), -1, false)
                .map_err(|e| open_error(name, e))?;
            software.push(Counter {
                name: name.to_string(),
                fd,
            });
        }
        child.release()?;
        let exit = child.wait()?;

        let mut events = BTreeMap::new();
        for c in &counters {
            events.insert(c.name.clone(), read_counter(c.fd)?);
        }
        let mut sw = BTreeMap::new();
        for c in &software {
            sw.insert(c.name.as_str(), read_counter(c.fd)?.value);
        }
        let task_clock_s = sw["task-clock"] * 1e-9;
        Ok(PassResult {
            events,
            wallclock_s: exit.wall.as_secs_f64(),
            task_clock_s,
            exit_status: exit.status,
            software: SoftwareCounts {
                context_switches: sw["context-switches"] as u64,
                cpu_migrations: sw["cpu-migrations"] as u64,
                minor_faults: sw["minor-faults"] as u64,
                major_faults: sw["major-faults"] as u64,
            },
        })
    }
}
