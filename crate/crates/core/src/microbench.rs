//! Minimum-latency timing with the time-stamp counter.
//!
//! Each trial reads the TSC, runs the probe once, and reads it again; the
//! smallest difference over all trials is kept. The counter reads are
//! fenced so the probe cannot drift outside the bracket.

use std::hint::black_box;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TRIALS: u64 = 20_000_000;
pub const MODE_SWITCH_PROBE: &str = "getuid()";
pub const TIMER_PROBE: &str = "rdtsc";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("no cycle counter available on this architecture")]
    TimerUnavailable,
    #[error("trials must be at least 1")]
    NoTrials,
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("probe file: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub probe: String,
    pub trials: u64,
    pub min_cycles: u64,
    /// Cost of the bracketing counter reads alone.
    pub overhead_cycles: u64,
    pub net_cycles: i64,
    /// Set when the probe looked cheaper than an empty bracket.
    pub negative: bool,
}

impl ProbeResult {
    fn new(probe: &str, trials: u64, min_cycles: u64, overhead_cycles: u64) -> Self {
        let net_cycles = min_cycles as i64 - overhead_cycles as i64;
        ProbeResult {
            probe: probe.to_string(),
            trials,
            min_cycles,
            overhead_cycles,
            net_cycles,
            negative: net_cycles < 0,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("probe result serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Two lines in the style of the classic mode-switch benchmark: timer
    /// cost, then probe cost (raw and net).
    pub fn report(&self) -> String {
        let mut out = format!("{TIMER_PROBE}: {} cycles\n", self.overhead_cycles);
        out.push_str(&format!(
            "{}: {} cycles ({} net)",
            self.probe, self.min_cycles, self.net_cycles
        ));
        if self.negative {
            out.push_str(" [warning: below timer cost, clock jitter]");
        }
        out.push('\n');
        out
    }
}

#[cfg(target_arch = "x86_64")]
mod tsc {
    use std::arch::x86_64::{__rdtscp, _mm_lfence, _rdtsc};

    #[inline(always)]
    pub fn start() -> u64 {
        unsafe {
            _mm_lfence();
            let t = _rdtsc();
            _mm_lfence();
            t
        }
    }

    #[inline(always)]
    pub fn stop() -> u64 {
        unsafe {
            let mut aux = 0u32;
            let t = __rdtscp(&mut aux);
            _mm_lfence();
            t
        }
    }
}

pub fn timer_available() -> bool {
    cfg!(target_arch = "x86_64")
}

#[cfg(target_arch = "x86_64")]
fn min_cycles<F: FnMut()>(probe: &mut F, trials: u64) -> u64 {
    let mut best = u64::MAX;
    for _ in 0..trials {
        let ini = tsc::start();
        probe();
        let end = tsc::stop();
        let now = end.wrapping_sub(ini);
        if now < best {
            best = now;
        }
    }
    best
}

#[cfg(not(target_arch = "x86_64"))]
fn min_cycles<F: FnMut()>(_probe: &mut F, _trials: u64) -> u64 {
    unreachable!("guarded by timer_available")
}

fn check(trials: u64) -> Result<(), BenchError> {
    if !timer_available() {
        return Err(BenchError::TimerUnavailable);
    }
    if trials == 0 {
        return Err(BenchError::NoTrials);
    }
    Ok(())
}

/// Timer self-cost: the minimum over an empty bracket.
pub fn timer_overhead(trials: u64) -> Result<u64, BenchError> {
    check(trials)?;
    Ok(min_cycles(&mut || {}, trials))
}

pub fn min_latency<F: FnMut()>(name: &str, mut probe: F, trials: u64) -> Result<ProbeResult, BenchError> {
    let overhead = timer_overhead(trials)?;
    let min = min_cycles(&mut probe, trials);
    Ok(ProbeResult::new(name, trials, min, overhead))
}

/// One result per trial count. The timer overhead is measured once with
/// the largest trial count and shared by every entry.
pub fn min_latency_series<F: FnMut()>(
    name: &str,
    mut probe: F,
    trial_counts: &[u64],
) -> Result<Vec<ProbeResult>, BenchError> {
    let largest = trial_counts.iter().copied().max().ok_or(BenchError::NoTrials)?;
    let overhead = timer_overhead(largest)?;
    trial_counts
        .iter()
        .map(|&n| {
            check(n)?;
            Ok(ProbeResult::new(name, n, min_cycles(&mut probe, n), overhead))
        })
        .collect()
}

fn getuid() {
    black_box(unsafe { libc::syscall(libc::SYS_getuid) });
}

/// Times `getuid`, which does almost nothing inside the kernel, so the
/// result is the cost of entering and leaving kernel mode.
pub fn mode_switch_benchmark(trials: u64) -> Result<ProbeResult, BenchError> {
    min_latency(MODE_SWITCH_PROBE, getuid, trials)
}

pub fn mode_switch_series(trial_counts: &[u64]) -> Result<Vec<ProbeResult>, BenchError> {
    min_latency_series(MODE_SWITCH_PROBE, getuid, trial_counts)
}
