use std::collections::BTreeSet;

use super::snapshot::{format_cpu_mask, SystemSnapshot, MSR_MISC_FEATURE_CONTROL, PREFETCH_DISABLE_MASK};
use super::sources::*;
use super::{AuditCheck, AuditReport, AuditTarget, CheckStatus, Fix, Verdict};
use crate::run::PrefetcherMode;

/// Number of checks that can affect the verdict; the registry also holds
/// one informational entry after these.
pub const CHECK_COUNT: u32 = 13;

const VERDICT_CRITICAL: [u32; 4] = [1, 2, 9, 10];

const CPUFREQ: &str = "sys/devices/system/cpu";

struct Ctx<'a> {
    s: &'a SystemSnapshot,
    targets: Vec<u32>,
    isolated: Vec<u32>,
    target: &'a AuditTarget,
}

struct Outcome {
    status: CheckStatus,
    observed: String,
    fixes: Vec<Fix>,
    security_warning: Option<String>,
}

impl Outcome {
    fn new(status: CheckStatus, observed: impl Into<String>) -> Self {
        Outcome {
            status,
            observed: observed.into(),
            fixes: Vec::new(),
            security_warning: None,
        }
    }

    fn pass(observed: impl Into<String>) -> Self {
        Self::new(CheckStatus::Pass, observed)
    }

    fn fail(observed: impl Into<String>, fixes: Vec<Fix>) -> Self {
        Outcome {
            fixes,
            ..Self::new(CheckStatus::Fail, observed)
        }
    }

    fn unknown(observed: impl Into<String>) -> Self {
        Self::new(CheckStatus::Unknown, observed)
    }

    fn warn(mut self, w: &str) -> Self {
        self.security_warning = Some(w.to_string());
        self
    }
}

struct CheckDef {
    number: u32,
    id: &'static str,
    description: &'static str,
    sources: &'static [&'static str],
    expected: fn(&Ctx<'_>) -> String,
    eval: fn(&Ctx<'_>) -> Outcome,
}

fn cpus(list: &[u32]) -> String {
    if list.is_empty() {
        return "none".into();
    }
    let mut parts = Vec::new();
    let mut i = 0;
    while i < list.len() {
        let start = list[i];
        let mut end = start;
        while i + 1 < list.len() && list[i + 1] == end + 1 {
            i += 1;
            end = list[i];
        }
        parts.push(if start == end {
            start.to_string()
        } else {
            format!("{start}-{end}")
        });
        i += 1;
    }
    parts.join(",")
}

fn covers(list: &[u32], targets: &[u32]) -> bool {
    !targets.is_empty() && targets.iter().all(|t| list.contains(t))
}

const NO_CMDLINE: &str = "kernel command line unreadable";

fn cmdline_list_check(ctx: &Ctx<'_>, key: &str) -> Outcome {
    if ctx.s.cmdline.is_none() {
        return Outcome::unknown(NO_CMDLINE);
    }
    let list = ctx.s.cpu_list_param(key);
    let observed = match ctx.s.param(key) {
        Some(v) => format!("{key}={v}"),
        None => format!("{key} absent"),
    };
    if covers(&list, &ctx.targets) {
        Outcome::pass(observed)
    } else {
        Outcome::fail(
            observed,
            vec![Fix::BootParam {
                param: format!("{key}={}", cpus(&ctx.targets)),
            }],
        )
    }
}

fn flags_check(ctx: &Ctx<'_>, want: &[&str]) -> Outcome {
    if ctx.s.cmdline.is_none() {
        return Outcome::unknown(NO_CMDLINE);
    }
    let missing: Vec<&str> = want
        .iter()
        .copied()
        .filter(|f| !ctx.s.has_flag(f))
        .collect();
    if missing.is_empty() {
        Outcome::pass(want.join(" "))
    } else {
        Outcome::fail(
            format!("missing {}", missing.join(" ")),
            missing
                .iter()
                .map(|f| Fix::BootParam {
                    param: f.to_string(),
                })
                .collect(),
        )
    }
}

fn check_isolation(ctx: &Ctx<'_>) -> Outcome {
    if ctx.s.cmdline.is_none() {
        return Outcome::unknown(NO_CMDLINE);
    }
    let observed = format!("isolcpus={}", cpus(&ctx.isolated));
    let fix = || {
        let wanted: Vec<u32> = ctx.targets.iter().copied().filter(|&c| c != 0).collect();
        let param = if wanted.is_empty() {
            "isolcpus=<cpus other than 0>".to_string()
        } else {
            format!("isolcpus={}", cpus(&wanted))
        };
        vec![Fix::BootParam { param }]
    };
    if ctx.isolated.contains(&0) || ctx.targets.contains(&0) {
        return Outcome::fail(
            format!("{observed}; CPU0 is isolated or targeted but handles housekeeping"),
            fix(),
        );
    }
    if !covers(&ctx.isolated, &ctx.targets) {
        return Outcome::fail(
            format!("{observed}; target cpus {} not all isolated", cpus(&ctx.targets)),
            fix(),
        );
    }
    if let Some(online) = &ctx.s.online_cpus {
        if online.iter().all(|c| ctx.isolated.contains(c)) {
            return Outcome::fail(format!("{observed}; no housekeeping CPU left"), fix());
        }
    }
    Outcome::pass(observed)
}

fn check_smt(ctx: &Ctx<'_>) -> Outcome {
    match ctx.s.smt_active {
        Some(false) => Outcome::pass("SMT inactive"),
        Some(true) => Outcome::fail(
            "SMT active",
            vec![Fix::Manual {
                instruction: "BIOS required: disable Hyperthreading/SMT in the firmware setup"
                    .into(),
            }],
        ),
        None => Outcome::unknown("SMT state unreadable"),
    }
}

fn check_irq_affinity(ctx: &Ctx<'_>) -> Outcome {
    let Some(mask) = &ctx.s.irq_default_affinity else {
        return Outcome::unknown("default IRQ affinity unreadable");
    };
    let protected: BTreeSet<u32> = ctx.isolated.iter().chain(&ctx.targets).copied().collect();
    let observed = format!(
        "default_smp_affinity={} (cpus {})",
        format_cpu_mask(mask),
        cpus(mask)
    );
    if mask.iter().any(|c| protected.contains(c)) {
        let mut housekeeping: Vec<u32> = ctx
            .s
            .online_cpus
            .clone()
            .unwrap_or_default()
            .into_iter()
            .filter(|c| !protected.contains(c))
            .collect();
        if housekeeping.is_empty() {
            housekeeping.push(0);
        }
        Outcome::fail(
            observed,
            vec![Fix::WriteFile {
                path: "proc/irq/default_smp_affinity".into(),
                value: format_cpu_mask(&housekeeping),
            }],
        )
    } else {
        Outcome::pass(observed)
    }
}

fn check_mce(ctx: &Ctx<'_>) -> Outcome {
    if ctx.s.cmdline.is_none() {
        return Outcome::unknown(NO_CMDLINE);
    }
    match ctx.s.param("mce") {
        Some("off") => Outcome::pass("mce=off"),
        other => Outcome::fail(
            other.map_or("mce absent".to_string(), |v| format!("mce={v}")),
            vec![Fix::BootParam {
                param: "mce=off".into(),
            }],
        ),
    }
}

fn check_nohz(ctx: &Ctx<'_>) -> Outcome {
    cmdline_list_check(ctx, "nohz_full")
}

fn check_rcu(ctx: &Ctx<'_>) -> Outcome {
    cmdline_list_check(ctx, "rcu_nocbs")
}

fn check_allocator(ctx: &Ctx<'_>) -> Outcome {
    match ctx.s.allocator.as_deref() {
        Some("SLUB") => Outcome::pass("SLUB"),
        Some(other) => Outcome::fail(
            other,
            vec![Fix::Manual {
                instruction: "kernel build required: rebuild with CONFIG_SLUB=y".into(),
            }],
        ),
        None => Outcome::unknown("allocator not identifiable"),
    }
}

fn check_watchdogs(ctx: &Ctx<'_>) -> Outcome {
    flags_check(ctx, &["nowatchdog", "nosoftlockup"])
}

fn check_rt(ctx: &Ctx<'_>) -> Outcome {
    match ctx.s.rt_runtime_us {
        Some(-1) => Outcome::pass("sched_rt_runtime_us=-1"),
        Some(v) => Outcome::fail(
            format!("sched_rt_runtime_us={v}"),
            vec![Fix::WriteFile {
                path: "proc/sys/kernel/sched_rt_runtime_us".into(),
                value: "-1".into(),
            }],
        ),
        None => Outcome::unknown("sched_rt_runtime_us unreadable"),
    }
}

fn pinned_governor(g: Option<&str>) -> bool {
    matches!(g, Some("performance") | Some("userspace"))
}

fn check_frequency(ctx: &Ctx<'_>) -> Outcome {
    if ctx.target.bios_frequency_pinned {
        return Outcome::pass("pinned in BIOS (declared)");
    }
    let pstate = if ctx.s.param("intel_pstate") == Some("disable") {
        "; intel_pstate=disable"
    } else {
        ""
    };
    let mut observed = Vec::new();
    let mut fixes = Vec::new();
    let mut unknown = false;
    for &cpu in &ctx.targets {
        let Some(f) = ctx.s.cpufreq.get(&cpu) else {
            observed.push(format!("cpu{cpu}: no cpufreq"));
            unknown = true;
            continue;
        };
        let (Some(min), Some(max)) = (f.scaling_min_khz, f.scaling_max_khz) else {
            observed.push(format!("cpu{cpu}: limits unreadable"));
            unknown = true;
            continue;
        };
        let gov = f.governor.as_deref();
        observed.push(format!(
            "cpu{cpu}: {} {min}-{max} kHz",
            gov.unwrap_or("?")
        ));
        if pinned_governor(gov) && min == max {
            continue;
        }
        let base = format!("{CPUFREQ}/cpu{cpu}/cpufreq");
        if !pinned_governor(gov) {
            fixes.push(Fix::WriteFile {
                path: format!("{base}/scaling_governor"),
                value: "performance".into(),
            });
        }
        if min != max {
            fixes.push(Fix::WriteFile {
                path: format!("{base}/scaling_min_freq"),
                value: max.to_string(),
            });
        }
    }
    let observed = format!("{}{pstate}", observed.join("; "));
    if !fixes.is_empty() {
        Outcome::fail(observed, fixes)
    } else if unknown || ctx.targets.is_empty() {
        Outcome::unknown(observed)
    } else {
        Outcome::pass(observed)
    }
}

const KPTI_WARNING: &str =
    "KPTI is disabled; this reopens the Meltdown vulnerability while measuring";

fn check_kpti(ctx: &Ctx<'_>) -> Outcome {
    let pti_off = ctx.s.param("pti") == Some("off") || ctx.s.has_flag("nopti");
    let Some(state) = ctx.s.meltdown.as_deref() else {
        return if pti_off {
            Outcome::pass("pti=off on command line").warn(KPTI_WARNING)
        } else {
            Outcome::unknown("meltdown vulnerability state unreadable")
        };
    };
    if state.starts_with("Not affected") {
        return Outcome::pass(state);
    }
    if state.starts_with("Vulnerable") {
        return Outcome::pass(state).warn(KPTI_WARNING);
    }
    if state.contains("PTI") {
        return match ctx.s.pcid {
            Some(true) => Outcome::pass(format!("{state}; pcid supported")),
            Some(false) => Outcome::fail(
                format!("{state}; no pcid"),
                vec![Fix::BootParam {
                    param: "pti=off".into(),
                }],
            )
            .warn(KPTI_WARNING),
            None => Outcome::unknown(format!("{state}; pcid support unreadable")),
        };
    }
    Outcome::pass(state)
}

fn prefetch_expectation(mode: PrefetcherMode) -> Option<u64> {
    match mode {
        PrefetcherMode::On => Some(0),
        PrefetcherMode::Off => Some(PREFETCH_DISABLE_MASK),
        PrefetcherMode::Both => None,
    }
}

fn check_prefetchers(ctx: &Ctx<'_>) -> Outcome {
    let want = prefetch_expectation(ctx.target.prefetcher_mode);
    let mut observed = Vec::new();
    let mut fixes = Vec::new();
    for &cpu in &ctx.targets {
        let Some(&v) = ctx.s.prefetch_msr.get(&cpu) else {
            return Outcome::unknown(format!("cpu{cpu}: MSR {MSR_MISC_FEATURE_CONTROL:#x} unavailable"));
        };
        observed.push(format!("cpu{cpu}: {:#x}", v & PREFETCH_DISABLE_MASK));
        if let Some(w) = want {
            if v & PREFETCH_DISABLE_MASK != w {
                fixes.push(Fix::WriteMsr {
                    path: format!("dev/cpu/{cpu}/msr"),
                    register: MSR_MISC_FEATURE_CONTROL,
                    value: (v & !PREFETCH_DISABLE_MASK) | w,
                });
            }
        }
    }
    if ctx.targets.is_empty() {
        return Outcome::unknown("no target cpus");
    }
    let observed = observed.join("; ");
    if fixes.is_empty() {
        Outcome::pass(observed)
    } else {
        Outcome::fail(observed, fixes)
    }
}

fn lowered_khz(cpuinfo_max: u64, cpuinfo_min: Option<u64>) -> u64 {
    let lowered = (cpuinfo_max * 9 / 10) / 100_000 * 100_000;
    lowered.max(cpuinfo_min.unwrap_or(0))
}

fn check_thermal(ctx: &Ctx<'_>) -> Outcome {
    if ctx.s.boost_enabled == Some(false) {
        return Outcome::pass("boost disabled");
    }
    let mut observed = Vec::new();
    let mut fixes = Vec::new();
    let mut unknown = false;
    for &cpu in &ctx.targets {
        let f = ctx.s.cpufreq.get(&cpu);
        let (Some(max), Some(hw_max)) = (
            f.and_then(|f| f.scaling_max_khz),
            f.and_then(|f| f.cpuinfo_max_khz),
        ) else {
            observed.push(format!("cpu{cpu}: limits unreadable"));
            unknown = true;
            continue;
        };
        observed.push(format!("cpu{cpu}: max {max} of {hw_max} kHz"));
        if max < hw_max {
            continue;
        }
        let lowered = lowered_khz(hw_max, f.and_then(|f| f.cpuinfo_min_khz));
        let base = format!("{CPUFREQ}/cpu{cpu}/cpufreq");
        fixes.push(Fix::WriteFile {
            path: format!("{base}/scaling_min_freq"),
            value: lowered.to_string(),
        });
        fixes.push(Fix::WriteFile {
            path: format!("{base}/scaling_max_freq"),
            value: lowered.to_string(),
        });
    }
    let observed = observed.join("; ");
    if !fixes.is_empty() {
        Outcome::fail(observed, fixes)
    } else if unknown || ctx.targets.is_empty() {
        Outcome::unknown(observed)
    } else {
        Outcome::pass(observed)
    }
}

fn check_peripherals(_: &Ctx<'_>) -> Outcome {
    Outcome {
        fixes: vec![Fix::Manual {
            instruction: "keep GPUs, monitors and other L3-sharing devices idle during runs"
                .into(),
        }],
        ..Outcome::new(CheckStatus::NotApplicable, "not probed")
    }
}

const CHECKS: [CheckDef; 14] = [
    CheckDef {
        number: 1,
        id: "cpu_isolation",
        description: "target CPUs are isolated from the scheduler, CPU0 stays for housekeeping",
        sources: &[MIGRATIONS, SCHEDULER, CONTEXT_SWITCHES],
        expected: |c| format!("isolcpus covers {}, excludes 0", cpus(&c.targets)),
        eval: check_isolation,
    },
    CheckDef {
        number: 2,
        id: "hyperthreading",
        description: "Hyperthreading is off",
        sources: &[CACHE_COHERENCY, MIGRATIONS],
        expected: |_| "SMT inactive".into(),
        eval: check_smt,
    },
    CheckDef {
        number: 3,
        id: "irq_affinity",
        description: "default interrupt affinity excludes isolated CPUs",
        sources: &[INTERRUPTS],
        expected: |_| "mask disjoint from isolated and target cpus".into(),
        eval: check_irq_affinity,
    },
    CheckDef {
        number: 4,
        id: "mce_off",
        description: "machine check polling is off",
        sources: &[INTERRUPTS],
        expected: |_| "mce=off".into(),
        eval: check_mce,
    },
    CheckDef {
        number: 5,
        id: "nohz_full",
        description: "adaptive ticks on target CPUs",
        sources: &[SCHEDULER, CONTEXT_SWITCHES],
        expected: |c| format!("nohz_full covers {}", cpus(&c.targets)),
        eval: check_nohz,
    },
    CheckDef {
        number: 6,
        id: "rcu_nocbs",
        description: "RCU callbacks offloaded from target CPUs",
        sources: &[SCHEDULER, CONTEXT_SWITCHES],
        expected: |c| format!("rcu_nocbs covers {}", cpus(&c.targets)),
        eval: check_rcu,
    },
    CheckDef {
        number: 7,
        id: "slub_allocator",
        description: "kernel uses the SLUB allocator",
        sources: &[ALLOCATOR],
        expected: |_| "SLUB".into(),
        eval: check_allocator,
    },
    CheckDef {
        number: 8,
        id: "watchdogs",
        description: "watchdog and soft lockup detector are off",
        sources: &[CONTEXT_SWITCHES, INTERRUPTS],
        expected: |_| "nowatchdog nosoftlockup".into(),
        eval: check_watchdogs,
    },
    CheckDef {
        number: 9,
        id: "rt_throttling",
        description: "real-time throttling is disabled",
        sources: &[CONTEXT_SWITCHES, SCHEDULER],
        expected: |_| "sched_rt_runtime_us=-1".into(),
        eval: check_rt,
    },
    CheckDef {
        number: 10,
        id: "frequency_pinned",
        description: "clock frequency is fixed",
        sources: &[FREQUENCY_SCALING],
        expected: |_| "performance or userspace governor with min = max, or BIOS pinning".into(),
        eval: check_frequency,
    },
    CheckDef {
        number: 11,
        id: "kpti",
        description: "no page table isolation overhead without PCID",
        sources: &[MODE_SWITCHES, TLB_SHOOTDOWN],
        expected: |_| "PCID present, or pti=off".into(),
        eval: check_kpti,
    },
    CheckDef {
        number: 12,
        id: "prefetchers",
        description: "hardware prefetcher state matches the plan",
        sources: &[HARDWARE_PREFETCHER],
        expected: |c| match c.target.prefetcher_mode {
            PrefetcherMode::On => "MSR 0x1a4 bits 0-3 clear".into(),
            PrefetcherMode::Off => "MSR 0x1a4 bits 0-3 set".into(),
            PrefetcherMode::Both => "MSR 0x1a4 accessible".into(),
        },
        eval: check_prefetchers,
    },
    CheckDef {
        number: 13,
        id: "thermal_headroom",
        description: "maximum frequency throttled below the thermal limit",
        sources: &[FREQUENCY_SCALING, INTERRUPTS],
        expected: |_| "scaling_max below cpuinfo_max, or boost off".into(),
        eval: check_thermal,
    },
    CheckDef {
        number: 14,
        id: "peripherals",
        description: "peripherals sharing the L3 are idle",
        sources: &[PERIPHERALS, DMA_TRANSFERS],
        expected: |_| "informational".into(),
        eval: check_peripherals,
    },
];

/// Isolated CPUs if any, otherwise the last online CPU.
pub fn default_targets(s: &SystemSnapshot) -> Vec<u32> {
    let isolated = s.cpu_list_param("isolcpus");
    if !isolated.is_empty() {
        return isolated;
    }
    s.online_cpus
        .as_ref()
        .and_then(|c| c.last().copied())
        .map(|c| vec![c])
        .unwrap_or_else(|| vec![0])
}

fn verdict(checks: &[AuditCheck]) -> Verdict {
    let failed = |c: &&AuditCheck| c.status == CheckStatus::Fail;
    if checks
        .iter()
        .filter(failed)
        .any(|c| VERDICT_CRITICAL.contains(&c.number))
    {
        Verdict::Unusable
    } else if checks
        .iter()
        .filter(|c| c.applicable())
        .all(|c| c.status == CheckStatus::Pass)
    {
        Verdict::Clean
    } else {
        Verdict::Degraded
    }
}

pub fn audit(s: &SystemSnapshot, target: &AuditTarget) -> AuditReport {
    let targets = if target.target_cpus.is_empty() {
        default_targets(s)
    } else {
        let mut t = target.target_cpus.clone();
        t.sort_unstable();
        t.dedup();
        t
    };
    let ctx = Ctx {
        s,
        isolated: s.cpu_list_param("isolcpus"),
        targets,
        target,
    };
    let checks: Vec<AuditCheck> = CHECKS
        .iter()
        .map(|def| {
            let out = (def.eval)(&ctx);
            let requires_reboot = out
                .fixes
                .iter()
                .any(|f| matches!(f, Fix::BootParam { .. } | Fix::Manual { .. }))
                && out.status == CheckStatus::Fail;
            let remediation = (!out.fixes.is_empty()).then(|| {
                out.fixes
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join("; ")
            });
            AuditCheck {
                number: def.number,
                id: def.id.to_string(),
                description: def.description.to_string(),
                error_sources: def.sources.iter().map(|s| s.to_string()).collect(),
                observed: out.observed,
                expected: (def.expected)(&ctx),
                status: out.status,
                remediation,
                requires_reboot,
                security_warning: out.security_warning,
                fixes: out.fixes,
            }
        })
        .collect();
    AuditReport {
        verdict: verdict(&checks),
        checks,
        isolated_cpus: ctx.isolated.clone(),
        target_cpus: ctx.targets.clone(),
        snapshot_hash: s.hash(),
        root: s.root.clone(),
        smt_active: s.smt_active,
    }
}
