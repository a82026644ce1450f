use serde::Serialize;

/// One source of measurement error, with whether hardware or software
/// causes it, what it does to the numbers, and when the effect shows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ErrorSource {
    pub name: &'static str,
    pub class: &'static str,
    pub impact: &'static str,
    pub when: &'static str,
}

const fn src(
    name: &'static str,
    class: &'static str,
    impact: &'static str,
    when: &'static str,
) -> ErrorSource {
    ErrorSource {
        name,
        class,
        impact,
        when,
    }
}

pub const FREQUENCY_SCALING: &str = "Speed Stepping/Frequency Scaling";
pub const TLB_SHOOTDOWN: &str = "TLB Shootdown";
pub const DMA_TRANSFERS: &str = "DMA Transfers";
pub const CACHE_COHERENCY: &str = "Cache Coherency";
pub const HARDWARE_PREFETCHER: &str = "Hardware Prefetcher";
pub const MIGRATIONS: &str = "Load Balancing/Migrations";
pub const INTERRUPTS: &str = "Interrupts";
pub const MODE_SWITCHES: &str = "Mode Switches";
pub const CONTEXT_SWITCHES: &str = "Context Switches";
pub const ALLOCATOR: &str = "Allocator";
pub const SCHEDULER: &str = "Scheduler";
pub const MAJOR_PAGE_FAULT: &str = "Major Page Fault";
pub const PERIPHERALS: &str = "Peripherals";

pub const ERROR_SOURCES: [ErrorSource; 13] = [
    src(FREQUENCY_SCALING, "HW", "varying execution time", "immediate"),
    src(TLB_SHOOTDOWN, "HW", "slower address translation", "lagging"),
    src(DMA_TRANSFERS, "HW/SW", "slower memory access", "immediate"),
    src(CACHE_COHERENCY, "HW", "additional accesses to cache", "immediate & lagging"),
    src(
        HARDWARE_PREFETCHER,
        "HW",
        "more cache & TLB accesses, less or more misses",
        "immediate & lagging",
    ),
    src(
        MIGRATIONS,
        "SW",
        "more cache & TLB accesses, less or more misses",
        "immediate & lagging",
    ),
    src(
        INTERRUPTS,
        "HW/SW",
        "longer execution time, more mode switches",
        "immediate & lagging",
    ),
    src(
        MODE_SWITCHES,
        "SW",
        "more cache/TLB misses, more context switches",
        "immediate & lagging",
    ),
    src(
        CONTEXT_SWITCHES,
        "SW",
        "more cache/TLB misses, longer execution time",
        "immediate & lagging",
    ),
    src(
        ALLOCATOR,
        "SW",
        "more context switches, different cache usage",
        "immediate & lagging",
    ),
    src(SCHEDULER, "SW", "more or less context switches", "immediate & lagging"),
    src(MAJOR_PAGE_FAULT, "SW/HW", "more context switches", "immediate & lagging"),
    src(
        PERIPHERALS,
        "HW",
        "more variance in memory access, cache misses",
        "immediate & lagging",
    ),
];

pub fn error_source(name: &str) -> Option<&'static ErrorSource> {
    ERROR_SOURCES.iter().find(|s| s.name == name)
}
