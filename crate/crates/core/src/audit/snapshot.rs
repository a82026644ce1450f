//! Read-only view of the procfs/sysfs state the checks look at.
//!
//! Every probe goes through a root prefix, so a directory tree laid out
//! like `/` substitutes for the live system.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::AuditError;

/// Register holding the per-core prefetcher disable bits on Intel cores.
pub const MSR_MISC_FEATURE_CONTROL: u64 = 0x1a4;
/// L2 stream, L2 adjacent line, L1 streamer, L1 IP prefetchers.
pub const PREFETCH_DISABLE_MASK: u64 = 0xf;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CpuFreq {
    pub governor: Option<String>,
    pub scaling_min_khz: Option<u64>,
    pub scaling_max_khz: Option<u64>,
    pub cpuinfo_min_khz: Option<u64>,
    pub cpuinfo_max_khz: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSnapshot {
    pub root: PathBuf,
    /// Seconds since the epoch when the snapshot was taken.
    pub taken_at: u64,
    pub cmdline: Option<Vec<String>>,
    pub osrelease: Option<String>,
    pub online_cpus: Option<Vec<u32>>,
    /// Per-CPU cpufreq state; CPUs without a cpufreq directory are absent.
    pub cpufreq: BTreeMap<u32, CpuFreq>,
    pub smt_active: Option<bool>,
    pub irq_default_affinity: Option<Vec<u32>>,
    pub allocator: Option<String>,
    pub rt_runtime_us: Option<i64>,
    pub meltdown: Option<String>,
    pub pcid: Option<bool>,
    /// Raw MSR 0x1a4 per CPU, where readable.
    pub prefetch_msr: BTreeMap<u32, u64>,
    /// `Some(false)` when turbo/boost is switched off.
    pub boost_enabled: Option<bool>,
    /// Probe paths (relative to the root) that could not be read.
    pub unreadable: Vec<String>,
}

struct Prober<'a> {
    root: &'a Path,
    unreadable: BTreeSet<String>,
}

impl Prober<'_> {
    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn read(&mut self, rel: &str) -> Option<String> {
        match fs::read_to_string(self.path(rel)) {
            Ok(s) => Some(s.trim().to_string()),
            Err(_) => {
                self.unreadable.insert(rel.to_string());
                None
            }
        }
    }

    /// Like `read`, but absence is expected and not recorded.
    fn read_optional(&self, rel: &str) -> Option<String> {
        fs::read_to_string(self.path(rel)).ok().map(|s| s.trim().to_string())
    }

    fn read_u64(&mut self, rel: &str) -> Option<u64> {
        self.read(rel).and_then(|s| s.parse().ok())
    }
}

/// Parses kernel CPU lists such as `0-3,5`. Non-numeric flags (as in
/// `isolcpus=nohz,domain,1-3`) are skipped.
pub fn parse_cpu_list(s: &str) -> Vec<u32> {
    let mut out = BTreeSet::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once('-') {
            let b = b.split(':').next().unwrap_or(b);
            if let (Ok(a), Ok(b)) = (a.parse::<u32>(), b.parse::<u32>()) {
                out.extend(a..=b);
            }
        } else if let Ok(c) = part.parse::<u32>() {
            out.insert(c);
        }
    }
    out.into_iter().collect()
}

/// Parses a hex CPU mask as found in `/proc/irq/*/smp_affinity`,
/// possibly comma-separated in 32-bit words.
pub fn parse_cpu_mask(s: &str) -> Option<Vec<u32>> {
    let hex: String = s.trim().chars().filter(|c| *c != ',').collect();
    if hex.is_empty() || !hex.chars().all(|c| c.is_ascii_hexdigit()) {
        return None;
    }
    let mut out = Vec::new();
    for (i, c) in hex.chars().rev().enumerate() {
        let nibble = c.to_digit(16)?;
        for bit in 0..4 {
            if nibble & (1 << bit) != 0 {
                out.push((i * 4 + bit) as u32);
            }
        }
    }
    Some(out)
}

pub fn format_cpu_mask(cpus: &[u32]) -> String {
    let top = cpus.iter().copied().max().unwrap_or(0) as usize;
    let mut nibbles = vec![0u32; top / 4 + 1];
    for &c in cpus {
        nibbles[c as usize / 4] |= 1 << (c % 4);
    }
    nibbles
        .iter()
        .rev()
        .map(|n| std::char::from_digit(*n, 16).unwrap())
        .collect()
}

fn read_msr(path: &Path, offset: u64) -> io::Result<u64> {
    let f = fs::File::open(path)?;
    let mut buf = [0u8; 8];
    f.read_exact_at(&mut buf, offset)?;
    Ok(u64::from_le_bytes(buf))
}

pub(crate) fn write_msr(path: &Path, offset: u64, value: u64) -> io::Result<()> {
    let f = fs::OpenOptions::new().write(true).open(path)?;
    f.write_all_at(&value.to_le_bytes(), offset)
}

fn allocator(p: &mut Prober<'_>, osrelease: Option<&str>) -> Option<String> {
    if p.path("sys/kernel/slab").is_dir() {
        return Some("SLUB".into());
    }
    let config = osrelease.and_then(|r| p.read_optional(&format!("boot/config-{r}")));
    match config {
        Some(cfg) => {
            for line in cfg.lines() {
                match line.trim() {
                    "CONFIG_SLUB=y" => return Some("SLUB".into()),
                    "CONFIG_SLAB=y" => return Some("SLAB".into()),
                    "CONFIG_SLOB=y" => return Some("SLOB".into()),
                    _ => {}
                }
            }
            None
        }
        None => {
            p.unreadable.insert("sys/kernel/slab".into());
            None
        }
    }
}

fn smt_active(p: &mut Prober<'_>, cpus: &[u32]) -> Option<bool> {
    if let Some(v) = p.read_optional("sys/devices/system/cpu/smt/active") {
        return Some(v == "1");
    }
    let mut seen_any = false;
    for cpu in cpus {
        let rel = format!("sys/devices/system/cpu/cpu{cpu}/topology/thread_siblings_list");
        if let Some(list) = p.read_optional(&rel) {
            seen_any = true;
            if parse_cpu_list(&list).len() > 1 {
                return Some(true);
            }
        }
    }
    if seen_any {
        Some(false)
    } else {
        p.unreadable.insert("sys/devices/system/cpu/smt/active".into());
        None
    }
}

fn pcid(p: &mut Prober<'_>) -> Option<bool> {
    let info = p.read("proc/cpuinfo")?;
    let flags = info
        .lines()
        .find(|l| l.starts_with("flags"))
        .and_then(|l| l.split_once(':'))
        .map(|(_, f)| f.split_whitespace().any(|f| f == "pcid"));
    flags.or(Some(false))
}

fn boost_enabled(p: &Prober<'_>) -> Option<bool> {
    if let Some(v) = p.read_optional("sys/devices/system/cpu/cpufreq/boost") {
        return Some(v == "1");
    }
    if let Some(v) = p.read_optional("sys/devices/system/cpu/intel_pstate/no_turbo") {
        return Some(v != "1");
    }
    None
}

pub fn snapshot(root: &Path) -> Result<SystemSnapshot, AuditError> {
    if fs::read_dir(root).is_err() {
        return Err(AuditError::RootUnreadable(root.to_path_buf()));
    }
    let mut p = Prober {
        root,
        unreadable: BTreeSet::new(),
    };
    let cmdline = p
        .read("proc/cmdline")
        .map(|s| s.split_whitespace().map(String::from).collect());
    let osrelease = p.read("proc/sys/kernel/osrelease");
    let online_cpus = p
        .read("sys/devices/system/cpu/online")
        .map(|s| parse_cpu_list(&s));
    let cpus = online_cpus.clone().unwrap_or_default();

    let mut cpufreq = BTreeMap::new();
    for &cpu in &cpus {
        let base = format!("sys/devices/system/cpu/cpu{cpu}/cpufreq");
        if !p.path(&base).is_dir() {
            continue;
        }
        cpufreq.insert(
            cpu,
            CpuFreq {
                governor: p.read(&format!("{base}/scaling_governor")),
                scaling_min_khz: p.read_u64(&format!("{base}/scaling_min_freq")),
                scaling_max_khz: p.read_u64(&format!("{base}/scaling_max_freq")),
                cpuinfo_min_khz: p.read_u64(&format!("{base}/cpuinfo_min_freq")),
                cpuinfo_max_khz: p.read_u64(&format!("{base}/cpuinfo_max_freq")),
            },
        );
    }
    if cpufreq.is_empty() {
        p.unreadable.insert("sys/devices/system/cpu/cpu*/cpufreq".into());
    }

    let smt_active = smt_active(&mut p, &cpus);
    let irq_default_affinity = p
        .read("proc/irq/default_smp_affinity")
        .and_then(|s| parse_cpu_mask(&s));
    let allocator = allocator(&mut p, osrelease.as_deref());
    let rt_runtime_us = p
        .read("proc/sys/kernel/sched_rt_runtime_us")
        .and_then(|s| s.parse().ok());
    let meltdown = p.read("sys/devices/system/cpu/vulnerabilities/meltdown");
    let pcid = pcid(&mut p);

    let mut prefetch_msr = BTreeMap::new();
    for &cpu in &cpus {
        let rel = format!("dev/cpu/{cpu}/msr");
        match read_msr(&p.path(&rel), MSR_MISC_FEATURE_CONTROL) {
            Ok(v) => {
                prefetch_msr.insert(cpu, v);
            }
            Err(_) => {
                p.unreadable.insert(rel);
            }
        }
    }
    let boost_enabled = boost_enabled(&p);
    let taken_at = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    Ok(SystemSnapshot {
        root: root.to_path_buf(),
        taken_at,
        cmdline,
        osrelease,
        online_cpus,
        cpufreq,
        smt_active,
        irq_default_affinity,
        allocator,
        rt_runtime_us,
        meltdown,
        pcid,
        prefetch_msr,
        boost_enabled,
        unreadable: p.unreadable.into_iter().collect(),
    })
}

impl SystemSnapshot {
    /// Value of `key=value` on the kernel command line (last one wins).
    pub fn param(&self, key: &str) -> Option<&str> {
        self.cmdline.as_ref()?.iter().rev().find_map(|t| {
            t.split_once('=')
                .and_then(|(k, v)| (k == key).then_some(v))
        })
    }

    pub fn has_flag(&self, flag: &str) -> bool {
        self.cmdline
            .as_ref()
            .is_some_and(|c| c.iter().any(|t| t == flag))
    }

    pub fn cpu_list_param(&self, key: &str) -> Vec<u32> {
        self.param(key).map(parse_cpu_list).unwrap_or_default()
    }

    /// SHA-256 over the observed state; the root path and timestamp are
    /// excluded so identical trees hash identically.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("snapshot serializes");
        if let Some(o) = v.as_object_mut() {
            o.remove("root");
            o.remove("taken_at");
        }
        let digest = Sha256::digest(v.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cpu_lists() {
        assert_eq!(parse_cpu_list("0-3,5"), [0, 1, 2, 3, 5]);
        assert_eq!(parse_cpu_list("nohz,domain,1-2"), [1, 2]);
        assert_eq!(parse_cpu_list(""), Vec::<u32>::new());
    }

    #[test]
    fn cpu_masks() {
        assert_eq!(parse_cpu_mask("1"), Some(vec![0]));
        assert_eq!(parse_cpu_mask("f"), Some(vec![0, 1, 2, 3]));
        assert_eq!(parse_cpu_mask("00000000,00000102"), Some(vec![1, 8]));
        assert_eq!(parse_cpu_mask("zz"), None);
        assert_eq!(format_cpu_mask(&[0]), "1");
        assert_eq!(format_cpu_mask(&[0, 5]), "21");
    }

    #[test]
    fn missing_root() {
        assert!(matches!(
            snapshot(Path::new("/nonexistent/perfrig-root")),
            Err(AuditError::RootUnreadable(_))
        ));
    }
}
