#!/usr/bin/env python3
"""Builds the procfs/sysfs fixture trees under fixtures/audit/."""

import shutil
import struct
from pathlib import Path

OUT = Path(__file__).resolve().parent / "audit"
MSR = 0x1A4

BASE = {
    "cpus": 2,
    "cmdline": "BOOT_IMAGE=/vmlinuz-4.9.0 root=/dev/sda1 ro",
    "osrelease": "4.9.0-3-amd64",
    "smt_active": "0",
    "siblings": None,
    "irq_mask": "1",
    "slub": True,
    "boot_config": None,
    "rt_runtime": "-1",
    "governor": "performance",
    "min": 2800000,
    "max": 2800000,
    "hw_min": 800000,
    "hw_max": 3500000,
    "meltdown": "Vulnerable",
    "pcid": True,
    "msr": 0,
}

PAPER = " isolcpus=1 nohz_full=1 rcu_nocbs=1 mce=off nowatchdog nosoftlockup pti=off"

FIXTURES = {
    "paper-setup": {"cmdline": BASE["cmdline"] + PAPER},
    "debian-default": {
        "cpus": 4,
        "smt_active": None,
        "siblings": "0,2",
        "irq_mask": "f",
        "slub": False,
        "boot_config": "CONFIG_SLAB=y\n# CONFIG_SLUB is not set\n",
        "rt_runtime": "950000",
        "governor": "powersave",
        "min": 800000,
        "max": 3500000,
        "meltdown": "Mitigation: PTI",
        "pcid": True,
        "msr": None,
    },
    "partial-isolation": {
        "cmdline": BASE["cmdline"] + " isolcpus=1 nohz_full=1 mce=off nowatchdog pti=off",
        "msr": None,
    },
    "kpti-on-no-pcid": {
        "cmdline": BASE["cmdline"] + PAPER.replace(" pti=off", ""),
        "meltdown": "Mitigation: PTI",
        "pcid": False,
    },
    "cpu0-isolated": {
        "cmdline": BASE["cmdline"]
        + " isolcpus=0 nohz_full=0 rcu_nocbs=0 mce=off nowatchdog nosoftlockup pti=off",
    },
}


def write(root: Path, rel: str, text: str) -> None:
    p = root / rel
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(text if text.endswith("\n") else text + "\n")


def cpuinfo(n: int, pcid: bool) -> str:
    flags = "fpu vme de pse tsc msr pae mce cx8 apic sep mtrr pge mca cmov pat pse36 clflush"
    flags += " sse sse2 ss ht syscall nx rdtscp lm constant_tc"
    if pcid:
        flags += " pcid"
    flags += " sse4_1 sse4_2 popcnt aes xsave avx"
    blocks = []
    for i in range(n):
        blocks.append(
            f"processor\t: {i}\nvendor_id\t: GenuineIntel\ncpu family\t: 6\nmodel\t\t: 42\n"
            f"model name\t: Intel(R) Core(TM) i7-2640M CPU @ 2.80GHz\nflags\t\t: {flags}\n"
        )
    return "\n".join(blocks)


def build(name: str, cfg: dict) -> None:
    root = OUT / name
    if root.exists():
        shutil.rmtree(root)
    n = cfg["cpus"]
    write(root, "proc/cmdline", cfg["cmdline"])
    write(root, "proc/sys/kernel/osrelease", cfg["osrelease"])
    write(root, "proc/sys/kernel/sched_rt_runtime_us", cfg["rt_runtime"])
    write(root, "proc/irq/default_smp_affinity", cfg["irq_mask"])
    write(root, "proc/cpuinfo", cpuinfo(n, cfg["pcid"]))
    cpu = "sys/devices/system/cpu"
    write(root, f"{cpu}/online", f"0-{n - 1}" if n > 1 else "0")
    if cfg["smt_active"] is not None:
        write(root, f"{cpu}/smt/active", cfg["smt_active"])
    write(root, f"{cpu}/vulnerabilities/meltdown", cfg["meltdown"])
    for i in range(n):
        if cfg["siblings"] is not None:
            sib = cfg["siblings"] if i in (0, 2) else "1,3"
        else:
            sib = str(i)
        write(root, f"{cpu}/cpu{i}/topology/thread_siblings_list", sib)
        f = f"{cpu}/cpu{i}/cpufreq"
        write(root, f"{f}/scaling_governor", cfg["governor"])
        write(root, f"{f}/scaling_min_freq", str(cfg["min"]))
        write(root, f"{f}/scaling_max_freq", str(cfg["max"]))
        write(root, f"{f}/cpuinfo_min_freq", str(cfg["hw_min"]))
        write(root, f"{f}/cpuinfo_max_freq", str(cfg["hw_max"]))
        if cfg["msr"] is not None:
            msr = root / f"dev/cpu/{i}/msr"
            msr.parent.mkdir(parents=True, exist_ok=True)
            msr.write_bytes(b"\0" * MSR + struct.pack("<Q", cfg["msr"]))
    if cfg["slub"]:
        write(root, "sys/kernel/slab/kmalloc-64/object_size", "64")
    if cfg["boot_config"] is not None:
        write(root, f"boot/config-{cfg['osrelease']}", cfg["boot_config"])


def main() -> None:
    for name, overrides in FIXTURES.items():
        build(name, {**BASE, **overrides})


if __name__ == "__main__":
    main()
