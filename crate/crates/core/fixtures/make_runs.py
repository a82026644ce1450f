#!/usr/bin/env python3
"""Builds the run-record fixtures under fixtures/runs/.

Each configuration is described by the top-down fractions and standard
deviations printed in the published listings and bar charts. Event means
are solved from the model formulas so that the propagated values land on
those numbers; five samples per event are then laid out around the mean
with a sample standard deviation equal to the requested spread.
"""

import json
import math
import random
from pathlib import Path

OUT = Path(__file__).resolve().parent / "runs"
NOMINAL_HZ = 2.8e9
W = 4
REPEATS = 5
BUDGET = 8
Z = [z / math.sqrt(2.5) for z in (-2, -1, 0, 1, 2)]

INST = "INST_RETIRED.ANY"
CLK = "CPU_CLK_UNHALTED.THREAD"
REF = "CPU_CLK_UNHALTED.REF_TSC"
FIXED = [INST, CLK, REF]

NOTDEL = "IDQ_UOPS_NOT_DELIVERED.CORE"
CYC0 = "IDQ_UOPS_NOT_DELIVERED.CYCLES_0_UOPS_DELIV.CORE"
LE3 = "IDQ_UOPS_NOT_DELIVERED.CYCLES_LE_3_UOP_DELIV.CORE"
IFDATA = "ICACHE.IFDATA_STALL"
BM = "BR_MISP_RETIRED.ALL_BRANCHES"
MC = "MACHINE_CLEARS.COUNT"
BAC = "BACLEARS.ANY"
ISS = "UOPS_ISSUED.ANY"
RS = "UOPS_RETIRED.RETIRE_SLOTS"
REC = "INT_MISC.RECOVERY_CYCLES"
MEM_ANY = "CYCLE_ACTIVITY.STALLS_MEM_ANY"
SB = "RESOURCE_STALLS.SB"
LDM = "CYCLE_ACTIVITY.STALLS_LDM_PENDING"
L1D = "CYCLE_ACTIVITY.STALLS_L1D_PENDING"
L2P = "CYCLE_ACTIVITY.STALLS_L2_PENDING"
LLC_HIT = "MEM_LOAD_UOPS_RETIRED.LLC_HIT"
LLC_MISS = "MEM_LOAD_UOPS_RETIRED.LLC_MISS"
GE1 = "UOPS_EXECUTED.CYCLES_GE_1_UOP_EXEC"
GE3 = "UOPS_EXECUTED.CYCLES_GE_3_UOPS_EXEC"
L1_HIT = "MEM_LOAD_UOPS_RETIRED.L1_HIT"
L2_HIT = "MEM_LOAD_UOPS_RETIRED.L2_HIT"
STLB_HIT = "DTLB_LOAD_MISSES.STLB_HIT"
WALK = "DTLB_LOAD_MISSES.WALK_COMPLETED"

PROGRAMMABLE = [NOTDEL, ISS, RS, REC, CYC0, LE3, IFDATA, BM, MC, BAC, MEM_ANY, SB,
                LDM, L1D, L2P, LLC_HIT, LLC_MISS, GE1, GE3, L1_HIT, L2_HIT, STLB_HIT, WALK]

FE, BAD, BE, RET = "Frontend_Bound", "Bad_Speculation", "Backend_Bound", "Retiring"
LAT, BW = FE + ".Frontend_Latency", FE + ".Frontend_Bandwidth"
ICACHE, RESTEERS = LAT + ".ICache_Misses", LAT + ".Branch_Resteers"
BRMISP = BAD + ".Branch_Mispredicts"
MEM, CORE = BE + ".Memory_Bound", BE + ".Core_Bound"
L1B, L2B, L3B, DRAMB, STOREB = (MEM + s for s in
                                (".L1_Bound", ".L2_Bound", ".L3_Bound", ".DRAM_Bound", ".Store_Bound"))
PORTS = CORE + ".Ports_Utilization"


def config(**kw):
    """Fractions (value, sd) per node; unspecified spreads fall back to defaults."""
    return kw


# (fraction, sd of fraction). Level-1 values of the default setups come from
# the bar chart, which prints one decimal and no spread, so a nominal
# spread is used there.
CONFIGS = {
    "gnugo-tune": dict(
        workload="gnugo", setup="tune", environment="paper-setup",
        fe=(.4394, .0002), bad=(.1416, .0001), ret=(.3507, .0001),
        lat=(.2277, .0003), bw=(.2113, 0), icache=(.1766, .00001),
        brmisp_share=.1407 / .1416, clears=.01, resteers=(.1407, .0001),
        mem=(.0300, .0002), store=(.0080, .0001), l2=(.0050, .0001), l3=(.0090, .0001),
        dram=(.0060, .0001), ports=(.0310, .0002),
        instructions=4.5459e10, task=12.9, freq=2.8e9, ipc0=1.2537, wall_sd=.01,
        published_level1=[43.9, 14.2, 6.8, 35.1], published_ipc0=1.25,
        nodes=[FE, BAD, RET, LAT, BW, BRMISP, ICACHE, RESTEERS],
    ),
    "gnugo-dfl": dict(
        workload="gnugo", setup="default", environment="debian-default",
        fe=(.431, .0004), bad=(.139, .0003), ret=(.344, .0003),
        lat=(.224, .0005), bw=(.207, .0003), icache=(.172, .0002),
        brmisp_share=.99, clears=.01, resteers=(.138, .0003),
        mem=(.0400, .0004), store=(.0100, .0002), l2=(.0070, .0002), l3=(.0110, .0002),
        dram=(.0080, .0002), ports=(.0400, .0004),
        instructions=4.5459e10, task=11.4, freq=3.2e9, ipc0=1.224, wall_sd=.08,
        published_level1=[43.1, 13.9, 8.6, 34.4], published_ipc0=1.22,
        nodes=[],
    ),
    "gnugo-tune-stress": dict(
        workload="gnugo", setup="tune", environment="paper-setup", background_load=True,
        fe=(.436, .0003), bad=(.138, .0002), ret=(.334, .0002),
        lat=(.226, .0004), bw=(.210, .0002), icache=(.175, .0001),
        brmisp_share=.99, clears=.01, resteers=(.137, .0002),
        mem=(.0400, .0003), store=(.0100, .0002), l2=(.0070, .0002), l3=(.0110, .0002),
        dram=(.0080, .0002), ports=(.0400, .0003),
        instructions=4.5459e10, task=13.1, freq=2.8e9, ipc0=1.2075, wall_sd=.02,
        published_level1=[43.6, 13.8, 8.7, 33.4], published_ipc0=1.21,
        nodes=[],
    ),
    "gnugo-dfl-stress": dict(
        workload="gnugo", setup="default", environment="debian-default", background_load=True,
        fe=(.428, .002), bad=(.132, .001), ret=(.321, .001),
        lat=(.222, .002), bw=(.206, .001), icache=(.170, .001),
        brmisp_share=.99, clears=.01, resteers=(.131, .001),
        mem=(.0600, .001), store=(.0150, .0005), l2=(.0100, .0005), l3=(.0160, .0005),
        dram=(.0120, .0005), ports=(.0500, .001),
        instructions=4.5459e10, task=11.9, freq=3.2e9, ipc0=0.446, wall_sd=1.5,
        published_level1=[42.8, 13.2, 11.7, 32.1], published_ipc0=0.45,
        nodes=[],
    ),
    "stream-tune": dict(
        workload="stream", setup="tune", environment="paper-setup",
        fe=(.0562, .00001), bad=(.0024, .00001), ret=(.2194, .00001),
        lat=(.0300, .0001), bw=(.0262, .0001), icache=(.0050, .00001),
        brmisp_share=.9, clears=.001, resteers=(.0180, .0001),
        mem=(.5255, .0002), store=(.1027, .0001), l1=0.0, l2=(.0173, .0002), l3=(.1780, .0003),
        dram=(.3613, .0004), ports=(.2192, .0003),
        instructions=2.2e10, task=9.8, freq=2.8e9, ipc0=0.8, wall_sd=.01,
        published_level1=[5.6, 0.2, 72.2, 21.9], published_ipc0=0.8,
        nodes=[FE, BAD, BE, RET, MEM, CORE, L1B, L2B, L3B, DRAMB, STOREB, PORTS],
    ),
    "stream-dfl": dict(
        workload="stream", setup="default", environment="debian-default",
        fe=(.050, .0003), bad=(.003, .0001), ret=(.174, .0003),
        lat=(.027, .0002), bw=(.023, .0002), icache=(.004, .0001),
        brmisp_share=.9, clears=.001, resteers=(.016, .0002),
        mem=(.5600, .001), store=(.1100, .0005), l1=0.0, l2=(.0200, .0005), l3=(.1900, .0008),
        dram=(.3800, .001), ports=(.2000, .0008),
        instructions=2.2e10, task=11.0, freq=3.2e9, ipc0=0.6, wall_sd=.12,
        published_level1=[5.0, 0.3, 77.3, 17.4], published_ipc0=0.6,
        nodes=[],
    ),
    "syscalls-tune": dict(
        workload="syscalls", setup="tune", environment="paper-setup",
        fe=(.2140, .0005), bad=(.0477, math.sqrt(.0008**2 - .0005**2 - .0001**2)), ret=(.2631, .0001),
        lat=(.1294, .0003), bw=(.0846, .0002), icache=(.0200, .0001),
        brmisp_share=.95, clears=.002, resteers=(.0600, .0002),
        mem=(0.0, 0.0), store=(0.0, 0.0), l1=0.0, l2=(0.0, 0.0), l3=(0.0, 0.0),
        dram=(0.0, 0.0), ports=(.3988, .0020),
        instructions=1.0e10, task=23.7, freq=2.8e9, ipc0=0.15, wall_sd=.03,
        published_level1=[21.3, 4.6, 47.5, 26.3], published_ipc0=0.15,
        nodes=[FE, BE, RET, LAT, MEM, CORE, PORTS],
    ),
    "syscalls-dfl": dict(
        workload="syscalls", setup="default", environment="debian-default",
        fe=(.185, .001), bad=(.039, .0005), ret=(.145, .0005),
        lat=(.110, .0008), bw=(.075, .0005), icache=(.018, .0002),
        brmisp_share=.95, clears=.002, resteers=(.050, .0004),
        mem=(.0100, .0002), store=(.0040, .0001), l1=0.0, l2=(.0020, .0001), l3=(.0020, .0001),
        dram=(.0010, .0001), ports=(.4500, .002),
        instructions=1.0e10, task=4.5, freq=3.2e9, ipc0=0.68, wall_sd=.05,
        published_level1=[18.5, 3.9, 63.5, 14.5], published_ipc0=0.68,
        nodes=[],
    ),
}


def event_targets(c):
    """Mean and sd of every event, in counts."""
    clk = c["freq"] * c["task"]
    t = {}

    def put(name, frac, sd_frac=0.0, base=clk):
        t[name] = (frac * base, sd_frac * base)

    fe, s_fe = c["fe"]
    bad, s_bad = c["bad"]
    ret, s_ret = c["ret"]
    put(CLK, 1.0, 2e-6)
    put(REF, NOMINAL_HZ * c["task"] / clk, 2e-6)
    t[INST] = (c["instructions"], c["instructions"] * 1e-6)
    put(NOTDEL, W * fe, W * s_fe)
    put(RS, W * ret, W * s_ret)
    # Bad speculation = (ISS - RS + W*REC) / (W*CLK); its spread beyond the
    # retire-slot spread is carried by the recovery cycles.
    rec = 0.02
    s_rec = math.sqrt(max(s_bad**2 - s_ret**2, 0.0))
    put(REC, rec, s_rec)
    put(ISS, W * bad + W * ret - W * rec)
    lat, s_lat = c["lat"]
    bw, s_bw = c["bw"]
    put(CYC0, lat, s_lat)
    put(LE3, lat + bw, math.sqrt(max(s_bw**2 - s_lat**2, 0.0)))
    icache, s_icache = c["icache"]
    put(IFDATA, icache, s_icache)
    k = c["clears"]
    put(BM, k * c["brmisp_share"])
    put(MC, k * (1 - c["brmisp_share"]))
    res, s_res = c["resteers"]
    put(BAC, res / 12 - k, s_res / 12)
    mem, s_mem = c["mem"]
    store, s_store = c["store"]
    put(SB, store, s_store)
    put(MEM_ANY, mem - store, math.sqrt(max(s_mem**2 - s_store**2, 0.0)))
    l2, s_l2 = c["l2"]
    l1d = 0.30 if mem > 0 else 0.0
    put(LDM, l1d + c.get("l1", 0.004))
    put(L1D, l1d)
    put(L2P, l1d - l2, s_l2)
    l3, s_l3 = c["l3"]
    put(LLC_HIT, l3 / 29, s_l3 / 29)
    dram, s_dram = c["dram"]
    put(LLC_MISS, dram / 200, s_dram / 200)
    ports, s_ports = c["ports"]
    put(GE3, 0.20)
    put(GE1, 0.20 + ports, s_ports)
    put(L1_HIT, 0.10, 0.0002)
    put(L2_HIT, 0.010, 0.00005)
    put(STLB_HIT, 0.002, 0.00001)
    put(WALK, 0.0004, 0.000005)
    return t


def samples(rng, mean, sd):
    z = Z[:]
    rng.shuffle(z)
    return [max(0, int(round(mean + sd * zi))) for zi in z]


def spread(rng, mean, sd):
    z = Z[:]
    rng.shuffle(z)
    return [mean + sd * zi for zi in z]


def schedule():
    """First fit in request order, fixed counters riding in the first pass."""
    fixed = [{"name": n, "kind": "hardware", "fixed_slot": i} for i, n in enumerate(FIXED)]
    chunks = [PROGRAMMABLE[i:i + BUDGET] for i in range(0, len(PROGRAMMABLE), BUDGET)]
    passes = []
    for i, chunk in enumerate(chunks):
        members = [{"name": n, "kind": "hardware"} for n in chunk]
        if i == 0:
            members = fixed + members
        passes.append({"run_index": i, "groups": [{"members": members, "weak": False}]})
    return {"regime": "nomux_group", "passes": passes, "counter_budget": BUDGET,
            "extrapolated": False}


def software(rng, c, i):
    if c["setup"] == "tune":
        return {"context_switches": 1, "cpu_migrations": 0,
                "minor_faults": 5120 + rng.randint(0, 4), "major_faults": 0}
    load = 3 if c.get("background_load") else 1
    return {"context_switches": load * (1200 + rng.randint(-40, 40)),
            "cpu_migrations": 37 if i == 0 else 37 + rng.randint(-3, 3),
            "minor_faults": 5200 + rng.randint(0, 30),
            "major_faults": 4 if i == 0 else rng.randint(0, 1)}


def build(name, c):
    rng = random.Random(name)
    targets = event_targets(c)
    per_event = {e: samples(rng, m, s) for e, (m, s) in targets.items()}
    wall = c["instructions"] / (NOMINAL_HZ * c["ipc0"])
    walls = spread(rng, wall, c["wall_sd"])
    tasks = spread(rng, c["task"], c["wall_sd"] * 0.2)
    records = []
    for i in range(REPEATS):
        ns = int(round(tasks[i] * 1e9))
        events = {e: {"raw": v[i], "enabled_ns": ns, "running_ns": ns, "value": float(v[i])}
                  for e, v in per_event.items()}
        records.append({
            "run_index": i,
            "discarded": False,
            "events": events,
            "wallclock_s": round(walls[i], 6),
            "task_clock_s": round(tasks[i], 6),
            "exit_status": 0,
            "snapshot_hash": "",
            "software": software(rng, c, i),
        })
    tune = c["setup"] == "tune"
    plan = {
        "label": name,
        "command": {"gnugo": ["gnugo", "--mode", "gtp", "--quiet"],
                    "stream": ["stream"],
                    "syscalls": ["syscalls"]}[c["workload"]],
        "target_cpus": [1] if tune else [0, 1],
        "rt_priority": 50 if tune else None,
        "repeats": REPEATS,
        "schedule": schedule(),
        "prefetcher_mode": "on",
        "discard_first": False,
        "aggregation": "per_process",
        "uncertainty": True,
        "repeatable_workload": True,
        "override_verdict": not tune,
        "warm_cache": tune,
        "bios_frequency_pinned": False,
    }
    if c["nodes"]:
        plan["nodes"] = c["nodes"]
    fe, bad, be, ret = c["published_level1"]
    meta = {
        "config": name,
        "workload": c["workload"],
        "setup": c["setup"],
        "environment": c["environment"],
        "background_load": bool(c.get("background_load", False)),
        "published_level1": {"FE": fe, "BAD": bad, "BE": be, "RET": ret},
        "published_ipc0": c["published_ipc0"],
        "source": "means and spreads transcribed from published listings and charts; "
                  "per-run samples synthesized around them",
    }
    doc = {"schema_version": 1, "plan": plan, "records": records, "snapshot_hash": "",
           "meta": meta}
    (OUT / f"{name}.json").write_text(json.dumps(doc, indent=2) + "\n")


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for name, c in CONFIGS.items():
        build(name, c)


if __name__ == "__main__":
    main()
