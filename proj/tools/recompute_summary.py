#!/usr/bin/env python3
"""Recompute the figures in a compare run's summary.kv from its per-run CSVs.

usage: recompute_summary.py OUT_DIR [--check]

Latency is the time-weighted mean of rtt_ms (each sample covers the interval
since the previous one; zero samples are skipped).  Throughput is the total
payload represented by the windowed throughput series over the run length.
With --check, exits 1 if any value differs from summary.kv by more than 1e-6.
"""

import csv
import sys
from pathlib import Path


def read_series(path):
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    return [(int(r[0]), float(r[1])) for r in rows[1:] if r and r[1] != ""]


def latency_ms(rtt):
    num = den = 0.0
    prev = 0
    for t, v in rtt:
        w = t - prev
        prev = t
        if v == 0.0:
            continue
        num += w * v
        den += w
    return num / den if den else 0.0


def throughput_mbps(thr):
    total = 0
    prev = 0
    for t, v in thr:
        total += round(v * 1e6 * ((t - prev) / 1e6) / 8.0)
        prev = t
    return total * 8.0 / (thr[-1][0] / 1e6) / 1e6, total


def load_kv(path):
    kv = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            kv[k] = v
    return kv


def main(argv):
    if len(argv) < 2:
        print(__doc__, file=sys.stderr)
        return 2
    out = Path(argv[1])
    kv = load_kv(out / "summary.kv")
    seeds = [int(s) for s in kv["seeds"].split(",")]
    groups = {"rl": "rl", "baseline": kv["baseline"]}
    computed = {}
    for prefix, ctrl in groups.items():
        lat, thr = [], []
        for seed in seeds:
            d = out / ctrl / f"seed_{seed}"
            l = latency_ms(read_series(d / "rtt.csv"))
            t, total = throughput_mbps(read_series(d / "throughput.csv"))
            computed[f"{prefix}.seed{seed}.latency_ms"] = l
            computed[f"{prefix}.seed{seed}.throughput_mbps"] = t
            computed[f"{prefix}.seed{seed}.delivered_bytes"] = total
            lat.append(l)
            thr.append(t)
        computed[f"{prefix}.mean_latency_ms"] = sum(lat) / len(lat)
        computed[f"{prefix}.mean_throughput_mbps"] = sum(thr) / len(thr)
    bl, rl = computed["baseline.mean_latency_ms"], computed["rl.mean_latency_ms"]
    bt, rt = computed["baseline.mean_throughput_mbps"], computed["rl.mean_throughput_mbps"]
    computed["latency_improvement_pct"] = 100.0 * (bl - rl) / bl if bl else 0.0
    computed["throughput_improvement_pct"] = 100.0 * (rt - bt) / bt if bt else 0.0

    worst = 0.0
    for k, v in computed.items():
        diff = abs(float(kv[k]) - v)
        worst = max(worst, diff)
        print(f"{k}={v!r} summary={kv[k]} diff={diff:.3g}")
    print(f"max_abs_diff={worst:.3g}")
    if "--check" in argv and worst > 1e-6:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
