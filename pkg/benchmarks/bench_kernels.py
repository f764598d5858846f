#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-Python fallback.

Times the three hot loops (FK frame evaluation, scene clearance, the 1 kHz
joint tick) plus raw segment distance under both backends and prints the
speedup table.  Run from the repo root:

    python3 benchmarks/bench_kernels.py [--n 20000]
"""

import argparse
import time

import numpy as np

from crane_sim import _kernels
from crane_sim._kernels import backends


def timeit(fn, n, *args):
    t0 = time.perf_counter()
    for _ in range(n):
        fn(*args)
    return (time.perf_counter() - t0) / n


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=20000, help="iterations per kernel")
    args = ap.parse_args()
    n = args.n

    bks = backends()
    if "compiled" not in bks:
        print("compiled backend not built; run pip install -e . first")

    rng = np.random.default_rng(0)
    params = np.array([0.10, 0.07, 0.07, 0.07, 0.05])
    q = rng.uniform(-1.0, 1.0, 8)
    q[7] = 0.1
    frames = np.empty(_kernels.FRAMES_LEN)
    radii = np.array([0.05, 0.015, 0.015, 0.015, 0.012])
    bore = np.array([0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.35])
    obs = rng.uniform(-0.3, 0.3, size=3 * 7)
    obs.reshape(3, 7)[:, 6] = 0.04
    a, b, c, d = rng.uniform(-1, 1, size=(4, 3))

    nj = 7
    tick_args = lambda: dict(
        x=rng.uniform(-0.1, 0.1, nj), v=np.zeros(nj), integ=np.zeros(nj),
        prev=np.zeros(nj), setp=rng.uniform(-0.2, 0.2, nj),
        kp=np.full(nj, 100.0), ki=np.full(nj, 5.0), kd=np.full(nj, 1.2),
        icl=np.full(nj, 1.0), ucl=np.full(nj, 5.0), inertia=np.full(nj, 0.01),
        fric=np.full(nj, 0.1), emax=np.full(nj, 5.0),
        enc=np.full(nj, 2 * np.pi / 16384), eff=np.zeros(nj), meas=np.zeros(nj))

    rows = []
    for name, mod in bks.items():
        mod.chain_frames(q, params, frames)
        t_fk = timeit(lambda: mod.chain_frames(q, params, frames), n)
        t_seg = timeit(lambda: mod.seg_seg_distance(a, b, c, d), n)
        t_clr = timeit(lambda: mod.min_clearance(frames, radii, obs, 3, bore, -1.0), n)
        ta = tick_args()
        t_tick = timeit(lambda: mod.joint_tick(
            ta["x"], ta["v"], ta["integ"], ta["prev"], ta["setp"], ta["kp"],
            ta["ki"], ta["kd"], ta["icl"], ta["ucl"], ta["inertia"], ta["fric"],
            ta["emax"], ta["enc"], 1e-3, 10, True, True, ta["eff"], ta["meas"]),
            max(1, n // 4))
        rows.append((name, t_fk, t_seg, t_clr, t_tick))

    print(f"\niterations: {n}\n")
    print(f"{'kernel':<22}" + "".join(f"{name:>14}" for name, *_ in rows) +
          ("{:>10}".format("speedup") if len(rows) == 2 else ""))
    labels = ["chain_frames", "seg_seg_distance", "min_clearance(3 obs)",
              "joint_tick(7x10)"]
    for i, label in enumerate(labels, start=1):
        line = f"{label:<22}"
        vals = [r[i] for r in rows]
        for v in vals:
            line += f"{v * 1e6:>12.2f}us"
        if len(vals) == 2:
            line += f"{vals[0] / vals[1]:>9.1f}x"
        print(line)


if __name__ == "__main__":
    main()
