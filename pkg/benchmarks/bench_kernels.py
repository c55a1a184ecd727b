"""Compare the compiled kernels with the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--nodes 1000] [--days 0.5]

Micro-benchmarks call both kernel modules directly in this process. The
whole-simulation timing runs each backend in a fresh interpreter, because the
backend is chosen once at import (LWSIM_PURE_PYTHON=1 forces the fallback).
"""

import argparse
import os
import random
import subprocess
import sys
import timeit

from lwsim._kernels import _pykernels

try:
    from lwsim._kernels import _ckernels
except ImportError:
    _ckernels = None


def bench_airtime(mod, n=200_000):
    args = [(sf, bw, 1, p, 8, True, sf >= 11 and bw == 125)
            for sf in range(7, 13) for bw in (125, 250, 500) for p in (0, 20, 51, 255)]
    fn = mod.airtime_ms

    def run():
        for i in range(n):
            fn(*args[i % len(args)])
    return timeit.timeit(run, number=1)


def bench_queue(mod, n=200_000):
    rng = random.Random(1)
    times = [rng.random() * 1e6 for _ in range(n)]

    def run():
        q = mod.EventQueue()
        for t in times:
            q.push(t, None)
        while len(q):
            q.pop()
    return timeit.timeit(run, number=1)


def bench_tracker(mod, n=100_000):
    rng = random.Random(2)
    frames = []
    t = 0.0
    for _ in range(n):
        t += rng.expovariate(1 / 10.0)
        frames.append((rng.randrange(18), t, t + rng.choice((56.6, 102.7, 1318.9)),
                       -130 + rng.random() * 40, True))

    def run():
        tr = mod.UplinkTracker(6.0)
        live = []
        for g, s, e, r, a in frames:
            while live and live[0][0] <= s:
                tr.finish(live.pop(0)[1])
            live.append((e, tr.begin(g, s, e, r, a)))
            live.sort()
        for _, tok in live:
            tr.finish(tok)
    return timeit.timeit(run, number=1)


def bench_full_run(pure, nodes, days):
    env = dict(os.environ)
    env.pop("LWSIM_PURE_PYTHON", None)
    if pure:
        env["LWSIM_PURE_PYTHON"] = "1"
    code = ("import sys, time; from lwsim import simulate, ScenarioConfig, BACKEND; "
            "t = time.perf_counter(); "
            f"simulate(ScenarioConfig(n_nodes={nodes}, sim_days={days}, confirmed_fraction=0.05)); "
            "print(BACKEND, time.perf_counter() - t)")
    out = subprocess.run([sys.executable, "-c", code], env=env, check=True,
                         capture_output=True, text=True).stdout.split()
    return out[0], float(out[1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, default=1000)
    ap.add_argument("--days", type=float, default=0.5)
    args = ap.parse_args()

    if _ckernels is None:
        print("compiled kernels not built; run `pip install -e . --no-build-isolation` first")
        return 1

    print(f"{'kernel':<22}{'python s':>10}{'compiled s':>12}{'speedup':>9}")
    for name, fn in (("airtime x200k", bench_airtime), ("event queue 200k", bench_queue),
                     ("uplink tracker 100k", bench_tracker)):
        py, c = fn(_pykernels), fn(_ckernels)
        print(f"{name:<22}{py:>10.3f}{c:>12.3f}{py / c:>8.1f}x")

    b_py, t_py = bench_full_run(True, args.nodes, args.days)
    b_c, t_c = bench_full_run(False, args.nodes, args.days)
    assert (b_py, b_c) == ("python", "compiled")
    label = f"sim {args.nodes}n/{args.days}d"
    print(f"{label:<22}{t_py:>10.3f}{t_c:>12.3f}{t_py / t_c:>8.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
