"""Time the numba and pure-numpy kernel backends against each other.

    python3 benchmarks/bench_kernels.py            # per-kernel micro-benchmarks
    python3 benchmarks/bench_kernels.py --trial    # plus one 120 s trial per backend

The trial comparison runs in subprocesses because the backend is fixed at
import time by CBBA_ETC_PURE_NUMPY.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from cbba_etc import _kernels as K


def inputs(n_slots=100, seed=0):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-32, 32, (n_slots, 2))
    util = rng.random(n_slots)
    avail = rng.random(n_slots) < 0.8
    vid = np.arange(n_slots, dtype=np.int64)
    colors = rng.integers(0, 3, n_slots)
    state = lambda: (rng.random(n_slots), rng.integers(-1, 20, n_slots), rng.integers(0, 50, n_slots),
                     vid.copy())
    local, msg = state(), state()
    robots = rng.uniform(-32, 32, (20, 2))
    return {
        "distances": lambda f: f(0.0, 0.0, pts),
        "cone_mask": lambda f: f(0.0, 0.0, 0.3, pts, avail, 12.0, np.pi / 4),
        "utility_row": lambda f: f(0.0, 0.0, 1, pts, colors, 1e-6, 0.1),
        "greedy_bundle": lambda f: f(util, avail, vid, 3),
        "merge_state": lambda f: f(*[a.copy() for a in local], *msg, 3, 0),
        "nearest_sq_dist": lambda f: f(robots, robots[:2]),
        "lloyd": lambda f: f(robots, robots[:2].copy(), 100),
    }


def micro(n_slots, number):
    calls = inputs(n_slots)
    print(f"{'kernel':<16}{'numpy us':>12}{'numba us':>12}{'speedup':>10}")
    for name, call in calls.items():
        row = []
        for impl in (K.numpy_impl, K.numba_impl):
            f = impl[name]
            call(f)  # warm-up (and JIT compile)
            row.append(min(timeit.repeat(lambda: call(f), number=number, repeat=5)) / number * 1e6)
        print(f"{name:<16}{row[0]:>12.2f}{row[1]:>12.2f}{row[0] / row[1]:>10.1f}x")


TRIAL_SNIPPET = """
import time
from cbba_etc import ScenarioConfig, run_trial
from cbba_etc._kernels import BACKEND
run_trial(ScenarioConfig(duration_s=5, strategy="{s}"))
t0 = time.perf_counter()
run_trial(ScenarioConfig(duration_s=120, strategy="{s}", rng_seed=1))
print(BACKEND, round(time.perf_counter() - t0, 3))
"""


def trials():
    for strategy in ("tree", "cbba-etc", "c-cbba"):
        for flag in ("0", "1"):
            env = dict(os.environ, CBBA_ETC_PURE_NUMPY=flag)
            out = subprocess.run([sys.executable, "-c", TRIAL_SNIPPET.format(s=strategy)],
                                 env=env, capture_output=True, text=True, check=True).stdout.split()
            print(f"{strategy:<10} backend={out[0]:<6} 120 s trial: {out[1]} s")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--slots", type=int, default=100)
    ap.add_argument("--number", type=int, default=2000)
    ap.add_argument("--trial", action="store_true")
    args = ap.parse_args()
    if not K.HAVE_NUMBA:
        sys.exit("numba is not installed")
    micro(args.slots, args.number)
    if args.trial:
        trials()


if __name__ == "__main__":
    main()
