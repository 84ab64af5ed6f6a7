"""Compare the numba-compiled kernels with the pure-numpy fallback.

Each backend runs in its own subprocess (the backend is fixed at import time
by ``CMKERNEL_NO_NUMBA``). Timings include one warm-up call so numba's
compilation is reported separately.

    python3 benchmarks/bench_backends.py [--system example3] [--kernel k2] [--repeat 3]
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import hashlib, json, sys, time
import numpy as np
from cmkernel import accel, dynamics, greedy
from cmkernel.kernels import parse_kernel

system = dynamics.resolve_system(sys.argv[1])
spec = parse_kernel(sys.argv[2], system.d)
eps, repeat = float(sys.argv[3]), int(sys.argv[4])
grid = dynamics.initial_grid(0.8, system.n)
box = dynamics.box(0.1, system.d)

def simulate():
    return dynamics.build_dataset(system, grid, 0.0, 1000.0, 0.1, box, on_failure="continue")

def select(data):
    cand, _ = greedy.dedup_candidates(data.x_points)
    return greedy.p_greedy_select(cand, spec, eps)

t = time.perf_counter(); data = simulate(); first_sim = time.perf_counter() - t
t = time.perf_counter(); sel = select(data); first_greedy = time.perf_counter() - t
sim, gr = [], []
for _ in range(repeat):
    t = time.perf_counter(); simulate(); sim.append(time.perf_counter() - t)
    t = time.perf_counter(); select(data); gr.append(time.perf_counter() - t)
digest = hashlib.sha256(np.ascontiguousarray(np.column_stack([data.x_points, data.y_points])).tobytes()).hexdigest()
print(json.dumps({"backend": accel.backend(), "n_star": len(data), "selected": len(sel),
                  "first_simulate": first_sim, "first_greedy": first_greedy,
                  "simulate": min(sim), "greedy": min(gr), "dataset_sha256": digest}))
"""


def run(no_numba, args):
    env = dict(os.environ, CMKERNEL_NO_NUMBA="1" if no_numba else "0")
    out = subprocess.run([sys.executable, "-c", WORKER, args.system, args.kernel, str(args.eps),
                          str(args.repeat)], env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--system", default="example3")
    p.add_argument("--kernel", default="k2")
    p.add_argument("--eps", type=float, default=1e-10)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)

    rows = [run(False, args), run(True, args)]
    print(f"{'backend':8s} {'N*':>7s} {'sel':>4s} {'sim 1st':>8s} {'sim':>8s} "
          f"{'greedy 1st':>10s} {'greedy':>8s}")
    for r in rows:
        print(f"{r['backend']:8s} {r['n_star']:7d} {r['selected']:4d} {r['first_simulate']:8.3f} "
              f"{r['simulate']:8.3f} {r['first_greedy']:10.3f} {r['greedy']:8.3f}")
    same = rows[0]["dataset_sha256"] == rows[1]["dataset_sha256"]
    print(f"datasets bit-identical across backends: {same}")
    print(f"steady-state speedup simulate x{rows[1]['simulate'] / rows[0]['simulate']:.1f}, "
          f"greedy x{rows[1]['greedy'] / rows[0]['greedy']:.1f}")
    return 0 if same else 1


if __name__ == "__main__":
    sys.exit(main())
