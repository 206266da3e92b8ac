"""Time structural evaluation and full runs for both routes and both backends.

Each backend runs in its own interpreter because the backend is chosen
at import time from ``MLRDYN_DISABLE_NUMBA``.

    python3 benchmarks/bench_paths.py [--duration 5] [--samples 2000]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys

CHILD = r"""
import json, sys, time
import numpy as np
from dataclasses import replace
from mlrdyn import _jit, engine
from mlrdyn.model import build_hexapod_default

duration, samples = float(sys.argv[1]), int(sys.argv[2])
model = build_hexapod_default()
rng = np.random.default_rng(0)
thetas = rng.uniform(-np.pi, np.pi, (64, model.N_T))
vs = rng.normal(size=(64, model.dof))
out = {"backend": _jit.backend_name(), "paths": {}}
for path in engine.PATHS:
    engine.warm_up(path)
    ev = engine.make_evaluator(model, path)
    R = np.eye(3)
    t = []
    for s in range(samples):
        t0 = time.perf_counter()
        ev.evaluate_full(R, thetas[s % 64], vs[s % 64])
        t.append(time.perf_counter() - t0)
    t = np.array(t) * 1e6
    sc = engine.preset("healthy", path=path, duration=duration)
    res = engine.run_scenario(sc)
    out["paths"][path] = {
        "structural_mean_us": float(t.mean()),
        "structural_p50_us": float(np.percentile(t, 50)),
        "structural_p95_us": float(np.percentile(t, 95)),
        "run_wall_s": res.summary["wall_time"],
        "real_time_factor": res.summary["real_time_factor"],
        "final_position": res.log.position[-1].tolist(),
    }
print(json.dumps(out))
"""


def run_backend(disable: bool, duration: float, samples: int) -> dict:
    env = dict(os.environ)
    if disable:
        env["MLRDYN_DISABLE_NUMBA"] = "1"
    else:
        env.pop("MLRDYN_DISABLE_NUMBA", None)
    res = subprocess.run(
        [sys.executable, "-c", CHILD, str(duration), str(samples)],
        env=env, capture_output=True, text=True, check=True,
    )
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--duration", type=float, default=5.0)
    ap.add_argument("--samples", type=int, default=2000)
    ap.add_argument("--json", help="also write the report here")
    args = ap.parse_args(argv)
    reports = [run_backend(False, args.duration, args.samples), run_backend(True, args.duration, args.samples)]
    print(f"{'backend':8} {'path':6} {'struct mean':>12} {'p95':>9} {'run wall':>9} {'RTF':>6}")
    for rep in reports:
        for path, r in rep["paths"].items():
            print(
                f"{rep['backend']:8} {path:6} {r['structural_mean_us']:10.1f}us {r['structural_p95_us']:7.1f}us "
                f"{r['run_wall_s']:8.2f}s {r['real_time_factor']:6.2f}"
            )
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(reports, fh, indent=2)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
