"""Compare the compiled episode kernel with the pure-Python one.

    python benchmarks/bench_kernel.py [--env four_buttons] [--episodes 500]

Both backends run the same training episodes from the same seed; the script
checks that they produce identical action-value tables and reports timings.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from lotad import kernel
from lotad.decomp import parse_constraints
from lotad.envs import builtin_map, builtin_path
from lotad.rm import load_rm
from lotad.training import TrainConfig, build_candidates, train


def bench(env: str, episodes: int, backend: str):
    spec = builtin_map(env)
    rm = load_rm(builtin_path(env, "rm"))
    with open(builtin_path(env, "constraints"), encoding="utf-8") as fh:
        cons = parse_constraints(fh.read(), spec.n_agents)
    cfg = TrainConfig(spec, rm, cons, episodes=episodes, seed=0, backend=backend)
    # candidate generation is shared by both backends, so keep it out of the timing
    cands = build_candidates(cfg)
    t0 = time.perf_counter()
    log = train(cfg, candidates=cands)
    dt = time.perf_counter() - t0
    steps = sum(r.completion_step if r.overall_completed else spec.max_steps for r in log.rows)
    return dt, steps, log


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--env", default="four_buttons")
    ap.add_argument("--episodes", type=int, default=500)
    args = ap.parse_args()
    if kernel.compiled_backend is None:
        raise SystemExit("compiled kernel not available; rebuild with `pip install -e .`")
    t_py, steps, log_py = bench(args.env, args.episodes, "python")
    t_c, _, log_c = bench(args.env, args.episodes, "compiled")
    same = np.array_equal(log_py.policy.q, log_c.policy.q) and log_py.csv_text() == log_c.csv_text()
    print(f"{args.env}: {args.episodes} episodes, about {steps} environment steps")
    print(f"  python    {t_py:8.3f} s")
    print(f"  compiled  {t_c:8.3f} s   ({t_py / t_c:.1f}x faster)")
    print(f"  identical results: {'yes' if same else 'NO'}")
    return 0 if same else 1


if __name__ == "__main__":
    raise SystemExit(main())
