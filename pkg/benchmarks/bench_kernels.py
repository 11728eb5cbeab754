"""Time the compiled kernels against the pure-Python fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from winlab import kernels
from winlab.env import random_environment
from winlab.fixtures import rps_env


def _game_inputs(env):
    pair_on = env.mask[:, :, None] & env.mask[:, None, :]
    P = np.where(pair_on, env.pref, 0.0)
    return P, P, env.sizes, env.query_probs


def cases():
    rng = np.random.default_rng(0)
    n = 3000
    loss, win, kl = rng.random(n), rng.random(n), rng.random(n)
    yield f"count_violations n={n}", lambda impl: kernels.count_violations(loss, win, kl, impl=impl)
    rps = _game_inputs(rps_env())
    yield "fictitious_play cycle, 10000 iters", lambda impl: kernels.fictitious_play(*rps, 10_000, 0.0, impl=impl)
    env = random_environment(np.random.default_rng(1), 5, 8, min_responses=8)
    big = _game_inputs(env)
    yield "fictitious_play 5x8 random, 2000 iters", lambda impl: kernels.fictitious_play(*big, 2000, 0.0, impl=impl)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)
    impls = kernels.implementations()
    if "cython" not in impls:
        print("compiled kernels not built; only the Python fallback is available")
    print(f"{'case':<40}" + "".join(f"{name:>14}" for name in impls) + f"{'speedup':>10}")
    for label, run in cases():
        best = {name: min(timeit.repeat(lambda: run(impl), number=1, repeat=args.repeat)) for name, impl in impls.items()}
        speedup = best["python"] / best["cython"] if "cython" in best else float("nan")
        print(f"{label:<40}" + "".join(f"{t * 1e3:>12.2f}ms" for t in best.values()) + f"{speedup:>9.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
