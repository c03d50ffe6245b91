"""Time the fused LIO iteration on each backend.

    python3 benchmarks/bench_kernels.py --iters 2000

Every backend consumes the same uniforms from the same initial roster, so the
final parameters are also compared (max absolute difference is printed).
"""
import argparse
import time

import numpy as np

from arena.agents import build_roster
from arena.envs import er_new, ipd_new
from arena.kernels import BACKEND, FusedRunner
from arena.learner import Hyperparams, lio_iteration

CASES = {
    "er21 lio,lio": (lambda: er_new(2, 1, 5), ["lio", "lio"]),
    "er42 lio x3,partial": (lambda: er_new(4, 2, 5), ["lio", "lio", "lio", "partial"]),
    "ipd lio,lio": (lambda: ipd_new(5), ["lio", "lio"]),
}


def _roster(make_env, modes, seed):
    env = make_env()
    rng = np.random.default_rng(seed)
    return env, build_roster(env, modes, rng), rng


def _time_fused(make_env, modes, hp, iters, backend, seed):
    env, roster, rng = _roster(make_env, modes, seed)
    runner = FusedRunner.from_roster(env, roster, hp, backend=backend)
    shape = (2, hp.batch, env.horizon, len(roster))
    t0 = time.perf_counter()
    for _ in range(iters):
        runner.step(rng.random(shape))
    return time.perf_counter() - t0, runner.theta.copy()


def _time_tape(make_env, modes, hp, iters, seed):
    env, roster, rng = _roster(make_env, modes, seed)
    t0 = time.perf_counter()
    for _ in range(iters):
        lio_iteration(env, roster, hp, rng, engine="tape")
    return time.perf_counter() - t0, np.stack([a.policy_params.values for a in roster])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--iters", type=int, default=2000)
    ap.add_argument("--tape-iters", type=int, default=50, help="the tape engine is much slower")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    hp = Hyperparams(beta=0.1, alpha=0.01, eta_lr=0.1)
    backends = ["python"] + (["compiled"] if BACKEND == "compiled" else [])
    print(f"{'case':<22} {'engine':<10} {'iters':>6} {'us/iter':>10} {'speedup':>8}")
    for name, (make_env, modes) in CASES.items():
        base = None
        thetas = {}
        for backend in backends:
            secs, theta = _time_fused(make_env, modes, hp, args.iters, backend, args.seed)
            per = 1e6 * secs / args.iters
            base = base or per
            thetas[backend] = theta
            print(f"{name:<22} {backend:<10} {args.iters:>6} {per:>10.1f} {base / per:>7.1f}x")
        secs, _ = _time_tape(make_env, modes, hp, args.tape_iters, args.seed)
        per = 1e6 * secs / args.tape_iters
        print(f"{name:<22} {'tape':<10} {args.tape_iters:>6} {per:>10.1f} {base / per:>7.2f}x")
        if len(thetas) == 2:
            diff = float(np.abs(thetas["python"] - thetas["compiled"]).max())
            print(f"{'':<22} max |theta_python - theta_compiled| = {diff:.3g}")
    if BACKEND != "compiled":
        print("compiled extension not available; only the python fallback was timed")


if __name__ == "__main__":
    main()
