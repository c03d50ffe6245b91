"""Command-line entry point: ``arena run | check-gradients | probe``.

Exit codes: 0 success, 1 config error, 2 contract violation, 3 gradient-check
failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from arena.errors import ConfigError, ContractViolation, GradientCheckFailure

EXIT_OK, EXIT_CONFIG, EXIT_CONTRACT, EXIT_GRADIENT = 0, 1, 2, 3


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _nonneg(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="arena", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log per-seed progress")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train one or more seeded runs")
    run.add_argument("--config", required=True, help="key = value config file")
    run.add_argument("--preset", help="base preset layered under the config file")
    run.add_argument("--seeds", type=_positive, default=1, help="number of consecutive seeds")
    run.add_argument("--parallel", type=_positive, default=1, help="worker processes")
    run.add_argument("--episodes", type=_nonneg, help="override the episode budget")
    run.add_argument("--out", help="output directory (overrides out_dir)")

    gc = sub.add_parser("check-gradients", help="finite-difference gradient suites")
    gc.add_argument("--trials", type=_positive, default=50, help="random draws per suite")
    gc.add_argument("--seed", type=_nonneg, default=0)

    pr = sub.add_parser("probe", help="incentive-per-action table from stored step records")
    pr.add_argument("--in", dest="in_dir", required=True, help="run directory or seed directory")
    return p


def cmd_run(args) -> int:
    from arena.expctl.config import load_config
    from arena.expctl.runner import run_seeds

    overrides = {}
    if args.episodes is not None:
        overrides["episodes"] = args.episodes
    if args.out is not None:
        overrides["out_dir"] = args.out
    cfg = load_config(args.config, preset=args.preset, overrides=overrides)
    results = run_seeds(cfg, n_seeds=args.seeds, parallel=args.parallel)
    for _, s in results:
        conv = "-" if s.convergence_episode is None else s.convergence_episode
        rate = "-" if s.final_success_rate is None else f"{s.final_success_rate:.3f}"
        print(f"seed {s.seed}: convergence {conv}, final success {rate}")
    print(f"outputs in {Path(cfg.out_dir).resolve()}")
    return EXIT_OK


def cmd_check_gradients(args) -> int:
    from arena.gradcheck import run_all

    results = run_all(args.trials, args.seed)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise GradientCheckFailure(f"failed suites: {', '.join(failed)}")
    return EXIT_OK


def probe_dir(in_dir: Path) -> list[Path]:
    """Write probe.csv for every seed directory under ``in_dir`` (or ``in_dir`` itself).

    For a multi-seed directory a pooled ``probe.csv`` covering the converged
    seeds is also written at the top level.
    """
    from arena.expctl import outputs
    from arena.expctl.metrics import assign_roles, incentive_probe

    seed_dirs = [in_dir] if (in_dir / "steps.csv").exists() else sorted(
        d for d in in_dir.glob("seed_*") if (d / "steps.csv").exists())
    if not seed_dirs:
        raise ConfigError(f"--in: no steps.csv found under {in_dir}")
    written, pooled = [], []
    for d in seed_dirs:
        steps = list(outputs.read_steps(d / "steps.csv"))
        kind = "er"
        eps: dict[int, dict] = {}
        for e, t, j, a, _ in steps:
            eps.setdefault(e, {}).setdefault(t, {})[j] = a
        cfg_text = (d / "config.txt").read_text() if (d / "config.txt").exists() else ""
        if "env = ipd" in cfg_text:
            kind = "ipd"
        success = {}
        if (d / "episodes.csv").exists():
            for row in outputs.read_csv(d / "episodes.csv"):
                success[int(row["episode"])] = row["success"] == "1"
        n = 1 + max((j for _, _, j, _, _ in steps), default=-1)
        ep_actions = [([[by_t[t][j] for j in range(n)] for t in sorted(by_t)], success.get(e, False))
                      for e, by_t in sorted(eps.items())]
        roles = assign_roles(ep_actions, kind) if ep_actions else []
        rows = incentive_probe(((j, a, inc) for _, _, j, a, inc in steps), roles)
        written.append(outputs.write_probe(d / "probe.csv", rows))
        summary = outputs.read_csv(d / "summary.csv") if (d / "summary.csv").exists() else []
        if kind == "ipd" or any(r["convergence_episode"] for r in summary):
            pooled.extend(rows)
    if len(seed_dirs) > 1 or seed_dirs[0] != in_dir:
        merged: dict[tuple, list] = {}
        for r in pooled:
            acc = merged.setdefault((r.agent, r.role, r.action), [0.0, 0])
            acc[0] += r.mean_incentive_received * r.count
            acc[1] += r.count
        from arena.expctl.metrics import ProbeRow
        rows = [ProbeRow(a, role, act, s / c, c) for (a, role, act), (s, c) in sorted(merged.items())]
        written.append(outputs.write_probe(in_dir / "probe.csv", rows))
    return written


def cmd_probe(args) -> int:
    for p in probe_dir(Path(args.in_dir)):
        print(p)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": cmd_run, "check-gradients": cmd_check_gradients, "probe": cmd_probe}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GradientCheckFailure as exc:
        print(f"gradient check failed: {exc}", file=sys.stderr)
        return EXIT_GRADIENT
    except ContractViolation as exc:
        print(f"contract violation: {exc}", file=sys.stderr)
        return EXIT_CONTRACT


if __name__ == "__main__":
    sys.exit(main())
