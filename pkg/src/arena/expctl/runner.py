"""Seeded experiment execution."""
from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from arena.agents import build_roster
from arena.envs import er_new, ipd_new
from arena.expctl import outputs
from arena.expctl.config import RunConfig, dump_config
from arena.expctl.metrics import assign_roles, convergence_episode, final_rate, incentive_probe
from arena.learner import Hyperparams, lio_iteration

log = logging.getLogger(__name__)


@dataclass
class RunRecords:
    """Per-episode metrics of one seeded run, stored column-wise."""

    kind: str
    success: np.ndarray          # (E,) int8
    lengths: np.ndarray          # (E,) int64
    env_return: np.ndarray       # (E, N)
    total_return: np.ndarray
    inc_given: np.ndarray
    inc_received: np.ndarray
    actions: np.ndarray          # (E, T, N) int8, padded past ``lengths``
    received: np.ndarray         # (E, T, N) per-step incoming gifts
    probe_start: int = 0

    @classmethod
    def empty(cls, kind, episodes, horizon, n) -> "RunRecords":
        z = lambda: np.zeros((episodes, n))
        return cls(kind, np.zeros(episodes, dtype=np.int8), np.zeros(episodes, dtype=np.int64),
                   z(), z(), z(), z(), np.zeros((episodes, horizon, n), dtype=np.int8),
                   np.zeros((episodes, horizon, n)))

    @property
    def n_episodes(self) -> int:
        return len(self.success)

    @property
    def n_agents(self) -> int:
        return self.env_return.shape[1]

    def success_column(self) -> list:
        if self.kind != "er":
            return [None] * self.n_episodes
        return [int(s) for s in self.success]

    def step_episodes(self) -> range:
        """Episodes whose per-step records are kept for the incentive probe."""
        return range(self.probe_start, self.n_episodes)

    def step_records(self):
        """``(agent, action, incentive_received)`` over the probe episodes."""
        for e in self.step_episodes():
            for t in range(self.lengths[e]):
                for j in range(self.n_agents):
                    yield j, int(self.actions[e, t, j]), float(self.received[e, t, j])

    def roles(self) -> list[str]:
        eps = [(self.actions[e, :self.lengths[e]], bool(self.success[e])) for e in self.step_episodes()]
        return assign_roles(eps, self.kind)


@dataclass
class RunSummary:
    preset: str
    seed: int
    convergence_episode: int | None
    final_success_rate: float | None
    adversary_top_reward: bool | None
    modes: list[str]
    mean_env_return: np.ndarray
    mean_total_return: np.ndarray


def make_env(cfg: RunConfig):
    if cfg.env == "er":
        return er_new(cfg.n_agents, cfg.m_lever, cfg.max_steps)
    return ipd_new(cfg.episode_length)


def hyperparams(cfg: RunConfig) -> Hyperparams:
    return Hyperparams(gamma=cfg.gamma, beta=cfg.beta, alpha=cfg.alpha, eta_lr=cfg.eta_lr, batch=cfg.batch)


def summarize(cfg: RunConfig, records: RunRecords) -> RunSummary:
    w = cfg.window
    n = records.n_agents
    if records.n_episodes:
        env_mean = records.env_return[-w:].mean(axis=0)
        total_mean = records.total_return[-w:].mean(axis=0)
    else:
        env_mean = np.zeros(n)
        total_mean = np.zeros(n)
    conv = rate = None
    if cfg.env == "er":
        conv = convergence_episode(records.success, w, cfg.threshold)
        rate = final_rate(records.success, w)
    adv = next((j for j, m in enumerate(cfg.modes) if m.is_adversary), None)
    top = None
    if adv is not None and records.n_episodes:
        others = np.delete(env_mean, adv)
        top = bool(env_mean[adv] > others.max())
    return RunSummary(cfg.preset, cfg.seed, conv, rate, top, [m.value for m in cfg.modes],
                      env_mean, total_mean)


def run_experiment(cfg: RunConfig, backend: str | None = None) -> tuple[RunRecords, RunSummary]:
    """Train one seeded run; fully determined by ``cfg``."""
    cfg.validate()
    env = make_env(cfg)
    hp = hyperparams(cfg)
    rng = np.random.default_rng(cfg.seed)
    roster = build_roster(env, cfg.modes, rng, policy_hidden=cfg.policy_hidden,
                          incentive_hidden=cfg.incentive_hidden, r_max=cfg.r_max,
                          c_adv=cfg.adversary_c_adv, incentive_out_bias=cfg.incentive_bias,
                          policy_out_scale=cfg.policy_init_scale)
    n, horizon = cfg.n_agents, env.horizon
    rec = RunRecords.empty(env.kind, cfg.episodes, horizon, n)
    shape = (2, hp.batch, horizon, n)

    if cfg.engine == "fused":
        from arena.kernels import FusedRunner
        runner = FusedRunner.from_roster(env, roster, hp, backend=backend)
        for e in range(cfg.episodes):
            length, success = runner.step(rng.random(shape))
            rec.success[e] = success
            rec.lengths[e] = length
            rec.env_return[e], rec.total_return[e], rec.inc_given[e], rec.inc_received[e] = runner.out_ep
            rec.actions[e, :length] = runner.out_actions[:length]
            rec.received[e, :length] = runner.out_recv[:length]
        runner.write_back(roster)
    else:
        for e in range(cfg.episodes):
            m = lio_iteration(env, roster, hp, rng, engine="tape")
            rec.success[e] = m.success
            rec.lengths[e] = m.length
            rec.env_return[e], rec.total_return[e] = m.env_return, m.total_return
            rec.inc_given[e], rec.inc_received[e] = m.inc_given, m.inc_received
            rec.actions[e, :m.length] = m.actions
            rec.received[e, :m.length] = m.received

    summary = summarize(cfg, rec)
    if summary.convergence_episode is not None:
        rec.probe_start = summary.convergence_episode - cfg.window + 1
    else:
        rec.probe_start = max(0, cfg.episodes - cfg.window)
    return rec, summary


def seed_dir(out_dir, seed: int) -> Path:
    return Path(out_dir) / f"seed_{seed}"


def emit_outputs(cfg: RunConfig, records: RunRecords, summary: RunSummary, out_dir) -> Path:
    """Write the per-seed files for one run and return its directory."""
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    (d / "config.txt").write_text(dump_config(cfg))
    outputs.write_episodes(d / "episodes.csv", records)
    outputs.write_steps(d / "steps.csv", records)
    outputs.write_summary(d / "summary.csv", [summary])
    outputs.write_returns(d / "returns.csv", [summary])
    outputs.write_probe(d / "probe.csv", incentive_probe(records.step_records(), records.roles()))
    outputs.write_charts(d, records, cfg.window)
    return d


def _run_one(cfg: RunConfig, write: bool):
    records, summary = run_experiment(cfg)
    if write:
        emit_outputs(cfg, records, summary, seed_dir(cfg.out_dir, cfg.seed))
    return records, summary


def run_seeds(cfg: RunConfig, n_seeds: int = 1, parallel: int = 1, write: bool = True):
    """Run seeds ``cfg.seed .. cfg.seed + n_seeds - 1`` and aggregate.

    Workers each own their run; results are joined in seed order, so the
    aggregate is identical for any ``parallel``.
    """
    cfgs = [dataclasses.replace(cfg, seed=cfg.seed + k) for k in range(n_seeds)]
    if parallel > 1 and n_seeds > 1:
        with ProcessPoolExecutor(max_workers=min(parallel, n_seeds)) as pool:
            results = list(pool.map(_run_one, cfgs, [write] * n_seeds))
    else:
        results = [_run_one(c, write) for c in cfgs]
    summaries = [s for _, s in results]
    if write:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(dump_config(cfg))
        outputs.write_summary(out / "summary.csv", summaries)
        outputs.write_returns(out / "returns.csv", summaries)
    for s in summaries:
        log.info("%s seed=%d convergence=%s final_success=%s", s.preset or "custom", s.seed,
                 s.convergence_episode, s.final_success_rate)
    return results
