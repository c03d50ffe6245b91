"""Finite-difference suites behind ``arena check-gradients``.

Three suites, each over independent random parameter draws:

* ``hypergradient``: the tape's incentive gradient on a one-step two-agent
  game against central differences of the whole two-phase pipeline. The
  perturbed run replays the same uniforms for the old trajectory and keeps
  the new trajectory's actions frozen, so only the ``eta`` perturbation moves
  the objective.
* ``policy_gradient``: the inner increment on a single step against
  differences of ``beta * G_0 * log pi(a_0 | o_0)``.
* ``gift_cost``: the tape gradient of the discounted L1 gift cost.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from arena.agents import build_roster, update_sign
from arena.diffcore import Tape, finite_diff_check, softmax
from arena.envs import er_new, ipd_new
from arena.incentive import gift_cost
from arena.learner import (Hyperparams, LioTape, Trajectory, generate_trajectory, incentive_hypergradient,
                           policy_step, policy_update, returns)

HYPER_RTOL = 1e-4
LOCAL_RTOL = 1e-5
FD_STEP = 1e-5


@dataclass
class SuiteResult:
    name: str
    trials: int
    rtol: float
    max_rel_err: float = 0.0
    failures: list[int] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return not self.failures

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name}: {self.trials} draws, max rel err {self.max_rel_err:.3e} "
                f"(rtol {self.rtol:g}), {self.seconds:.1f}s")


def _toy(rng: np.random.Generator, batch: int = 1, game: str = "ipd"):
    """Random small game with small nets.

    ``ipd`` is a one-round IPD with two learning agents; ``er42`` is a
    five-step ER(4,2) with a mixed roster, used to exercise recipient
    indexing with more than one recipient.
    """
    if game == "ipd":
        env, modes = ipd_new(episode_length=1), ["lio", "lio"]
    elif game == "er42":
        env, modes = er_new(4, 2, 5), ["lio", "pg", "partial", "lio"]
    else:
        raise ValueError(f"unknown toy game {game!r}")
    roster = build_roster(env, modes, rng, policy_hidden=4, incentive_hidden=4,
                          r_max=float(rng.uniform(1.0, 4.0)), policy_out_scale=1.0,
                          incentive_out_bias=float(rng.normal()))
    hp = Hyperparams(gamma=float(rng.uniform(0.8, 1.0)), beta=float(rng.uniform(0.05, 1.0)),
                     alpha=float(rng.uniform(0.0, 0.5)), eta_lr=0.01, batch=batch)
    return env, roster, hp


def _frozen_objective(giver: int, roster, old, new_actions, hp, env) -> float:
    """Giver's objective with updated policies and the new actions held fixed."""
    updated = {a.index: policy_update(a, old, hp) for a in roster if update_sign(a.mode)}
    obj = 0.0
    for tr in new_actions:
        g_ret = returns(tr.env_rewards(giver), hp.gamma)
        for j, theta_hat in updated.items():
            if j == giver:
                continue
            agent = roster[j]
            for t, step in enumerate(tr.steps):
                logp = np.log(softmax(agent.policy_net(theta_hat, step.obs[j])))[step.actions[j]]
                obj += logp * g_ret[t] / len(new_actions)
    f = roster[giver].incentive
    for tr in old:
        pairs = [(s.obs[giver], tr.others_actions(t, giver)) for t, s in enumerate(tr.steps)]
        obj -= hp.alpha * float(gift_cost(f, pairs, hp.gamma)) / len(old)
    return obj


def hypergradient_trial(seed: int, giver: int = 0, batch: int = 1, game: str = "ipd"):
    rng = np.random.default_rng(seed)
    env, roster, hp = _toy(rng, batch, game)
    u = rng.random((2, batch, env.horizon, len(roster)))
    old = [generate_trajectory(env, roster, u[0, b]) for b in range(batch)]

    ctx = LioTape(roster)
    updated = {a.index: ctx.tape.add(policy_step(a, old, hp, update_sign(a.mode), ctx), a.policy_params.values)
               for a in roster if update_sign(a.mode)}
    new_roster = roster.snapshot()
    for j, node in updated.items():
        new_roster[j].policy_params = roster[j].policy_params.with_values(node.value)
    new = [generate_trajectory(env, new_roster, u[1, b], record_incentives=False) for b in range(batch)]
    analytic = incentive_hypergradient(roster[giver], old, new, updated, hp, ctx)

    inc = roster[giver].incentive
    eta0 = inc.params

    def objective(values):
        inc.params = eta0.with_values(values)
        # gifts are recomputed from the perturbed eta, actions stay frozen
        replay = [Trajectory(_regift(env, roster, tr.steps)) for tr in old]
        try:
            return _frozen_objective(giver, roster, replay, new, hp, env)
        finally:
            inc.params = eta0

    return finite_diff_check(objective, eta0.values, analytic, step=FD_STEP, rtol=HYPER_RTOL)


def _regift(env, roster, steps):
    from arena.learner import Step, emit_incentives

    out = []
    n = len(roster)
    for s in steps:
        mat = np.zeros((n, n))
        for a in roster:
            if a.incentive is None:
                continue
            others = [s.actions[k] for k in range(n) if k != a.index]
            gifts = emit_incentives(a, s.obs[a.index], others)
            mat[a.index, [k for k in range(n) if k != a.index]] = gifts
        out.append(Step(s.state, s.obs, s.actions, s.env_rewards, mat, s.done, s.exited))
    return out


def policy_gradient_trial(seed: int):
    rng = np.random.default_rng(seed)
    env, roster, hp = _toy(rng)
    u = rng.random((env.horizon, len(roster)))
    tr = generate_trajectory(env, roster, u)
    agent = roster[0]
    step = tr.steps[0]
    from arena.learner import total_rewards

    g0 = returns(total_rewards(agent, tr), hp.gamma)[0]
    analytic = policy_step(agent, tr, hp)

    def f(theta):
        return hp.beta * g0 * np.log(softmax(agent.policy_net(theta, step.obs[0])))[step.actions[0]]

    return finite_diff_check(f, agent.policy_params.values, analytic, step=FD_STEP, rtol=LOCAL_RTOL)


def gift_cost_trial(seed: int):
    rng = np.random.default_rng(seed)
    env, roster, hp = _toy(rng)
    f = roster[0].incentive
    pairs = [(np.eye(env.obs_dim)[rng.integers(env.obs_dim)], [int(rng.integers(env.n_actions))])
             for _ in range(int(rng.integers(1, 6)))]
    tape = Tape()
    leaf = tape.leaf(f.params.values)
    analytic = tape.backward(gift_cost(f, pairs, hp.gamma, tape, params=leaf))[leaf]
    return finite_diff_check(lambda v: float(gift_cost(f, pairs, hp.gamma, params=f.params.with_values(v))),
                             f.params.values, analytic, step=FD_STEP, rtol=LOCAL_RTOL)


SUITES = {
    "hypergradient": (hypergradient_trial, HYPER_RTOL),
    "policy_gradient": (policy_gradient_trial, LOCAL_RTOL),
    "gift_cost": (gift_cost_trial, LOCAL_RTOL),
}


def run_suite(name: str, trials: int = 50, seed: int = 0) -> SuiteResult:
    fn, rtol = SUITES[name]
    res = SuiteResult(name, trials, rtol)
    t0 = time.perf_counter()
    for k in range(trials):
        report = fn(seed * 100003 + k)
        res.max_rel_err = max(res.max_rel_err, report.max_rel_err)
        if not report.passed:
            res.failures.append(k)
    res.seconds = time.perf_counter() - t0
    return res


def run_all(trials: int = 50, seed: int = 0) -> list[SuiteResult]:
    return [run_suite(name, trials, seed) for name in SUITES]
