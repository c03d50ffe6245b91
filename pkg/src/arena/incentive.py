"""Learned incentive functions, their L1 gift cost, and the fake constant channel."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from arena.diffcore import Mlp, ParamVector, Tape
from arena.errors import ConfigError

DEFAULT_R_MAX = 3.0
DEFAULT_HIDDEN = 16


class DominanceWarning(UserWarning):
    """The fake-incentive constant does not dominate the other reward sources."""


def incentive_input(obs: np.ndarray, actions_others, n_actions: int) -> np.ndarray:
    """Giver observation followed by one-hot actions of every other agent."""
    onehots = np.zeros(len(actions_others) * n_actions)
    for k, a in enumerate(actions_others):
        onehots[k * n_actions + int(a)] = 1.0
    return np.concatenate([np.asarray(obs, dtype=np.float64), onehots])


@dataclass
class IncentiveFunction:
    """``r_eta(o^i, a^-i)``: one bounded gift per other agent, in agent-index order."""

    giver: int
    n_agents: int
    n_actions: int
    obs_dim: int
    params: ParamVector
    r_max: float = DEFAULT_R_MAX
    hidden: int = DEFAULT_HIDDEN

    @property
    def net(self) -> Mlp:
        return Mlp(self.obs_dim + (self.n_agents - 1) * self.n_actions, self.hidden,
                   self.n_agents - 1, output="sigmoid", scale=self.r_max)

    @classmethod
    def create(cls, giver, n_agents, n_actions, obs_dim, rng, r_max=DEFAULT_R_MAX,
               hidden=DEFAULT_HIDDEN, out_bias=0.0) -> "IncentiveFunction":
        if r_max <= 0:
            raise ConfigError(f"r_max must be positive, got {r_max}")
        f = cls(giver, n_agents, n_actions, obs_dim, ParamVector.zeros(()), r_max, hidden)
        f.params = f.net.init_params(rng, out_bias=out_bias)
        return f

    @property
    def recipients(self) -> list[int]:
        return [j for j in range(self.n_agents) if j != self.giver]

    def _input(self, obs_i, actions_others):
        if len(actions_others) != self.n_agents - 1:
            raise ConfigError(
                f"expected {self.n_agents - 1} other-agent actions, got {len(actions_others)}")
        return incentive_input(obs_i, actions_others, self.n_actions)

    def __call__(self, obs_i, actions_others, params=None) -> np.ndarray:
        p = self.params if params is None else params
        return self.net(p, self._input(obs_i, actions_others))


def compute_incentives(f: IncentiveFunction, obs_i, actions_others, tape: Tape | None = None,
                       params=None):
    """Gifts for each recipient. On a tape, returns a node differentiable in ``params``.

    ``params`` defaults to ``f.params`` (lifted as a new leaf); pass an existing
    leaf to share it across many calls.
    """
    if tape is None:
        return f(obs_i, actions_others, params)
    p = f.params if params is None else params
    return f.net.forward(p, f._input(obs_i, actions_others), tape)


def gift_cost(f: IncentiveFunction, steps, gamma: float, tape: Tape | None = None, params=None):
    """Discounted L1 norm of emitted gifts, ``sum_t gamma^t |r_eta(o_t, a_t^-i)|_1``.

    ``steps`` yields ``(obs_i, actions_others)`` pairs in time order.
    """
    if tape is None:
        total = 0.0
        for t, (obs, others) in enumerate(steps):
            total += gamma ** t * float(np.abs(f(obs, others, params)).sum())
        return total
    if params is None:
        params = tape.leaf(f.params.values)
    total = None
    for t, (obs, others) in enumerate(steps):
        term = tape.scale(tape.sum(tape.abs(compute_incentives(f, obs, others, tape, params))), gamma ** t)
        total = term if total is None else tape.add(total, term)
    return tape.leaf(0.0) if total is None else total


@dataclass(frozen=True)
class FakeIncentive:
    """Constant gift ``c_adv`` to every other agent on every step; no parameters."""

    giver: int
    n_agents: int
    c_adv: float

    def __call__(self, *_ignored) -> np.ndarray:
        return np.full(self.n_agents - 1, float(self.c_adv))


def fake_incentive(c_adv: float, giver: int = 0, n_agents: int = 2) -> FakeIncentive:
    return FakeIncentive(giver, n_agents, c_adv)


def check_dominance(c_adv: float, max_env_reward: float, r_max: float) -> bool:
    """True when ``c_adv`` exceeds both the best env reward and the learned-gift bound.

    Emits :class:`DominanceWarning` otherwise; callers keep going.
    """
    ok = c_adv > max_env_reward and c_adv > r_max
    if not ok:
        warnings.warn(
            f"c_adv={c_adv} does not dominate env max {max_env_reward} and r_max {r_max}",
            DominanceWarning, stacklevel=2)
    return ok

