"""Fused LIO iteration kernel.

The compiled extension ``_fused`` is used when it imports; otherwise the
numpy implementation in ``_pyfused``. Set ``ARENA_BACKEND=python`` to force
the fallback.
"""
from __future__ import annotations

import os

import numpy as np

from arena.kernels import _pyfused

BACKEND = "python"
_iterate = _pyfused.iterate
if os.environ.get("ARENA_BACKEND", "").lower() != "python":
    try:
        from arena.kernels import _fused
    except ImportError:  # extension not built
        _fused = None
    else:
        BACKEND = "compiled"
        _iterate = _fused.iterate


def get_iterate(backend: str | None = None):
    if backend is None:
        return _iterate
    if backend == "python":
        return _pyfused.iterate
    if backend == "compiled":
        from arena.kernels import _fused as ext
        return ext.iterate
    raise ValueError(f"unknown backend {backend!r}")


class FusedRunner:
    """Packs a roster into flat arrays and steps it with the fused kernel."""

    def __init__(self, env, modes, theta, eta, hp, *, r_max, c_adv, policy_hidden,
                 incentive_hidden, backend=None):
        from arena.agents import AgentMode

        n = env.n_agents
        self.env = env
        self.n = n
        self.horizon = env.horizon
        self.batch = hp.batch
        self.layout = np.array([0 if env.kind == "er" else 1, n, getattr(env, "m_lever", 0),
                                env.horizon, env.n_actions, env.obs_dim, policy_hidden,
                                incentive_hidden, hp.batch], dtype=np.int64)
        self.hp = np.array([hp.gamma, hp.beta, hp.alpha, hp.eta_lr, r_max, c_adv], dtype=np.float64)
        self.modes = np.array([AgentMode(m).code for m in modes], dtype=np.int64)
        self.theta = np.ascontiguousarray(theta, dtype=np.float64)
        self.eta = np.ascontiguousarray(eta, dtype=np.float64)
        self.out_ep = np.zeros((4, n))
        self.out_actions = np.zeros((env.horizon, n), dtype=np.int64)
        self.out_recv = np.zeros((env.horizon, n))
        self._iterate = get_iterate(backend)
        self.backend = backend or BACKEND
        self._ws = None
        if self.backend == "compiled":
            from arena.kernels import _fused as ext
            self._ws = ext.Workspace(self.layout)

    @classmethod
    def from_roster(cls, env, roster, hp, backend=None) -> "FusedRunner":
        theta = np.stack([a.policy_params.values for a in roster])
        inc_hidden = roster.extras.get("incentive_hidden", 16)
        n_in = env.obs_dim + (env.n_agents - 1) * env.n_actions
        p_inc = inc_hidden * n_in + inc_hidden + (env.n_agents - 1) * (inc_hidden + 1)
        eta = np.zeros((len(roster), p_inc))
        for a in roster:
            if a.learned_incentive is not None:
                eta[a.index] = a.incentive.params.values
        return cls(env, roster.modes, theta, eta, hp, r_max=roster.extras.get("r_max", 3.0),
                   c_adv=roster.extras.get("c_adv", 50.0),
                   policy_hidden=roster[0].policy_net.n_hidden, incentive_hidden=inc_hidden,
                   backend=backend)

    def write_back(self, roster) -> None:
        for a in roster:
            a.policy_params = a.policy_params.with_values(self.theta[a.index])
            if a.learned_incentive is not None:
                a.incentive.params = a.incentive.params.with_values(self.eta[a.index])

    def step(self, uniforms) -> tuple[int, bool]:
        """Advance one iteration; results land in ``out_ep``/``out_actions``/``out_recv``."""
        length, success = self._iterate(self.layout, self.hp, self.modes, self.theta, self.eta,
                                        np.ascontiguousarray(uniforms, dtype=np.float64),
                                        self.out_ep, self.out_actions, self.out_recv, self._ws)
        return int(length), bool(success)

    def iterate(self, uniforms):
        from arena.learner import EpisodeMetrics

        length, success = self.step(uniforms)
        return EpisodeMetrics(success, length, self.out_ep[0].copy(), self.out_ep[1].copy(),
                              self.out_ep[2].copy(), self.out_ep[3].copy(),
                              self.out_actions[:length].copy(), self.out_recv[:length].copy())
