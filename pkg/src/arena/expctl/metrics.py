"""Run-level metrics: convergence detection, windowed success, incentive probe."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from arena.envs import DOOR, LEVER

DEFAULT_WINDOW = 1000
DEFAULT_THRESHOLD = 0.95


def windowed_rate(series, window: int) -> np.ndarray:
    """Trailing-window means; entry ``k`` covers ``series[k : k + window]``."""
    x = np.asarray(series, dtype=np.float64)
    if window < 1:
        raise ValueError("window must be >= 1")
    if x.size < window:
        return np.zeros(0)
    c = np.concatenate([[0.0], np.cumsum(x)])
    return (c[window:] - c[:-window]) / window


def convergence_episode(success_series, window: int = DEFAULT_WINDOW,
                        threshold: float = DEFAULT_THRESHOLD) -> int | None:
    """Smallest ``e >= window - 1`` whose trailing window mean reaches ``threshold``.

    Counts are compared as integers (``sum >= threshold * window``) so the
    result does not depend on floating-point accumulation order.
    """
    if window < 1 or not 0.0 < threshold <= 1.0:
        raise ValueError("need window >= 1 and threshold in (0, 1]")
    x = np.asarray(success_series, dtype=np.int64)
    if x.size < window:
        return None
    c = np.concatenate([[0], np.cumsum(x)])
    sums = c[window:] - c[:-window]
    hits = np.flatnonzero(sums >= threshold * window)
    return int(hits[0]) + window - 1 if hits.size else None


def final_rate(series, window: int = DEFAULT_WINDOW) -> float | None:
    x = np.asarray(series, dtype=np.float64)
    if x.size == 0:
        return None
    return float(x[-window:].mean())


@dataclass(frozen=True)
class ProbeRow:
    agent: int
    role: str
    action: int
    mean_incentive_received: float
    count: int


def episode_roles(actions, success: bool, kind: str = "er") -> list[str]:
    """Role of every agent in one episode.

    In Escape Room the final-step target decides: ``door`` for agents that
    exited, ``lever`` for agents holding the lever, ``other`` otherwise.
    IPD has no roles; every agent is ``player``.
    """
    actions = np.asarray(actions)
    n = actions.shape[1]
    if kind != "er" or actions.shape[0] == 0:
        return ["player"] * n
    last = actions[-1]
    roles = []
    for j in range(n):
        if success and last[j] == DOOR:
            roles.append("door")
        elif last[j] == LEVER:
            roles.append("lever")
        else:
            roles.append("other")
    return roles


def assign_roles(episodes, kind: str = "er") -> list[str]:
    """Majority role per agent over ``(actions, success)`` episodes."""
    tallies: dict[int, dict[str, int]] = {}
    for actions, success in episodes:
        for j, role in enumerate(episode_roles(actions, success, kind)):
            t = tallies.setdefault(j, {})
            t[role] = t.get(role, 0) + 1
    # ties break alphabetically so the result is deterministic
    return [min(t, key=lambda r: (-t[r], r)) for _, t in sorted(tallies.items())]


def incentive_probe(records, roles=None) -> list[ProbeRow]:
    """Mean incoming incentive per ``(agent, action)``.

    ``records`` yields ``(agent, action, incentive_received)`` triples;
    ``roles`` maps agent index to a role label (defaults to ``"-"``).
    """
    sums: dict[tuple[int, int], list] = {}
    for agent, action, inc in records:
        acc = sums.setdefault((int(agent), int(action)), [])
        acc.append(float(inc))
    rows = []
    for (agent, action), vals in sorted(sums.items()):
        role = roles[agent] if roles is not None and agent < len(roles) else "-"
        rows.append(ProbeRow(agent, role, action, float(np.mean(vals)), len(vals)))
    return rows


def pool_probe(rows) -> dict[tuple[str, int], tuple[float, int]]:
    """Count-weighted mean per ``(role, action)`` across probe rows."""
    acc: dict[tuple[str, int], list[float]] = {}
    for r in rows:
        s = acc.setdefault((r.role, r.action), [0.0, 0])
        s[0] += r.mean_incentive_received * r.count
        s[1] += r.count
    return {k: (v[0] / v[1], int(v[1])) for k, v in sorted(acc.items()) if v[1]}


def role_mean(rows, role: str, action: int | None = None) -> float | None:
    """Count-weighted mean incentive for one role, optionally one action."""
    total, count = 0.0, 0
    for r in rows:
        if r.role == role and (action is None or r.action == action):
            total += r.mean_incentive_received * r.count
            count += r.count
    return total / count if count else None
