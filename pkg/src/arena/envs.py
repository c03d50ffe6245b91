"""Escape Room ER(N, M) and memory-1 Iterated Prisoner's Dilemma.

Both environments are pure transition functions over immutable states:
``step(state, joint_action) -> (next_state, StepOutcome)``. Nothing random
happens inside them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from arena.errors import ConfigError, ContractViolation

START, LEVER, DOOR = 0, 1, 2
ER_POSITIONS = ("start", "lever", "door")
MOVE_COST = -1.0
EXIT_REWARD = 10.0

C, D = 0, 1
IPD_ACTIONS = ("C", "D")
# (own, other) -> (own reward, other reward)
IPD_PAYOFF = {
    (C, C): (-1.0, -1.0),
    (C, D): (-3.0, 0.0),
    (D, C): (0.0, -3.0),
    (D, D): (-2.0, -2.0),
}
IPD_INITIAL = -1


@dataclass(frozen=True)
class StepOutcome:
    observations: tuple[np.ndarray, ...]
    env_rewards: tuple[float, ...]
    done: bool
    exited: tuple[bool, ...] = ()


@dataclass(frozen=True)
class ErState:
    positions: tuple[int, ...]
    step_index: int = 0
    terminated: bool = False


@dataclass(frozen=True)
class IpdState:
    last_joint_action: tuple[int, int] | int = IPD_INITIAL
    round_index: int = 0
    terminated: bool = False


class EscapeRoom:
    """ER(N, M): the door opens when at least ``m_lever`` agents stand at the lever.

    Actions are target positions (start, lever, door). Moving costs -1; an
    agent targeting the door while it is open gets +10 and the episode ends.
    The door check runs after all agents have moved.
    """

    kind = "er"
    n_actions = 3
    max_env_reward = EXIT_REWARD

    def __init__(self, n_agents: int, m_lever: int, max_steps: int = 5):
        if n_agents < 2:
            raise ConfigError(f"n_agents must be >= 2, got {n_agents}")
        if not 1 <= m_lever < n_agents:
            raise ConfigError(f"m_lever must satisfy 1 <= M < N (M={m_lever}, N={n_agents})")
        if max_steps < 1:
            raise ConfigError(f"max_steps must be >= 1, got {max_steps}")
        self.n_agents = n_agents
        self.m_lever = m_lever
        self.max_steps = max_steps

    @property
    def horizon(self) -> int:
        return self.max_steps

    @property
    def obs_dim(self) -> int:
        return 3 * self.n_agents

    def __repr__(self):
        return f"EscapeRoom(N={self.n_agents}, M={self.m_lever}, max_steps={self.max_steps})"

    def reset(self) -> ErState:
        return ErState(positions=(START,) * self.n_agents)

    def stay_action(self, state: ErState, agent: int) -> int:
        return state.positions[agent]

    def door_open(self, positions) -> bool:
        return sum(1 for p in positions if p == LEVER) >= self.m_lever

    def observe(self, state: ErState, agent: int) -> np.ndarray:
        if not 0 <= agent < self.n_agents:
            raise ContractViolation(f"agent index {agent} out of range")
        order = [agent] + [j for j in range(self.n_agents) if j != agent]
        obs = np.zeros(self.obs_dim)
        for slot, j in enumerate(order):
            obs[3 * slot + state.positions[j]] = 1.0
        return obs

    def step(self, state: ErState, joint_action) -> tuple[ErState, StepOutcome]:
        if state.terminated:
            raise ContractViolation("step called on a terminated episode")
        actions = tuple(int(a) for a in joint_action)
        if len(actions) != self.n_agents or any(a not in (START, LEVER, DOOR) for a in actions):
            raise ContractViolation(f"invalid joint action {joint_action!r}")
        rewards = [MOVE_COST if a != p else 0.0 for a, p in zip(actions, state.positions)]
        is_open = self.door_open(actions)
        exited = tuple(is_open and a == DOOR for a in actions)
        for j, ex in enumerate(exited):
            if ex:
                rewards[j] += EXIT_REWARD
        step_index = state.step_index + 1
        done = any(exited) or step_index >= self.max_steps
        nxt = ErState(positions=actions, step_index=step_index, terminated=done)
        obs = tuple(self.observe(nxt, j) for j in range(self.n_agents))
        return nxt, StepOutcome(obs, tuple(rewards), done, exited)


class IteratedPD:
    """Two-player memory-1 IPD; agents see last round's (own, other) actions."""

    kind = "ipd"
    n_agents = 2
    n_actions = 2
    obs_dim = 5
    max_env_reward = 0.0

    def __init__(self, episode_length: int = 5):
        if episode_length < 1:
            raise ConfigError(f"episode_length must be >= 1, got {episode_length}")
        self.episode_length = episode_length

    @property
    def horizon(self) -> int:
        return self.episode_length

    def __repr__(self):
        return f"IteratedPD(episode_length={self.episode_length})"

    def reset(self) -> IpdState:
        return IpdState()

    def stay_action(self, state, agent):
        raise ConfigError("IPD has no no-op action")

    def observe(self, state: IpdState, agent: int) -> np.ndarray:
        if agent not in (0, 1):
            raise ContractViolation(f"agent index {agent} out of range")
        obs = np.zeros(self.obs_dim)
        if state.last_joint_action == IPD_INITIAL:
            obs[0] = 1.0
        else:
            own, other = state.last_joint_action[agent], state.last_joint_action[1 - agent]
            obs[1 + 2 * own + other] = 1.0
        return obs

    def step(self, state: IpdState, joint_action) -> tuple[IpdState, StepOutcome]:
        if state.terminated or state.round_index >= self.episode_length:
            raise ContractViolation("step called on a finished IPD episode")
        a0, a1 = (int(a) for a in joint_action)
        if a0 not in (C, D) or a1 not in (C, D):
            raise ContractViolation(f"invalid joint action {joint_action!r}")
        rewards = IPD_PAYOFF[(a0, a1)]
        done = state.round_index + 1 == self.episode_length
        nxt = IpdState((a0, a1), state.round_index + 1, done)
        obs = (self.observe(nxt, 0), self.observe(nxt, 1))
        return nxt, StepOutcome(obs, rewards, done, (False, False))


def er_new(n_agents: int, m_lever: int, max_steps: int = 5) -> EscapeRoom:
    return EscapeRoom(n_agents, m_lever, max_steps)


def ipd_new(episode_length: int = 5) -> IteratedPD:
    return IteratedPD(episode_length)
