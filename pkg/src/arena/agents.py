"""Agent roster: policy heads, manipulation modes, and reward assembly."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from arena.diffcore import Mlp, ParamVector, softmax
from arena.errors import ConfigError
from arena.incentive import FakeIncentive, IncentiveFunction

DEFAULT_POLICY_HIDDEN = 32


class AgentMode(str, enum.Enum):
    LIO = "lio"
    PG = "pg"
    PARTIAL = "partial"
    FAKE = "fake"
    BYPASS = "bypass"
    REVERSE = "reverse"

    @property
    def code(self) -> int:
        return MODE_CODES[self]

    @property
    def is_adversary(self) -> bool:
        return self in (AgentMode.PARTIAL, AgentMode.FAKE, AgentMode.BYPASS, AgentMode.REVERSE)


MODE_CODES = {m: k for k, m in enumerate(AgentMode)}


class Channel(str, enum.Enum):
    LEARNED = "learned"
    CONSTANT = "constant"
    NONE = "none"


def gives_incentives(agent_or_mode) -> Channel:
    mode = agent_or_mode.mode if isinstance(agent_or_mode, Agent) else AgentMode(agent_or_mode)
    if mode in (AgentMode.LIO, AgentMode.PARTIAL, AgentMode.REVERSE):
        return Channel.LEARNED
    if mode is AgentMode.FAKE:
        return Channel.CONSTANT
    return Channel.NONE


def receives_incentives(mode: AgentMode) -> bool:
    """Whether incoming gifts enter the agent's learning reward."""
    return mode not in (AgentMode.PARTIAL, AgentMode.FAKE)


def update_sign(mode: AgentMode) -> int:
    """+1 gradient ascent, -1 descent (reverse policy), 0 frozen (bypass)."""
    if mode is AgentMode.BYPASS:
        return 0
    return -1 if mode is AgentMode.REVERSE else 1


@dataclass
class Agent:
    index: int
    mode: AgentMode
    policy_net: Mlp
    policy_params: ParamVector
    incentive: IncentiveFunction | FakeIncentive | None = None

    @property
    def trainable(self) -> bool:
        return self.mode is not AgentMode.BYPASS

    @property
    def learned_incentive(self) -> IncentiveFunction | None:
        return self.incentive if isinstance(self.incentive, IncentiveFunction) else None

    def probs(self, obs) -> np.ndarray:
        return softmax(self.policy_net(self.policy_params, obs))


@dataclass
class AgentRoster:
    agents: list[Agent]
    n_actions: int
    obs_dim: int
    extras: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.agents)

    def __iter__(self):
        return iter(self.agents)

    def __getitem__(self, i) -> Agent:
        return self.agents[i]

    @property
    def modes(self) -> list[AgentMode]:
        return [a.mode for a in self.agents]

    def adversary(self) -> int | None:
        adv = [a.index for a in self.agents if a.mode.is_adversary]
        return adv[0] if adv else None

    def snapshot(self) -> "AgentRoster":
        """Deep copy of all parameters."""
        agents = []
        for a in self.agents:
            inc = a.incentive
            if isinstance(inc, IncentiveFunction):
                inc = IncentiveFunction(inc.giver, inc.n_agents, inc.n_actions, inc.obs_dim,
                                        inc.params.copy(), inc.r_max, inc.hidden)
            agents.append(Agent(a.index, a.mode, a.policy_net, a.policy_params.copy(), inc))
        return AgentRoster(agents, self.n_actions, self.obs_dim, dict(self.extras))


def build_roster(env, modes, rng: np.random.Generator, *, policy_hidden=DEFAULT_POLICY_HIDDEN,
                 incentive_hidden=16, r_max=3.0, c_adv=50.0, incentive_out_bias=0.0,
                 policy_out_scale=0.1) -> AgentRoster:
    """Initialize one agent per mode. Parameters are drawn from ``rng`` in agent order."""
    modes = [AgentMode(m) for m in modes]
    n = env.n_agents
    if len(modes) != n:
        raise ConfigError(f"roster has {len(modes)} agents but the environment has {n}")
    if env.kind == "ipd" and AgentMode.BYPASS in modes:
        raise ConfigError("bypass mode needs a no-op action; IPD has none")
    net = Mlp(env.obs_dim, policy_hidden, env.n_actions)
    agents = []
    for i, mode in enumerate(modes):
        theta = net.init_params(rng, out_scale=policy_out_scale)
        channel = gives_incentives(mode)
        if channel is Channel.LEARNED:
            inc = IncentiveFunction.create(i, n, env.n_actions, env.obs_dim, rng, r_max=r_max,
                                           hidden=incentive_hidden, out_bias=incentive_out_bias)
        elif channel is Channel.CONSTANT:
            inc = FakeIncentive(i, n, c_adv)
        else:
            inc = None
        agents.append(Agent(i, mode, net, theta, inc))
    return AgentRoster(agents, env.n_actions, env.obs_dim,
                       {"r_max": r_max, "incentive_hidden": incentive_hidden, "c_adv": c_adv})


def sample_categorical(probs, u: float) -> int:
    """Inverse-CDF draw: first index whose running sum exceeds ``u``."""
    c = 0.0
    for a, p in enumerate(probs):
        c += p
        if u < c:
            return a
    return len(probs) - 1


def select_action(agent: Agent, obs, rng, stay_action: int | None = None) -> int:
    """Sample from the policy; bypass agents return ``stay_action`` without sampling.

    ``rng`` is either a numpy ``Generator`` or a pre-drawn uniform in [0, 1).
    """
    if agent.mode is AgentMode.BYPASS:
        if stay_action is None:
            raise ConfigError("bypass agent needs a stay action")
        return int(stay_action)
    u = rng.random() if isinstance(rng, np.random.Generator) else float(rng)
    return sample_categorical(agent.probs(obs), u)


def assemble_total_reward(recipient: Agent | AgentMode, env_reward: float, incoming) -> float:
    """Env reward plus incoming gifts, unless the recipient discards them.

    ``incoming`` holds the gifts from every other agent (self excluded). A fake
    sender's entry is simply its constant.
    """
    mode = recipient.mode if isinstance(recipient, Agent) else AgentMode(recipient)
    if not receives_incentives(mode):
        return float(env_reward)
    total = float(env_reward)
    for x in incoming:
        total += float(x)
    return total
