"""Trajectories, returns, the inner policy update and the incentive hypergradient.

Two engines run one LIO iteration:

* ``"tape"`` builds every quantity on a :class:`~arena.diffcore.Tape` and
  obtains the incentive gradient by reverse-mode through the recorded policy
  update. It is the reference and is used by the gradient checks.
* ``"fused"`` calls the kernel in :mod:`arena.kernels` (compiled when
  available), which computes the same update with hand-derived gradients.

Both consume the same uniform draws, so they agree to rounding error.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from arena.agents import (Agent, AgentMode, AgentRoster, Channel, assemble_total_reward,
                          gives_incentives, receives_incentives, sample_categorical, update_sign)
from arena.diffcore import Node, ParamVector, Tape, softmax
from arena.errors import ConfigError, ContractViolation
from arena.incentive import FakeIncentive, IncentiveFunction, compute_incentives, gift_cost


@dataclass(frozen=True)
class Hyperparams:
    gamma: float = 0.99
    beta: float = 0.1
    alpha: float = 0.1
    eta_lr: float = 0.01
    batch: int = 1

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.beta < 0 or self.alpha < 0 or self.eta_lr < 0:
            raise ConfigError("beta, alpha and eta_lr must be non-negative")
        if self.batch < 1:
            raise ConfigError(f"batch must be >= 1, got {self.batch}")


@dataclass
class Step:
    state: object
    obs: np.ndarray          # (N, obs_dim)
    actions: tuple[int, ...]
    env_rewards: np.ndarray  # (N,)
    incentives: np.ndarray   # (N, N), [giver, recipient]
    done: bool
    exited: tuple[bool, ...] = ()


@dataclass
class Trajectory:
    steps: list[Step] = field(default_factory=list)

    def __len__(self):
        return len(self.steps)

    @property
    def success(self) -> bool:
        return any(any(s.exited) for s in self.steps)

    def env_rewards(self, agent: int) -> np.ndarray:
        return np.array([s.env_rewards[agent] for s in self.steps])

    def incoming(self, t: int, recipient: int) -> np.ndarray:
        n = self.steps[t].incentives.shape[0]
        return np.array([self.steps[t].incentives[i, recipient] for i in range(n) if i != recipient])

    def others_actions(self, t: int, agent: int) -> list[int]:
        return [a for j, a in enumerate(self.steps[t].actions) if j != agent]


def returns(rewards, gamma: float) -> np.ndarray:
    """Discounted reward-to-go, accumulated backwards."""
    rewards = np.asarray(rewards, dtype=np.float64)
    out = np.zeros_like(rewards)
    acc = 0.0
    for t in range(rewards.size - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def emit_incentives(agent: Agent, obs_i, actions_others) -> np.ndarray:
    inc = agent.incentive
    if isinstance(inc, IncentiveFunction):
        return compute_incentives(inc, obs_i, actions_others)
    if isinstance(inc, FakeIncentive):
        return inc()
    return np.zeros(len(actions_others))


def generate_trajectory(env, roster: AgentRoster, rng, record_incentives: bool = True) -> Trajectory:
    """Run one episode.

    ``rng`` is a numpy Generator or a ``(horizon, N)`` block of uniforms;
    with a Generator the whole block is drawn up front so that the random
    stream does not depend on episode length.
    """
    n = len(roster)
    if isinstance(rng, np.random.Generator):
        uniforms = rng.random((env.horizon, n))
    else:
        uniforms = np.asarray(rng, dtype=np.float64)
    state = env.reset()
    traj = Trajectory()
    for t in range(env.horizon):
        obs = np.stack([env.observe(state, j) for j in range(n)])
        actions = []
        for agent in roster:
            stay = env.stay_action(state, agent.index) if agent.mode is AgentMode.BYPASS else None
            if stay is not None:
                actions.append(int(stay))
            else:
                actions.append(sample_categorical(agent.probs(obs[agent.index]), uniforms[t, agent.index]))
        matrix = np.zeros((n, n))
        if record_incentives:
            for agent in roster:
                others = [a for j, a in enumerate(actions) if j != agent.index]
                gifts = emit_incentives(agent, obs[agent.index], others)
                for k, j in enumerate(j for j in range(n) if j != agent.index):
                    matrix[agent.index, j] = gifts[k]
        nxt, out = env.step(state, actions)
        traj.steps.append(Step(state, obs, tuple(actions), np.array(out.env_rewards), matrix,
                               out.done, out.exited))
        state = nxt
        if out.done:
            break
    return traj


def total_rewards(agent: Agent, traj: Trajectory) -> np.ndarray:
    return np.array([assemble_total_reward(agent, s.env_rewards[agent.index], traj.incoming(t, agent.index))
                     for t, s in enumerate(traj.steps)])


def log_prob_grad(agent: Agent, obs, action: int, params=None) -> np.ndarray:
    """``d log pi(action | obs) / d theta`` through the policy net, via the tape."""
    tape = Tape()
    leaf = tape.leaf((agent.policy_params if params is None else params).values)
    logp = tape.take(tape.log_softmax(agent.policy_net.forward(leaf, obs, tape)), action)
    return tape.backward(logp)[leaf]


class LioTape:
    """One tape shared by the policy updates and incentive gradients of an iteration.

    Holds a leaf per learned incentive channel; every gift that enters a
    recipient's return is recomputed from that leaf, so updated policy
    parameters are differentiable in each giver's ``eta``.
    """

    def __init__(self, roster: AgentRoster):
        self.tape = Tape()
        self.roster = roster
        self.eta: dict[int, Node] = {
            a.index: self.tape.leaf(a.incentive.params.values)
            for a in roster if gives_incentives(a) is Channel.LEARNED
        }
        self._cache: dict[tuple[int, int, int], Node] = {}

    def gifts(self, traj: Trajectory, t: int, giver: int) -> Node:
        key = (id(traj), t, giver)
        if key not in self._cache:
            f = self.roster[giver].incentive
            step = traj.steps[t]
            self._cache[key] = compute_incentives(f, step.obs[giver], traj.others_actions(t, giver),
                                                  self.tape, params=self.eta[giver])
        return self._cache[key]

    def total_reward(self, agent: Agent, traj: Trajectory, t: int):
        """Reward entering the agent's return at step t, as a node when it depends on eta."""
        step = traj.steps[t]
        j = agent.index
        if not receives_incentives(agent.mode):
            return float(step.env_rewards[j])
        total = float(step.env_rewards[j])
        node = None
        for i in range(len(self.roster)):
            if i == j:
                continue
            if i in self.eta:
                k = j if j < i else j - 1
                term = self.tape.take(self.gifts(traj, t, i), k)
                node = term if node is None else self.tape.add(node, term)
            else:
                total += float(step.incentives[i, j])
        if node is None:
            return total
        return self.tape.add(node, total)


def _as_batch(trajs) -> list[Trajectory]:
    return [trajs] if isinstance(trajs, Trajectory) else list(trajs)


def policy_step(agent: Agent, trajs, hp: Hyperparams, sign: int = 1, ctx: LioTape | None = None):
    """Increment ``sign * beta/B * sum_b sum_t grad log pi(a_t|o_t) * G_t``.

    Returns an ndarray, or a node on ``ctx.tape`` when a context is given.
    """
    trajs = _as_batch(trajs)
    if not trajs or any(len(tr) == 0 for tr in trajs):
        raise ContractViolation("policy update needs non-empty trajectories")
    coef = sign * hp.beta / len(trajs)
    j = agent.index
    if ctx is None:
        acc = np.zeros(len(agent.policy_params))
        for tr in trajs:
            g_ret = returns(total_rewards(agent, tr), hp.gamma)
            for t, step in enumerate(tr.steps):
                acc += log_prob_grad(agent, step.obs[j], step.actions[j]) * g_ret[t]
        return coef * acc
    tape = ctx.tape
    acc = None
    for tr in trajs:
        rewards = [ctx.total_reward(agent, tr, t) for t in range(len(tr))]
        g_next = 0.0
        g_ret = [None] * len(tr)
        for t in range(len(tr) - 1, -1, -1):
            g_next = rewards[t] + hp.gamma * g_next
            g_ret[t] = g_next
        for t, step in enumerate(tr.steps):
            term = tape.mul(log_prob_grad(agent, step.obs[j], step.actions[j]), g_ret[t])
            acc = term if acc is None else tape.add(acc, term)
    return tape.scale(acc, coef)


def policy_update(agent: Agent, trajs, hp: Hyperparams, ctx: LioTape | None = None):
    """Benign update ``theta + beta * sum_t grad log pi * G_t``.

    Without a context returns a :class:`ParamVector`; with one, a node on the
    shared tape that depends on every contributing ``eta``.
    """
    return _apply(agent, policy_step(agent, trajs, hp, 1, ctx), ctx)


def reverse_policy_update(agent: Agent, trajs, hp: Hyperparams, ctx: LioTape | None = None):
    """Gradient descent on the agent's own return: ``theta - beta * sum_t ...``."""
    if agent.mode is not AgentMode.REVERSE:
        raise ContractViolation(f"reverse update on a {agent.mode.value} agent")
    return _apply(agent, policy_step(agent, trajs, hp, -1, ctx), ctx)


def _apply(agent, step, ctx):
    if ctx is None:
        return agent.policy_params.with_values(agent.policy_params.values + step)
    return ctx.tape.add(step, agent.policy_params.values)


def incentive_hypergradient(giver: Agent, old_trajs, new_trajs, updated: dict[int, Node],
                            hp: Hyperparams, ctx: LioTape) -> np.ndarray:
    """Gradient in the giver's ``eta`` of its new-trajectory env return minus ``alpha * L``.

    The env term is the score-function surrogate
    ``sum_j sum_t log pi_hat_j(a_t|o_t) * G^env_giver_t`` evaluated at the
    updated parameters in ``updated``; its dependence on ``eta`` flows back
    through the recorded policy updates. ``L`` is the gift cost on the old
    trajectories.
    """
    i = giver.index
    if i not in ctx.eta:
        raise ContractViolation(f"agent {i} has no learned incentive channel")
    tape = ctx.tape
    for node in updated.values():
        if node.tape is not tape:
            raise ContractViolation("updated policy was not recorded on the incentive tape")
    old_trajs, new_trajs = _as_batch(old_trajs), _as_batch(new_trajs)
    objective = None
    for j, theta_hat in updated.items():
        if j == i:
            continue
        agent = ctx.roster[j]
        for tr in new_trajs:
            g_ret = returns(tr.env_rewards(i), hp.gamma)
            for t, step in enumerate(tr.steps):
                logits = agent.policy_net.forward(theta_hat, step.obs[j], tape)
                logp = tape.take(tape.log_softmax(logits), step.actions[j])
                term = tape.scale(logp, g_ret[t] / len(new_trajs))
                objective = term if objective is None else tape.add(objective, term)
    for tr in old_trajs:
        pairs = [(s.obs[i], tr.others_actions(t, i)) for t, s in enumerate(tr.steps)]
        cost = tape.scale(gift_cost(giver.incentive, pairs, hp.gamma, tape, params=ctx.eta[i]),
                          -hp.alpha / len(old_trajs))
        objective = cost if objective is None else tape.add(objective, cost)
    return tape.backward(objective)[ctx.eta[i]]


@dataclass
class EpisodeMetrics:
    success: bool
    length: int
    env_return: np.ndarray
    total_return: np.ndarray
    inc_given: np.ndarray
    inc_received: np.ndarray
    actions: np.ndarray       # (length, N)
    received: np.ndarray      # (length, N) incoming gifts per step

    @classmethod
    def from_trajectory(cls, roster: AgentRoster, traj: Trajectory) -> "EpisodeMetrics":
        n = len(roster)
        mats = np.stack([s.incentives for s in traj.steps])
        env = np.stack([s.env_rewards for s in traj.steps])
        total = np.stack([total_rewards(a, traj) for a in roster], axis=1)
        return cls(traj.success, len(traj), env.sum(axis=0), total.sum(axis=0),
                   mats.sum(axis=(0, 2)), mats.sum(axis=(0, 1)),
                   np.array([s.actions for s in traj.steps], dtype=np.int64).reshape(-1, n),
                   mats.sum(axis=1))


def lio_iteration(env, roster: AgentRoster, hp: Hyperparams, rng: np.random.Generator,
                  engine: str = "fused") -> EpisodeMetrics:
    """One iteration: trajectories, inner updates, new trajectories, incentive ascent, commit.

    Mutates ``roster`` in place and returns metrics for the first old
    trajectory of the batch.
    """
    uniforms = rng.random((2, hp.batch, env.horizon, len(roster)))
    if engine == "fused":
        from arena.kernels import FusedRunner
        runner = FusedRunner.from_roster(env, roster, hp)
        metrics = runner.iterate(uniforms)
        runner.write_back(roster)
        return metrics
    if engine != "tape":
        raise ConfigError(f"unknown engine {engine!r}")
    return _tape_iteration(env, roster, hp, uniforms)


def _tape_iteration(env, roster, hp, uniforms) -> EpisodeMetrics:
    old = [generate_trajectory(env, roster, uniforms[0, b]) for b in range(hp.batch)]
    metrics = EpisodeMetrics.from_trajectory(roster, old[0])
    ctx = LioTape(roster)
    updated: dict[int, Node] = {}
    for agent in roster:
        sign = update_sign(agent.mode)
        if sign:
            updated[agent.index] = _apply(agent, policy_step(agent, old, hp, sign, ctx), ctx)
    new_roster = roster.snapshot()
    for j, node in updated.items():
        new_roster[j].policy_params = roster[j].policy_params.with_values(node.value)
    new = [generate_trajectory(env, new_roster, uniforms[1, b], record_incentives=False)
           for b in range(hp.batch)]
    new_eta = {}
    for agent in roster:
        if agent.index in ctx.eta:
            grad = incentive_hypergradient(agent, old, new, updated, hp, ctx)
            new_eta[agent.index] = agent.incentive.params.values + hp.eta_lr * grad
    for j in updated:
        roster[j].policy_params = new_roster[j].policy_params
    for i, values in new_eta.items():
        roster[i].incentive.params = roster[i].incentive.params.with_values(values)
    return metrics
