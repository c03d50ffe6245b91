import numpy as np
import pytest
from hypothesis import given, strategies as st

from arena.agents import (Agent, AgentMode, Channel, assemble_total_reward, build_roster, gives_incentives,
                          receives_incentives, sample_categorical, select_action, update_sign)
from arena.diffcore import Mlp, ParamVector
from arena.envs import START, er_new, ipd_new
from arena.errors import ConfigError
from arena.incentive import FakeIncentive, IncentiveFunction

reals = st.floats(-100, 100, allow_nan=False)


def _agent_with_logits(logits, mode=AgentMode.LIO):
    logits = np.asarray(logits, dtype=np.float64)
    net = Mlp(1, 1, logits.size)
    p = ParamVector.zeros(net.segments)
    p.segment("b2")[...] = logits
    return Agent(0, mode, net, p)


def test_uniform_sampling_chi_square():
    agent = _agent_with_logits([0.0, 0.0, 0.0])
    rng = np.random.default_rng(0)
    counts = np.bincount([select_action(agent, [0.0], rng) for _ in range(100_000)], minlength=3)
    chi2 = float(((counts - 100_000 / 3) ** 2 / (100_000 / 3)).sum())
    assert chi2 < 9.21  # chi-square critical value, 2 dof, alpha 0.01


def test_near_deterministic_logits():
    agent = _agent_with_logits([10.0, -10.0, -10.0])
    rng = np.random.default_rng(1)
    picks = [select_action(agent, [0.0], rng) for _ in range(10_000)]
    assert picks.count(0) / len(picks) > 0.999


def test_bypass_returns_stay_action():
    env = er_new(2, 1, 5)
    agent = _agent_with_logits([0.0, 5.0, 5.0], AgentMode.BYPASS)
    for u in np.linspace(0, 0.999, 20):
        assert select_action(agent, [0.0], u, env.stay_action(env.reset(), 0)) == START


def test_inverse_cdf_sampling():
    p = [0.2, 0.5, 0.3]
    assert [sample_categorical(p, u) for u in (0.0, 0.19, 0.2, 0.69, 0.7, 0.999)] == [0, 0, 1, 1, 2, 2]


def test_total_reward_examples():
    assert assemble_total_reward(AgentMode.LIO, -1.0, [1.0]) == 0.0
    assert assemble_total_reward(AgentMode.PARTIAL, -1.0, [1.0]) == -1.0
    assert assemble_total_reward(AgentMode.LIO, -1.0, [0.5, 50.0]) == 49.5


@given(reals, st.lists(reals, max_size=4), st.lists(reals, max_size=4))
def test_partial_ignores_incoming(env_r, a, b):
    assert assemble_total_reward(AgentMode.PARTIAL, env_r, a) == assemble_total_reward(AgentMode.PARTIAL, env_r, b)


@given(reals, st.lists(reals, max_size=4))
def test_benign_total_is_termwise_sum(env_r, incoming):
    expected = env_r
    for x in incoming:
        expected += x
    assert assemble_total_reward(AgentMode.LIO, env_r, incoming) == expected


@pytest.mark.parametrize("mode,channel,receives,sign", [
    ("lio", Channel.LEARNED, True, 1),
    ("pg", Channel.NONE, True, 1),
    ("partial", Channel.LEARNED, False, 1),
    ("fake", Channel.CONSTANT, False, 1),
    ("bypass", Channel.NONE, True, 0),
    ("reverse", Channel.LEARNED, True, -1),
])
def test_mode_table(mode, channel, receives, sign):
    m = AgentMode(mode)
    assert gives_incentives(m) is channel
    assert receives_incentives(m) is receives
    assert update_sign(m) == sign


def test_build_roster_channels():
    env = er_new(4, 2, 5)
    roster = build_roster(env, ["partial", "pg", "fake", "bypass"], np.random.default_rng(0), c_adv=50.0)
    assert isinstance(roster[0].incentive, IncentiveFunction)
    assert roster[1].incentive is None and roster[3].incentive is None
    assert isinstance(roster[2].incentive, FakeIncentive) and roster[2].incentive().tolist() == [50.0] * 3
    assert not roster[3].trainable
    assert roster.adversary() == 0
    for a in roster:
        assert a.policy_net.n_out == env.n_actions


def test_build_roster_rejects_bad_rosters():
    with pytest.raises(ConfigError):
        build_roster(er_new(2, 1), ["lio"], np.random.default_rng(0))
    with pytest.raises(ConfigError):
        build_roster(ipd_new(), ["lio", "bypass"], np.random.default_rng(0))


def test_snapshot_is_deep():
    roster = build_roster(er_new(2, 1), ["lio", "lio"], np.random.default_rng(0))
    snap = roster.snapshot()
    snap[0].policy_params.values[0] += 1.0
    snap[0].incentive.params.values[0] += 1.0
    assert roster[0].policy_params.values[0] != snap[0].policy_params.values[0]
    assert roster[0].incentive.params.values[0] != snap[0].incentive.params.values[0]
