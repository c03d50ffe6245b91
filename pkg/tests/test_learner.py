import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from arena import gradcheck
from arena.agents import AgentMode, build_roster, update_sign
from arena.diffcore import Mlp, ParamVector, Tape
from arena.envs import DOOR, LEVER, START, er_new, ipd_new
from arena.errors import ContractViolation
from arena.incentive import gift_cost
from arena.learner import (Hyperparams, LioTape, generate_trajectory, incentive_hypergradient, lio_iteration,
                           policy_step, policy_update, returns, reverse_policy_update, total_rewards)


def _fixed_policy(agent, logits):
    p = ParamVector.zeros(agent.policy_net.segments)
    p.segment("b2")[...] = logits
    agent.policy_params = p


def _roster(modes, env=None, seed=0, **kw):
    env = env or er_new(2, 1, 5)
    return env, build_roster(env, modes, np.random.default_rng(seed), **kw)


def test_returns_two_terms():
    assert returns([2.0, 3.0], 0.5).tolist() == [3.5, 3.0]
    assert returns([0.0] * 4, 0.9).tolist() == [0.0] * 4


def test_returns_against_double_loop():
    r = np.random.default_rng(2).normal(size=7)
    direct = [sum(0.93 ** (l - t) * r[l] for l in range(t, 7)) for t in range(7)]
    np.testing.assert_allclose(returns(r, 0.93), direct, rtol=1e-13)


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=12), st.floats(0.01, 1.0))
def test_returns_recursion(rewards, gamma):
    g = returns(rewards, gamma)
    for t in range(len(rewards) - 1):
        assert g[t] == rewards[t] + gamma * g[t + 1]
    assert g[-1] == rewards[-1]


def test_frozen_stay_policies_run_full_episode():
    env, roster = _roster(["pg", "pg"])
    for a in roster:
        _fixed_policy(a, [50.0, -50.0, -50.0])
    tr = generate_trajectory(env, roster, np.random.default_rng(0))
    assert len(tr) == 5 and not tr.success
    assert all(s.env_rewards.tolist() == [0.0, 0.0] for s in tr.steps)


def test_scripted_lever_then_door():
    env, roster = _roster(["pg", "pg"])
    _fixed_policy(roster[0], [-50.0, 50.0, -50.0])          # always Lever
    net = Mlp(6, 1, 3)
    roster[1].policy_net = net
    p = ParamVector.zeros(net.segments)
    p.segment("w1")[0, 4] = 10.0                             # other agent at Lever
    p.segment("w2")[:, 0] = [0.0, 0.0, 100.0]
    p.segment("b2")[...] = [50.0, 0.0, 0.0]
    roster[1].policy_params = p
    tr = generate_trajectory(env, roster, np.random.default_rng(0))
    assert [s.actions for s in tr.steps] == [(LEVER, START), (LEVER, DOOR)]
    assert tr.success
    assert tr.env_rewards(0).sum() == -1.0 and tr.env_rewards(1).sum() == 9.0


def test_trajectory_is_deterministic_and_contiguous():
    env, roster = _roster(["lio", "lio"])
    u = np.random.default_rng(4).random((5, 2))
    a, b = generate_trajectory(env, roster, u), generate_trajectory(env, roster, u)
    assert [s.actions for s in a.steps] == [s.actions for s in b.steps]
    assert all(np.array_equal(x.incentives, y.incentives) for x, y in zip(a.steps, b.steps))
    for s, nxt in zip(a.steps, a.steps[1:]):
        assert tuple(nxt.state.positions) == s.actions and not s.done
    assert a.steps[-1].done
    for s in a.steps:
        assert (np.diag(s.incentives) == 0).all()


def test_zero_returns_fixed_point():
    env, roster = _roster(["pg", "pg"])
    for a in roster:
        _fixed_policy(a, [50.0, -50.0, -50.0])
    tr = generate_trajectory(env, roster, np.random.default_rng(0))
    hp = Hyperparams(beta=0.5)
    for a in roster:
        assert policy_update(a, tr, hp).values.tobytes() == a.policy_params.values.tobytes()


def test_single_step_update_matches_fd():
    for seed in range(5):
        assert gradcheck.policy_gradient_trial(seed).passed


def test_partial_update_invariant_to_incoming():
    env, roster = _roster(["lio", "partial"], seed=3)
    u = np.random.default_rng(3).random((5, 2))
    tr = generate_trajectory(env, roster, u)
    hp = Hyperparams(beta=0.3)
    before = policy_update(roster[1], tr, hp).values.copy()
    for s in tr.steps:
        s.incentives[0, 1] = 123.0
    assert policy_update(roster[1], tr, hp).values.tobytes() == before.tobytes()
    # and equals a benign agent's update in a zero-incentive world
    for s in tr.steps:
        s.incentives[...] = 0.0
    benign = roster[1]
    benign.mode = AgentMode.LIO
    assert policy_update(benign, tr, hp).values.tobytes() == before.tobytes()


def test_reverse_negation_identity():
    env, roster = _roster(["lio", "reverse"], seed=5)
    tr = generate_trajectory(env, roster, np.random.default_rng(5).random((5, 2)))
    hp = Hyperparams(beta=0.2)
    agent = roster[1]
    up = policy_step(agent, tr, hp, 1)
    down = policy_step(agent, tr, hp, -1)
    assert (-down).tobytes() == up.tobytes()
    theta = agent.policy_params.values
    rev = reverse_policy_update(agent, tr, hp).values
    ben = theta + up
    # the increments negate bit-for-bit; adding them back onto theta rounds once each
    eps = np.finfo(np.float64).eps
    assert (np.abs(rev + ben - 2 * theta) <= 4 * eps * (np.abs(theta) + np.abs(up))).all()


def test_reverse_update_requires_reverse_mode():
    env, roster = _roster(["lio", "lio"])
    tr = generate_trajectory(env, roster, np.random.default_rng(0))
    with pytest.raises(ContractViolation):
        reverse_policy_update(roster[0], tr, Hyperparams())


def test_reverse_lowers_taken_action_probability():
    env, roster = _roster(["lio", "reverse"], env=ipd_new(1), seed=8)
    agent = roster[1]
    tr = generate_trajectory(env, roster, np.random.default_rng(8).random((1, 2)))
    g0 = total_rewards(agent, tr)[0]
    a0 = tr.steps[0].actions[1]
    obs = tr.steps[0].obs[1]
    new = reverse_policy_update(agent, tr, Hyperparams(beta=1e-3))
    before = agent.probs(obs)[a0]
    agent.policy_params = new
    after = agent.probs(obs)[a0]
    assert (after < before) if g0 > 0 else (after > before)


def test_fake_arithmetic_termwise():
    env, roster = _roster(["lio", "lio", "fake"], env=er_new(3, 1, 5), c_adv=50.0)
    tr = generate_trajectory(env, roster, np.random.default_rng(1))
    for j in (0, 1):
        tot = total_rewards(roster[j], tr)
        for t, s in enumerate(tr.steps):
            other = 1 - j
            assert tot[t] == s.env_rewards[j] + s.incentives[other, j] + 50.0
    # the fake sender itself learns from env reward only
    assert total_rewards(roster[2], tr).tolist() == tr.env_rewards(2).tolist()


def _hyper(env, roster, hp, giver, uniforms):
    old = [generate_trajectory(env, roster, uniforms[0, 0])]
    ctx = LioTape(roster)
    updated = {a.index: ctx.tape.add(policy_step(a, old, hp, update_sign(a.mode), ctx), a.policy_params.values)
               for a in roster if update_sign(a.mode)}
    new_roster = roster.snapshot()
    for j, node in updated.items():
        new_roster[j].policy_params = roster[j].policy_params.with_values(node.value)
    new = [generate_trajectory(env, new_roster, uniforms[1, 0], record_incentives=False)]
    return old, new, incentive_hypergradient(roster[giver], old, new, updated, hp, ctx)


def _cost_grad(roster, giver, old, gamma):
    f = roster[giver].incentive
    tape = Tape()
    leaf = tape.leaf(f.params.values)
    pairs = [(s.obs[giver], old[0].others_actions(t, giver)) for t, s in enumerate(old[0].steps)]
    return tape.backward(gift_cost(f, pairs, gamma, tape, params=leaf))[leaf]


def test_hypergradient_is_cost_only_when_giver_earns_nothing():
    env, roster = _roster(["lio", "lio"], seed=2)
    _fixed_policy(roster[0], [50.0, -50.0, -50.0])  # giver never moves: zero env return
    hp = Hyperparams(alpha=5.0, beta=0.3)
    u = np.random.default_rng(2).random((2, 1, 5, 2))
    old, new, g = _hyper(env, roster, hp, 0, u)
    assert all(r == 0.0 for tr in new for r in tr.env_rewards(0))
    np.testing.assert_allclose(g, -hp.alpha * _cost_grad(roster, 0, old, hp.gamma), rtol=1e-13, atol=0)


def test_hypergradient_without_recipients():
    env, roster = _roster(["lio", "bypass"], seed=4)
    hp = Hyperparams(alpha=0.7)
    u = np.random.default_rng(4).random((2, 1, 5, 2))
    old, _, g = _hyper(env, roster, hp, 0, u)
    np.testing.assert_allclose(g, -hp.alpha * _cost_grad(roster, 0, old, hp.gamma), rtol=1e-13, atol=0)


def test_hypergradient_rejects_foreign_tape():
    env, roster = _roster(["lio", "lio"])
    tr = generate_trajectory(env, roster, np.random.default_rng(0))
    ctx = LioTape(roster)
    other = Tape().leaf(roster[1].policy_params.values)
    with pytest.raises(ContractViolation):
        incentive_hypergradient(roster[0], [tr], [tr], {1: other}, Hyperparams(), ctx)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_hypergradient_matches_pipeline_fd(seed):
    report = gradcheck.hypergradient_trial(seed)
    assert report.passed, report.max_rel_err


def test_hypergradient_fd_with_batch():
    for seed in range(3):
        report = gradcheck.hypergradient_trial(seed, giver=1, batch=2)
        assert report.passed, report.max_rel_err


@pytest.mark.parametrize("giver", [0, 2, 3])
def test_hypergradient_fd_four_agents(giver):
    # several recipients per giver, one of them without a learned channel
    for seed in range(3):
        report = gradcheck.hypergradient_trial(seed, giver=giver, game="er42")
        assert report.passed, report.max_rel_err


def test_pg_only_roster_has_no_incentives():
    env, roster = _roster(["pg", "pg"])
    m = lio_iteration(env, roster, Hyperparams(), np.random.default_rng(0), engine="tape")
    assert m.inc_given.tolist() == [0.0, 0.0]
    assert all(a.incentive is None for a in roster)


@pytest.mark.parametrize("engine", ["tape", "fused"])
def test_bypass_never_moves_or_learns(engine):
    env, roster = _roster(["lio", "bypass"])
    theta = roster[1].policy_params.values.copy()
    rng = np.random.default_rng(0)
    for _ in range(5):
        m = lio_iteration(env, roster, Hyperparams(), rng, engine=engine)
        assert (m.actions[:, 1] == START).all()
    assert roster[1].policy_params.values.tobytes() == theta.tobytes()


def test_zero_learning_rates_leave_roster_unchanged():
    env, roster = _roster(["lio", "partial"])
    snap = roster.snapshot()
    hp = Hyperparams(beta=0.0, eta_lr=0.0, alpha=0.0)
    m = lio_iteration(env, roster, hp, np.random.default_rng(0), engine="tape")
    assert m.length >= 1
    for a, b in zip(roster, snap):
        assert a.policy_params.values.tobytes() == b.policy_params.values.tobytes()
        assert a.incentive.params.values.tobytes() == b.incentive.params.values.tobytes()


def test_policy_update_is_reproducible():
    env, roster = _roster(["lio", "lio"], seed=6)
    u = np.random.default_rng(6).random((5, 2))
    hp = Hyperparams()
    a = policy_update(roster[0], generate_trajectory(env, roster, u), hp).values
    b = policy_update(roster[0], generate_trajectory(env, roster, u), hp).values
    assert a.tobytes() == b.tobytes()


def test_metrics_conservation():
    env, roster = _roster(["lio", "lio", "lio", "fake"], env=er_new(4, 2, 5))
    rng = np.random.default_rng(0)
    for _ in range(3):
        m = lio_iteration(env, roster, Hyperparams(), rng, engine="tape")
        assert m.inc_given.sum() == pytest.approx(m.inc_received.sum(), rel=1e-15)
