import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from arena.agents import AgentMode
from arena.cli import main
from arena.errors import ConfigError
from arena.expctl import outputs
from arena.expctl.config import RunConfig, dump_config, from_mapping, load_config, parse_text
from arena.expctl.metrics import (assign_roles, convergence_episode, episode_roles, final_rate, incentive_probe,
                                  pool_probe, role_mean, windowed_rate)
from arena.expctl.presets import PRESETS, get_preset
from arena.expctl.runner import emit_outputs, run_experiment, run_seeds


def _cfg_file(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


# config ------------------------------------------------------------------

def test_preset_er2_lio_is_two_agent_escape_room():
    cfg = get_preset("er2_lio")
    assert (cfg.env, cfg.n_agents, cfg.m_lever) == ("er", 2, 1)
    assert cfg.modes == [AgentMode.LIO, AgentMode.LIO]


def test_all_presets_validate():
    expected = {"er2_lio", "er42_lio", "er43_lio", "ipd_lio", "er2_partial", "er42_partial", "ipd_partial",
                "er2_fake", "er2_bypass", "er42_bypass", "er43_bypass", "er2_reverse", "er42_reverse",
                "er43_reverse"}
    assert set(PRESETS) == expected
    for name in PRESETS:
        cfg = get_preset(name).validate()
        assert cfg.preset == name
        assert sum(m.is_adversary for m in cfg.modes) == (0 if name.endswith("lio") else 1)


def test_unknown_preset():
    with pytest.raises(ConfigError, match="preset"):
        get_preset("er9_lio")


def test_lever_count_must_be_below_agent_count(tmp_path):
    with pytest.raises(ConfigError, match="m_lever"):
        load_config(_cfg_file(tmp_path, "n_agents = 2\nm_lever = 2\n"))


def test_missing_gamma_is_echoed_with_default(tmp_path):
    cfg = load_config(_cfg_file(tmp_path, "env = er\n"))
    echoed = parse_text(dump_config(cfg))
    assert echoed["gamma"] == "0.99"
    assert set(echoed) >= {"beta", "alpha", "eta_lr", "batch", "r_max", "c_adv", "episodes", "agent.1.mode"}


def test_dump_round_trips(tmp_path):
    cfg = get_preset("er2_fake").replace(seed=7)
    again = from_mapping(parse_text(dump_config(cfg)))
    assert dump_config(again) == dump_config(cfg)


def test_layering_file_over_preset_over_defaults(tmp_path):
    path = _cfg_file(tmp_path, "# comment line\nseed = 3  # trailing comment\nagent.1.mode = reverse\n")
    cfg = load_config(path, preset="er42_lio", overrides={"episodes": 12})
    assert (cfg.n_agents, cfg.m_lever, cfg.seed, cfg.episodes) == (4, 2, 3, 12)
    assert cfg.modes == [AgentMode.LIO, AgentMode.REVERSE, AgentMode.LIO, AgentMode.LIO]


@pytest.mark.parametrize("text,key", [
    ("gamma = 0\n", "gamma"),
    ("bogus = 1\n", "bogus"),
    ("batch = two\n", "batch"),
    ("agent.0.mode = sneaky\n", "agent.0.mode"),
    ("agent.5.mode = lio\n", "agent.5"),
    ("agent.0.c_adv = 50\n", "agent.0.c_adv"),
    ("env = ipd\nagent.1.mode = bypass\n", "agent.<i>.mode"),
    ("seed = 1\nseed = 2\n", "duplicate"),
    ("just words\n", "key = value"),
])
def test_config_errors_name_the_key(tmp_path, text, key):
    with pytest.raises(ConfigError, match=key.replace(".", r"\.").replace("<", ".").replace(">", ".")):
        load_config(_cfg_file(tmp_path, text))


def test_non_dominant_fake_constant_only_warns(tmp_path):
    from arena.incentive import DominanceWarning
    with pytest.warns(DominanceWarning):
        load_config(_cfg_file(tmp_path, "agent.1.mode = fake\nagent.1.c_adv = 2\n"))


# metrics -----------------------------------------------------------------

def test_convergence_examples():
    assert convergence_episode([0] * 100 + [1] * 50, window=10, threshold=0.95) == 109
    assert convergence_episode([0] * 500, window=10) is None
    assert convergence_episode([1] * 20, window=5) == 4
    assert convergence_episode([1] * 3, window=5) is None


def test_convergence_boundary_is_inclusive():
    # 19 of 20 is exactly 0.95
    assert convergence_episode([0] + [1] * 19, window=20, threshold=0.95) == 19


@given(st.lists(st.integers(0, 1), min_size=1, max_size=200), st.integers(1, 30),
       st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_convergence_monotone_in_threshold(series, window, t1, t2):
    lo, hi = sorted((t1, t2))
    a, b = convergence_episode(series, window, lo), convergence_episode(series, window, hi)
    if b is not None:
        assert a is not None and a <= b


@given(st.lists(st.integers(0, 1), min_size=1, max_size=200), st.integers(1, 30), st.floats(0.01, 1.0))
def test_convergence_matches_window_oracle(series, window, threshold):
    rates = windowed_rate(series, window)
    hits = [k for k, r in enumerate(rates) if round(r * window) >= threshold * window]
    got = convergence_episode(series, window, threshold)
    assert got == (hits[0] + window - 1 if hits else None)
    if got is not None:
        assert window - 1 <= got < len(series)


def test_final_rate():
    assert final_rate([0, 1, 1, 1], window=2) == 1.0
    assert final_rate([], window=2) is None


def test_roles_and_probe():
    from arena.envs import DOOR, LEVER, START
    success_ep = ([[LEVER, DOOR], [LEVER, DOOR]], True)
    fail_ep = ([[START, DOOR]], False)
    assert episode_roles(*success_ep) == ["lever", "door"]
    assert episode_roles(*fail_ep) == ["other", "other"]
    assert assign_roles([success_ep, success_ep, fail_ep]) == ["lever", "door"]
    assert episode_roles([[0, 1]], False, "ipd") == ["player", "player"]
    rows = incentive_probe([(0, LEVER, 1.0), (0, LEVER, 0.5), (1, DOOR, 0.0)], ["lever", "door"])
    assert [(r.agent, r.role, r.action, r.mean_incentive_received, r.count) for r in rows] == [
        (0, "lever", LEVER, 0.75, 2), (1, "door", DOOR, 0.0, 1)]
    assert role_mean(rows, "lever", LEVER) == 0.75 and role_mean(rows, "door") == 0.0
    assert role_mean(rows, "other") is None
    assert pool_probe(rows + rows)[("lever", LEVER)] == (0.75, 4)


def test_probe_empty_input():
    assert incentive_probe([]) == []


# runner and outputs ------------------------------------------------------

def _small(name="er2_lio", **kw):
    return get_preset(name).replace(**{"episodes": 40, "window": 10, **kw})


def test_empty_run():
    rec, summ = run_experiment(_small(episodes=0))
    assert rec.n_episodes == 0
    assert summ.convergence_episode is None and summ.final_success_rate is None


def test_records_conserve_incentives():
    rec, _ = run_experiment(_small("er42_partial"))
    # row sums and column sums of the same gift matrix, added in different orders
    np.testing.assert_allclose(rec.inc_given.sum(axis=1), rec.inc_received.sum(axis=1), rtol=1e-14, atol=0)


def test_ipd_success_is_blank(tmp_path):
    cfg = _small("ipd_partial")
    rec, summ = run_experiment(cfg)
    d = emit_outputs(cfg, rec, summ, tmp_path)
    rows = outputs.read_csv(d / "episodes.csv")
    assert all(r["success"] == "" for r in rows)
    assert outputs.read_csv(d / "summary.csv")[0]["convergence_episode"] == ""
    assert summ.adversary_top_reward is not None


def test_output_schemas(tmp_path):
    cfg = _small("er42_lio", out_dir=str(tmp_path))
    run_seeds(cfg, n_seeds=2)
    seed0 = tmp_path / "seed_0"
    header = (seed0 / "episodes.csv").read_text().splitlines()[0]
    cols = ["episode", "success"] + [f"{p}_{j}" for p in ("env_return", "total_return", "inc_given", "inc_recv")
                                     for j in range(4)]
    assert header == ",".join(cols)
    assert (seed0 / "summary.csv").read_text().splitlines()[0] == \
        "preset,seed,convergence_episode,final_success_rate,adversary_top_reward"
    assert (seed0 / "probe.csv").read_text().splitlines()[0] == "agent,role,action,mean_incentive_received,count"
    assert len(outputs.read_csv(tmp_path / "summary.csv")) == 2
    for chart in ("success_rate", "env_return", "total_return", "inc_given", "inc_recv"):
        assert (seed0 / f"{chart}.svg").read_text().startswith("<svg")
    assert "preset = er42_lio" in (tmp_path / "config.txt").read_text()


def test_reals_printed_with_17_digits():
    assert outputs.fmt(0.1) == "0.10000000000000001"
    assert outputs.fmt(None) == "" and outputs.fmt(True) == "1" and outputs.fmt(3) == "3"


def _snapshot(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_rerun_is_byte_identical(tmp_path):
    cfg = _small("er2_partial", out_dir=str(tmp_path))
    run_seeds(cfg, n_seeds=2)
    first = _snapshot(tmp_path)
    run_seeds(cfg, n_seeds=2)
    assert _snapshot(tmp_path) == first


def test_parallel_matches_sequential(tmp_path):
    cfg = _small("er2_reverse", out_dir=str(tmp_path))
    run_seeds(cfg, n_seeds=3, parallel=1)
    sequential = _snapshot(tmp_path)
    run_seeds(cfg, n_seeds=3, parallel=3)
    assert _snapshot(tmp_path) == sequential


def test_engines_agree():
    a, _ = run_experiment(_small(engine="fused"))
    b, _ = run_experiment(_small(engine="tape"))
    assert (a.actions == b.actions).all()
    np.testing.assert_allclose(a.total_return, b.total_return, rtol=1e-10, atol=1e-12)


# CLI ---------------------------------------------------------------------

def test_cli_run_and_probe(tmp_path, capsys):
    cfg = _cfg_file(tmp_path, "episodes = 30\nwindow = 10\n")
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--preset", "er2_lio", "--seeds", "2", "--out", str(out)]) == 0
    stored = (out / "seed_1" / "probe.csv").read_bytes()
    assert main(["probe", "--in", str(out)]) == 0
    assert (out / "seed_1" / "probe.csv").read_bytes() == stored
    assert (out / "probe.csv").exists()


def test_cli_config_error_exit_code(tmp_path):
    cfg = _cfg_file(tmp_path, "m_lever = 2\n")
    assert main(["run", "--config", str(cfg)]) == 1
    assert main(["run", "--config", str(tmp_path / "missing.cfg")]) == 1
    assert main(["run", "--config", str(cfg), "--preset", "nope"]) == 1
    assert main(["probe", "--in", str(tmp_path)]) == 1


def test_cli_contract_violation_exit_code(monkeypatch, tmp_path):
    from arena.errors import ContractViolation
    import arena.expctl.runner as runner

    def boom(*a, **k):
        raise ContractViolation("stepped a terminated episode")
    monkeypatch.setattr(runner, "run_seeds", boom)
    assert main(["run", "--config", str(_cfg_file(tmp_path, "episodes = 1\n"))]) == 2


def test_cli_gradient_failure_exit_code(monkeypatch):
    import arena.gradcheck as gc
    bad = gc.SuiteResult("hypergradient", 1, 1e-4, 1.0, [0])
    monkeypatch.setattr(gc, "run_all", lambda trials, seed: [bad])
    assert main(["check-gradients", "--trials", "1"]) == 3


def test_cli_entry_point_help():
    out = subprocess.run([sys.executable, "-m", "arena.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "check-gradients" in out.stdout
