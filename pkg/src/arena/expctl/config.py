"""Flat ``key = value`` run configuration.

One key per line, ``#`` starts a comment. Roster entries are
``agent.<index>.mode`` plus mode-specific keys such as ``agent.<index>.c_adv``.
Unknown keys are rejected; every default is materialized so the echoed file
fully describes the run.
"""
from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field
from pathlib import Path

from arena.agents import AgentMode
from arena.errors import ConfigError
from arena.incentive import check_dominance

ENV_KINDS = ("er", "ipd")
ENGINES = ("fused", "tape")


@dataclass
class AgentSpec:
    mode: AgentMode = AgentMode.LIO
    c_adv: float | None = None


@dataclass
class RunConfig:
    env: str = "er"
    n_agents: int = 2
    m_lever: int = 1
    max_steps: int = 5
    episode_length: int = 5
    gamma: float = 0.99
    beta: float = 0.1
    alpha: float = 0.1
    eta_lr: float = 0.01
    batch: int = 1
    r_max: float = 3.0
    c_adv: float = 50.0
    policy_hidden: int = 32
    incentive_hidden: int = 16
    incentive_bias: float = 0.0
    policy_init_scale: float = 0.1
    episodes: int = 30000
    seed: int = 0
    window: int = 1000
    threshold: float = 0.95
    engine: str = "fused"
    preset: str = ""
    out_dir: str = "runs"
    roster: list[AgentSpec] = field(default_factory=list)

    def __post_init__(self):
        if not self.roster:
            self.roster = [AgentSpec() for _ in range(self.n_agents)]

    @property
    def modes(self) -> list[AgentMode]:
        return [a.mode for a in self.roster]

    @property
    def adversary_c_adv(self) -> float:
        """The constant used by fake senders (one value per run)."""
        values = {a.c_adv for a in self.roster if a.mode is AgentMode.FAKE and a.c_adv is not None}
        if len(values) > 1:
            raise ConfigError(f"agent.<i>.c_adv: fake agents must share one constant, got {sorted(values)}")
        return values.pop() if values else self.c_adv

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    def validate(self) -> "RunConfig":
        _check(self.env in ENV_KINDS, "env", f"must be one of {ENV_KINDS}")
        _check(self.engine in ENGINES, "engine", f"must be one of {ENGINES}")
        _check(self.n_agents >= 2, "n_agents", "must be >= 2")
        if self.env == "ipd":
            _check(self.n_agents == 2, "n_agents", "IPD is a two-player game")
            _check(self.episode_length >= 1, "episode_length", "must be >= 1")
        else:
            _check(1 <= self.m_lever < self.n_agents, "m_lever", "must satisfy 1 <= m_lever < n_agents")
            _check(self.max_steps >= 1, "max_steps", "must be >= 1")
        _check(0.0 < self.gamma <= 1.0, "gamma", "must lie in (0, 1]")
        _check(self.beta >= 0.0, "beta", "must be >= 0")
        _check(self.alpha >= 0.0, "alpha", "must be >= 0")
        _check(self.eta_lr >= 0.0, "eta_lr", "must be >= 0")
        _check(self.batch >= 1, "batch", "must be >= 1")
        _check(self.r_max > 0.0, "r_max", "must be > 0")
        _check(self.policy_hidden >= 1, "policy_hidden", "must be >= 1")
        _check(self.incentive_hidden >= 1, "incentive_hidden", "must be >= 1")
        _check(self.policy_init_scale >= 0.0, "policy_init_scale", "must be >= 0")
        _check(self.episodes >= 0, "episodes", "must be >= 0")
        _check(self.seed >= 0, "seed", "must be >= 0")
        _check(self.window >= 1, "window", "must be >= 1")
        _check(0.0 < self.threshold <= 1.0, "threshold", "must lie in (0, 1]")
        _check(len(self.roster) == self.n_agents, "agent.<i>.mode",
               f"roster has {len(self.roster)} entries for n_agents={self.n_agents}")
        if self.env == "ipd":
            _check(AgentMode.BYPASS not in self.modes, "agent.<i>.mode", "bypass needs a no-op action; IPD has none")
        if AgentMode.FAKE in self.modes:
            # a non-dominating constant only warns; the run still proceeds
            check_dominance(self.adversary_c_adv, 10.0 if self.env == "er" else 0.0, self.r_max)
        return self


def _check(ok: bool, key: str, constraint: str) -> None:
    if not ok:
        raise ConfigError(f"{key}: {constraint}")


_SCALARS = {f.name: f for f in dataclasses.fields(RunConfig) if f.name != "roster"}
_AGENT_KEY = re.compile(r"^agent\.(\d+)\.(mode|c_adv)$")


def _coerce(key: str, raw: str):
    kind = _SCALARS[key].type
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected {kind}, got {raw!r}") from None
    return raw


def parse_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines into a dict of raw strings (no validation)."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def from_mapping(entries: dict, base: RunConfig | None = None) -> RunConfig:
    """Layer raw ``entries`` over ``base`` (defaults when omitted)."""
    base = base or RunConfig()
    scalars = {}
    agents: dict[int, dict] = {}
    for key, raw in entries.items():
        m = _AGENT_KEY.match(key)
        if m:
            agents.setdefault(int(m.group(1)), {})[m.group(2)] = raw
        elif key in _SCALARS:
            scalars[key] = _coerce(key, raw)
        else:
            raise ConfigError(f"{key}: unknown key")
    cfg = dataclasses.replace(base, **scalars)
    n = cfg.n_agents
    roster = [dataclasses.replace(a) for a in base.roster]
    if len(roster) != n:
        fill = roster[-1].mode if roster else AgentMode.LIO
        roster = (roster + [AgentSpec(fill) for _ in range(n)])[:n]
    for idx, kv in sorted(agents.items()):
        if idx >= n:
            raise ConfigError(f"agent.{idx}: index out of range for n_agents={n}")
        if "mode" in kv:
            try:
                roster[idx].mode = AgentMode(kv["mode"])
            except ValueError:
                choices = ", ".join(m.value for m in AgentMode)
                raise ConfigError(f"agent.{idx}.mode: unknown mode {kv['mode']!r} (choose from {choices})") from None
        if "c_adv" in kv:
            try:
                roster[idx].c_adv = float(kv["c_adv"])
            except ValueError:
                raise ConfigError(f"agent.{idx}.c_adv: expected float, got {kv['c_adv']!r}") from None
    cfg.roster = roster
    for idx, spec in enumerate(roster):
        if spec.c_adv is not None and spec.mode is not AgentMode.FAKE:
            raise ConfigError(f"agent.{idx}.c_adv: only valid for mode 'fake'")
    return cfg


def load_config(path, preset: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Read, layer and validate a config file.

    Layering order: defaults, then the preset (``preset`` argument or the
    file's own ``preset`` key), then the file's keys, then ``overrides``.
    """
    from arena.expctl.presets import get_preset

    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    entries = parse_text(text, str(path))
    name = preset or entries.get("preset", "")
    base = get_preset(name) if name else RunConfig()
    entries.pop("preset", None)
    cfg = from_mapping(entries, base)
    if overrides:
        cfg = from_mapping({k: str(v) for k, v in overrides.items()}, cfg)
    cfg.preset = name
    return cfg.validate()


def dump_config(cfg: RunConfig) -> str:
    """Fully materialized ``key = value`` text; ``parse_text`` round-trips it."""
    lines = []
    for name in _SCALARS:
        value = getattr(cfg, name)
        lines.append(f"{name} = {repr(value) if isinstance(value, float) else value}")
    for i, spec in enumerate(cfg.roster):
        lines.append(f"agent.{i}.mode = {spec.mode.value}")
        if spec.c_adv is not None:
            lines.append(f"agent.{i}.c_adv = {spec.c_adv!r}")
    return "\n".join(lines) + "\n"
