"""CSV and SVG emission. Every file is a pure function of its inputs."""
from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from arena.expctl.metrics import ProbeRow, windowed_rate

SUMMARY_HEADER = ["preset", "seed", "convergence_episode", "final_success_rate", "adversary_top_reward"]
PROBE_HEADER = ["agent", "role", "action", "mean_incentive_received", "count"]
STEPS_HEADER = ["episode", "t", "agent", "action", "incentive_received"]
RETURNS_HEADER = ["preset", "seed", "agent", "mode", "mean_env_return", "mean_total_return"]

PLOT_POINTS = 400


def fmt(x) -> str:
    """17 significant digits for reals, blank for ``None``."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def episodes_header(n: int) -> list[str]:
    cols = ["episode", "success"]
    for prefix in ("env_return", "total_return", "inc_given", "inc_recv"):
        cols += [f"{prefix}_{j}" for j in range(n)]
    return cols


def _write(path: Path, rows, header) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) if not isinstance(v, str) else v for v in row])
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(buf.getvalue())
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def write_episodes(path, records) -> Path:
    n = records.n_agents
    rows = []
    success = records.success_column()
    for e in range(records.n_episodes):
        rows.append([e, success[e], *records.env_return[e], *records.total_return[e],
                     *records.inc_given[e], *records.inc_received[e]])
    return _write(Path(path), rows, episodes_header(n))


def write_summary(path, summaries) -> Path:
    rows = [[s.preset, s.seed, s.convergence_episode, s.final_success_rate, s.adversary_top_reward]
            for s in summaries]
    return _write(Path(path), rows, SUMMARY_HEADER)


def write_returns(path, summaries) -> Path:
    rows = []
    for s in summaries:
        for j, mode in enumerate(s.modes):
            rows.append([s.preset, s.seed, j, mode, s.mean_env_return[j], s.mean_total_return[j]])
    return _write(Path(path), rows, RETURNS_HEADER)


def write_probe(path, rows: list[ProbeRow]) -> Path:
    return _write(Path(path), [[r.agent, r.role, r.action, r.mean_incentive_received, r.count]
                               for r in rows], PROBE_HEADER)


def write_steps(path, records) -> Path:
    rows = []
    for e in records.step_episodes():
        length = records.lengths[e]
        for t in range(length):
            for j in range(records.n_agents):
                rows.append([e, t, j, int(records.actions[e, t, j]), records.received[e, t, j]])
    return _write(Path(path), rows, STEPS_HEADER)


def read_steps(path):
    """Yield ``(episode, t, agent, action, incentive)`` from a steps.csv."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header != STEPS_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        for row in r:
            yield int(row[0]), int(row[1]), int(row[2]), int(row[3]), float(row[4])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _downsample(y: np.ndarray, points: int) -> tuple[np.ndarray, np.ndarray]:
    if y.size <= points:
        return np.arange(y.size, dtype=np.float64), y
    idx = np.linspace(0, y.size - 1, points).round().astype(np.int64)
    return idx.astype(np.float64), y[idx]


def svg_line_chart(series: dict[str, np.ndarray], title: str, width=640, height=360) -> str:
    """Minimal polyline chart; no external plotting dependency so bytes stay stable."""
    pad = 48
    palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    finite = [np.asarray(v, dtype=np.float64) for v in series.values() if len(v)]
    lo = min((float(v.min()) for v in finite), default=0.0)
    hi = max((float(v.max()) for v in finite), default=1.0)
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    xmax = max((len(v) - 1 for v in finite), default=1) or 1

    def sx(x):
        return pad + (width - 2 * pad) * x / xmax

    def sy(y):
        return height - pad - (height - 2 * pad) * (y - lo) / (hi - lo)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
           f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
           f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
           f'<text x="{pad - 4}" y="{sy(hi) + 4:.1f}" text-anchor="end" font-size="10">{hi:.3g}</text>',
           f'<text x="{pad - 4}" y="{sy(lo) + 4:.1f}" text-anchor="end" font-size="10">{lo:.3g}</text>',
           f'<text x="{width - pad}" y="{height - pad + 16}" text-anchor="end" font-size="10">{xmax}</text>']
    for k, (name, y) in enumerate(series.items()):
        y = np.asarray(y, dtype=np.float64)
        if not y.size:
            continue
        xs, ys = _downsample(y, PLOT_POINTS)
        pts = " ".join(f"{sx(x):.2f},{sy(v):.2f}" for x, v in zip(xs, ys))
        color = palette[k % len(palette)]
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{pts}"/>')
        out.append(f'<text x="{width - pad + 4}" y="{pad + 14 * k}" font-size="10" fill="{color}">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_charts(out_dir, records, window: int) -> list[Path]:
    out_dir = Path(out_dir)
    n = records.n_agents
    smooth = max(1, min(window, records.n_episodes // 10 or 1))
    charts = {}
    if records.kind == "er":
        charts["success_rate"] = {"success": windowed_rate(records.success, smooth)}
    for name, arr in (("env_return", records.env_return), ("total_return", records.total_return),
                      ("inc_given", records.inc_given), ("inc_recv", records.inc_received)):
        charts[name] = {f"agent {j}": windowed_rate(arr[:, j], smooth) for j in range(n)}
    paths = []
    for name, series in charts.items():
        p = out_dir / f"{name}.svg"
        p.write_text(svg_line_chart(series, f"{name} (trailing mean over {smooth} episodes)"))
        paths.append(p)
    return paths
