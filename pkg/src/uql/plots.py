"""SVG figures from run directories: metric curves and gridworld maps."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .experiment import ConfigError, RunConfig, loads_config, read_aggregate, read_values
from .mdp import ARROWS, MOVES

KINDS = ("value-curve", "bias-curve", "policy-map", "value-map")
CURVE_PREFIX = {"value-curve": "probe_value:", "bias-curve": "probe_bias:"}

# Keep SVG output free of run-dependent ids and dates.
plt.rcParams["svg.hashsalt"] = "uql"
plt.rcParams["svg.fonttype"] = "none"


class PlotError(ValueError):
    """Results are missing what the requested figure needs."""


def _curve_sources(results: Path) -> list[tuple[str, list]]:
    """(label, aggregate rows) for a single run, a variant set or a sweep."""
    if (results / "aggregate.csv").exists():
        return [(results.name, read_aggregate(results / "aggregate.csv"))]
    comparison = results / "comparison.csv"
    if comparison.exists():
        groups: dict[str, list] = {}
        with open(comparison, newline="") as fh:
            for r in csv.DictReader(fh):
                groups.setdefault(r["label"], []).append(
                    (int(r["step"]), r["metric"], float(r["mean"]), float(r["std"]), int(r["count"])))
        return list(groups.items())
    raise PlotError(f"no aggregate.csv or comparison.csv under {results}")


def _reference_values(results: Path) -> dict[str, float]:
    manifest = results / "manifest.json"
    if not manifest.exists():
        return {}
    data = json.loads(manifest.read_text())
    return {p["label"]: p["v_star"] for p in data.get("probes", [])}


def plot_curves(results: Path, kind: str, out: Path, metric: Optional[str] = None) -> Path:
    """Mean across seeds with a one-std band, one line per run and probe."""
    sources = _curve_sources(results)
    prefix = CURVE_PREFIX[kind]
    fig, ax = plt.subplots(figsize=(6, 4))
    any_rows = any(rows for _, rows in sources)
    drawn = 0
    for label, rows in sources:
        names = sorted({m for _, m, *_ in rows if (m == metric if metric else m.startswith(prefix))})
        if rows and not names:
            plt.close(fig)
            raise PlotError(f"metric {metric or prefix + '*'} not found in results for {label}")
        for name in names:
            pts = sorted((s, mu, sd) for s, m, mu, sd, _ in rows if m == name)
            steps, mean, std = (np.array(v) for v in zip(*pts))
            tag = label if len(names) == 1 else f"{label} {name.split(':', 1)[-1]}"
            (line,) = ax.plot(steps, mean, label=tag)
            ax.fill_between(steps, mean - std, mean + std, color=line.get_color(), alpha=0.2, linewidth=0)
            drawn += 1
    if kind == "bias-curve" and any_rows:
        ax.axhline(0.0, color="black", linewidth=0.8, linestyle="--")
    if kind == "value-curve" and len(sources) == 1:
        for label, v in _reference_values(results).items():
            ax.axhline(v, color="black", linewidth=0.8, linestyle="--", label=f"V* {label}")
    ax.set_xlabel("update")
    ax.set_ylabel("estimated value" if kind == "value-curve" else "bias")
    if drawn:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out, metadata={"Date": None})
    plt.close(fig)
    return out


def _table_and_config(results: Path) -> tuple[np.ndarray, RunConfig]:
    cfg_path = results / "config.cfg"
    if not cfg_path.exists():
        raise PlotError(f"{cfg_path} not found")
    try:
        cfg = loads_config(cfg_path.read_text())
    except ConfigError as exc:
        raise PlotError(f"{cfg_path}: {exc}") from None
    if (results / "q_star.csv").exists():
        return read_values(results / "q_star.csv"), cfg
    files = sorted(results.glob("values_seed_*.csv"))
    if not files:
        raise PlotError(f"no value tables (values_seed_*.csv or q_star.csv) under {results}")
    return np.mean([read_values(f) for f in files], axis=0), cfg


def plot_map(results: Path, kind: str, out: Path) -> Path:
    """Heatmap of max_a Q over the grid, with greedy arrows for policy-map."""
    q, cfg = _table_and_config(results)
    mdp = cfg.environment.build(results)
    layout = mdp.layout
    if layout is None:
        raise PlotError("maps need a gridworld environment")
    if q.shape != (mdp.num_states, mdp.num_actions):
        raise PlotError(f"value table shape {q.shape} does not match the environment")
    grid = np.full(layout.shape, np.nan)
    for s, (r, c) in enumerate(layout.cells):
        if not mdp.terminal[s]:
            grid[r, c] = q[s].max()
    fig, ax = plt.subplots(figsize=(5, 5))
    image = ax.imshow(np.ma.masked_invalid(grid), cmap="viridis")
    walls = np.zeros(layout.shape)
    for r, c in layout.walls:
        walls[r, c] = 1
    ax.imshow(np.ma.masked_equal(walls, 0), cmap="Greys", vmin=0, vmax=1)
    fig.colorbar(image, ax=ax, fraction=0.046, pad=0.04)
    if kind == "policy-map":
        for s, (r, c) in enumerate(layout.cells):
            if mdp.terminal[s]:
                ax.text(c, r, "G", ha="center", va="center", fontweight="bold")
                continue
            dr, dc = MOVES[int(q[s].argmax())]
            ax.arrow(c - 0.25 * dc, r - 0.25 * dr, 0.3 * dc, 0.3 * dr, head_width=0.15,
                     length_includes_head=True, color="white")
    else:
        for s, (r, c) in enumerate(layout.cells):
            text = "G" if mdp.terminal[s] else f"{q[s].max():.2f}"
            ax.text(c, r, text, ha="center", va="center", color="black" if mdp.terminal[s] else "white", fontsize=6)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(out, metadata={"Date": None})
    plt.close(fig)
    return out


def policy_text(q: np.ndarray, mdp) -> str:
    """Greedy policy as an ASCII grid of arrows (walls '#', goal 'G')."""
    layout = mdp.layout
    rows = [["#"] * layout.shape[1] for _ in range(layout.shape[0])]
    for s, (r, c) in enumerate(layout.cells):
        rows[r][c] = "G" if mdp.terminal[s] else ARROWS[int(q[s].argmax())]
    return "\n".join("".join(r) for r in rows)


def render_plots(results, kind: str, out: Optional[Path] = None, metric: Optional[str] = None) -> Path:
    results = Path(results)
    if kind not in KINDS:
        raise PlotError(f"unknown plot kind {kind!r}; expected one of {KINDS}")
    if not results.exists():
        raise PlotError(f"results path {results} does not exist")
    out = Path(out) if out is not None else results / f"{kind}.svg"
    out.parent.mkdir(parents=True, exist_ok=True)
    if kind in CURVE_PREFIX:
        return plot_curves(results, kind, out, metric)
    return plot_map(results, kind, out)
