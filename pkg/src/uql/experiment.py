"""Run configuration, seeding, orchestration and result files.

Configs are TOML text (``.cfg``). A run directory holds ``seed_<n>.csv``
(``seed,step,metric,value``), ``values_seed_<n>.csv`` (final member-mean
table), ``aggregate.csv``, the resolved ``config.cfg`` and ``manifest.json``.
"""

from __future__ import annotations

import copy
import csv
import dataclasses
import json
import math
import os
import sys
import typing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .agent import AgentConfig, NumericFault, OnlineConfig, ReplayBuffer, run_online_phase, run_uniform_update_phase
from .baselines import BaselineKind, make_learner
from .mdp import DEFAULT_MAP, GridworldSpec, MapError, TabularMdp, build_gridworld, chain_mdp, random_mdp
from .oracle import GroundTruth, value_iteration

ALGORITHMS = ("uql", "q-learning", "double-q", "sql-fixed-beta", "ensemble-mean")
PHASES = ("uniform", "online")
OUTPUT_ROOT_ENV = "UQL_OUTPUT_ROOT"
BUNDLED_CONFIGS = Path(__file__).parent / "configs"
MASK64 = (1 << 64) - 1


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending field."""


# ---------------------------------------------------------------------------
# Seeding
# ---------------------------------------------------------------------------


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def derive_seed(seed: int, stream: int) -> int:
    """Seed of random stream ``stream`` for run seed ``seed``:
    ``splitmix64(splitmix64(seed) ^ stream)``."""
    return splitmix64(splitmix64(seed & MASK64) ^ stream)


STREAM_INIT, STREAM_RUN = 0, 1


# ---------------------------------------------------------------------------
# Config dataclasses
# ---------------------------------------------------------------------------


@dataclass
class EnvConfig:
    kind: str = "gridworld"
    map: str = "default"
    slip_prob: float = 0.2
    goal_reward: float = 1.0
    step_reward: float = 0.0
    discount: float = 0.95
    reward_noise_std: float = 0.0
    num_states: int = 5
    num_actions: int = 3
    num_terminal: int = 0
    concentration: float = 1.0
    seed: int = 0
    chain_rewards: list[float] = field(default_factory=lambda: [0.0, 0.0, 0.0, 1.0])

    def __post_init__(self):
        if self.kind not in ("gridworld", "random", "chain"):
            raise ValueError(f"unknown environment kind {self.kind!r}")

    def ascii_map(self, base_dir: Optional[Path] = None) -> str:
        if self.map == "default":
            return DEFAULT_MAP
        if "\n" in self.map:
            return self.map
        path = Path(self.map)
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
        if not path.exists():
            raise ConfigError(f"environment.map: file {str(path)!r} not found")
        return path.read_text()

    def build(self, base_dir: Optional[Path] = None) -> TabularMdp:
        if self.kind == "gridworld":
            spec = GridworldSpec(self.ascii_map(base_dir), self.slip_prob, self.goal_reward,
                                 self.step_reward, self.discount, self.reward_noise_std)
            return build_gridworld(spec)
        if self.kind == "random":
            rng = np.random.default_rng(derive_seed(self.seed, 0xE))
            return random_mdp(self.num_states, self.num_actions, self.discount, rng,
                              self.num_terminal, self.reward_noise_std, self.concentration)
        return chain_mdp(self.chain_rewards, self.discount)


@dataclass
class RunConfig:
    name: str = "run"
    algorithm: str = "uql"
    phase: str = "uniform"
    num_updates: int = 10_000
    seeds: list[int] = field(default_factory=lambda: [0])
    probe_states: list[Any] = field(default_factory=list)
    record_interval: int = 50
    output_dir: str = "results"
    environment: EnvConfig = field(default_factory=EnvConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    baseline: BaselineKind = field(default_factory=BaselineKind)
    online: OnlineConfig = field(default_factory=OnlineConfig)
    variants: dict[str, dict] = field(default_factory=dict)

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.phase not in PHASES:
            raise ValueError(f"phase must be one of {PHASES}")
        if not self.seeds:
            raise ValueError("seeds must be nonempty")
        if self.record_interval < 1:
            raise ValueError("record_interval must be >= 1")
        if self.num_updates < 0:
            raise ValueError("num_updates must be >= 0")
        if self.algorithm == "ensemble-mean" and self.agent.ensemble_size < 2:
            raise ValueError("ensemble-mean needs agent.ensemble_size >= 2")


# ---------------------------------------------------------------------------
# (De)serialisation
# ---------------------------------------------------------------------------


def _coerce(tp, value, path):
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a table")
        return from_dict(tp, value, path)
    if origin is Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        return _coerce(args[0], value, path) if len(args) == 1 else value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list")
        (item,) = typing.get_args(tp)
        return [_coerce(item, v, f"{path}[{i}]") for i, v in enumerate(value)]
    if origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a table")
        return copy.deepcopy(value)
    return value


def from_dict(cls, data: dict, path: str = ""):
    """Build dataclass ``cls`` from nested dicts with field-level error messages."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = set(data) - names
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigError(f"{where}{sorted(unknown)[0]}: unknown field")
    kwargs = {}
    for key, value in data.items():
        sub = f"{path}.{key}" if path else key
        kwargs[key] = _coerce(hints[key], value, sub)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or cls.__name__}: {exc}") from None


def to_dict(obj) -> dict:
    def clean(v):
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items() if x is not None}
        if isinstance(v, (list, tuple)):
            return [clean(x) for x in v]
        return v

    return clean(dataclasses.asdict(obj))


def loads_config(text: str) -> RunConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config syntax: {exc}") from None
    cfg = from_dict(RunConfig, data)
    for label, override in cfg.variants.items():
        if not isinstance(override, dict):
            raise ConfigError(f"variants.{label}: expected a table")
        try:
            with_overrides(cfg, override)
        except ConfigError as exc:
            raise ConfigError(f"variants.{label}: {exc}") from None
    return cfg


def dumps_config(cfg: RunConfig) -> str:
    data = to_dict(cfg)
    if not data.get("variants"):
        data.pop("variants", None)
    return tomli_w.dumps(data)


def resolve_config_path(path: str | Path) -> Path:
    p = Path(path)
    if p.exists():
        return p
    bundled = BUNDLED_CONFIGS / p.name
    if bundled.exists():
        return bundled
    raise ConfigError(f"config file {str(path)!r} not found")


def load_config(path: str | Path) -> tuple[RunConfig, Path]:
    p = resolve_config_path(path)
    return loads_config(p.read_text()), p.parent


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def with_overrides(cfg: RunConfig, override: dict) -> RunConfig:
    data = to_dict(cfg)
    data.pop("variants", None)
    return from_dict(RunConfig, _deep_merge(data, override))


def set_param(cfg: RunConfig, dotted: str, value) -> RunConfig:
    """Copy of ``cfg`` with the dotted field ``dotted`` replaced by ``value``."""
    data = to_dict(cfg)
    data.pop("variants", None)
    node: Any = data
    cls: Any = RunConfig
    keys = dotted.split(".")
    for i, key in enumerate(keys):
        if not dataclasses.is_dataclass(cls) or key not in {f.name for f in dataclasses.fields(cls)}:
            raise ConfigError(f"{dotted}: cannot resolve {key!r}")
        hint = typing.get_type_hints(cls)[key]
        if i == len(keys) - 1:
            node[key] = str(value) if hint is str and not isinstance(value, str) else value
        else:
            node = node.setdefault(key, {})
            cls = hint
    out = from_dict(RunConfig, data)
    out.variants = copy.deepcopy(cfg.variants)
    return out


def parse_scalar(text: str):
    """Sweep value token: int, float (``inf`` allowed), bool or bare string."""
    token = text.strip()
    if token.lower() in ("true", "false"):
        return token.lower() == "true"
    for conv in (int, float):
        try:
            return conv(token)
        except ValueError:
            pass
    return token


def format_scalar(value) -> str:
    if isinstance(value, float):
        return "inf" if math.isinf(value) and value > 0 else repr(value)
    return str(value)


# ---------------------------------------------------------------------------
# Probes
# ---------------------------------------------------------------------------


def resolve_probes(mdp: TabularMdp, probes) -> tuple[list[int], list[str]]:
    ids, labels = [], []
    for p in probes:
        if isinstance(p, (list, tuple)):
            if mdp.layout is None or len(p) != 2:
                raise ConfigError("probe_states: [row, col] probes need a gridworld")
            try:
                ids.append(mdp.layout.state_of(int(p[0]), int(p[1])))
            except KeyError as exc:
                raise ConfigError(f"probe_states: {exc.args[0]}") from None
            labels.append(f"r{int(p[0])}c{int(p[1])}")
        else:
            if not 0 <= int(p) < mdp.num_states:
                raise ConfigError(f"probe_states: state {p} out of range")
            ids.append(int(p))
            labels.append(f"s{int(p)}")
    return ids, labels


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------


@dataclass
class SeedResult:
    seed: int
    status: str
    rows: list
    final_values: Optional[np.ndarray]
    error: str = ""
    tables: Optional[np.ndarray] = None


def run_seed(cfg: RunConfig, seed: int, base_dir: Optional[Path] = None,
             mdp: Optional[TabularMdp] = None, truth: Optional[GroundTruth] = None) -> SeedResult:
    """One deterministic run: a pure function of ``(cfg, seed)``."""
    mdp = mdp if mdp is not None else cfg.environment.build(base_dir)
    truth = truth if truth is not None else value_iteration(mdp)
    probes, labels = resolve_probes(mdp, cfg.probe_states)
    rng_init = np.random.default_rng(derive_seed(seed, STREAM_INIT))
    rng = np.random.default_rng(derive_seed(seed, STREAM_RUN))
    learner = make_learner(cfg.algorithm, mdp.num_states, mdp.num_actions, mdp.discount, cfg.agent,
                           rng_init, baseline=cfg.baseline, terminal=mdp.terminal)
    rows = []
    try:
        with np.errstate(over="raise", invalid="raise"):
            if cfg.phase == "uniform":
                stream = run_uniform_update_phase(mdp, learner, cfg.num_updates, rng, probes, truth,
                                                  cfg.record_interval, cfg.agent.sample_sharing, labels)
            else:
                stream = run_online_phase(mdp, learner, cfg.online, cfg.agent.exploration,
                                          ReplayBuffer(cfg.online.buffer_capacity), cfg.num_updates, rng,
                                          probes, truth, cfg.record_interval, labels)
            for record in stream:
                for metric, value in record.metrics().items():
                    rows.append((seed, record.step, metric, float(value)))
    except (NumericFault, FloatingPointError) as exc:
        return SeedResult(seed, "failed", rows, None, f"{type(exc).__name__}: {exc}")
    tables = learner.tables.copy()
    return SeedResult(seed, "ok", rows, tables.mean(axis=0), "", tables)


def _run_seed_job(args):
    cfg_text, seed, base_dir = args
    return run_seed(loads_config(cfg_text), seed, base_dir)


def _fmt(value: float) -> str:
    return repr(float(value))


def write_result_table(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["seed", "step", "metric", "value"])
        for seed, step, metric, value in rows:
            writer.writerow([seed, step, metric, _fmt(value)])


def read_result_table(path: Path) -> list[tuple[int, int, str, float]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [(int(r["seed"]), int(r["step"]), r["metric"], float(r["value"])) for r in reader]


def aggregate_rows(per_seed: list[list]) -> list[tuple[int, str, float, float, int]]:
    """Mean and population std across seeds for each (step, metric)."""
    groups: dict[tuple[int, str], list[float]] = {}
    for rows in per_seed:
        for _, step, metric, value in rows:
            groups.setdefault((step, metric), []).append(value)
    out = []
    for (step, metric) in sorted(groups, key=lambda k: (k[0], k[1])):
        vals = np.array(groups[(step, metric)])
        out.append((step, metric, float(vals.mean()), float(vals.std()), len(vals)))
    return out


def write_aggregate(path: Path, agg) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "metric", "mean", "std", "count"])
        for step, metric, mean, std, count in agg:
            writer.writerow([step, metric, _fmt(mean), _fmt(std), count])


def read_aggregate(path: Path) -> list[tuple[int, str, float, float, int]]:
    with open(path, newline="") as fh:
        return [(int(r["step"]), r["metric"], float(r["mean"]), float(r["std"]), int(r["count"]))
                for r in csv.DictReader(fh)]


def write_values(path: Path, table: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["state", "action", "value"])
        for s in range(table.shape[0]):
            for a in range(table.shape[1]):
                writer.writerow([s, a, _fmt(table[s, a])])


def read_values(path: Path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [(int(r["state"]), int(r["action"]), float(r["value"])) for r in csv.DictReader(fh)]
    S = max(r[0] for r in rows) + 1
    A = max(r[1] for r in rows) + 1
    out = np.zeros((S, A))
    for s, a, v in rows:
        out[s, a] = v
    return out


@dataclass
class Manifest:
    path: Path
    data: dict

    @property
    def ok(self) -> bool:
        return self.data.get("status") == "ok"


def default_output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "."))


def _resolve_output(cfg: RunConfig, output_dir) -> Path:
    if output_dir is not None:
        return Path(output_dir)
    out = Path(cfg.output_dir)
    return out if out.is_absolute() else default_output_root() / out


def _run_single(cfg: RunConfig, out: Path, base_dir: Optional[Path], jobs: int, seed_offset: int) -> Manifest:
    mdp = cfg.environment.build(base_dir)
    truth = value_iteration(mdp)
    probes, labels = resolve_probes(mdp, cfg.probe_states)
    out.mkdir(parents=True, exist_ok=True)
    seeds = [s + seed_offset for s in cfg.seeds]
    if jobs > 1 and len(seeds) > 1:
        text = dumps_config(cfg)
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_seed_job, [(text, s, base_dir) for s in seeds]))
    else:
        results = [run_seed(cfg, s, base_dir, mdp, truth) for s in seeds]

    entries, good = [], []
    for res in results:
        entry = {"seed": res.seed, "status": res.status,
                 "streams": {"init": derive_seed(res.seed, STREAM_INIT), "run": derive_seed(res.seed, STREAM_RUN)}}
        if res.status == "ok":
            write_result_table(out / f"seed_{res.seed}.csv", res.rows)
            write_values(out / f"values_seed_{res.seed}.csv", res.final_values)
            entry["files"] = [f"seed_{res.seed}.csv", f"values_seed_{res.seed}.csv"]
            good.append(res.rows)
        else:
            entry["error"] = res.error
        entries.append(entry)
    write_aggregate(out / "aggregate.csv", aggregate_rows(good))
    (out / "config.cfg").write_text(dumps_config(cfg))
    data = {
        "name": cfg.name,
        "algorithm": cfg.algorithm,
        "status": "ok" if all(e["status"] == "ok" for e in entries) else "failed",
        "seed_derivation": "stream seed = splitmix64(splitmix64(seed) ^ stream); init=0, run=1",
        "probes": [{"label": l, "state": s, "v_star": float(truth.v_star[s])} for s, l in zip(probes, labels)],
        "seeds": entries,
    }
    (out / "manifest.json").write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return Manifest(out, data)


def _write_comparison(path: Path, parts: list[tuple[str, str, Path]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["label", "value", "step", "metric", "mean", "std", "count"])
        for label, value, run_dir in parts:
            for step, metric, mean, std, count in read_aggregate(run_dir / "aggregate.csv"):
                writer.writerow([label, value, step, metric, _fmt(mean), _fmt(std), count])


def run_experiment(cfg: RunConfig, output_dir=None, base_dir: Optional[Path] = None, jobs: int = 1,
                   seed_offset: int = 0) -> Manifest:
    """Run every seed (and every variant, if any) and write results under ``output_dir``."""
    out = _resolve_output(cfg, output_dir)
    if not cfg.variants:
        return _run_single(cfg, out, base_dir, jobs, seed_offset)
    out.mkdir(parents=True, exist_ok=True)
    runs, parts = [], []
    for label, override in cfg.variants.items():
        sub = with_overrides(cfg, override)
        m = _run_single(sub, out / label, base_dir, jobs, seed_offset)
        runs.append({"label": label, "dir": label, "status": m.data["status"]})
        parts.append((label, label, out / label))
    _write_comparison(out / "comparison.csv", parts)
    data = {"name": cfg.name, "status": "ok" if all(r["status"] == "ok" for r in runs) else "failed",
            "runs": runs}
    (out / "config.cfg").write_text(dumps_config(cfg))
    (out / "manifest.json").write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return Manifest(out, data)


def sweep(cfg: RunConfig, param: str, values: list, output_dir=None, base_dir: Optional[Path] = None,
          jobs: int = 1, seed_offset: int = 0) -> Manifest:
    """One run directory per value of the dotted ``param``, plus ``comparison.csv``."""
    if not values:
        raise ConfigError("sweep needs at least one value")
    points = [(f"{param.split('.')[-1]}={format_scalar(v)}", v, set_param(cfg, param, v)) for v in values]
    out = _resolve_output(cfg, output_dir)
    out.mkdir(parents=True, exist_ok=True)
    runs, parts = [], []
    for label, value, point in points:
        m = run_experiment(point, out / label, base_dir, jobs, seed_offset)
        runs.append({"label": label, "value": format_scalar(value), "dir": label, "status": m.data["status"]})
        if point.variants:
            parts += [(f"{label}/{v}", format_scalar(value), out / label / v) for v in point.variants]
        else:
            parts.append((label, format_scalar(value), out / label))
    _write_comparison(out / "comparison.csv", parts)
    data = {"name": cfg.name, "param": param, "status": "ok" if all(r["status"] == "ok" for r in runs) else "failed",
            "runs": runs}
    (out / "manifest.json").write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return Manifest(out, data)


def dump_oracle(env: EnvConfig, out: Path, base_dir: Optional[Path] = None, tol: float = 1e-10) -> GroundTruth:
    """Write Q*, V* and the optimal action sets of an environment."""
    mdp = env.build(base_dir)
    truth = value_iteration(mdp, tol)
    out.mkdir(parents=True, exist_ok=True)
    write_values(out / "q_star.csv", truth.q_star)
    with open(out / "v_star.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["state", "row", "col", "terminal", "v_star", "optimal_actions"])
        for s in range(mdp.num_states):
            r, c = mdp.layout.cells[s] if mdp.layout else ("", "")
            acts = "|".join(str(a) for a in sorted(truth.pi_star[s]))
            writer.writerow([s, r, c, int(mdp.terminal[s]), _fmt(truth.v_star[s]), acts])
    (out / "config.cfg").write_text(tomli_w.dumps({"environment": to_dict(env)}))
    return truth
