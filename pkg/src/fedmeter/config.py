"""Flat ``key = value`` experiment configuration, presets and validation."""
from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from . import availability, privacy
from .fl import METHODS, TrainConfig

SEED_ENV = "FEDMETER_SEED"


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    preset: str = ""
    # training; the defaults are the reference full-scale settings
    rounds: int = 200
    epochs_personalized: int = 5
    epochs_local: int = 10
    lr_personalized: float = 0.01
    lr_local: float = 0.01
    reg_factor: float = 5e-4
    batch_size: int = 32
    hidden_dim: int = 40
    methods: list[str] = field(default_factory=lambda: ["A4"])
    # privacy
    dp_enabled: bool = False
    clip_threshold: float | None = None
    epsilon_per_round: float | None = None
    budget_strategy: str = "auto"
    # failures
    dropout_ratio: float = 0.0
    dropout_mode: str = "uniform_count"
    # data
    data_source: str = "synthetic"
    csv_dir: str = ""
    num_communities: int = 4
    samples_per_community: int = 2000
    heterogeneity: float = 0.7
    # sweeps; an empty list means "use the scalar above"
    sweep_dropout_ratio: list[float] = field(default_factory=list)
    sweep_epsilon: list[float] = field(default_factory=list)
    sweep_reg_factor: list[float] = field(default_factory=list)
    sweep_epochs_local: list[int] = field(default_factory=list)
    # run control
    master_seed: int = 0
    num_seeds: int = 1
    output_dir: str = "runs/out"
    dump_similarity: bool = False
    workers: int = 1

    def seeds(self) -> list[int]:
        return [self.master_seed + k for k in range(self.num_seeds)]

    def sweep_points(self) -> list[TrainConfig]:
        """Every (method, n_c, eps, mu, E2, seed) combination as a TrainConfig.

        A1 never communicates, so failure and privacy sweeps collapse for it.
        """
        points, seen = [], set()
        for method in self.methods:
            for nc in self.sweep_dropout_ratio or [self.dropout_ratio]:
                for eps in self.sweep_epsilon or [self.epsilon_per_round]:
                    for mu in self.sweep_reg_factor or [self.reg_factor]:
                        for e2 in self.sweep_epochs_local or [self.epochs_local]:
                            for seed in self.seeds():
                                local = method == "A1"
                                dp = self.dp_enabled and not local
                                tc = TrainConfig(
                                    rounds=self.rounds,
                                    epochs_personalized=self.epochs_personalized,
                                    epochs_local=e2,
                                    lr_personalized=self.lr_personalized,
                                    lr_local=self.lr_local,
                                    reg_factor=mu,
                                    batch_size=self.batch_size,
                                    method=method,
                                    dp_enabled=dp,
                                    clip_threshold=self.clip_threshold if dp else 1.0,
                                    epsilon_per_round=eps if dp else math.inf,
                                    budget_strategy=self.budget_strategy,
                                    dropout_ratio=0.0 if local else nc,
                                    dropout_mode=self.dropout_mode,
                                    master_seed=seed,
                                    hidden_dim=self.hidden_dim,
                                )
                                key = dataclasses.astuple(tc)
                                if key not in seen:
                                    seen.add(key)
                                    points.append(tc)
        return points


FIELDS = {f.name: f for f in fields(ExperimentConfig)}

# Desk-scale scenarios: R shrunk to 60 with the full-scale ratios kept
# (E2 = 2 E1, lr1 = lr2, mu = 5e-4).  Per-sample SGD keeps the cumulative pull
# of the personalized models toward the global one (lr * mu * steps) of order
# one, as it is at full scale.
_DESK = dict(rounds=60, samples_per_community=2000, batch_size=1, num_seeds=3)

PRESETS: dict[str, dict] = {
    "heterogeneity": dict(_DESK, num_communities=4, methods=["A1", "A2", "A4"], dropout_ratio=0.0),
    "dropout": dict(_DESK, num_communities=16, methods=["A2", "A4"], sweep_dropout_ratio=[0.25, 0.5, 0.75]),
    "privacy": dict(_DESK, num_communities=16, methods=["A3", "A4"], dp_enabled=True, clip_threshold=5.0,
                    dropout_ratio=0.5, sweep_epsilon=[0.1, 0.5, 1.0]),
    "budget_sweep": dict(_DESK, num_communities=4, methods=["A4"], dp_enabled=True, clip_threshold=5.0,
                         dropout_ratio=0.0, sweep_epsilon=[math.inf, 1.0, 0.1, 0.01, 0.001]),
    "regularization": dict(_DESK, num_communities=4, methods=["A4"],
                           sweep_reg_factor=[1e-4, 5e-4, 1e-3, 5e-3]),
    "epochs": dict(_DESK, num_communities=4, methods=["A4"], sweep_epochs_local=[2, 4, 6, 8, 10]),
}

PRESET_HELP = {
    "heterogeneity": "A1 vs A2 vs A4 on 4 heterogeneous communities, no failures",
    "dropout": "A2 vs A4 on 16 communities with n_c in {0.25, 0.5, 0.75}",
    "privacy": "A3 vs A4 with failures (n_c=0.5) and eps in {0.1, 0.5, 1}",
    "budget_sweep": "A4 without failures as eps sweeps {inf, 1, 0.1, 0.01, 0.001}",
    "regularization": "A4 with mu in {1e-4, 5e-4, 1e-3, 5e-3}",
    "epochs": "A4 with E2 in {2, 4, 6, 8, 10}",
}


# ------------------------------------------------------------------ parsing


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_float(text: str) -> float:
    v = float(text)
    if math.isnan(v):
        raise ValueError("NaN not allowed")
    return v


def _parser_for(name: str):
    typ = FIELDS[name].type
    if typ == "bool":
        return _parse_bool
    if typ == "int":
        return int
    if typ == "float":
        return _parse_float
    if typ == "float | None":
        return lambda s: None if s.strip() == "" else _parse_float(s)
    if typ == "list[str]":
        return lambda s: [p.strip() for p in s.split(",") if p.strip()]
    if typ == "list[float]":
        return lambda s: [_parse_float(p) for p in s.split(",") if p.strip()]
    if typ == "list[int]":
        return lambda s: [int(p) for p in s.split(",") if p.strip()]
    return str


def parse_value(key: str, text: str):
    if key not in FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        return _parser_for(key)(text)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {text!r} ({exc})") from None


def parse_text(text: str, source: str = "<config>") -> dict[str, object]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "method":
            key = "methods"
        try:
            out[key] = parse_value(key, value)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return out


def build(file_values: dict | None = None, overrides: dict | None = None, env=None) -> ExperimentConfig:
    """Layer defaults < preset < file < FEDMETER_SEED < explicit overrides."""
    env = os.environ if env is None else env
    file_values = dict(file_values or {})
    overrides = dict(overrides or {})
    preset = overrides.get("preset") or file_values.get("preset") or ""
    values: dict = {}
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; try `fedmeter presets list`")
        values.update(PRESETS[preset])
    values.update(file_values)
    if env.get(SEED_ENV, "").strip():
        values["master_seed"] = parse_value("master_seed", env[SEED_ENV])
    values.update(overrides)
    values["preset"] = preset
    return ExperimentConfig(**values)


def load(path=None, overrides: dict | None = None, env=None) -> ExperimentConfig:
    file_values = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        file_values = parse_text(p.read_text(encoding="utf-8"), str(p))
    return build(file_values, overrides, env)


def _format(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, list):
        return ",".join(_format(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump(cfg: ExperimentConfig) -> str:
    """Every key, one per line; :func:`parse_text` reads it back unchanged."""
    lines = [f"{name} = {_format(getattr(cfg, name))}" for name in FIELDS]
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------- validation


def validate(cfg: ExperimentConfig) -> list[str]:
    """All violated constraints as ``key: message`` strings; empty when valid."""
    d = []
    if cfg.preset and cfg.preset not in PRESETS:
        d.append(f"preset: unknown preset {cfg.preset!r}")
    if cfg.rounds < 1:
        d.append("rounds: must be >= 1")
    for key in ("epochs_personalized", "epochs_local", "batch_size", "hidden_dim", "num_seeds", "workers"):
        if getattr(cfg, key) < 1:
            d.append(f"{key}: must be >= 1")
    for key in ("lr_personalized", "lr_local"):
        if not getattr(cfg, key) > 0:
            d.append(f"{key}: must be > 0")
    if cfg.reg_factor < 0:
        d.append("reg_factor: must be >= 0")
    if not cfg.methods:
        d.append("methods: at least one method required")
    for m in cfg.methods:
        if m not in METHODS:
            d.append(f"methods: unknown method {m!r} (choose from {', '.join(METHODS)})")
    if cfg.dp_enabled:
        if cfg.clip_threshold is None:
            d.append("clip_threshold: required when dp_enabled")
        elif not cfg.clip_threshold > 0:
            d.append("clip_threshold: must be > 0")
        epsilons = cfg.sweep_epsilon or [cfg.epsilon_per_round]
        if any(e is None for e in epsilons):
            d.append("epsilon_per_round: required when dp_enabled")
        elif any(not e > 0 for e in epsilons):
            d.append("epsilon_per_round: budgets must be > 0 (inf disables noise)")
    if cfg.budget_strategy not in ("auto",) + privacy.STRATEGIES:
        d.append(f"budget_strategy: must be auto, fixed or dynamic")
    for nc in cfg.sweep_dropout_ratio or [cfg.dropout_ratio]:
        if not 0.0 <= nc <= 1.0:
            d.append(f"dropout_ratio: {nc} outside [0, 1]")
    if cfg.dropout_mode not in availability.DROPOUT_MODES:
        d.append(f"dropout_mode: must be one of {', '.join(availability.DROPOUT_MODES)}")
    if cfg.data_source not in ("synthetic", "csv_dir"):
        d.append("data_source: must be synthetic or csv_dir")
    if cfg.data_source == "csv_dir" and not cfg.csv_dir:
        d.append("csv_dir: required when data_source = csv_dir")
    if cfg.data_source == "synthetic" and cfg.csv_dir:
        d.append("csv_dir: only allowed when data_source = csv_dir")
    if cfg.num_communities < 1:
        d.append("num_communities: must be >= 1")
    if cfg.samples_per_community < 20:
        d.append("samples_per_community: must be >= 20")
    if cfg.heterogeneity < 0:
        d.append("heterogeneity: must be >= 0")
    for e2 in cfg.sweep_epochs_local:
        if e2 < 1:
            d.append("sweep_epochs_local: entries must be >= 1")
    for mu in cfg.sweep_reg_factor:
        if mu < 0:
            d.append("sweep_reg_factor: entries must be >= 0")
    if cfg.sweep_epsilon and not cfg.dp_enabled:
        d.append("sweep_epsilon: requires dp_enabled")
    if not cfg.output_dir:
        d.append("output_dir: required")
    return d
