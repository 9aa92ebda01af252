"""Experiment configuration and its flat ``key = value`` text form.

Example::

    seed = 0
    scenario.clients = 3
    scenario.sizes = 159,1117,597,124; 123,522,2500,616; 2500,148,66,808
    algorithm.family = ElasticTransfer
    algorithm.lambda2 = 0.5
    schedule.rounds = 25

Lines starting with ``#`` are comments. Relative data paths are resolved
against the directory of the config file.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Optional, Tuple

from .engine import FAMILIES, AlgorithmSpec, ConfigError, RoundSchedule, default_lambdas
from .scenario import (Scenario, ScenarioConfig, ScenarioError, generate_synthetic,
                       load_external, scale_train_fraction)


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    algorithm: AlgorithmSpec = field(default_factory=AlgorithmSpec)
    schedule: RoundSchedule = field(default_factory=RoundSchedule)
    train_fraction: float = 1.0
    output_dir: str = "out"
    seed: int = 0
    data_path: Optional[str] = None
    manifest_path: Optional[str] = None

    def validate(self) -> None:
        self.algorithm.validate()
        self.schedule.validate()
        if self.data_path is None:
            try:
                self.scenario.validate()
            except ScenarioError as exc:
                raise ConfigError(str(exc)) from None
        if not 0.0 < self.train_fraction <= 1.0:
            raise ConfigError("train_fraction must lie in (0, 1]")
        if self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")

    def build_scenario(self) -> Scenario:
        if self.data_path is not None:
            sc = load_external(self.data_path, self.manifest_path, seed=self.scenario.seed)
        else:
            sc = generate_synthetic(self.scenario)
        return scale_train_fraction(sc, self.train_fraction, seed=self.seed)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Reseed training; the scenario follows unless its seed was pinned."""
        return replace(self, seed=seed, schedule=replace(self.schedule, seed=seed),
                       scenario=self.scenario if self._scenario_seed_pinned
                       else replace(self.scenario, seed=seed))

    _scenario_seed_pinned: bool = field(default=False, repr=False, compare=False)


def _ints(text: str) -> Tuple[int, ...]:
    return tuple(int(v) for v in text.replace(" ", "").split(",") if v)


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _sizes(text: str) -> Tuple[Tuple[int, ...], ...]:
    return tuple(_ints(row) for row in text.split(";") if row.strip())


KEYS = (
    "seed", "train_fraction", "output_dir",
    "scenario.clients", "scenario.tasks", "scenario.sizes", "scenario.feature_dim",
    "scenario.heterogeneity", "scenario.label_noise", "scenario.seed",
    "scenario.augment_copies", "scenario.augment_noise",
    "scenario.data", "scenario.manifest",
    "algorithm.family", "algorithm.lambda1", "algorithm.lambda2", "algorithm.lambda3",
    "algorithm.lr", "algorithm.batch_size", "algorithm.hidden", "algorithm.activation",
    "algorithm.weighted_aggregation",
    "schedule.rounds", "schedule.epochs", "schedule.dropout",
)


def parse_pairs(text: str) -> Dict[str, str]:
    pairs: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in pairs:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        pairs[key] = value
    return pairs


def from_pairs(pairs: Dict[str, str], base_dir: Optional[Path] = None) -> ExperimentConfig:
    for key in pairs:
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}")
    get = pairs.get
    try:
        seed = int(get("seed", "0"))
        sc_defaults = ScenarioConfig()
        clients = int(get("scenario.clients", sc_defaults.clients))
        tasks = int(get("scenario.tasks", sc_defaults.tasks))
        if "scenario.sizes" in pairs:
            sizes = _sizes(pairs["scenario.sizes"])
        elif (clients, tasks) == (sc_defaults.clients, sc_defaults.tasks) \
                or "scenario.data" in pairs:
            sizes = sc_defaults.size_table
        else:
            raise ConfigError("scenario.sizes is required when clients/tasks differ "
                              "from the 3x4 default")
        pinned = "scenario.seed" in pairs
        scenario = ScenarioConfig(
            clients=clients, tasks=tasks, size_table=sizes,
            feature_dim=int(get("scenario.feature_dim", sc_defaults.feature_dim)),
            heterogeneity=float(get("scenario.heterogeneity", sc_defaults.heterogeneity)),
            label_noise=float(get("scenario.label_noise", sc_defaults.label_noise)),
            seed=int(pairs["scenario.seed"]) if pinned else seed,
            augment_copies=int(get("scenario.augment_copies", 0)),
            augment_noise=float(get("scenario.augment_noise", 0.0)),
        )
        alg_defaults = AlgorithmSpec()
        family = get("algorithm.family", alg_defaults.family)
        if family not in FAMILIES:
            raise ConfigError(f"unknown family {family!r}; choose from {FAMILIES}")
        lam_defaults = default_lambdas(family)
        algorithm = AlgorithmSpec(
            family=family,
            lambdas=tuple(float(get(f"algorithm.lambda{i + 1}", lam_defaults[i]))
                          for i in range(3)),
            lr=float(get("algorithm.lr", alg_defaults.lr)),
            batch_size=int(get("algorithm.batch_size", alg_defaults.batch_size)),
            hidden=_ints(get("algorithm.hidden", ",".join(map(str, alg_defaults.hidden)))),
            activation=get("algorithm.activation", alg_defaults.activation),
            weighted_aggregation=_bool(get("algorithm.weighted_aggregation", "false")),
        )
        sch_defaults = RoundSchedule()
        schedule = RoundSchedule(
            rounds=int(get("schedule.rounds", sch_defaults.rounds)),
            epochs=int(get("schedule.epochs", sch_defaults.epochs)),
            dropout=get("schedule.dropout", sch_defaults.dropout),
            seed=seed,
        )
        fraction = float(get("train_fraction", 1.0))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None

    def _path(key):
        if key not in pairs:
            return None
        p = Path(pairs[key])
        if base_dir is not None and not p.is_absolute():
            p = base_dir / p
        return str(p)

    cfg = ExperimentConfig(scenario=scenario, algorithm=algorithm, schedule=schedule,
                           train_fraction=fraction,
                           output_dir=get("output_dir", "out"), seed=seed,
                           data_path=_path("scenario.data"),
                           manifest_path=_path("scenario.manifest"),
                           _scenario_seed_pinned=pinned)
    cfg.validate()
    return cfg


def parse_config(text: str, base_dir: Optional[Path] = None) -> ExperimentConfig:
    return from_pairs(parse_pairs(text), base_dir)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, path.parent)


def to_pairs(cfg: ExperimentConfig) -> Dict[str, str]:
    """Fully resolved configuration, in canonical key order."""
    sc, alg, sch = cfg.scenario, cfg.algorithm, cfg.schedule
    pairs = {
        "seed": str(cfg.seed),
        "train_fraction": repr(float(cfg.train_fraction)),
        "output_dir": cfg.output_dir,
        "scenario.clients": str(sc.clients),
        "scenario.tasks": str(sc.tasks),
        "scenario.sizes": "; ".join(",".join(str(int(n)) for n in row)
                                    for row in sc.size_table),
        "scenario.feature_dim": str(sc.feature_dim),
        "scenario.heterogeneity": repr(float(sc.heterogeneity)),
        "scenario.label_noise": repr(float(sc.label_noise)),
        "scenario.seed": str(sc.seed),
        "scenario.augment_copies": str(sc.augment_copies),
        "scenario.augment_noise": repr(float(sc.augment_noise)),
        "algorithm.family": alg.family,
        "algorithm.lambda1": repr(float(alg.lambdas[0])),
        "algorithm.lambda2": repr(float(alg.lambdas[1])),
        "algorithm.lambda3": repr(float(alg.lambdas[2])),
        "algorithm.lr": repr(float(alg.lr)),
        "algorithm.batch_size": str(alg.batch_size),
        "algorithm.hidden": ",".join(map(str, alg.hidden)),
        "algorithm.activation": alg.activation,
        "algorithm.weighted_aggregation": str(alg.weighted_aggregation).lower(),
        "schedule.rounds": str(sch.rounds),
        "schedule.epochs": str(sch.epochs),
        "schedule.dropout": sch.dropout,
    }
    if cfg.data_path is not None:
        pairs["scenario.data"] = cfg.data_path
    if cfg.manifest_path is not None:
        pairs["scenario.manifest"] = cfg.manifest_path
    return pairs


def to_text(cfg: ExperimentConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in to_pairs(cfg).items())
