"""Client-task data scenarios.

A scenario is a ``clients x tasks`` grid of :class:`ClientTaskDataset` cells.
Cells come either from the seeded synthetic generator, which emulates users
whose preferences partly agree, or from a line-record text file.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .numeric import LabeledSet

DEFAULT_RATIOS = (0.70, 0.15, 0.15)

# Pre-split cell totals (train + validation + test) of the reference
# three-client, four-task benchmark before augmentation.
REFERENCE_SIZES = (
    (159, 1117, 597, 124),
    (123, 522, 2500, 616),
    (2500, 148, 66, 808),
)

HEADER_PREFIX = "#fcl-v1"


class ScenarioError(ValueError):
    pass


class RecordFormatError(ScenarioError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True)
class ClientTaskDataset:
    client_id: int
    task_id: int
    train: LabeledSet
    validation: LabeledSet
    test: LabeledSet

    @property
    def total(self) -> int:
        return len(self.train) + len(self.validation) + len(self.test)


@dataclass(frozen=True)
class Scenario:
    """Grid of cells indexed ``cells[client][task]`` (both zero-based)."""

    cells: Tuple[Tuple[ClientTaskDataset, ...], ...]

    @property
    def n_clients(self) -> int:
        return len(self.cells)

    @property
    def n_tasks(self) -> int:
        return len(self.cells[0])

    @property
    def feature_dim(self) -> int:
        return self.cells[0][0].train.features.shape[1]

    def cell(self, client: int, task: int) -> ClientTaskDataset:
        return self.cells[client][task]

    def pooled_test(self, task: int) -> LabeledSet:
        return LabeledSet.concat([row[task].test for row in self.cells])

    def pooled_train(self) -> LabeledSet:
        return LabeledSet.concat([c.train for row in self.cells for c in row])


@dataclass(frozen=True)
class ScenarioConfig:
    clients: int = 3
    tasks: int = 4
    size_table: Tuple[Tuple[int, ...], ...] = REFERENCE_SIZES
    feature_dim: int = 16
    heterogeneity: float = 0.5
    label_noise: float = 0.05
    seed: int = 0
    augment_copies: int = 0
    augment_noise: float = 0.0

    def validate(self) -> None:
        if self.clients < 1 or self.tasks < 1:
            raise ScenarioError("need at least one client and one task")
        table = self.size_table
        if len(table) != self.clients or any(len(r) != self.tasks for r in table):
            raise ScenarioError(
                f"size_table must be {self.clients}x{self.tasks}")
        if any(int(n) < 10 for r in table for n in r):
            raise ScenarioError("every size_table entry must be >= 10")
        if self.feature_dim < 1:
            raise ScenarioError("feature_dim must be positive")
        if not 0.0 <= self.heterogeneity <= 1.0:
            raise ScenarioError("heterogeneity must lie in [0, 1]")
        if self.label_noise < 0:
            raise ScenarioError("label_noise must be >= 0")
        if self.augment_copies < 0 or self.augment_noise < 0:
            raise ScenarioError("augmentation settings must be >= 0")


def split_counts(n: int, ratios: Sequence[float] = DEFAULT_RATIOS) -> Tuple[int, int, int]:
    """floor(n * ratio) for validation and test; the remainder goes to train."""
    n_val = int(math.floor(n * ratios[1]))
    n_test = int(math.floor(n * ratios[2]))
    return n - n_val - n_test, n_val, n_test


def split(samples: LabeledSet, ratios: Sequence[float] = DEFAULT_RATIOS,
          seed: int = 0) -> Tuple[LabeledSet, LabeledSet, LabeledSet]:
    """Seeded shuffle followed by a contiguous train/validation/test cut."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ScenarioError(f"ratios must be three non-negative numbers summing to 1: {ratios}")
    n = len(samples)
    if n < 10:
        raise ScenarioError(f"need at least 10 samples to split, got {n}")
    n_train, n_val, _ = split_counts(n, ratios)
    perm = np.random.default_rng(seed).permutation(n)
    return (samples.subset(perm[:n_train]),
            samples.subset(perm[n_train:n_train + n_val]),
            samples.subset(perm[n_train + n_val:]))


def link(z: np.ndarray) -> np.ndarray:
    return 0.5 + 0.5 * np.tanh(z)


def _cell_seed(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), *key])


def preference_vectors(config: ScenarioConfig) -> np.ndarray:
    """Latent user preference vector per cell, shape ``(clients, tasks, d)``.

    Entries of the shared and per-user components are N(0, 3/d), so that
    ``w . x`` has unit variance for x uniform on [-1, 1]^d.
    """
    d = config.feature_dim
    scale = math.sqrt(3.0 / d)
    shared = _cell_seed(config.seed, 0).normal(0.0, scale, d)
    rho = config.heterogeneity
    out = np.empty((config.clients, config.tasks, d))
    for c in range(config.clients):
        for t in range(config.tasks):
            own = _cell_seed(config.seed, 1, c, t).normal(0.0, scale, d)
            out[c, t] = math.sqrt(1.0 - rho) * shared + math.sqrt(rho) * own
    return out


def generate_synthetic(config: ScenarioConfig,
                       ratios: Sequence[float] = DEFAULT_RATIOS) -> Scenario:
    config.validate()
    w = preference_vectors(config)
    d = config.feature_dim
    rows = []
    next_id = 0
    for c in range(config.clients):
        row = []
        for t in range(config.tasks):
            n = int(config.size_table[c][t])
            rng = _cell_seed(config.seed, 2, c, t)
            X = rng.uniform(-1.0, 1.0, size=(n, d))
            noise = rng.normal(0.0, config.label_noise, n) if config.label_noise > 0 else 0.0
            y = np.clip(link(X @ w[c, t]) + noise, 0.0, 1.0)
            ids = np.arange(next_id, next_id + n)
            next_id += n
            tr, va, te = split(LabeledSet(X, y, ids), ratios, seed=config.seed * 7919 + c * 101 + t)
            row.append(ClientTaskDataset(c, t, tr, va, te))
        rows.append(tuple(row))
    scenario = Scenario(tuple(rows))
    if config.augment_copies:
        scenario = augment_duplicate(scenario, config.augment_copies,
                                     config.augment_noise, config.seed)
    return scenario


def augment_duplicate(scenario: Scenario, copies: int, noise: float,
                      seed: int) -> Scenario:
    """Append ``copies`` jittered duplicates of every training sample.

    Duplicates keep their source sample's id. Validation and test splits are
    left alone.
    """
    rows = []
    for row in scenario.cells:
        new_row = []
        for cell in row:
            rng = _cell_seed(seed, 3, cell.client_id, cell.task_id)
            tr = cell.train
            parts = [tr]
            for _ in range(copies):
                jitter = rng.normal(0.0, noise, tr.features.shape) if noise > 0 else 0.0
                parts.append(LabeledSet(tr.features + jitter, tr.labels, tr.ids))
            new_row.append(replace(cell, train=LabeledSet.concat(parts)))
        rows.append(tuple(new_row))
    return Scenario(tuple(rows))


def scale_train_fraction(scenario: Scenario, fraction: float, seed: int = 0) -> Scenario:
    """Keep ``ceil(fraction * n)`` training samples per cell.

    The kept samples are a prefix of one seeded permutation per cell, so a
    smaller fraction always selects a subset of a larger one.
    """
    if not 0.0 < fraction <= 1.0:
        raise ScenarioError(f"train fraction must lie in (0, 1], got {fraction}")
    if fraction == 1.0:
        return scenario
    rows = []
    for row in scenario.cells:
        new_row = []
        for cell in row:
            n = len(cell.train)
            keep = max(1, int(math.ceil(fraction * n - 1e-9)))
            perm = _cell_seed(seed, 4, cell.client_id, cell.task_id).permutation(n)
            new_row.append(replace(cell, train=cell.train.subset(np.sort(perm[:keep]))))
        rows.append(tuple(new_row))
    return Scenario(tuple(rows))


# --- line-record format -----------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def write_records(scenario: Scenario, path) -> None:
    """Write every sample of every split, one line each, ids in ascending order."""
    d = scenario.feature_dim
    lines = [f"{HEADER_PREFIX},d={d}"]
    for row in scenario.cells:
        for cell in row:
            data = LabeledSet.concat([cell.train, cell.validation, cell.test])
            order = np.argsort(data.ids, kind="stable")
            for i in order:
                fields = [str(cell.client_id), str(cell.task_id), _fmt(data.labels[i])]
                fields.extend(_fmt(v) for v in data.features[i])
                lines.append(",".join(fields))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_records(path) -> Dict[Tuple[int, int], LabeledSet]:
    """Parse a line-record file into ``{(client_id, task_id): samples}``."""
    text = Path(path).read_text(encoding="ascii")
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise RecordFormatError(1, "empty file; expected header '#fcl-v1,d=<int>'")
    head = lines[0].strip().split(",")
    if len(head) != 2 or head[0] != HEADER_PREFIX or not head[1].startswith("d="):
        raise RecordFormatError(1, f"bad header {lines[0]!r}")
    try:
        d = int(head[1][2:])
    except ValueError:
        raise RecordFormatError(1, f"bad feature dimension in header {lines[0]!r}") from None
    if d < 1:
        raise RecordFormatError(1, "feature dimension must be positive")
    cells: Dict[Tuple[int, int], List[Tuple[int, float, List[float]]]] = {}
    n = 0
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != 3 + d:
            raise RecordFormatError(
                lineno, f"expected {3 + d} fields, found {len(fields)}")
        try:
            client, task = int(fields[0]), int(fields[1])
            label = float(fields[2])
            feats = [float(v) for v in fields[3:]]
        except ValueError as exc:
            raise RecordFormatError(lineno, str(exc)) from None
        if not (0.0 <= label <= 1.0):
            raise RecordFormatError(lineno, f"label {label} outside [0, 1]")
        if not all(math.isfinite(v) for v in feats):
            raise RecordFormatError(lineno, "non-finite feature")
        cells.setdefault((client, task), []).append((n, label, feats))
        n += 1
    if n == 0:
        raise RecordFormatError(len(lines), "file contains no records")
    out = {}
    for key, recs in cells.items():
        out[key] = LabeledSet(np.array([r[2] for r in recs]).reshape(len(recs), d),
                              np.array([r[1] for r in recs]),
                              np.array([r[0] for r in recs]))
    return out


def read_manifest(path) -> List[Tuple[int, int]]:
    """Manifest lines are ``client_id,task_id``; ``#`` starts a comment."""
    cells = []
    for lineno, line in enumerate(Path(path).read_text(encoding="ascii").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise RecordFormatError(lineno, "manifest lines are 'client_id,task_id'")
        try:
            cells.append((int(parts[0]), int(parts[1])))
        except ValueError as exc:
            raise RecordFormatError(lineno, str(exc)) from None
    return cells


def load_external(path, manifest=None, ratios: Sequence[float] = DEFAULT_RATIOS,
                  seed: int = 0) -> Scenario:
    """Build a scenario from a line-record file.

    ``manifest`` (a path or a list of ``(client_id, task_id)`` pairs) names the
    cells of the grid. Every record must fall in a declared cell and every
    declared cell must have records. Client and task ids are mapped to
    zero-based indices in ascending order.
    """
    records = read_records(path)
    if manifest is None:
        declared = sorted(records)
    elif isinstance(manifest, (str, Path)):
        declared = read_manifest(manifest)
    else:
        declared = [tuple(map(int, m)) for m in manifest]
    if len(set(declared)) != len(declared):
        raise ScenarioError("manifest lists a cell twice")
    declared_set = set(declared)
    for key in records:
        if key not in declared_set:
            raise ScenarioError(f"records for undeclared cell client={key[0]} task={key[1]}")
    for key in declared:
        if key not in records:
            raise ScenarioError(
                f"manifest references client={key[0]} task={key[1]} with no records")
    client_ids = sorted({c for c, _ in declared})
    task_ids = sorted({t for _, t in declared})
    if len(declared) != len(client_ids) * len(task_ids):
        raise ScenarioError("manifest must cover a full clients x tasks grid")
    rows = []
    for ci, c in enumerate(client_ids):
        row = []
        for ti, t in enumerate(task_ids):
            tr, va, te = split(records[(c, t)], ratios, seed=seed * 7919 + ci * 101 + ti)
            row.append(ClientTaskDataset(ci, ti, tr, va, te))
        rows.append(tuple(row))
    return Scenario(tuple(rows))
