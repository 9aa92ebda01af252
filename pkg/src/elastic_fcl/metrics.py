"""Performance-matrix statistics and parameter accounting.

``P[i, j]`` is the test MSE on task ``j`` after training through task ``i``.
Lower is better everywhere, so a negative BWT means earlier tasks improved.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


class MetricError(ValueError):
    pass


def as_matrix(P) -> np.ndarray:
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] == 0:
        raise MetricError(f"performance matrix must be square and non-empty, got {P.shape}")
    if not np.all(np.isfinite(P)) or np.any(P < 0):
        raise MetricError("performance matrix entries must be finite and >= 0")
    return P


def amse(P) -> float:
    P = as_matrix(P)
    return float(np.mean(np.diag(P)))


def bwt(P) -> float:
    P = as_matrix(P)
    n = P.shape[0]
    if n < 2:
        raise MetricError("BWT needs at least two tasks")
    rows, cols = np.tril_indices(n, k=-1)
    return float(np.sum(P[rows, cols] - P[cols, cols]) / (n * (n - 1) / 2))


def fwt(P) -> float:
    """Mean of the strict upper triangle (tasks not yet trained on)."""
    P = as_matrix(P)
    n = P.shape[0]
    if n < 2:
        raise MetricError("FWT needs at least two tasks")
    rows, cols = np.triu_indices(n, k=1)
    return float(np.sum(P[rows, cols]) / (n * (n - 1) / 2))


def summarize(P) -> dict:
    P = as_matrix(P)
    out = {"amse": amse(P), "bwt": float("nan"), "fwt": float("nan")}
    if P.shape[0] >= 2:
        out["bwt"] = bwt(P)
        out["fwt"] = fwt(P)
    return out


def write_matrix(P, path) -> None:
    P = as_matrix(P)
    lines = [",".join(repr(float(v)) for v in row) for row in P]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_matrix(path) -> np.ndarray:
    rows = []
    for line in Path(path).read_text(encoding="ascii").splitlines():
        if line.strip():
            rows.append([float(v) for v in line.split(",")])
    return as_matrix(rows)


@dataclass(frozen=True)
class ParamAccount:
    static_count: int
    trainable_count: int
    formula: str


def param_account(family: str, n_params: int, clients: int, tasks: int) -> ParamAccount:
    """Stored anchor reals ("static") and optimised reals ("trainable") per client.

    The trainable count is per model instance, so STL reports ``P`` even
    though it keeps one model per task.
    """
    P, C, T = int(n_params), int(clients), int(tasks)
    table = {
        "Centralized": (0, "0"),
        "STL": (0, "0"),
        "LocalSGD": (0, "0"),
        "FedAvgSGD": (0, "0"),
        "FedProxSGD": (P, "P"),
        "LocalL2T": (T * P, "T*P"),
        "LocalEWC": (2 * T * P, "2*T*P"),
        "FedAvgEWC": (2 * T * P, "2*T*P"),
        "FedProxEWC": (2 * T * P + P, "2*T*P + P"),
        "LocalOnlineEWC": (2 * P, "2*P"),
        "FedCurv": (2 * (C - 1) * P, "2*(C-1)*P"),
        "ElasticTransfer": (2 * C * P + 2 * (C - 1) * P, "2*C*P + 2*(C-1)*P"),
    }
    if family not in table:
        raise MetricError(f"unknown algorithm family {family!r}")
    static, formula = table[family]
    return ParamAccount(static, P, formula)
