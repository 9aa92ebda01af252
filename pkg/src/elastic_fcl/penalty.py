"""Quadratic anchor penalties.

Every regulariser used by the training families is a sum of terms

    (lam / 2) * sum_k fisher[k] * (theta[k] - theta_ref[k])**2

one per :class:`Anchor`. EWC, online EWC, L2-transfer, FedProx, FedCurv and
Elastic Transfer only differ in which anchors they assemble.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from .numeric import DimensionError

OWN_PREVIOUS_REFINED = "own_previous_refined"
OTHER_PREVIOUS_REFINED = "other_previous_refined"
OTHER_CURRENT_ROUGH = "other_current_rough"
PROXIMAL = "proximal"
ANCHOR_KINDS = (OWN_PREVIOUS_REFINED, OTHER_PREVIOUS_REFINED,
                OTHER_CURRENT_ROUGH, PROXIMAL)

# (reference parameters, Fisher diagonal)
Estimate = Tuple[np.ndarray, np.ndarray]


@dataclass(frozen=True)
class Anchor:
    theta_ref: np.ndarray
    fisher: np.ndarray
    lam: float
    kind: str = OWN_PREVIOUS_REFINED

    def __post_init__(self):
        ref = np.asarray(self.theta_ref, dtype=np.float64).reshape(-1)
        fis = np.asarray(self.fisher, dtype=np.float64).reshape(-1)
        if ref.shape != fis.shape:
            raise DimensionError("anchor reference and Fisher lengths differ")
        if not self.lam >= 0:
            raise ValueError(f"anchor weight must be >= 0, got {self.lam}")
        if np.any(fis < 0):
            raise ValueError("Fisher diagonal must be non-negative")
        if self.kind not in ANCHOR_KINDS:
            raise ValueError(f"unknown anchor kind {self.kind!r}")
        ref.setflags(write=False)
        fis.setflags(write=False)
        object.__setattr__(self, "theta_ref", ref)
        object.__setattr__(self, "fisher", fis)
        object.__setattr__(self, "lam", float(self.lam))

    @property
    def size(self) -> int:
        return self.theta_ref.shape[0]


class PenaltySet(tuple):
    """Ordered, immutable collection of anchors sharing one parameter length."""

    def __new__(cls, anchors: Iterable[Anchor] = ()):
        anchors = tuple(anchors)
        sizes = {a.size for a in anchors}
        if len(sizes) > 1:
            raise DimensionError(f"anchors disagree on parameter length: {sorted(sizes)}")
        return super().__new__(cls, anchors)

    def __add__(self, other):
        return PenaltySet(tuple(self) + tuple(other))

    @property
    def is_inactive(self) -> bool:
        """True when the penalty is identically zero (no anchors or all weights 0)."""
        return all(a.lam == 0.0 for a in self)

    def stored_reals(self) -> int:
        return sum(2 * a.size for a in self)


def _check(theta, ps: PenaltySet) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    for a in ps:
        if a.size != theta.shape[0]:
            raise DimensionError(
                f"parameter length {theta.shape[0]} != anchor length {a.size}")
    return theta


def penalty_value(theta, ps: PenaltySet) -> float:
    theta = _check(theta, ps)
    total = 0.0
    for a in ps:
        d = theta - a.theta_ref
        total += 0.5 * a.lam * float(np.dot(a.fisher, d * d))
    return total


def penalty_grad(theta, ps: PenaltySet) -> np.ndarray:
    theta = _check(theta, ps)
    g = np.zeros_like(theta)
    for a in ps:
        g += a.lam * a.fisher * (theta - a.theta_ref)
    return g


class CompiledPenalty:
    """Collapses a penalty set into ``0.5 * theta' H theta - b' theta + c``.

    With ``H = sum lam*F`` and ``b = sum lam*F*ref`` the gradient costs one
    multiply-subtract regardless of the number of anchors. Used inside the
    SGD inner loop; :func:`penalty_grad` stays the reference.
    """

    def __init__(self, ps: PenaltySet, size: int):
        self.active = not ps.is_inactive
        self.h = np.zeros(size)
        self.b = np.zeros(size)
        for a in ps:
            if a.lam == 0.0:
                continue
            if a.size != size:
                raise DimensionError("anchor length does not match model")
            w = a.lam * a.fisher
            self.h += w
            self.b += w * a.theta_ref

    def grad(self, theta: np.ndarray) -> np.ndarray:
        return self.h * theta - self.b


def unit_fisher(size: int) -> np.ndarray:
    return np.ones(size)


def make_ewc_anchors(history: Sequence[Estimate], lam: float) -> PenaltySet:
    """One anchor per completed task, each at that task's (theta*, F*)."""
    return PenaltySet(Anchor(theta, fisher, lam, OWN_PREVIOUS_REFINED)
                      for theta, fisher in history)


def make_l2_transfer_anchors(history: Sequence[np.ndarray], lam: float) -> PenaltySet:
    return PenaltySet(Anchor(theta, unit_fisher(len(theta)), lam, OWN_PREVIOUS_REFINED)
                      for theta in history)


def make_online_ewc_anchor(own_refined: Optional[Estimate], lam: float) -> PenaltySet:
    if own_refined is None:
        return PenaltySet()
    return PenaltySet([Anchor(own_refined[0], own_refined[1], lam, OWN_PREVIOUS_REFINED)])


def make_proximal_anchor(theta_global, mu: float) -> PenaltySet:
    """FedProx term ``(mu/2) * ||theta - theta_global||^2``."""
    theta_global = np.asarray(theta_global, dtype=np.float64)
    return PenaltySet([Anchor(theta_global, unit_fisher(theta_global.shape[0]),
                              mu, PROXIMAL)])


def make_fedcurv_anchors(peer_rough: Sequence[Estimate], lam: float) -> PenaltySet:
    """One anchor per peer at its previous-round estimate.

    Callers pass only peers, never the local client.
    """
    return PenaltySet(Anchor(theta, fisher, lam, OTHER_CURRENT_ROUGH)
                      for theta, fisher in peer_rough)


def make_elastic_transfer_anchors(own_refined: Optional[Estimate],
                                  peers_refined: Sequence[Estimate],
                                  peers_rough: Sequence[Estimate],
                                  lam_own: float, lam_peer: float,
                                  lam_rough: float) -> PenaltySet:
    """Assemble the three Elastic Transfer penalty groups.

    ``own_refined`` and ``peers_refined`` are the consolidated estimates of
    previous tasks (absent during the first task); ``peers_rough`` are the
    peers' estimates from the previous round of the current task. Setting
    ``lam_peer = lam_own`` gives the two-weight form where all refined
    estimates share one weight.
    """
    anchors = []
    if own_refined is not None:
        anchors.append(Anchor(own_refined[0], own_refined[1], lam_own,
                              OWN_PREVIOUS_REFINED))
    anchors.extend(Anchor(t, f, lam_peer, OTHER_PREVIOUS_REFINED)
                   for t, f in peers_refined)
    anchors.extend(Anchor(t, f, lam_rough, OTHER_CURRENT_ROUGH)
                   for t, f in peers_rough)
    return PenaltySet(anchors)
