"""Marginally-penalized Wasserstein distance and its target-side gradient.

``total = W1(mu, nu) + sum_S lambda_S * W1(p_S mu, p_S nu)`` where ``p_S``
keeps the coordinates in ``S``. Singleton subsets give the usual per-feature
penalty and are solved by sorting; larger subsets use the exact solver.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ShapeError, ValidationError
from .transport import (
    WeightedPointCloud,
    _as_cloud,
    w1_1d,
    w1_1d_grad_dst,
    w1_exact,
    w1_grad_dst,
)


@dataclass(frozen=True)
class MarginalPenaltySpec:
    """Coordinate subsets (0-based, sorted) and their nonnegative weights."""

    entries: tuple[tuple[tuple[int, ...], float], ...]

    def __post_init__(self):
        clean = []
        for subset, weight in self.entries:
            s = tuple(sorted(int(i) for i in subset))
            if not s:
                raise ValidationError("penalty subsets must be nonempty")
            if len(set(s)) != len(s) or s[0] < 0:
                raise ValidationError(f"invalid subset {subset!r}")
            w = float(weight)
            if not np.isfinite(w) or w < 0:
                raise ValidationError(f"penalty weight {weight!r} must be finite and >= 0")
            clean.append((s, w))
        object.__setattr__(self, "entries", tuple(clean))

    @classmethod
    def singletons(cls, d: int, lam: float | Sequence[float] = 1.0) -> "MarginalPenaltySpec":
        lams = np.broadcast_to(np.asarray(lam, dtype=np.float64), (d,))
        return cls(tuple(((j,), float(lams[j])) for j in range(d)))

    @classmethod
    def none(cls) -> "MarginalPenaltySpec":
        return cls(())

    def check_dim(self, d: int) -> None:
        for s, _ in self.entries:
            if s[-1] >= d:
                raise ValidationError(f"subset {s} out of range for dimension {d}")

    def with_weight(self, index: int, weight: float) -> "MarginalPenaltySpec":
        entries = list(self.entries)
        entries[index] = (entries[index][0], weight)
        return MarginalPenaltySpec(tuple(entries))


@dataclass(frozen=True)
class MpwBreakdown:
    joint: float
    penalties: tuple[tuple[tuple[int, ...], float], ...]
    total: float
    weights: tuple[float, ...] = ()

    @property
    def penalty_values(self) -> np.ndarray:
        return np.array([v for _, v in self.penalties])


def project(cloud, subset: Sequence[int]) -> WeightedPointCloud:
    """Restrict a cloud to the coordinates in ``subset`` (order preserved)."""
    cloud = _as_cloud(cloud)
    idx = [int(i) for i in subset]
    if not idx:
        raise ValidationError("projection subset is empty")
    for i in idx:
        if not 0 <= i < cloud.d:
            raise ValidationError(f"coordinate {i} out of range for dimension {cloud.d}")
    return WeightedPointCloud(cloud.points[:, idx], cloud.weights)


def _uniform_square(mu: WeightedPointCloud, nu: WeightedPointCloud) -> bool:
    return mu.n == nu.n and mu.is_uniform() and nu.is_uniform()


def _marginal(mu, nu, s, want_grad):
    pm, pn = project(mu, s), project(nu, s)
    if len(s) == 1:
        if want_grad and _uniform_square(pm, pn):
            return w1_1d_grad_dst(pm.points[:, 0], pn.points[:, 0])
        if not want_grad:
            return w1_1d(pm.points[:, 0], pn.points[:, 0], pm.weights, pn.weights), None
    plan = w1_exact(pm, pn)
    grad = w1_grad_dst(plan, pm, pn) if want_grad else None
    return plan.cost, grad


def _prepare(mu, nu, spec):
    mu, nu = _as_cloud(mu), _as_cloud(nu)
    if mu.d != nu.d:
        raise ShapeError(f"dimension mismatch: {mu.d} vs {nu.d}")
    spec.check_dim(mu.d)
    return mu, nu


def mpw_distance(mu, nu, spec: MarginalPenaltySpec) -> MpwBreakdown:
    mu, nu = _prepare(mu, nu, spec)
    joint = w1_exact(mu, nu).cost
    penalties = []
    total = joint
    for s, lam in spec.entries:
        value, _ = _marginal(mu, nu, s, want_grad=False)
        penalties.append((s, value))
        total += lam * value
    return MpwBreakdown(joint, tuple(penalties), total, tuple(w for _, w in spec.entries))


def mpw_grad_dst(mu, nu, spec: MarginalPenaltySpec) -> tuple[np.ndarray, MpwBreakdown]:
    """Envelope gradient of the MPW total with respect to ``nu``'s points."""
    mu, nu = _prepare(mu, nu, spec)
    plan = w1_exact(mu, nu)
    grad = w1_grad_dst(plan, mu, nu)
    total = plan.cost
    penalties = []
    for s, lam in spec.entries:
        value, g = _marginal(mu, nu, s, want_grad=True)
        penalties.append((s, value))
        total += lam * value
        grad[:, list(s)] += lam * g.reshape(nu.n, len(s))
    return grad, MpwBreakdown(plan.cost, tuple(penalties), total, tuple(w for _, w in spec.entries))
