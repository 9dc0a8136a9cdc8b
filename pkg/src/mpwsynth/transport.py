"""Exact 1-Wasserstein solvers with Euclidean ground cost.

* :func:`w1_exact` solves the discrete transport LP exactly. Uniform
  equal-size clouds (every training minibatch) reduce to an assignment
  problem; anything else goes through :func:`network_simplex`.
* :func:`w1_1d` is the sorting formula for one-dimensional clouds.
* :func:`sliced_w1` averages 1-D costs over random unit directions.

Gradients are envelope gradients: the optimal plan is held fixed and the
cost is differentiated with respect to the target points.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .errors import NumericError, ShapeError, ValidationError

DEFAULT_CAP = 4096
ZERO_DIST = 1e-12


@dataclass(frozen=True)
class WeightedPointCloud:
    """``n`` points in ``R^d`` with nonnegative weights summing to one."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ValidationError("points must be a non-empty (n, d) array")
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if w.shape[0] != pts.shape[0]:
            raise ShapeError(f"{pts.shape[0]} points but {w.shape[0]} weights")
        if not np.all(np.isfinite(pts)):
            raise ValidationError("points contain non-finite coordinates")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValidationError("weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValidationError(f"weights sum to {w.sum()!r}, expected 1")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, points) -> "WeightedPointCloud":
        pts = np.asarray(points, dtype=np.float64)
        n = pts.shape[0]
        if n < 1:
            raise ValidationError("point cloud must contain at least one point")
        return cls(pts, np.full(n, 1.0 / n))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def is_uniform(self) -> bool:
        return bool(np.ptp(self.weights) <= 1e-15)


@dataclass(frozen=True)
class TransportPlan:
    """An optimal coupling and its cost.

    ``matching`` is set when the plan is a permutation (assignment fast
    path): row ``i`` sends all of its mass to column ``matching[i]``.
    """

    coupling: np.ndarray
    cost: float
    matching: np.ndarray | None = None


def _as_cloud(x) -> WeightedPointCloud:
    if isinstance(x, WeightedPointCloud):
        return x
    return WeightedPointCloud.uniform(x)


def network_simplex(
    a: np.ndarray, b: np.ndarray, C: np.ndarray, max_iter: int | None = None
) -> np.ndarray:
    """Solve ``min <C, P>`` over couplings with marginals ``a`` and ``b``.

    Transportation simplex on the bipartite network: a spanning-tree basis
    of ``n + m - 1`` cells (northwest-corner start), node potentials from the
    tree, Dantzig entering rule with Bland's rule after a run of degenerate
    pivots so the method cannot cycle. Ties are broken by lowest row-major
    index, which makes the returned vertex deterministic.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    n, m = C.shape
    if a.shape != (n,) or b.shape != (m,):
        raise ShapeError("marginals do not match cost matrix shape")
    b = b * (a.sum() / b.sum())
    if max_iter is None:
        max_iter = 50 * (n + m) * max(n, m) + 1000

    # northwest-corner basis; rows are nodes 0..n-1, columns n..n+m-1
    flow: dict[tuple[int, int], float] = {}
    adj: list[set[int]] = [set() for _ in range(n + m)]
    ra, rb = a.copy(), b.copy()
    i = j = 0
    while True:
        x = min(ra[i], rb[j])
        flow[(i, j)] = x
        adj[i].add(n + j)
        adj[n + j].add(i)
        if ra[i] <= rb[j]:
            rb[j] -= x
            ra[i] = 0.0
        else:
            ra[i] -= x
            rb[j] = 0.0
        if i == n - 1 and j == m - 1:
            break
        if i == n - 1:
            j += 1
        elif j == m - 1 or ra[i] == 0.0:
            i += 1
        else:
            j += 1

    scale = max(1.0, float(np.abs(C).max()))
    tol = 1e-12 * scale
    degenerate_run = 0
    for _ in range(max_iter):
        # potentials: u_i + v_j = C_ij on basic cells, u_0 = 0
        pot = np.full(n + m, np.nan)
        pot[0] = 0.0
        queue = deque([0])
        while queue:
            node = queue.popleft()
            for nb in adj[node]:
                if np.isnan(pot[nb]):
                    if node < n:
                        pot[nb] = C[node, nb - n] - pot[node]
                    else:
                        pot[nb] = C[nb, node - n] - pot[node]
                    queue.append(nb)
        reduced = C - pot[:n, None] - pot[None, n:]
        if degenerate_run > n + m:
            neg = np.flatnonzero(reduced.ravel() < -tol)
            if neg.size == 0:
                break
            ent = int(neg[0])
        else:
            ent = int(np.argmin(reduced))
            if reduced.flat[ent] >= -tol:
                break
        ei, ej = divmod(ent, m)

        # tree path from column node ej back to row node ei
        parent = {n + ej: -1}
        queue = deque([n + ej])
        while queue:
            node = queue.popleft()
            if node == ei:
                break
            for nb in adj[node]:
                if nb not in parent:
                    parent[nb] = node
                    queue.append(nb)
        path = [ei]
        while path[-1] != n + ej:
            path.append(parent[path[-1]])
        # path: ei -> col -> row -> ... -> ej; cells alternate -, +, -, ...
        cells = []
        for k in range(len(path) - 1):
            p, q = path[k], path[k + 1]
            cells.append((p, q - n) if p < n else (q, p - n))
        minus = cells[0::2]
        plus = cells[1::2]
        theta = min(flow[c] for c in minus)
        leave = min((c for c in minus if flow[c] == theta), key=lambda c: c[0] * m + c[1])
        for c in minus:
            flow[c] -= theta
        for c in plus:
            flow[c] += theta
        flow[(ei, ej)] = theta
        del flow[leave]
        li, lj = leave
        adj[li].discard(n + lj)
        adj[n + lj].discard(li)
        adj[ei].add(n + ej)
        adj[n + ej].add(ei)
        degenerate_run = degenerate_run + 1 if theta == 0.0 else 0
    else:
        raise NumericError("network simplex did not converge")

    P = np.zeros((n, m))
    for (i, j), x in flow.items():
        P[i, j] = max(x, 0.0)
    return P


def w1_exact(src, dst, cap: int = DEFAULT_CAP, method: str = "auto") -> TransportPlan:
    """Exact W1 between two weighted clouds.

    ``method`` is ``"auto"`` (assignment when both clouds are uniform and
    the same size, otherwise network simplex), ``"assignment"`` or
    ``"simplex"``.
    """
    src, dst = _as_cloud(src), _as_cloud(dst)
    if src.d != dst.d:
        raise ShapeError(f"dimension mismatch: {src.d} vs {dst.d}")
    if src.n > cap or dst.n > cap:
        raise ValidationError(f"cloud sizes ({src.n}, {dst.n}) exceed cap {cap}")
    C = cdist(src.points, dst.points)
    uniform_square = src.n == dst.n and src.is_uniform() and dst.is_uniform()
    if method == "auto":
        method = "assignment" if uniform_square else "simplex"
    if method == "assignment":
        if not uniform_square:
            raise ValidationError("assignment path needs uniform clouds of equal size")
        rows, cols = linear_sum_assignment(C)
        n = src.n
        P = np.zeros((n, n))
        P[rows, cols] = 1.0 / n
        matching = np.empty(n, dtype=np.int64)
        matching[rows] = cols
        return TransportPlan(P, float(C[rows, cols].sum() / n), matching)
    if method != "simplex":
        raise ValidationError(f"unknown method {method!r}")
    P = network_simplex(src.weights, dst.weights, C)
    return TransportPlan(P, float((P * C).sum()))


def w1_grad_dst(plan: TransportPlan, src, dst) -> np.ndarray:
    """Gradient of the plan's cost with respect to the target points.

    ``grad_j = sum_i P_ij (y_j - x_i) / |y_j - x_i|``; pairs closer than
    ``1e-12`` contribute the zero subgradient.
    """
    src, dst = _as_cloud(src), _as_cloud(dst)
    if plan.coupling.shape != (src.n, dst.n):
        raise ShapeError("plan shape does not match the clouds")
    if plan.matching is not None:
        rows = np.arange(src.n)
        cols = plan.matching
        mass = plan.coupling[rows, cols]
    else:
        rows, cols = np.nonzero(plan.coupling > 0)
        mass = plan.coupling[rows, cols]
    diff = dst.points[cols] - src.points[rows]
    dist = np.sqrt((diff * diff).sum(axis=1))
    scale = np.where(dist < ZERO_DIST, 0.0, mass / np.where(dist < ZERO_DIST, 1.0, dist))
    grad = np.zeros_like(dst.points)
    np.add.at(grad, cols, diff * scale[:, None])
    return grad


def _is_uniform_pair(xs, ys, xw, yw) -> bool:
    if xs.shape[0] != ys.shape[0]:
        return False
    for w in (xw, yw):
        if w is not None and np.ptp(np.asarray(w, dtype=np.float64)) > 1e-15:
            return False
    return True


def w1_1d(xs, ys, x_weights=None, y_weights=None) -> float:
    """W1 between two sets of reals.

    Uniform equal-size inputs use ``mean |sort(xs) - sort(ys)|``; any other
    weighting falls back to :func:`w1_exact` on the 1-D clouds.
    """
    xs = np.asarray(xs, dtype=np.float64).reshape(-1)
    ys = np.asarray(ys, dtype=np.float64).reshape(-1)
    if xs.size == 0 or ys.size == 0:
        raise ValidationError("w1_1d needs non-empty inputs")
    if _is_uniform_pair(xs, ys, x_weights, y_weights):
        diff = np.abs(np.sort(xs) - np.sort(ys))
        # fsum keeps the value independent of summation order
        return math.fsum(diff.tolist()) / xs.size
    src = WeightedPointCloud(xs, x_weights if x_weights is not None else np.full(xs.size, 1.0 / xs.size))
    dst = WeightedPointCloud(ys, y_weights if y_weights is not None else np.full(ys.size, 1.0 / ys.size))
    return w1_exact(src, dst, method="simplex").cost


def w1_1d_grad_dst(xs, ys) -> tuple[float, np.ndarray]:
    """Cost and gradient w.r.t. ``ys`` of the uniform equal-size 1-D W1."""
    xs = np.asarray(xs, dtype=np.float64).reshape(-1)
    ys = np.asarray(ys, dtype=np.float64).reshape(-1)
    if xs.size == 0 or xs.size != ys.size:
        raise ValidationError("w1_1d_grad_dst needs equal-size non-empty inputs")
    ox = np.argsort(xs, kind="stable")
    oy = np.argsort(ys, kind="stable")
    diff = ys[oy] - xs[ox]
    n = xs.size
    grad = np.empty(n)
    grad[oy] = np.where(np.abs(diff) < ZERO_DIST, 0.0, np.sign(diff)) / n
    return math.fsum(np.abs(diff).tolist()) / n, grad


def _directions(rng, n_projections: int, d: int) -> np.ndarray:
    if n_projections < 1:
        raise ValidationError("n_projections must be at least 1")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    theta = rng.standard_normal((n_projections, d))
    norms = np.linalg.norm(theta, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return theta / norms


def sliced_w1(src, dst, n_projections: int, rng) -> float:
    """Monte Carlo sliced W1 over uniformly random unit directions."""
    src, dst = _as_cloud(src), _as_cloud(dst)
    if src.d != dst.d:
        raise ShapeError(f"dimension mismatch: {src.d} vs {dst.d}")
    theta = _directions(rng, n_projections, src.d)
    ps = src.points @ theta.T
    pd = dst.points @ theta.T
    total = 0.0
    for k in range(n_projections):
        total += w1_1d(ps[:, k], pd[:, k], src.weights, dst.weights)
    return total / n_projections


def sliced_w1_grad_dst(src, dst, n_projections: int, rng) -> tuple[float, np.ndarray]:
    """Sliced W1 and its gradient w.r.t. the target points (uniform, equal size)."""
    src, dst = _as_cloud(src), _as_cloud(dst)
    if src.n != dst.n or not (src.is_uniform() and dst.is_uniform()):
        raise ValidationError("sliced gradient needs uniform clouds of equal size")
    theta = _directions(rng, n_projections, src.d)
    ps = src.points @ theta.T
    pd = dst.points @ theta.T
    total = 0.0
    coeff = np.empty_like(pd)
    for k in range(n_projections):
        value, g = w1_1d_grad_dst(ps[:, k], pd[:, k])
        total += value
        coeff[:, k] = g
    return total / n_projections, (coeff @ theta) / n_projections
