"""Distribution-quality metrics and mode-collapse diagnostics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats
from scipy.spatial.distance import cdist, pdist

from .errors import ValidationError

# binned TV preset matching the 5-parameter posterior study: 5^5 = 3125 bins
TV_PRESET_ABC = {"bounds": [(-3.0, 3.0)] * 5, "bins_per_dim": 5}


def _as_2d(X, name: str) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValidationError(f"{name} must be a non-empty (n, d) sample")
    return X


def bin_indices(X: np.ndarray, bounds: Sequence[tuple[float, float]], bins_per_dim: int) -> np.ndarray:
    """Per-dimension bin index of every row; values outside ``bounds`` land in the edge bins."""
    lo = np.array([b[0] for b in bounds], dtype=np.float64)
    hi = np.array([b[1] for b in bounds], dtype=np.float64)
    idx = np.floor((X - lo) / (hi - lo) * bins_per_dim).astype(np.int64)
    return np.clip(idx, 0, bins_per_dim - 1)


def tv_binned(X, Y, bounds: Sequence[tuple[float, float]], bins_per_dim: int) -> float:
    """Total variation between histogram estimates on an equal-width grid.

    ``0.5 * sum_bins |p_X(bin) - p_Y(bin)|``.
    """
    X, Y = _as_2d(X, "X"), _as_2d(Y, "Y")
    if X.shape[1] != Y.shape[1] or len(bounds) != X.shape[1]:
        raise ValidationError("bounds and samples must share the same dimension")
    if bins_per_dim < 1:
        raise ValidationError("bins_per_dim must be at least 1")
    for lo, hi in bounds:
        if not (np.isfinite(lo) and np.isfinite(hi) and hi > lo):
            raise ValidationError(f"invalid bin bounds {(lo, hi)}")
    ix = bin_indices(X, bounds, bins_per_dim)
    iy = bin_indices(Y, bounds, bins_per_dim)
    keys, inverse = np.unique(np.concatenate([ix, iy]), axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    px = np.bincount(inverse[: len(ix)], minlength=len(keys)) / len(ix)
    py = np.bincount(inverse[len(ix):], minlength=len(keys)) / len(iy)
    # one-ulp overshoot past 1 is possible for disjoint samples
    return float(min(1.0, 0.5 * np.abs(px - py).sum()))


def median_bandwidth(X, Y) -> float:
    """Median pairwise Euclidean distance of the pooled sample."""
    Z = np.concatenate([_as_2d(X, "X"), _as_2d(Y, "Y")])
    if len(Z) < 2:
        return 1.0
    med = float(np.median(pdist(Z)))
    return med if med > 0 else 1.0


def mmd2_gaussian(X, Y, bandwidth: float | None = None) -> float:
    """Biased (V-statistic) squared MMD with ``k(a, b) = exp(-|a-b|^2 / (2 s^2))``.

    ``bandwidth`` defaults to the median heuristic.
    """
    X, Y = _as_2d(X, "X"), _as_2d(Y, "Y")
    if bandwidth is None:
        bandwidth = median_bandwidth(X, Y)
    if bandwidth <= 0:
        raise ValidationError("bandwidth must be positive")
    g = 1.0 / (2.0 * bandwidth * bandwidth)
    kxx = np.exp(-g * cdist(X, X, "sqeuclidean")).mean()
    kyy = np.exp(-g * cdist(Y, Y, "sqeuclidean")).mean()
    kxy = np.exp(-g * cdist(X, Y, "sqeuclidean")).mean()
    return float(kxx + kyy - 2.0 * kxy)


def log_mmd(mmd2: float) -> float:
    return math.log(max(mmd2, 1e-300))


def condition_number(X) -> float:
    """``lambda_max / lambda_min`` of the sample covariance; ``inf`` when singular."""
    X = _as_2d(X, "X")
    ev = np.linalg.eigvalsh(np.atleast_2d(np.cov(X, rowvar=False)))
    if ev[0] <= 0:
        return math.inf
    return float(ev[-1] / ev[0])


def cov_diagnostics(X, Y) -> tuple[float, float]:
    """Spectral norm of ``cov(X) - cov(Y)`` and the condition number of ``cov(X)``."""
    X, Y = _as_2d(X, "X"), _as_2d(Y, "Y")
    if X.shape[1] != Y.shape[1]:
        raise ValidationError("samples must share the same dimension")
    diff = np.atleast_2d(np.cov(X, rowvar=False) - np.cov(Y, rowvar=False))
    bias = float(np.abs(np.linalg.eigvalsh(diff)).max())
    return bias, condition_number(X)


def mode_weights(samples, centers, r: float) -> np.ndarray:
    """Fraction of samples inside the l-inf box of half-width ``r`` around each center."""
    if r <= 0:
        raise ValidationError("r must be positive")
    S = _as_2d(samples, "samples")
    C = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    return np.array([np.mean(np.abs(S - c).max(axis=1) <= r) for c in C])


def tail_mass(samples, r: float) -> float:
    """Fraction of samples with Euclidean norm at least ``r``."""
    if r < 0:
        raise ValidationError("r must be nonnegative")
    S = _as_2d(samples, "samples")
    return float(np.mean(np.linalg.norm(S, axis=1) >= r))


def component_tail_mass(samples, centers, r: float) -> np.ndarray:
    """Per-component tail fraction.

    Samples are assigned to their nearest center (l-inf); for each center
    the result is the share of its samples with ``|x - center|_inf > r``
    (``nan`` for an empty component).
    """
    S = _as_2d(samples, "samples")
    C = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    dist = np.stack([np.abs(S - c).max(axis=1) for c in C])
    owner = np.argmin(dist, axis=0)
    out = np.full(len(C), np.nan)
    for k in range(len(C)):
        mine = dist[k, owner == k]
        if mine.size:
            out[k] = np.mean(mine > r)
    return out


@dataclass
class CoverageResult:
    lower: float
    upper: float
    coverage: float
    means: np.ndarray = field(repr=False)


def coverage_study(sampler: Callable[[int, np.random.Generator], np.ndarray], n_per_set: int = 300,
                   n_sets: int = 1000, seed: int = 0, column: int = 0, true_mean: float = 0.0,
                   alpha: float = 0.05) -> CoverageResult:
    """Percentile interval of synthetic-set means and t-interval coverage.

    ``sampler(count, rng)`` returns a ``(count, d)`` array. For each of
    ``n_sets`` draws the mean and sample std of ``column`` are recorded; the
    first output is the ``[alpha/2, 1-alpha/2]`` percentile interval of the
    means, the second the share of ``mean +- t * sd / sqrt(n)`` intervals that
    contain ``true_mean``. A set with zero spread covers only if its mean
    equals ``true_mean`` exactly.
    """
    from .rng import make_rng

    if n_per_set < 2 or n_sets < 1:
        raise ValidationError("need n_per_set >= 2 and n_sets >= 1")
    rng = make_rng(seed)
    tcrit = stats.t.ppf(1.0 - alpha / 2.0, n_per_set - 1)
    means = np.empty(n_sets)
    covered = 0
    for b in range(n_sets):
        x = _as_2d(sampler(n_per_set, rng), "sampler output")[:, column]
        mean = float(x.mean())
        sd = float(x.std(ddof=1))
        means[b] = mean
        if sd == 0.0:
            covered += mean == true_mean
        else:
            half = tcrit * sd / math.sqrt(n_per_set)
            covered += (mean - half <= true_mean <= mean + half)
    lo, hi = np.quantile(means, [alpha / 2.0, 1.0 - alpha / 2.0])
    return CoverageResult(float(lo), float(hi), covered / n_sets, means)


@dataclass
class MetricReport:
    tv_binned: float | None = None
    mmd2: float | None = None
    log_mmd: float | None = None
    bandwidth: float | None = None
    cov_bias: float | None = None
    condition_number: float | None = None
    condition_number_real: float | None = None
    mode_weights: list[float] | None = None
    mode_weights_real: list[float] | None = None
    tail_mass: list[float] | None = None
    tail_mass_real: list[float] | None = None

    def to_dict(self) -> dict:
        def clean(v):
            if isinstance(v, float) and not math.isfinite(v):
                return None if math.isnan(v) else "inf"
            if isinstance(v, list):
                return [clean(x) for x in v]
            return v
        return {k: clean(v) for k, v in asdict(self).items() if v is not None}


def evaluate(real, synth, bounds=None, bins_per_dim: int = 5, bandwidth: float | None = None,
             centers=None, r: float = 3.0, tail_r: float | None = None,
             max_mmd_rows: int = 3000, seed: int = 0) -> MetricReport:
    """Run the metric suite comparing ``synth`` against ``real``.

    ``bounds`` defaults to the per-column range of ``real``. MMD is computed
    on at most ``max_mmd_rows`` rows of each sample (seeded subsample).
    """
    from .rng import make_rng

    real, synth = _as_2d(real, "real"), _as_2d(synth, "synth")
    if bounds is None:
        lo, hi = real.min(axis=0), real.max(axis=0)
        hi = np.where(hi > lo, hi, lo + 1.0)
        bounds = list(zip(lo.tolist(), hi.tolist()))
    rep = MetricReport()
    rep.tv_binned = tv_binned(real, synth, bounds, bins_per_dim)
    rng = make_rng(seed)
    rs = real if len(real) <= max_mmd_rows else real[np.sort(rng.choice(len(real), max_mmd_rows, replace=False))]
    ss = synth if len(synth) <= max_mmd_rows else synth[np.sort(rng.choice(len(synth), max_mmd_rows, replace=False))]
    rep.bandwidth = bandwidth if bandwidth is not None else median_bandwidth(rs, ss)
    rep.mmd2 = mmd2_gaussian(rs, ss, rep.bandwidth)
    rep.log_mmd = log_mmd(rep.mmd2)
    if real.shape[0] > real.shape[1] and synth.shape[0] > synth.shape[1]:
        rep.cov_bias, rep.condition_number = cov_diagnostics(synth, real)
        rep.condition_number_real = condition_number(real)
    if centers is not None:
        rep.mode_weights = mode_weights(synth, centers, r).tolist()
        rep.mode_weights_real = mode_weights(real, centers, r).tolist()
        if tail_r is not None:
            rep.tail_mass = component_tail_mass(synth, centers, tail_r).tolist()
            rep.tail_mass_real = component_tail_mass(real, centers, tail_r).tolist()
    return rep
