"""Synthetic benchmark generators and end-to-end experiment runners.

Every generator is a pure function of its seed. ``run_experiment`` trains
each requested loss variant on the same data with the same training seed
and architecture, evaluates the metric suite and (optionally) writes a
deterministic JSON report, a metrics CSV and PNG figures to a directory.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from . import metrics
from . import rng as streams
from .autodiff import AdamWConfig
from .errors import NumericError, ValidationError
from .tabular import TableSchema, encode
from .tabular import fit as fit_transformer
from .train import TrainConfig, TrainedModel, fit, sample

log = logging.getLogger(__name__)

EXPERIMENTS = ("abc5d", "gmm20", "scurve", "gauss3_coverage", "gmm_modecollapse_2comp")

# reference truth for the ABC posterior study; the observation is simulated from it
ABC_PHI_STAR = (0.7, -2.9, -1.0, -0.9, 0.6)

GAUSS3_COV = np.array([[30.0, 10.3, -20.2],
                       [10.3, 20.0, 0.3],
                       [-20.2, 0.3, 20.0]])


def _abc_simulate(phi: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Four bivariate draws per parameter row, flattened to ``(n, 8)``."""
    n = len(phi)
    s1, s2 = phi[:, 2] ** 2, phi[:, 3] ** 2
    rho = np.tanh(phi[:, 4])
    e = rng.standard_normal((n, 4, 2))
    # Cholesky of [[s1^2, rho s1 s2], [rho s1 s2, s2^2]]
    x1 = phi[:, None, 0] + s1[:, None] * e[:, :, 0]
    x2 = phi[:, None, 1] + s2[:, None] * (rho[:, None] * e[:, :, 0] + np.sqrt(1 - rho ** 2)[:, None] * e[:, :, 1])
    return np.stack([x1, x2], axis=2).reshape(n, 8)


def abc_observation(seed: int, phi_star: Sequence[float] = ABC_PHI_STAR) -> np.ndarray:
    """The fixed observed ``X_obs`` simulated from ``phi_star``."""
    rng = streams.make_rng(seed, streams.DATA, 0)
    return _abc_simulate(np.asarray(phi_star, dtype=np.float64)[None, :], rng)[0]


def gen_abc5d(n_target: int = 3000, eps: float = 1.5, seed: int = 0,
              phi_star: Sequence[float] = ABC_PHI_STAR, chunk: int = 200_000,
              min_draws: int = 5_000_000, max_draws: int = 2_000_000_000) -> pd.DataFrame:
    """Rejection-ABC posterior sample for the 5-parameter bivariate Gaussian model.

    A prior draw ``phi ~ U[-3, 3]^5`` is kept when its simulated ``x`` lies
    within l1 distance ``eps`` of the observation.

    Raises:
        NumericError: the acceptance rate is below 1e-6 once ``min_draws``
            prior draws have been made, or ``max_draws`` is exhausted.
    """
    if n_target < 1 or eps <= 0:
        raise ValidationError("need n_target >= 1 and eps > 0")
    x_obs = abc_observation(seed, phi_star)
    rng = streams.make_rng(seed, streams.DATA, 1)
    kept: list[np.ndarray] = []
    n_kept = draws = 0
    while n_kept < n_target:
        phi = rng.uniform(-3.0, 3.0, size=(chunk, 5))
        x = _abc_simulate(phi, rng)
        ok = np.abs(x - x_obs).sum(axis=1) < eps
        kept.append(phi[ok])
        n_kept += int(ok.sum())
        draws += chunk
        rate = n_kept / draws
        if (draws >= min_draws and rate < 1e-6) or (draws >= max_draws and n_kept < n_target):
            raise NumericError(f"ABC acceptance rate {rate:.3g} after {draws} draws "
                               f"({n_kept}/{n_target} kept, eps={eps}, x_obs={np.round(x_obs, 3).tolist()})")
    out = np.concatenate(kept)[:n_target]
    return pd.DataFrame(out, columns=[f"phi{i + 1}" for i in range(5)])


def gmm20_components() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Weights, means ``(3, 20)`` and covariances ``(3, 20, 20)`` of the 20-D mixture."""
    d = 20
    w = np.array([0.1, 0.1, 0.8])
    mu = np.stack([np.zeros(d), np.full(d, 6.0), np.tile([-5.0, 5.0], d // 2)])
    cov = np.stack([np.eye(d)] * 3)
    cov[2, 0, 1] = cov[2, 1, 0] = -0.09
    return w, mu, cov


def gen_gmm20(n: int = 2000, seed: int = 0) -> tuple[pd.DataFrame, np.ndarray]:
    """Draw from the 3-component 20-D mixture; returns the table and component labels."""
    if n < 1:
        raise ValidationError("n must be positive")
    w, mu, cov = gmm20_components()
    rng = streams.make_rng(seed, streams.DATA, 2)
    labels = rng.choice(3, size=n, p=w)
    z = rng.standard_normal((n, 20))
    X = np.empty((n, 20))
    for k in range(3):
        L = np.linalg.cholesky(cov[k])
        m = labels == k
        X[m] = mu[k] + z[m] @ L.T
    return pd.DataFrame(X, columns=[f"x{j + 1}" for j in range(20)]), labels


def gen_scurve(n: int = 2000, seed: int = 0) -> pd.DataFrame:
    """Points on the S-shaped 2-D manifold in R^3."""
    if n < 1:
        raise ValidationError("n must be positive")
    rng = streams.make_rng(seed, streams.DATA, 3)
    u = rng.uniform(-1.5 * np.pi, 1.5 * np.pi, n)
    x2 = rng.uniform(0.0, 2.0, n)
    X = np.column_stack([np.sin(u), x2, np.sign(u) * (np.cos(u) - 1.0)])
    return pd.DataFrame(X, columns=["x1", "x2", "x3"])


def gen_gauss3(n: int = 300, seed: int = 0) -> pd.DataFrame:
    """``N(0, GAUSS3_COV)`` draws via Cholesky."""
    if n < 1:
        raise ValidationError("n must be positive")
    rng = streams.make_rng(seed, streams.DATA, 4)
    L = np.linalg.cholesky(GAUSS3_COV)
    X = rng.standard_normal((n, 3)) @ L.T
    return pd.DataFrame(X, columns=["x1", "x2", "x3"])


def two_component_centers(d: int = 3, delta: float = 6.0) -> np.ndarray:
    return np.stack([np.full(d, delta), np.full(d, -delta)])


def gen_gmm_2comp(n: int = 2000, seed: int = 0, d: int = 3, delta: float = 6.0,
                  weights: tuple[float, float] = (0.8, 0.2), sigma: float = 1.0) -> tuple[pd.DataFrame, np.ndarray]:
    """Two isotropic Gaussian modes at ``+delta * 1`` and ``-delta * 1``."""
    if n < 1:
        raise ValidationError("n must be positive")
    rng = streams.make_rng(seed, streams.DATA, 5)
    labels = rng.choice(2, size=n, p=np.asarray(weights, dtype=np.float64))
    X = two_component_centers(d, delta)[labels] + sigma * rng.standard_normal((n, d))
    return pd.DataFrame(X, columns=[f"x{j + 1}" for j in range(d)]), labels


@dataclass(frozen=True)
class ExperimentConfig:
    """One benchmark run.

    ``n`` is the real-data size (``None`` picks the experiment default) and
    ``n_synth`` the number of generated rows evaluated. Every loss variant
    in ``losses`` is trained with the same ``seed``-derived streams.
    ``abc_eps`` widens the ABC acceptance ball: at 1.5 the reference
    observation accepts fewer than 1e-7 of prior draws.
    """

    experiment: str
    seed: int = 0
    n: int | None = None
    n_synth: int | None = None
    losses: tuple[str, ...] = ("mpw", "ot")
    epochs: int = 200
    batch_size: int = 256
    lam: float = 1.0
    lr: float = 1e-2
    weight_decay: float = 0.01
    dropout: float = 0.2
    hidden: tuple[int, ...] = (500, 200, 100)
    n_projections: int = 64
    n_sets: int = 1000
    abc_eps: float = 4.0
    figures: bool = True

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValidationError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        object.__setattr__(self, "losses", tuple(self.losses))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not self.losses:
            raise ValidationError("at least one loss variant is required")
        if self.n is not None and self.n < 10:
            raise ValidationError("n must be at least 10")
        if self.n_synth is not None and self.n_synth < 10:
            raise ValidationError("n_synth must be at least 10")

    @property
    def real_size(self) -> int:
        if self.n is not None:
            return self.n
        return {"abc5d": 3000, "gmm20": 2000, "scurve": 2000, "gauss3_coverage": 300,
                "gmm_modecollapse_2comp": 2000}[self.experiment]

    @property
    def synth_size(self) -> int:
        return self.n_synth if self.n_synth is not None else max(self.real_size, 2000)

    def train_config(self, loss: str) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=min(self.batch_size, self.real_size), loss=loss,
                           lam=self.lam, n_projections=self.n_projections, hidden=self.hidden,
                           dropout=self.dropout, seed=self.seed,
                           adamw=AdamWConfig(lr=self.lr, weight_decay=self.weight_decay))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["losses"] = list(self.losses)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class VariantResult:
    loss: str
    model: TrainedModel = field(repr=False)
    synth: np.ndarray = field(repr=False)
    metrics: dict


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    real: np.ndarray = field(repr=False)
    real_metrics: dict
    variants: dict[str, VariantResult]
    timings: dict[str, float]

    def report(self) -> dict:
        """Machine-readable summary. Timings are left out so reruns compare equal."""
        return {
            "experiment": self.config.experiment,
            "config": self.config.to_dict(),
            "real": self.real_metrics,
            "variants": {k: {"loss": v.loss, "final_loss": _f(v.model.trace.epoch_total[-1])
                             if len(v.model.trace.epoch_total) else None, "metrics": v.metrics}
                         for k, v in self.variants.items()},
        }


def _f(x) -> float | None:
    x = float(x)
    return x if math.isfinite(x) else None


def load_real(cfg: ExperimentConfig) -> tuple[pd.DataFrame, dict]:
    """Real table plus experiment-specific evaluation settings."""
    n, seed = cfg.real_size, cfg.seed
    if cfg.experiment == "abc5d":
        return gen_abc5d(n, cfg.abc_eps, seed), dict(metrics.TV_PRESET_ABC)
    if cfg.experiment == "gmm20":
        df, _ = gen_gmm20(n, seed)
        return df, {"centers": gmm20_components()[1], "r": 3.0}
    if cfg.experiment == "scurve":
        return gen_scurve(n, seed), {}
    if cfg.experiment == "gauss3_coverage":
        return gen_gauss3(n, seed), {}
    df, _ = gen_gmm_2comp(n, seed)
    return df, {"centers": two_component_centers(), "r": 3.0, "tail_r": 2.0}


def _variant_metrics(cfg: ExperimentConfig, real: np.ndarray, synth: np.ndarray, settings: dict) -> dict:
    rep = metrics.evaluate(real, synth, seed=cfg.seed, **settings)
    out = rep.to_dict()
    if cfg.experiment == "gmm20":
        w_true = gmm20_components()[0]
        out["mode_weight_l1"] = float(np.abs(np.array(rep.mode_weights) - w_true).sum())
    if cfg.experiment == "scurve":
        resid = np.abs(synth[:, 0] ** 2 + (np.abs(synth[:, 2]) - 1.0) ** 2 - 1.0)
        out["manifold_residual_median"] = float(np.median(resid))
    return out


def gauss3_truth_sampler(count: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal((count, 3)) @ np.linalg.cholesky(GAUSS3_COV).T


def model_sampler(model: TrainedModel):
    """Adapter from a trained model to ``coverage_study``'s ``sampler(count, rng)``."""
    def draw(count: int, rng: np.random.Generator) -> np.ndarray:
        seed = int(rng.integers(0, 2 ** 63 - 1))
        return sample(model, count, seed).to_numpy(dtype=np.float64)
    return draw


def _coverage_dict(res: metrics.CoverageResult) -> dict:
    return {"s1_lower": res.lower, "s1_upper": res.upper, "s2_coverage": res.coverage}


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> ExperimentResult:
    """Train every loss variant on the experiment's real data and evaluate it."""
    timings: dict[str, float] = {}
    table, settings = load_real(cfg)
    real = table.to_numpy(dtype=np.float64)
    schema = TableSchema.infer(table)
    tr = fit_transformer(schema, table)
    enc = encode(tr, table)

    real_metrics: dict = {"n": len(real)}
    if settings.get("centers") is not None:
        real_metrics["mode_weights"] = metrics.mode_weights(real, settings["centers"], settings["r"]).tolist()
        if settings.get("tail_r") is not None:
            real_metrics["tail_mass"] = metrics.component_tail_mass(
                real, settings["centers"], settings["tail_r"]).tolist()
    if real.shape[0] > real.shape[1]:
        real_metrics["condition_number"] = _f(metrics.condition_number(real))
    if cfg.experiment == "gauss3_coverage":
        truth = metrics.coverage_study(gauss3_truth_sampler, cfg.real_size, cfg.n_sets,
                                       seed=cfg.seed)
        real_metrics["truth_coverage"] = _coverage_dict(truth)

    variants: dict[str, VariantResult] = {}
    for k, loss in enumerate(cfg.losses):
        t0 = time.perf_counter()
        model = fit(enc, cfg.train_config(loss))
        timings[f"fit_{loss}"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        synth = sample(model, cfg.synth_size, cfg.seed).to_numpy(dtype=np.float64)
        timings[f"sample_{loss}"] = time.perf_counter() - t0
        m = _variant_metrics(cfg, real, synth, settings)
        if cfg.experiment == "gauss3_coverage":
            cov = metrics.coverage_study(model_sampler(model), cfg.real_size, cfg.n_sets,
                                         seed=cfg.seed)
            m["coverage"] = _coverage_dict(cov)
        variants[loss] = VariantResult(loss, model, synth, m)
        log.info("%s/%s done in %.1fs", cfg.experiment, loss, timings[f"fit_{loss}"])

    result = ExperimentResult(cfg, real, real_metrics, variants, timings)
    if out_dir is not None:
        write_outputs(result, out_dir)
    return result


def _flat_rows(report: dict) -> list[tuple[str, str, str]]:
    rows = []

    def walk(prefix, obj, variant):
        if isinstance(obj, dict):
            for k in sorted(obj):
                walk(f"{prefix}.{k}" if prefix else k, obj[k], variant)
        elif isinstance(obj, list):
            for i, v in enumerate(obj):
                walk(f"{prefix}[{i}]", v, variant)
        else:
            rows.append((variant, prefix, "" if obj is None else repr(obj) if isinstance(obj, float) else str(obj)))

    walk("", report["real"], "real")
    for name, v in report["variants"].items():
        walk("", {"final_loss": v["final_loss"], **v["metrics"]}, name)
    return rows


def write_outputs(result: ExperimentResult, out_dir: str | Path) -> dict[str, Path]:
    """Write ``report.json``, ``metrics.csv`` and figures; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = result.report()
    paths = {"report": out / "report.json", "metrics": out / "metrics.csv"}
    paths["report"].write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    with open(paths["metrics"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "metric", "value"])
        w.writerows(_flat_rows(report))
    if result.config.figures:
        from . import plotting
        paths.update(plotting.experiment_figures(result, out))
    return paths
