import json
import math

import numpy as np
import pytest

from mpwsynth.bench import (
    ABC_PHI_STAR,
    GAUSS3_COV,
    ExperimentConfig,
    abc_observation,
    gen_abc5d,
    gen_gauss3,
    gen_gmm20,
    gen_gmm_2comp,
    gen_scurve,
    gmm20_components,
    run_experiment,
)
from mpwsynth.errors import NumericError, ValidationError


def kde_1d(x, grid, h):
    z = (grid[:, None] - x[None, :]) / h
    return np.exp(-0.5 * z * z).sum(axis=1)


def test_gmm20_component_frequencies():
    n = 2000
    _, labels = gen_gmm20(n, seed=0)
    w = gmm20_components()[0]
    counts = np.bincount(labels, minlength=3)
    sd = np.sqrt(n * w * (1 - w))
    assert np.all(np.abs(counts - n * w) <= 3 * sd)


def test_gmm20_component3_correlation():
    df, labels = gen_gmm20(20000, seed=1)
    X = df.to_numpy()[labels == 2]
    r = np.corrcoef(X[:, 0], X[:, 1])[0, 1]
    assert abs(r + 0.09) < 0.03


def test_gmm20_first_dim_is_trimodal():
    df, _ = gen_gmm20(2000, seed=0)
    grid = np.linspace(-10, 12, 2201)
    f = kde_1d(df["x1"].to_numpy(), grid, 0.5)
    peaks = np.sum((f[1:-1] > f[:-2]) & (f[1:-1] > f[2:]))
    assert peaks == 3


def test_gmm20_deterministic():
    a, la = gen_gmm20(50, seed=3)
    b, lb = gen_gmm20(50, seed=3)
    assert a.equals(b) and np.array_equal(la, lb)


def test_scurve_ranges_and_identity():
    X = gen_scurve(5000, seed=0).to_numpy()
    assert X[:, 0].min() >= -1 and X[:, 0].max() <= 1
    assert X[:, 1].min() >= 0 and X[:, 1].max() <= 2
    assert X[:, 2].min() >= -2 and X[:, 2].max() <= 2
    np.testing.assert_allclose(X[:, 0] ** 2 + (np.abs(X[:, 2]) - 1) ** 2, 1.0, rtol=0, atol=1e-12)


def test_gauss3_covariance():
    assert np.all(np.linalg.eigvalsh(GAUSS3_COV) > 0)
    X = gen_gauss3(100_000, seed=0).to_numpy()
    S = np.cov(X.T)
    assert np.linalg.norm(S - GAUSS3_COV, 2) < 1.0
    assert abs(S[0, 0] - 30.0) < 1.0


def test_two_component_mixture():
    df, labels = gen_gmm_2comp(4000, seed=0)
    X = df.to_numpy()
    assert abs(labels.mean() - 0.2) < 3 * math.sqrt(0.16 / 4000)
    np.testing.assert_allclose(X[labels == 0].mean(axis=0), 6.0, atol=0.1)
    np.testing.assert_allclose(X[labels == 1].mean(axis=0), -6.0, atol=0.15)


def test_abc_posterior_sample():
    df = gen_abc5d(300, eps=4.0, seed=0)
    X = df.to_numpy()
    assert X.shape == (300, 5)
    assert X.min() >= -3 and X.max() <= 3
    # the scale parameters enter squared, so the posterior is sign-symmetric
    for j in (2, 3):
        assert (X[:, j] > 0).any() and (X[:, j] < 0).any()
    assert np.linalg.eigvalsh(np.cov(X.T)).min() >= -1e-12
    assert df.equals(gen_abc5d(300, eps=4.0, seed=0))


def test_abc_observation_is_fixed():
    np.testing.assert_array_equal(abc_observation(0), abc_observation(0))
    assert abc_observation(0).shape == (8,)
    assert len(ABC_PHI_STAR) == 5


def test_abc_rejects_hopeless_tolerance():
    with pytest.raises(NumericError, match="acceptance rate"):
        gen_abc5d(10, eps=1e-3, seed=0, chunk=10_000, min_draws=20_000)


def test_config_validation():
    with pytest.raises(ValidationError):
        ExperimentConfig("nope")
    with pytest.raises(ValidationError):
        ExperimentConfig("gmm20", losses=())
    assert ExperimentConfig("gauss3_coverage").real_size == 300
    assert ExperimentConfig("gauss3_coverage").synth_size == 2000


def tiny(experiment, **kw):
    base = dict(n=120, n_synth=200, epochs=2, batch_size=40, hidden=(16,), n_sets=20)
    base.update(kw)
    return ExperimentConfig(experiment, **base)


def test_two_component_report_has_mode_weights():
    rep = run_experiment(tiny("gmm_modecollapse_2comp", figures=False)).report()
    assert set(rep["variants"]) == {"mpw", "ot"}
    for v in rep["variants"].values():
        assert len(v["metrics"]["mode_weights"]) == 2
        assert len(v["metrics"]["tail_mass"]) == 2
    assert len(rep["real"]["mode_weights"]) == 2


def test_abc_report_has_covariance_diagnostics():
    rep = run_experiment(tiny("abc5d", losses=("mpw",), figures=False)).report()
    m = rep["variants"]["mpw"]["metrics"]
    assert "cov_bias" in m and "condition_number" in m
    assert 0.0 <= m["tv_binned"] <= 1.0


def test_gmm20_and_scurve_extras():
    rep = run_experiment(tiny("gmm20", losses=("mpw",), figures=False)).report()
    assert "mode_weight_l1" in rep["variants"]["mpw"]["metrics"]
    rep = run_experiment(tiny("scurve", losses=("sw",), figures=False)).report()
    assert rep["variants"]["sw"]["metrics"]["manifold_residual_median"] >= 0


def test_gauss3_report_has_coverage():
    rep = run_experiment(tiny("gauss3_coverage", losses=("mpw",), figures=False)).report()
    assert 0 <= rep["variants"]["mpw"]["metrics"]["coverage"]["s2_coverage"] <= 1
    assert "truth_coverage" in rep["real"]


def test_outputs_are_bitwise_reproducible(tmp_path):
    cfg = tiny("gmm_modecollapse_2comp")
    run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert "report.json" in names and "metrics.csv" in names
    assert any(n.endswith(".png") for n in names)
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    rep = json.loads((tmp_path / "a" / "report.json").read_text())
    assert rep["experiment"] == "gmm_modecollapse_2comp"
