"""Report figures for benchmark runs (matplotlib, Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps PNG bytes identical across reruns
_SAVE_KW = {"dpi": 100, "metadata": {"Software": None}}

COLORS = {"real": "0.35", "mpw": "tab:blue", "ot": "tab:orange", "sw": "tab:green"}


def _scatter_pairs(result) -> list[tuple[int, int]]:
    d = result.real.shape[1]
    if d >= 5 and result.config.experiment == "abc5d":
        return [(2, 3), (1, 4)]
    return [(0, 1)] if d < 3 else [(0, 1), (0, 2)]


def scatter_figure(result, path: Path) -> Path:
    """Real vs generated scatter of selected coordinate pairs, one column per source."""
    pairs = _scatter_pairs(result)
    names = ["real", *result.variants]
    fig, axes = plt.subplots(len(pairs), len(names), figsize=(3.2 * len(names), 3.0 * len(pairs)),
                             squeeze=False, sharex="row", sharey="row")
    for c, name in enumerate(names):
        X = result.real if name == "real" else result.variants[name].synth
        X = X[:3000]
        for r, (i, j) in enumerate(pairs):
            ax = axes[r, c]
            ax.scatter(X[:, i], X[:, j], s=2, alpha=0.4, color=COLORS.get(name, "k"), rasterized=True)
            ax.set_xlabel(f"x{i + 1}")
            if c == 0:
                ax.set_ylabel(f"x{j + 1}")
            if r == 0:
                ax.set_title(name)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def loss_figure(result, path: Path) -> Path:
    """Per-epoch training loss of each variant (log scale)."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, v in result.variants.items():
        y = v.model.trace.epoch_total
        if len(y):
            ax.semilogy(np.arange(1, len(y) + 1), np.maximum(y, 1e-12), label=name, color=COLORS.get(name))
    ax.set_xlabel("epoch")
    ax.set_ylabel("block loss (mean)")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def marginal_figure(result, path: Path) -> Path:
    """Histograms of the first few coordinates, real vs each variant."""
    d = min(result.real.shape[1], 5)
    fig, axes = plt.subplots(1, d, figsize=(2.8 * d, 2.6), squeeze=False)
    for j in range(d):
        ax = axes[0, j]
        lo, hi = np.quantile(result.real[:, j], [0.001, 0.999])
        pad = 0.25 * (hi - lo + 1e-12)
        bins = np.linspace(lo - pad, hi + pad, 41)
        ax.hist(result.real[:, j], bins=bins, density=True, color=COLORS["real"], alpha=0.4, label="real")
        for name, v in result.variants.items():
            ax.hist(v.synth[:, j], bins=bins, density=True, histtype="step", color=COLORS.get(name), label=name)
        ax.set_title(f"x{j + 1}")
    axes[0, 0].legend(frameon=False, fontsize=7)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def experiment_figures(result, out: Path) -> dict[str, Path]:
    exp = result.config.experiment
    return {
        "scatter": scatter_figure(result, out / f"{exp}_scatter.png"),
        "marginals": marginal_figure(result, out / f"{exp}_marginals.png"),
        "loss": loss_figure(result, out / f"{exp}_loss.png"),
    }
