"""Reverse-mode differentiation over a fixed chain of dense-network layers.

The generator is a straight chain (dense, relu, batchnorm, dropout, softmax
blocks), so instead of a general tape every layer kind carries a hand-written
vector-Jacobian product. Batches are 2-D ``float64`` arrays of shape
``(rows, cols)``.

Typical use::

    out, cache = forward(params, spec, z, mode="train", rng=rng)
    grads, dz = backward(cache, upstream)
    params = adamw_step(params.with_buffers(cache.buffers), grads, cfg)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ContractError, NumericError, ShapeError, ValidationError

LAYER_KINDS = ("dense", "relu", "batchnorm", "dropout", "softmax")


@dataclass(frozen=True)
class LayerSpec:
    """One layer of the chain.

    ``blocks`` only applies to ``softmax`` layers and lists half-open column
    ranges ``(start, stop)`` that are each normalised by a softmax; columns
    outside every block pass through unchanged.
    """

    kind: str
    in_dim: int
    out_dim: int
    dropout_rate: float = 0.0
    blocks: tuple[tuple[int, int], ...] = ()
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValidationError(f"unknown layer kind {self.kind!r}")
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValidationError("layer dimensions must be positive")
        if self.kind != "dense" and self.in_dim != self.out_dim:
            raise ValidationError(f"{self.kind} layer must preserve width")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValidationError("dropout_rate must lie in [0, 1)")
        seen = np.zeros(self.out_dim, dtype=bool)
        for start, stop in self.blocks:
            if not 0 <= start < stop <= self.out_dim:
                raise ValidationError(f"softmax block {(start, stop)} out of range")
            if seen[start:stop].any():
                raise ValidationError("softmax blocks overlap")
            seen[start:stop] = True


def dense(in_dim: int, out_dim: int) -> LayerSpec:
    return LayerSpec("dense", in_dim, out_dim)


def relu(dim: int) -> LayerSpec:
    return LayerSpec("relu", dim, dim)


def batchnorm(dim: int, eps: float = 1e-5, momentum: float = 0.1) -> LayerSpec:
    return LayerSpec("batchnorm", dim, dim, bn_eps=eps, bn_momentum=momentum)


def dropout(dim: int, rate: float = 0.2) -> LayerSpec:
    return LayerSpec("dropout", dim, dim, dropout_rate=rate)


def softmax_blocks(dim: int, blocks: Sequence[tuple[int, int]]) -> LayerSpec:
    return LayerSpec("softmax", dim, dim, blocks=tuple((int(a), int(b)) for a, b in blocks))


def validate_chain(spec: Sequence[LayerSpec]) -> None:
    if not spec:
        raise ValidationError("empty layer chain")
    for i in range(1, len(spec)):
        if spec[i - 1].out_dim != spec[i].in_dim:
            raise ShapeError(
                f"layer {i - 1} outputs {spec[i - 1].out_dim} columns but layer {i} "
                f"expects {spec[i].in_dim}"
            )


def mlp_chain(
    in_dim: int,
    out_dim: int,
    hidden: Sequence[int] = (500, 200, 100),
    dropout_rate: float = 0.2,
    softmax: Sequence[tuple[int, int]] = (),
    bn_eps: float = 1e-5,
    bn_momentum: float = 0.1,
) -> list[LayerSpec]:
    """Dense -> BatchNorm -> Dropout -> ReLU per hidden layer, then a linear head.

    A softmax layer is appended when ``softmax`` lists categorical blocks.
    """
    chain: list[LayerSpec] = []
    width = in_dim
    for h in hidden:
        chain.append(dense(width, h))
        chain.append(batchnorm(h, bn_eps, bn_momentum))
        if dropout_rate > 0:
            chain.append(dropout(h, dropout_rate))
        chain.append(relu(h))
        width = h
    chain.append(dense(width, out_dim))
    if softmax:
        chain.append(softmax_blocks(out_dim, softmax))
    validate_chain(chain)
    return chain


@dataclass(frozen=True)
class AdamWConfig:
    """AdamW with a cosine-annealed multiplier.

    ``period`` is the number of optimizer steps over which the multiplier
    decays from ``eta_max`` to ``eta_min``; ``None`` keeps it at ``eta_max``.
    """

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    eta_max: float = 1.0
    eta_min: float = 0.0
    period: int | None = None

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValidationError("betas must lie in [0, 1)")
        if self.eps <= 0:
            raise ValidationError("eps must be positive")
        if self.weight_decay < 0:
            raise ValidationError("weight_decay must be nonnegative")
        if self.eta_min > self.eta_max:
            raise ValidationError("eta_min must not exceed eta_max")
        if self.period is not None and self.period < 0:
            raise ValidationError("period must be nonnegative")


def cosine_lr(t: int, eta_max: float, eta_min: float, period: int | None) -> float:
    """Cosine-annealed multiplier; steps past ``period`` clamp to ``eta_min``."""
    if t < 0:
        raise ValidationError("step must be nonnegative")
    if period is None:
        return eta_max
    if period == 0 or t >= period:
        return eta_min
    return eta_min + 0.5 * (eta_max - eta_min) * (1.0 + math.cos(math.pi * t / period))


@dataclass
class GeneratorParams:
    """Trainable tensors, batchnorm running statistics and AdamW state.

    Each list has one dict per layer of the chain (empty for parameter-free
    layers).
    """

    weights: list[dict[str, np.ndarray]]
    buffers: list[dict[str, np.ndarray]]
    m: list[dict[str, np.ndarray]]
    v: list[dict[str, np.ndarray]]
    step: int = 0

    def with_buffers(self, buffers: list[dict[str, np.ndarray]]) -> "GeneratorParams":
        return replace(self, buffers=buffers)

    def n_parameters(self) -> int:
        return sum(a.size for layer in self.weights for a in layer.values())


def init_params(spec: Sequence[LayerSpec], rng: np.random.Generator) -> GeneratorParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) dense init; BN starts at identity."""
    validate_chain(spec)
    weights, buffers = [], []
    for layer in spec:
        if layer.kind == "dense":
            bound = 1.0 / math.sqrt(layer.in_dim)
            W = rng.uniform(-bound, bound, size=(layer.in_dim, layer.out_dim))
            b = rng.uniform(-bound, bound, size=layer.out_dim)
            weights.append({"W": W, "b": b})
            buffers.append({})
        elif layer.kind == "batchnorm":
            weights.append({"gamma": np.ones(layer.out_dim), "beta": np.zeros(layer.out_dim)})
            buffers.append({"mean": np.zeros(layer.out_dim), "var": np.ones(layer.out_dim)})
        else:
            weights.append({})
            buffers.append({})
    zeros = [{k: np.zeros_like(a) for k, a in layer.items()} for layer in weights]
    zeros2 = [{k: np.zeros_like(a) for k, a in layer.items()} for layer in weights]
    return GeneratorParams(weights, buffers, zeros, zeros2, 0)


@dataclass
class ForwardCache:
    spec: tuple[LayerSpec, ...]
    params: GeneratorParams
    mode: str
    inputs: list[np.ndarray] = field(default_factory=list)
    aux: list[dict] = field(default_factory=list)
    buffers: list[dict[str, np.ndarray]] = field(default_factory=list)
    output: np.ndarray | None = None


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def forward(
    params: GeneratorParams,
    spec: Sequence[LayerSpec],
    z: np.ndarray,
    mode: str = "train",
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, ForwardCache]:
    """Run the chain on a batch ``z`` and keep what ``backward`` needs.

    In ``train`` mode batchnorm normalises with batch statistics (the updated
    running statistics are returned in ``cache.buffers``) and dropout draws
    its masks from ``rng``. In ``eval`` mode batchnorm uses the stored running
    statistics and dropout is the identity.
    """
    if mode not in ("train", "eval"):
        raise ValidationError(f"mode must be 'train' or 'eval', got {mode!r}")
    spec = tuple(spec)
    validate_chain(spec)
    if len(params.weights) != len(spec):
        raise ShapeError("parameter list does not match the layer chain")
    x = np.asarray(z, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected a 2-D batch, got shape {x.shape}")
    if x.shape[1] != spec[0].in_dim:
        raise ShapeError(f"input has {x.shape[1]} columns, first layer expects {spec[0].in_dim}")

    cache = ForwardCache(spec, params, mode)
    for i, layer in enumerate(spec):
        cache.inputs.append(x)
        aux: dict = {}
        new_buf = params.buffers[i]
        if layer.kind == "dense":
            w = params.weights[i]
            y = x @ w["W"] + w["b"]
        elif layer.kind == "relu":
            y = np.maximum(x, 0.0)
        elif layer.kind == "batchnorm":
            w, buf = params.weights[i], params.buffers[i]
            if mode == "train":
                n = x.shape[0]
                if n < 2:
                    raise ShapeError("batchnorm in train mode needs at least 2 rows")
                mu = x.mean(axis=0)
                var = x.var(axis=0)
                inv_std = 1.0 / np.sqrt(var + layer.bn_eps)
                mom = layer.bn_momentum
                new_buf = {
                    "mean": (1.0 - mom) * buf["mean"] + mom * mu,
                    "var": (1.0 - mom) * buf["var"] + mom * var * (n / (n - 1)),
                }
            else:
                mu, inv_std = buf["mean"], 1.0 / np.sqrt(buf["var"] + layer.bn_eps)
            xhat = (x - mu) * inv_std
            aux = {"xhat": xhat, "inv_std": inv_std}
            y = w["gamma"] * xhat + w["beta"]
        elif layer.kind == "dropout":
            if mode == "train" and layer.dropout_rate > 0:
                if rng is None:
                    raise ContractError("dropout in train mode needs an explicit rng")
                keep = 1.0 - layer.dropout_rate
                mask = (rng.random(x.shape) < keep) / keep
                aux = {"mask": mask}
                y = x * mask
            else:
                y = x
        else:  # softmax blocks
            y = x.copy()
            for start, stop in layer.blocks:
                y[:, start:stop] = _softmax_rows(x[:, start:stop])
        if not np.all(np.isfinite(y)):
            raise NumericError(f"non-finite activation at layer {i} ({layer.kind})")
        cache.aux.append(aux)
        cache.buffers.append(new_buf)
        x = y
    cache.output = x
    return x, cache


def backward(
    cache: ForwardCache,
    upstream: np.ndarray,
    params: GeneratorParams | None = None,
) -> tuple[list[dict[str, np.ndarray]], np.ndarray]:
    """Propagate ``upstream`` (dLoss/dOutput) back through the cached chain.

    Returns per-layer parameter gradients (same structure as
    ``params.weights``) and the gradient with respect to the input batch.
    Passing ``params`` lets the call verify the cache was produced with them.
    """
    if cache.output is None or len(cache.inputs) != len(cache.spec):
        raise ContractError("cache was not produced by a completed forward call")
    if params is not None and params is not cache.params:
        raise ContractError("cache is stale: it was produced with different parameters")
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != cache.output.shape:
        raise ContractError(f"upstream gradient shape {g.shape} != output shape {cache.output.shape}")

    grads: list[dict[str, np.ndarray]] = [{} for _ in cache.spec]
    for i in range(len(cache.spec) - 1, -1, -1):
        layer = cache.spec[i]
        x = cache.inputs[i]
        aux = cache.aux[i]
        if layer.kind == "dense":
            W = cache.params.weights[i]["W"]
            grads[i] = {"W": x.T @ g, "b": g.sum(axis=0)}
            g = g @ W.T
        elif layer.kind == "relu":
            g = g * (x > 0)
        elif layer.kind == "batchnorm":
            xhat, inv_std = aux["xhat"], aux["inv_std"]
            gamma = cache.params.weights[i]["gamma"]
            grads[i] = {"gamma": (g * xhat).sum(axis=0), "beta": g.sum(axis=0)}
            dxhat = g * gamma
            if cache.mode == "train":
                n = x.shape[0]
                g = (inv_std / n) * (
                    n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
                )
            else:
                g = dxhat * inv_std
        elif layer.kind == "dropout":
            if "mask" in aux:
                g = g * aux["mask"]
        else:
            y = cache.inputs[i + 1] if i + 1 < len(cache.inputs) else cache.output
            g = g.copy()
            for start, stop in layer.blocks:
                ys, gs = y[:, start:stop], g[:, start:stop]
                g[:, start:stop] = ys * (gs - (gs * ys).sum(axis=1, keepdims=True))
    return grads, g


def adamw_step(
    params: GeneratorParams,
    grads: list[dict[str, np.ndarray]],
    cfg: AdamWConfig,
) -> GeneratorParams:
    """One decoupled-weight-decay Adam step.

    ``theta <- theta - eta(t) * (lr * m_hat / (sqrt(v_hat) + eps) + wd * theta)``
    with bias-corrected moments and ``eta(t)`` from :func:`cosine_lr`
    evaluated at the pre-increment step counter.
    """
    if len(grads) != len(params.weights):
        raise ShapeError("gradient list does not match parameters")
    t = params.step + 1
    eta = cosine_lr(params.step, cfg.eta_max, cfg.eta_min, cfg.period)
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    new_w, new_m, new_v = [], [], []
    for i, layer in enumerate(params.weights):
        lw, lm, lv = {}, {}, {}
        for key, theta in layer.items():
            g = grads[i].get(key)
            if g is None or g.shape != theta.shape:
                raise ShapeError(f"gradient for layer {i} '{key}' is missing or misshapen")
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient at layer {i} '{key}'")
            m = cfg.beta1 * params.m[i][key] + (1.0 - cfg.beta1) * g
            v = cfg.beta2 * params.v[i][key] + (1.0 - cfg.beta2) * g * g
            m_hat = m / bc1
            v_hat = v / bc2
            lw[key] = theta - eta * (cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps) + cfg.weight_decay * theta)
            lm[key], lv[key] = m, v
        new_w.append(lw)
        new_m.append(lm)
        new_v.append(lv)
    return GeneratorParams(new_w, params.buffers, new_m, new_v, t)
