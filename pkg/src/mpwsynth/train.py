"""Critic-free minibatch training of a generator under an exact transport loss.

Each epoch draws one uniform permutation of the rows, cuts it into
consecutive blocks of ``batch_size`` and, per block, pushes fresh Gaussian
noise through the generator, compares the generated rows with the block's
real rows under the chosen loss (``mpw``, ``ot`` or ``sw``), backpropagates
the envelope gradient and takes one AdamW step.

In conditional mode the encoded conditioning columns of each real row are
concatenated in front of its noise vector, and the loss still compares full
rows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import pandas as pd

from . import rng as streams
from .autodiff import (
    AdamWConfig,
    GeneratorParams,
    LayerSpec,
    adamw_step,
    backward,
    forward,
    init_params,
    mlp_chain,
    validate_chain,
)
from .errors import NumericError, ShapeError, ValidationError
from .mpw import MarginalPenaltySpec, mpw_grad_dst
from .tabular import EncodedMatrix, FittedTransformer, TableSchema, decode, encode
from .tabular import fit as fit_transformer
from .transport import sliced_w1_grad_dst, w1_exact, w1_grad_dst

log = logging.getLogger(__name__)

LOSSES = ("mpw", "ot", "sw")


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters.

    ``lam`` is the marginal penalty weight used for every encoded coordinate
    unless ``penalty`` gives an explicit subset/weight list. ``latent_dim``
    defaults to the encoded width.
    """

    epochs: int = 200
    batch_size: int = 256
    latent_dim: int | None = None
    loss: str = "mpw"
    lam: float = 1.0
    penalty: MarginalPenaltySpec | None = None
    n_projections: int = 64
    hidden: tuple[int, ...] = (500, 200, 100)
    dropout: float = 0.2
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    adamw: AdamWConfig = field(default_factory=AdamWConfig)
    seed: int = 0
    copy_conditional: bool = False

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValidationError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.batch_size < 2:
            raise ValidationError("batch_size must be at least 2")
        if self.epochs < 0:
            raise ValidationError("epochs must be nonnegative")
        if self.latent_dim is not None and self.latent_dim < 1:
            raise ValidationError("latent_dim must be at least 1")
        if self.loss == "sw" and self.n_projections < 1:
            raise ValidationError("sw loss needs n_projections >= 1")
        if self.lam < 0:
            raise ValidationError("lam must be nonnegative")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def penalty_for(self, width: int) -> MarginalPenaltySpec:
        if self.penalty is not None:
            self.penalty.check_dim(width)
            return self.penalty
        return MarginalPenaltySpec.singletons(width, self.lam)


@dataclass(frozen=True)
class ConditioningSpec:
    """Encoded coordinates fed to the generator as conditioning inputs."""

    indices: tuple[int, ...] = ()
    columns: tuple[str, ...] = ()

    @classmethod
    def from_columns(cls, tr: FittedTransformer, names: Sequence[str]) -> "ConditioningSpec":
        return cls(tuple(tr.encoded_indices(names)), tuple(names))

    @property
    def width(self) -> int:
        return len(self.indices)

    def check(self, width: int) -> None:
        if len(set(self.indices)) != len(self.indices):
            raise ValidationError("conditioning indices repeat")
        if any(not 0 <= i < width for i in self.indices):
            raise ValidationError("conditioning index out of range")
        if len(self.indices) >= width:
            raise ValidationError("conditioning must leave at least one generated coordinate")


@dataclass
class LossTrace:
    """Per-block and per-epoch loss components.

    ``block_penalty[e, b, k]`` is the (unweighted) k-th marginal W1 of block
    ``b`` in epoch ``e``; ``weights[k]`` is its penalty weight.
    """

    block_total: np.ndarray
    block_joint: np.ndarray
    block_penalty: np.ndarray
    block_size: np.ndarray
    weights: np.ndarray

    @property
    def epoch_total(self) -> np.ndarray:
        return self.block_total.mean(axis=1) if self.block_total.size else np.zeros(0)

    @property
    def epoch_joint(self) -> np.ndarray:
        return self.block_joint.mean(axis=1) if self.block_joint.size else np.zeros(0)

    @property
    def epoch_penalty(self) -> np.ndarray:
        return self.block_penalty.mean(axis=1) if self.block_penalty.size else np.zeros((0, 0))


@dataclass
class TrainedModel:
    arch: tuple[LayerSpec, ...]
    params: GeneratorParams
    transformer: FittedTransformer
    config: TrainConfig
    trace: LossTrace
    conditioning: ConditioningSpec | None = None

    @property
    def latent_dim(self) -> int:
        return self.arch[0].in_dim - (self.conditioning.width if self.conditioning else 0)

    @property
    def is_conditional(self) -> bool:
        return self.conditioning is not None and self.conditioning.width > 0


def block_slices(n: int, m: int) -> list[slice]:
    """Consecutive blocks of ``m`` positions; a lone trailing row joins the previous block.

    Train-mode batchnorm needs at least two rows per block.
    """
    edges = list(range(0, n, m)) + [n]
    if len(edges) > 2 and edges[-1] - edges[-2] < 2:
        del edges[-2]
    return [slice(edges[k], edges[k + 1]) for k in range(len(edges) - 1)]


def block_loss(real: np.ndarray, gen: np.ndarray, loss: str, penalty: MarginalPenaltySpec,
               n_projections: int = 64, proj_rng=None):
    """Loss between a real and a generated block and its gradient w.r.t. ``gen``.

    Returns ``(total, joint, penalties, grad)``.
    """
    if loss == "mpw":
        grad, br = mpw_grad_dst(real, gen, penalty)
        return br.total, br.joint, br.penalty_values, grad
    if loss == "ot":
        plan = w1_exact(real, gen)
        return plan.cost, plan.cost, np.zeros(0), w1_grad_dst(plan, real, gen)
    value, grad = sliced_w1_grad_dst(real, gen, n_projections, proj_rng)
    return value, value, np.zeros(0), grad


def default_arch(cfg: TrainConfig, in_dim: int, tr: FittedTransformer) -> list[LayerSpec]:
    return mlp_chain(in_dim, tr.width, cfg.hidden, cfg.dropout, tr.softmax_blocks(),
                     cfg.bn_eps, cfg.bn_momentum)


def _train(X: np.ndarray, tr: FittedTransformer, cfg: TrainConfig,
           arch: Sequence[LayerSpec] | None, cond: ConditioningSpec | None) -> TrainedModel:
    n, width = X.shape
    if not np.all(np.isfinite(X)):
        raise ValidationError("training data contain non-finite values")
    if width != tr.width:
        raise ShapeError(f"data width {width} != transformer width {tr.width}")
    if n < cfg.batch_size:
        raise ValidationError(f"batch_size {cfg.batch_size} exceeds the {n} available rows")
    cond = cond if cond is not None and cond.width > 0 else None
    if cond is not None:
        cond.check(width)
    d_c = cond.width if cond else 0
    d_z = cfg.latent_dim or width
    arch = tuple(arch) if arch is not None else tuple(default_arch(cfg, d_z + d_c, tr))
    validate_chain(arch)
    if arch[0].in_dim != d_z + d_c:
        raise ShapeError(f"generator input width {arch[0].in_dim} != latent {d_z} + conditioning {d_c}")
    if arch[-1].out_dim != width:
        raise ShapeError(f"generator output width {arch[-1].out_dim} != encoded width {width}")

    penalty = cfg.penalty_for(width)
    blocks = block_slices(n, cfg.batch_size)
    adam = cfg.adamw if cfg.adamw.period is not None else replace(cfg.adamw, period=cfg.epochs * len(blocks))
    params = init_params(arch, streams.make_rng(cfg.seed, streams.INIT))
    perm_rng = streams.make_rng(cfg.seed, streams.PERMUTE)
    noise_rng = streams.make_rng(cfg.seed, streams.NOISE)
    drop_rng = streams.make_rng(cfg.seed, streams.DROPOUT)
    proj_rng = streams.make_rng(cfg.seed, streams.PROJECT)
    cidx = list(cond.indices) if cond else []

    n_pen = len(penalty.entries) if cfg.loss == "mpw" else 0
    E, B = cfg.epochs, len(blocks)
    trace = LossTrace(np.zeros((E, B)), np.zeros((E, B)), np.zeros((E, B, n_pen)),
                      np.array([s.stop - s.start for s in blocks]),
                      np.array([w for _, w in penalty.entries]) if n_pen else np.zeros(0))

    for epoch in range(E):
        perm = perm_rng.permutation(n)
        for b, sl in enumerate(blocks):
            idx = perm[sl]
            real = X[idx]
            z = noise_rng.standard_normal((len(idx), d_z))
            if cond:
                z = np.concatenate([real[:, cidx], z], axis=1)
            try:
                gen, cache = forward(params, arch, z, "train", drop_rng)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, block {b}: {exc}") from None
            if cfg.copy_conditional and cond:
                gen = gen.copy()
                gen[:, cidx] = real[:, cidx]
            total, joint, pens, grad = block_loss(real, gen, cfg.loss, penalty, cfg.n_projections, proj_rng)
            if not (np.isfinite(total) and np.all(np.isfinite(grad))):
                raise NumericError(f"non-finite loss at epoch {epoch}, block {b}")
            if cfg.copy_conditional and cond:
                grad[:, cidx] = 0.0
            trace.block_total[epoch, b] = total
            trace.block_joint[epoch, b] = joint
            if n_pen:
                trace.block_penalty[epoch, b] = pens
            grads, _ = backward(cache, grad)
            try:
                params = adamw_step(params.with_buffers(cache.buffers), grads, adam)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, block {b}: {exc}") from None
        if log.isEnabledFor(logging.DEBUG):
            log.debug("epoch %d loss %.6f", epoch, trace.block_total[epoch].mean())
    return TrainedModel(arch, params, tr, cfg, trace, cond)


def fit(data: EncodedMatrix, cfg: TrainConfig, arch: Sequence[LayerSpec] | None = None) -> TrainedModel:
    """Train an unconditional generator on encoded rows."""
    return _train(np.asarray(data.values, dtype=np.float64), data.transformer, cfg, arch, None)


def fit_conditional(data: EncodedMatrix, cond: ConditioningSpec, cfg: TrainConfig,
                    arch: Sequence[LayerSpec] | None = None) -> TrainedModel:
    """Train a generator whose input is ``[conditioning features, noise]``."""
    return _train(np.asarray(data.values, dtype=np.float64), data.transformer, cfg, arch, cond)


def fit_table(table: pd.DataFrame, schema: TableSchema | None = None, cfg: TrainConfig | None = None,
              condition_on: Sequence[str] = ()) -> TrainedModel:
    """Fit the transformer and the generator on a raw table in one call."""
    schema = schema or TableSchema.infer(table)
    cfg = cfg or TrainConfig()
    tr = fit_transformer(schema, table)
    enc = encode(tr, table)
    if condition_on:
        return fit_conditional(enc, ConditioningSpec.from_columns(tr, condition_on), cfg)
    return fit(enc, cfg)


def generate(model: TrainedModel, count: int, seed: int, conditioning=None) -> np.ndarray:
    """Raw generator output (encoded space, eval mode) for ``count`` noise rows."""
    if count < 0:
        raise ValidationError("count must be nonnegative")
    cond_values = None
    if model.is_conditional:
        if conditioning is None:
            raise ValidationError("conditional model needs conditioning rows")
        if isinstance(conditioning, pd.DataFrame):
            if not model.conditioning.columns:
                raise ValidationError("model conditions on encoded indices; pass an encoded array")
            cond_values = encode(model.transformer, conditioning, model.conditioning.columns).values
        else:
            cond_values = np.asarray(conditioning, dtype=np.float64)
            if cond_values.ndim == 1:
                cond_values = cond_values[:, None]
        if cond_values.shape[1] != model.conditioning.width:
            raise ShapeError("conditioning rows have the wrong width")
        if len(cond_values) != count:
            if len(cond_values) == 1:
                cond_values = np.repeat(cond_values, count, axis=0)
            else:
                raise ValidationError(f"{len(cond_values)} conditioning rows for count={count}")
    elif conditioning is not None:
        raise ValidationError("model is unconditional; conditioning rows are not accepted")

    rng = streams.make_rng(seed, streams.SAMPLE)
    z = rng.standard_normal((count, model.latent_dim))
    if cond_values is not None:
        z = np.concatenate([cond_values, z], axis=1)
    if count == 0:
        return np.zeros((0, model.transformer.width))
    out, _ = forward(model.params, model.arch, z, "eval")
    if cond_values is not None and model.config.copy_conditional:
        out = out.copy()
        out[:, list(model.conditioning.indices)] = cond_values
    return out


def sample(model: TrainedModel, count: int, seed: int, conditioning=None) -> pd.DataFrame:
    """Draw ``count`` synthetic rows and decode them to the original column types."""
    return decode(model.transformer, generate(model, count, seed, conditioning))
