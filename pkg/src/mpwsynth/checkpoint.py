"""Versioned single-file model checkpoints.

Layout::

    b"MPWSYNTH"            8-byte magic
    u32 little-endian      format version
    u64 little-endian      header length in bytes
    header                 UTF-8 JSON (sorted keys)
    payload                little-endian float64 sections

The header holds the layer chain, transformer, training config, conditioning
spec and a section table ``name -> (offset, shape)`` into the payload, where
offsets count float64 elements. Writing the same model twice gives the same
bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .autodiff import AdamWConfig, GeneratorParams, LayerSpec, validate_chain
from .errors import ValidationError
from .mpw import MarginalPenaltySpec
from .tabular import FittedTransformer
from .train import ConditioningSpec, LossTrace, TrainConfig, TrainedModel

MAGIC = b"MPWSYNTH"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


def config_to_dict(cfg: TrainConfig) -> dict:
    d = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    d["hidden"] = list(cfg.hidden)
    d["adamw"] = asdict(cfg.adamw)
    d["penalty"] = None if cfg.penalty is None else [[list(s), w] for s, w in cfg.penalty.entries]
    return d


def config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    d["adamw"] = AdamWConfig(**d.get("adamw", {}))
    if d.get("penalty") is not None:
        d["penalty"] = MarginalPenaltySpec(tuple((tuple(s), float(w)) for s, w in d["penalty"]))
    d["hidden"] = tuple(d.get("hidden", ()))
    return TrainConfig(**d)


def _layer_to_dict(layer: LayerSpec) -> dict:
    d = asdict(layer)
    d["blocks"] = [list(b) for b in layer.blocks]
    return d


def _layer_from_dict(d: dict) -> LayerSpec:
    d = dict(d)
    d["blocks"] = tuple(tuple(int(x) for x in b) for b in d.get("blocks", ()))
    return LayerSpec(**d)


def _sections(model: TrainedModel) -> list[tuple[str, np.ndarray]]:
    out = []
    p = model.params
    for group, layers in (("w", p.weights), ("buf", p.buffers), ("m", p.m), ("v", p.v)):
        for i, layer in enumerate(layers):
            for key in sorted(layer):
                out.append((f"{group}/{i}/{key}", layer[key]))
    t = model.trace
    for key in ("block_total", "block_joint", "block_penalty", "block_size", "weights"):
        out.append((f"trace/{key}", getattr(t, key)))
    return out


def dumps(model: TrainedModel) -> bytes:
    """Serialize ``model`` to checkpoint bytes."""
    table = {}
    chunks = []
    offset = 0
    for name, arr in _sections(model):
        a = np.ascontiguousarray(arr, dtype="<f8")
        table[name] = {"offset": offset, "shape": list(a.shape)}
        chunks.append(a.tobytes())
        offset += a.size
    header = {
        "format": "mpwsynth-checkpoint",
        "arch": [_layer_to_dict(layer) for layer in model.arch],
        "transformer": model.transformer.to_dict(),
        "config": config_to_dict(model.config),
        "conditioning": None if model.conditioning is None else {
            "indices": list(model.conditioning.indices), "columns": list(model.conditioning.columns)},
        "step": int(model.params.step),
        "sections": table,
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(hb)) + hb + b"".join(chunks)


def loads(data: bytes) -> TrainedModel:
    """Parse checkpoint bytes.

    Raises:
        ValidationError: bad magic, unknown version, or a truncated or
            inconsistent payload.
    """
    if len(data) < _PREFIX.size:
        raise ValidationError("checkpoint is truncated")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise ValidationError("not a checkpoint file (bad magic)")
    if version != VERSION:
        raise ValidationError(f"unsupported checkpoint version {version} (expected {VERSION})")
    start = _PREFIX.size
    if len(data) < start + hlen:
        raise ValidationError("checkpoint header is truncated")
    try:
        header = json.loads(data[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValidationError(f"corrupt checkpoint header: {exc}") from None
    payload = data[start + hlen:]
    if len(payload) % 8:
        raise ValidationError("checkpoint payload is not a whole number of float64 values")
    flat = np.frombuffer(payload, dtype="<f8")

    def get(name: str) -> np.ndarray:
        sec = header["sections"].get(name)
        if sec is None:
            raise ValidationError(f"checkpoint is missing section {name!r}")
        size = int(np.prod(sec["shape"], dtype=np.int64))
        if sec["offset"] + size > flat.size:
            raise ValidationError(f"section {name!r} runs past the payload")
        return flat[sec["offset"]:sec["offset"] + size].reshape(sec["shape"]).astype(np.float64)

    arch = tuple(_layer_from_dict(d) for d in header["arch"])
    validate_chain(arch)
    groups: dict[str, list[dict]] = {g: [{} for _ in arch] for g in ("w", "buf", "m", "v")}
    for name in header["sections"]:
        parts = name.split("/")
        if parts[0] in groups:
            groups[parts[0]][int(parts[1])][parts[2]] = get(name)
    params = GeneratorParams(groups["w"], groups["buf"], groups["m"], groups["v"], int(header["step"]))
    trace = LossTrace(get("trace/block_total"), get("trace/block_joint"), get("trace/block_penalty"),
                      get("trace/block_size").astype(np.int64), get("trace/weights"))
    cond = header.get("conditioning")
    conditioning = None if cond is None else ConditioningSpec(tuple(cond["indices"]), tuple(cond["columns"]))
    return TrainedModel(arch, params, FittedTransformer.from_dict(header["transformer"]),
                        config_from_dict(header["config"]), trace, conditioning)


def save(model: TrainedModel, path: str | Path) -> Path:
    path = Path(path)
    path.write_bytes(dumps(model))
    return path


def load(path: str | Path) -> TrainedModel:
    return loads(Path(path).read_bytes())
