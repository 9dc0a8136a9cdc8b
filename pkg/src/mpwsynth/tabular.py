"""Mixed-type table <-> [0, 1] matrix transformer.

Continuous and discrete columns are min-max scaled, ordinal columns are
mapped to their declared integer codes and then scaled like discrete ones,
and categorical columns are one-hot encoded. Decoding inverts each step;
categorical blocks are decoded by argmax so soft (softmax) generator output
decodes the same way as hard one-hot rows.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .errors import ShapeError, ValidationError

KINDS = ("continuous", "discrete", "ordinal", "categorical")


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str
    labels: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.labels and self.kind not in ("ordinal", "categorical"):
            raise ValidationError(f"column {self.name!r}: labels only apply to ordinal/categorical")
        if len(set(self.labels)) != len(self.labels):
            raise ValidationError(f"column {self.name!r}: duplicate labels")


@dataclass(frozen=True)
class TableSchema:
    """Declared column kinds.

    Categorical and ordinal columns may leave ``labels`` empty, in which case
    the sorted distinct values seen at fit time are used.
    """

    columns: tuple[ColumnSpec, ...]

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise ValidationError("column names must be unique")
        if not names:
            raise ValidationError("schema has no columns")

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def __getitem__(self, name: str) -> ColumnSpec:
        for c in self.columns:
            if c.name == name:
                return c
        raise KeyError(name)

    @classmethod
    def infer(cls, df: pd.DataFrame) -> "TableSchema":
        cols = []
        for name in df.columns:
            s = df[name]
            if pd.api.types.is_bool_dtype(s) or not pd.api.types.is_numeric_dtype(s):
                cols.append(ColumnSpec(str(name), "categorical"))
            elif pd.api.types.is_integer_dtype(s):
                cols.append(ColumnSpec(str(name), "discrete"))
            else:
                cols.append(ColumnSpec(str(name), "continuous"))
        return cls(tuple(cols))

    @classmethod
    def from_text(cls, text: str) -> "TableSchema":
        """Parse the INI-style sidecar: one section per column, in table order.

        ::

            [age]
            kind = continuous

            [grade]
            kind = ordinal
            labels = low, mid, high
        """
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ValidationError(f"malformed schema: {exc}") from None
        cols = []
        for name in parser.sections():
            sec = parser[name]
            if "kind" not in sec:
                raise ValidationError(f"schema column {name!r} has no kind")
            raw = sec.get("labels", "").strip()
            labels = tuple(x.strip() for x in raw.split(",")) if raw else ()
            cols.append(ColumnSpec(name, sec["kind"].strip(), labels))
        return cls(tuple(cols))

    def to_text(self) -> str:
        out = io.StringIO()
        for c in self.columns:
            out.write(f"[{c.name}]\nkind = {c.kind}\n")
            if c.labels:
                out.write("labels = " + ", ".join(str(x) for x in c.labels) + "\n")
            out.write("\n")
        return out.getvalue()


@dataclass(frozen=True)
class ColumnTransform:
    name: str
    kind: str
    start: int
    stop: int
    lo: float = 0.0
    hi: float = 0.0
    labels: tuple = ()

    @property
    def width(self) -> int:
        return self.stop - self.start


@dataclass(frozen=True)
class FittedTransformer:
    columns: tuple[ColumnTransform, ...]

    @property
    def width(self) -> int:
        return self.columns[-1].stop if self.columns else 0

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def column(self, name: str) -> ColumnTransform:
        for c in self.columns:
            if c.name == name:
                return c
        raise ValidationError(f"unknown column {name!r}")

    def layout(self) -> list[tuple[str, int, int]]:
        return [(c.name, c.start, c.stop) for c in self.columns]

    def softmax_blocks(self) -> list[tuple[int, int]]:
        return [(c.start, c.stop) for c in self.columns if c.kind == "categorical"]

    def encoded_indices(self, names: Iterable[str]) -> list[int]:
        idx: list[int] = []
        for name in names:
            c = self.column(name)
            idx.extend(range(c.start, c.stop))
        return idx

    def to_dict(self) -> dict:
        return {
            "columns": [
                {"name": c.name, "kind": c.kind, "start": c.start, "stop": c.stop,
                 "lo": c.lo, "hi": c.hi, "labels": list(c.labels)}
                for c in self.columns
            ]
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FittedTransformer":
        return cls(tuple(
            ColumnTransform(c["name"], c["kind"], int(c["start"]), int(c["stop"]),
                            float(c["lo"]), float(c["hi"]), tuple(c["labels"]))
            for c in d["columns"]
        ))


@dataclass
class EncodedMatrix:
    """Encoded rows plus the transformer that produced them.

    ``clamped`` counts continuous/discrete values that fell outside the
    fitted range and were clipped into ``[0, 1]``.
    """

    values: np.ndarray
    transformer: FittedTransformer
    clamped: int = 0
    warnings: list[str] = field(default_factory=list)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def _check_column(df: pd.DataFrame, name: str) -> pd.Series:
    if name not in df.columns:
        raise ValidationError(f"table is missing column {name!r}")
    s = df[name]
    if s.isna().any():
        raise ValidationError(f"column {name!r} has missing values")
    return s


def fit(schema: TableSchema, table: pd.DataFrame) -> FittedTransformer:
    """Collect per-column ranges and label maps from ``table``."""
    if len(table) == 0:
        raise ValidationError("cannot fit a transformer on an empty table")
    cols = []
    pos = 0
    for spec in schema.columns:
        s = _check_column(table, spec.name)
        if spec.kind in ("continuous", "discrete"):
            if not pd.api.types.is_numeric_dtype(s) or pd.api.types.is_bool_dtype(s):
                raise ValidationError(f"column {spec.name!r} is {spec.kind} but not numeric")
            vals = s.to_numpy(dtype=np.float64)
            if not np.all(np.isfinite(vals)):
                raise ValidationError(f"column {spec.name!r} has non-finite values")
            if spec.kind == "discrete" and np.any(vals != np.round(vals)):
                raise ValidationError(f"discrete column {spec.name!r} has non-integer values")
            cols.append(ColumnTransform(spec.name, spec.kind, pos, pos + 1,
                                        float(vals.min()), float(vals.max())))
            pos += 1
            continue
        labels = spec.labels
        if not labels:
            labels = tuple(sorted(pd.unique(s).tolist(), key=lambda v: (str(type(v)), v)))
        else:
            unseen = set(pd.unique(s).tolist()) - set(labels)
            if unseen:
                raise ValidationError(
                    f"column {spec.name!r} has values {sorted(map(str, unseen))} not in declared labels")
        if spec.kind == "ordinal":
            cols.append(ColumnTransform(spec.name, "ordinal", pos, pos + 1,
                                        0.0, float(len(labels) - 1), labels))
            pos += 1
        else:
            cols.append(ColumnTransform(spec.name, "categorical", pos, pos + len(labels),
                                        labels=labels))
            pos += len(labels)
    return FittedTransformer(tuple(cols))


def _scale(vals: np.ndarray, lo: float, hi: float) -> np.ndarray:
    if hi == lo:
        return np.zeros_like(vals)
    return (vals - lo) / (hi - lo)


def _unscale(vals: np.ndarray, lo: float, hi: float) -> np.ndarray:
    if hi == lo:
        return np.full_like(vals, lo)
    return vals * (hi - lo) + lo


def encode(tr: FittedTransformer, table: pd.DataFrame, columns: Sequence[str] | None = None) -> EncodedMatrix:
    """Encode ``table`` (or just ``columns`` of it) into ``[0, 1]``.

    With ``columns`` the result holds only those columns' encoded ranges,
    concatenated in the given order (used for conditioning inputs).
    """
    selected = tr.columns if columns is None else tuple(tr.column(c) for c in columns)
    n = len(table)
    width = sum(c.width for c in selected)
    out = np.zeros((n, width))
    clamped = 0
    warnings = []
    pos = 0
    for c in selected:
        s = _check_column(table, c.name)
        if c.kind in ("continuous", "discrete"):
            v = _scale(s.to_numpy(dtype=np.float64), c.lo, c.hi)
            outside = int(np.count_nonzero((v < 0) | (v > 1)))
            if outside:
                clamped += outside
                warnings.append(f"{c.name}: {outside} value(s) outside fitted range clamped")
            out[:, pos] = np.clip(v, 0.0, 1.0)
        else:
            index = {label: k for k, label in enumerate(c.labels)}
            codes = np.empty(n, dtype=np.int64)
            for r, value in enumerate(s.tolist()):
                k = index.get(value)
                if k is None:
                    raise ValidationError(f"column {c.name!r}: unseen label {value!r}")
                codes[r] = k
            if c.kind == "ordinal":
                out[:, pos] = _scale(codes.astype(np.float64), c.lo, c.hi)
            else:
                out[np.arange(n), pos + codes] = 1.0
        pos += c.width
    return EncodedMatrix(out, tr, clamped, warnings)


def decode(tr: FittedTransformer, matrix) -> pd.DataFrame:
    """Map encoded (or raw generator) rows back to a typed table."""
    values = matrix.values if isinstance(matrix, EncodedMatrix) else np.asarray(matrix, dtype=np.float64)
    if values.ndim != 2 or values.shape[1] != tr.width:
        raise ShapeError(f"matrix width {values.shape[-1] if values.ndim else 0} != layout width {tr.width}")
    data = {}
    for c in tr.columns:
        block = values[:, c.start:c.stop]
        if c.kind == "continuous":
            data[c.name] = _unscale(block[:, 0], c.lo, c.hi)
        elif c.kind == "discrete":
            v = np.floor(_unscale(block[:, 0], c.lo, c.hi) + 0.5)
            data[c.name] = np.clip(v, c.lo, c.hi).astype(np.int64)
        elif c.kind == "ordinal":
            k = np.floor(_unscale(block[:, 0], c.lo, c.hi) + 0.5)
            k = np.clip(k, 0, len(c.labels) - 1).astype(np.int64)
            data[c.name] = pd.Series([c.labels[i] for i in k], dtype=object)
        else:
            k = np.argmax(block, axis=1) if len(block) else np.zeros(0, dtype=np.int64)
            data[c.name] = pd.Series([c.labels[i] for i in k], dtype=object)
    return pd.DataFrame(data, columns=tr.names)
