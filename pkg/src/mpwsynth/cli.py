"""Command-line interface: ``mpwsynth fit | sample | eval | bench``.

Every flag can also come from an environment variable named
``MPWSYNTH_<FLAG>`` (e.g. ``MPWSYNTH_SEED=3``); explicit flags win.

Exit codes: 0 success, 2 usage or validation error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from . import __version__, bench, checkpoint, metrics
from .autodiff import AdamWConfig
from .errors import MpwSynthError, NumericError, ValidationError
from .tabular import TableSchema, encode
from .tabular import fit as fit_transformer
from .train import ConditioningSpec, TrainConfig, fit, fit_conditional, sample

log = logging.getLogger("mpwsynth")

ENV_PREFIX = "MPWSYNTH_"
EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC = 0, 2, 3


# -- config files -----------------------------------------------------------

def _parse_value(raw: str, current):
    raw = raw.strip()
    if isinstance(current, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValidationError(f"expected a boolean, got {raw!r}")
    if isinstance(current, tuple):
        items = [x.strip() for x in raw.split(",") if x.strip()]
        if current and isinstance(current[0], int):
            return tuple(int(x) for x in items)
        return tuple(items)
    if raw.lower() in ("none", ""):
        return None
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    # unset optional fields: numbers if they look like numbers
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            pass
    return raw


def _apply(obj, values: dict[str, str], section: str):
    names = {f.name: f for f in fields(obj)}
    updates = {}
    for key, raw in values.items():
        if key not in names:
            raise ValidationError(f"[{section}] unknown option {key!r}")
        try:
            updates[key] = _parse_value(raw, getattr(obj, key))
        except ValueError as exc:
            raise ValidationError(f"[{section}] {key}: {exc}") from None
    return replace(obj, **updates)


def read_config(path: str | None) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None)
    if path is None:
        return parser
    if not Path(path).is_file():
        raise ValidationError(f"config file not found: {path}")
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ValidationError(f"malformed config {path}: {exc}") from None
    return parser


def train_config(parser: configparser.ConfigParser, seed: int | None) -> tuple[TrainConfig, tuple[str, ...]]:
    """Resolve ``[train]`` and ``[adamw]`` into a config plus the conditioning columns."""
    raw = dict(parser["train"]) if parser.has_section("train") else {}
    condition = tuple(x.strip() for x in raw.pop("condition_on", "").split(",") if x.strip())
    cfg = TrainConfig()
    adam = AdamWConfig()
    if parser.has_section("adamw"):
        adam = _apply(adam, dict(parser["adamw"]), "adamw")
    cfg = _apply(replace(cfg, adamw=adam), raw, "train")
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    return cfg, condition


# -- I/O --------------------------------------------------------------------

def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def read_schema(path: str | None) -> TableSchema:
    if path is None:
        raise ValidationError("--schema is required")
    if not Path(path).is_file():
        raise ValidationError(f"schema file not found: {path}")
    return TableSchema.from_text(Path(path).read_text(encoding="utf-8"))


def read_table(path: str | None, schema: TableSchema | None = None, flag: str = "--data") -> pd.DataFrame:
    """Read a CSV; label columns of ``schema`` are kept as strings."""
    if path is None:
        raise ValidationError(f"{flag} is required")
    if not Path(path).is_file():
        raise ValidationError(f"data file not found: {path}")
    dtype = None
    if schema is not None:
        dtype = {c.name: str for c in schema.columns if c.kind in ("ordinal", "categorical")}
    try:
        df = pd.read_csv(path, dtype=dtype, encoding="utf-8")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise ValidationError(f"cannot parse {path}: {exc}") from None
    if schema is not None:
        missing = [n for n in schema.names if n not in df.columns]
        extra = [n for n in df.columns if n not in schema.names]
        if missing or extra:
            raise ValidationError(f"schema/data mismatch in {path}: missing columns {missing}, "
                                  f"undeclared columns {extra}")
        df = df[schema.names]
    return df


def write_table(df: pd.DataFrame, path: str | None) -> None:
    text = df.to_csv(index=False, lineterminator="\n")
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _config_snapshot(parser: configparser.ConfigParser) -> dict:
    return {s: dict(parser[s]) for s in parser.sections()}


# -- commands ---------------------------------------------------------------

def cmd_fit(args) -> int:
    schema = read_schema(args.schema)
    parser = read_config(args.config)
    cfg, condition = train_config(parser, args.seed)
    table = read_table(args.data, schema)
    if args.checkpoint is None:
        raise ValidationError("--checkpoint (output path) is required")

    t0 = time.perf_counter()
    tr = fit_transformer(schema, table)
    enc = encode(tr, table)
    if condition:
        model = fit_conditional(enc, ConditioningSpec.from_columns(tr, condition), cfg)
    else:
        model = fit(enc, cfg)
    fit_time = time.perf_counter() - t0
    ckpt = checkpoint.save(model, args.checkpoint)
    manifest = {
        "tool": "mpwsynth",
        "version": __version__,
        "command": "fit",
        "seed": cfg.seed,
        "config": checkpoint.config_to_dict(cfg),
        "config_file": _config_snapshot(parser),
        "condition_on": list(condition),
        "data": {"path": str(args.data), "sha256": sha256_file(args.data), "rows": len(table)},
        "checkpoint": {"path": str(ckpt), "sha256": sha256_file(ckpt)},
        "timings": {"fit_seconds": fit_time},
    }
    write_json(manifest, Path(str(ckpt) + ".manifest.json"))
    log.info("wrote %s (fit %.2fs)", ckpt, fit_time)
    return EXIT_OK


def cmd_sample(args) -> int:
    if args.checkpoint is None:
        raise ValidationError("--checkpoint is required")
    if not Path(args.checkpoint).is_file():
        raise ValidationError(f"checkpoint not found: {args.checkpoint}")
    model = checkpoint.load(args.checkpoint)
    seed = 0 if args.seed is None else args.seed
    conditioning = None
    if model.is_conditional:
        if args.condition is None:
            raise ValidationError("checkpoint is conditional; pass --condition CSV")
        cols = model.conditioning.columns
        kinds = {c.name: c.kind for c in model.transformer.columns}
        dtype = {c: str for c in cols if kinds[c] in ("ordinal", "categorical")}
        if not Path(args.condition).is_file():
            raise ValidationError(f"conditioning file not found: {args.condition}")
        cond = pd.read_csv(args.condition, dtype=dtype)
        missing = [c for c in cols if c not in cond.columns]
        if missing:
            raise ValidationError(f"conditioning file lacks columns {missing}")
        conditioning = cond[list(cols)]
    elif args.condition is not None:
        raise ValidationError("checkpoint is unconditional; --condition is not accepted")
    count = args.count
    if count is None:
        count = len(conditioning) if conditioning is not None else 1000
    t0 = time.perf_counter()
    df = sample(model, count, seed, conditioning)
    sample_time = time.perf_counter() - t0
    log.info("sampled %d rows in %.2fs", count, sample_time)
    write_table(df, args.out)
    if args.out is not None and args.out != "-":
        manifest = {
            "tool": "mpwsynth",
            "version": __version__,
            "command": "sample",
            "seed": seed,
            "count": count,
            "checkpoint": {"path": str(args.checkpoint), "sha256": sha256_file(args.checkpoint)},
            "output": {"path": str(args.out), "sha256": sha256_file(args.out)},
            "timings": {"sample_seconds": sample_time},
        }
        write_json(manifest, Path(str(args.out) + ".manifest.json"))
    return EXIT_OK


def _eval_settings(parser: configparser.ConfigParser) -> dict:
    if not parser.has_section("eval"):
        return {}
    sec = parser["eval"]
    out: dict = {}
    known = {"bins_per_dim", "bandwidth", "bounds", "centers", "r", "tail_r", "max_mmd_rows", "preset"}
    unknown = set(sec) - known
    if unknown:
        raise ValidationError(f"[eval] unknown options {sorted(unknown)}")
    try:
        if sec.get("preset", "").strip() == "abc":
            out.update(metrics.TV_PRESET_ABC)
        if "bins_per_dim" in sec:
            out["bins_per_dim"] = int(sec["bins_per_dim"])
        for key in ("bandwidth", "r", "tail_r"):
            if key in sec:
                out[key] = float(sec[key])
        if "max_mmd_rows" in sec:
            out["max_mmd_rows"] = int(sec["max_mmd_rows"])
        if "bounds" in sec:
            # "lo:hi, lo:hi, ..." per column
            out["bounds"] = [tuple(float(v) for v in b.split(":")) for b in sec["bounds"].split(",")]
        if "centers" in sec:
            # rows separated by ";", coordinates by ","
            out["centers"] = np.array([[float(v) for v in row.split(",")] for row in sec["centers"].split(";")])
    except ValueError as exc:
        raise ValidationError(f"[eval] {exc}") from None
    return out


def cmd_eval(args) -> int:
    schema = read_schema(args.schema) if args.schema else None
    real = read_table(args.data, schema, "--data")
    synth = read_table(args.synth, schema, "--synth")
    if list(real.columns) != list(synth.columns):
        raise ValidationError(f"real and synthetic columns differ: {list(real.columns)} vs {list(synth.columns)}")
    parser = read_config(args.config)
    if schema is None:
        schema = TableSchema.infer(real)
    # compare in the encoded space when labels are present, raw values otherwise
    if any(c.kind in ("ordinal", "categorical") for c in schema.columns):
        tr = fit_transformer(schema, real)
        R, S = encode(tr, real).values, encode(tr, synth).values
    else:
        R, S = real.to_numpy(dtype=np.float64), synth.to_numpy(dtype=np.float64)
    seed = 0 if args.seed is None else args.seed
    rep = metrics.evaluate(R, S, seed=seed, **_eval_settings(parser))
    report = {
        "tool": "mpwsynth",
        "version": __version__,
        "command": "eval",
        "seed": seed,
        "real": {"sha256": sha256_file(args.data), "rows": len(real)},
        "synth": {"sha256": sha256_file(args.synth), "rows": len(synth)},
        "metrics": rep.to_dict(),
    }
    if args.out is None or args.out == "-":
        sys.stdout.write(json.dumps(report, indent=2, sort_keys=True) + "\n")
    else:
        write_json(report, Path(args.out))
    return EXIT_OK


def _bench_config(args) -> bench.ExperimentConfig:
    parser = read_config(args.config)
    cfg = bench.ExperimentConfig(args.experiment)
    if parser.has_section("bench"):
        cfg = _apply(cfg, dict(parser["bench"]), "bench")
    overrides = {}
    for item in args.set or ():
        if "=" not in item:
            raise ValidationError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v
    cfg = _apply(cfg, overrides, "--set")
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def cmd_bench(args) -> int:
    cfg = _bench_config(args)
    out = Path(args.out or f"bench-{cfg.experiment}")
    t0 = time.perf_counter()
    result = bench.run_experiment(cfg, out)
    manifest = {
        "tool": "mpwsynth",
        "version": __version__,
        "command": "bench",
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "timings": {**result.timings, "total_seconds": time.perf_counter() - t0},
    }
    write_json(manifest, out / "manifest.json")
    for name, v in result.report()["variants"].items():
        log.info("%s: %s", name, json.dumps(v["metrics"], sort_keys=True))
    return EXIT_OK


# -- entry point ------------------------------------------------------------

def _env(name: str, cast=str):
    raw = os.environ.get(ENV_PREFIX + name.upper())
    if raw is None or raw == "":
        return None
    try:
        return cast(raw)
    except ValueError:
        raise ValidationError(f"{ENV_PREFIX}{name.upper()}={raw!r} is not a valid {cast.__name__}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mpwsynth", description="Synthetic tabular data via marginally penalized "
                                                             "Wasserstein generator training.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, *flags):
        for flag in flags:
            if flag == "seed":
                sp.add_argument("--seed", type=int, default=None, help="global seed (default 0)")
            elif flag == "count":
                sp.add_argument("--count", type=int, default=None, help="rows to generate")
            else:
                sp.add_argument(f"--{flag}", default=None)

    sp = sub.add_parser("fit", help="train a generator and write a checkpoint")
    common(sp, "data", "schema", "config", "checkpoint", "seed", "out")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("sample", help="draw synthetic rows from a checkpoint")
    common(sp, "checkpoint", "count", "seed", "condition", "out")
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("eval", help="compare a synthetic CSV against a real CSV")
    common(sp, "data", "schema", "config", "seed", "out")
    sp.add_argument("--synth", default=None, help="synthetic CSV")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("bench", help="run a benchmark experiment")
    sp.add_argument("experiment", choices=bench.EXPERIMENTS)
    common(sp, "config", "seed", "out")
    sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override an experiment option")
    sp.set_defaults(func=cmd_bench)
    return p


_ENV_FLAGS = {"data": str, "schema": str, "config": str, "out": str, "seed": int,
              "checkpoint": str, "count": int, "condition": str, "synth": str}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        for name, cast in _ENV_FLAGS.items():
            if hasattr(args, name) and getattr(args, name) is None:
                setattr(args, name, _env(name, cast))
        if getattr(args, "count", None) is not None and args.count < 0:
            raise ValidationError("--count must be nonnegative")
        return args.func(args)
    except NumericError as exc:
        print(f"mpwsynth: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (MpwSynthError, OSError) as exc:
        print(f"mpwsynth: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
