"""Datasets, learnt models and configs on disk.

Datasets are CSV (one row per state-action pair) with a ``key = value``
metadata sidecar next to them. Models are a small versioned key-value text
format with a row-major matrix block. Every writer goes through
:func:`atomic_write`, so readers never see half-written files.
"""
from __future__ import annotations

import csv
import json
import os
import tempfile
from pathlib import Path
from typing import Union

import numpy as np

from .constraints import ConstraintModel
from .demos import DemoConfig, DemonstrationSet
from .errors import ConfigError, FormatError
from .learning import LambdaEstimate
from .simulator import Trajectory

PathLike = Union[str, os.PathLike]

MODEL_FORMAT_VERSION = 1
MODEL_MAGIC = "manipulearn-constraint-model"
META_SUFFIX = ".meta"


def fmt(x: float) -> str:
    """17 significant digits: enough for an exact float64 round trip."""
    return "%.17g" % x


def atomic_write(path: PathLike, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_csv(path: PathLike, header: list, rows) -> Path:
    lines = [",".join(header)]
    lines += [",".join(c if isinstance(c, str) else fmt(c) if isinstance(c, float) else str(c) for c in r)
              for r in rows]
    return atomic_write(path, "\n".join(lines) + "\n")


# --- key-value text --------------------------------------------------------

def dump_kv(items: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in items.items())


def parse_kv(text: str, source: str = "<text>") -> dict:
    out = {}
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        if "=" not in s:
            raise FormatError(f"{source}:{i}: expected 'key = value', got {line!r}")
        k, v = s.split("=", 1)
        out[k.strip()] = v.strip()
    return out


# --- datasets -----------------------------------------------------------------

def dataset_header(dof: int) -> list:
    return (["traj_id", "step"] + [f"q_{i + 1}" for i in range(dof)]
            + [f"u_{i + 1}" for i in range(dof)] + ["dt"])


def meta_path(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.name + META_SUFFIX)


def write_dataset(data: DemonstrationSet, path: PathLike) -> Path:
    cfg = data.config
    dof = data.trajectories[0].states.shape[1]
    rows = []
    for tid, t in enumerate(data.trajectories):
        states, actions = t.pairs()
        steps = t.meta.get("downsample_indices", list(range(len(actions))))
        for step, q, u in zip(steps, states, actions):
            rows.append([tid, int(step), *map(float, q), *map(float, u), float(t.dt)])
    meta = {
        "chain": cfg.chain,
        "constraint": cfg.constraint,
        "seed": cfg.seed,
        "dof": dof,
        "psi_star_deg": " ".join(fmt(x) for x in cfg.psi_star_deg),
        "config": json.dumps(cfg.to_dict(), sort_keys=True),
    }
    if data.targets is not None:
        meta["targets"] = json.dumps([[float(x) for x in r] for r in np.atleast_2d(data.targets)])
    atomic_write(meta_path(path), dump_kv(meta))
    return atomic_write_csv(path, dataset_header(dof), rows)


def read_dataset(path: PathLike) -> DemonstrationSet:
    path = Path(path)
    if not path.exists():
        raise FormatError(f"dataset file {path} does not exist")
    with open(path, newline="") as f:
        lines = list(csv.reader(f))
    if not lines:
        raise FormatError(f"{path}: empty dataset file")
    header = [h.strip() for h in lines[0]]
    dof = (len(header) - 3) // 2
    expected = dataset_header(max(dof, 1))
    if header != expected:
        raise FormatError(f"{path}:1: bad header {header}; expected columns {expected}")
    if len(lines) == 1:
        raise FormatError(f"{path}: dataset has a header but no data rows")
    groups: dict = {}
    for lineno, row in enumerate(lines[1:], 2):
        if len(row) != len(header):
            raise FormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            tid, step = int(row[0]), int(row[1])
            vals = [float(x) for x in row[2:]]
        except ValueError as e:
            raise FormatError(f"{path}:{lineno}: {e}") from None
        if not np.all(np.isfinite(vals)):
            raise FormatError(f"{path}:{lineno}: non-finite value")
        groups.setdefault(tid, []).append((step, vals))
    trajs = []
    meta = _read_meta(path)
    cfg = DemoConfig(**json.loads(meta["config"]))
    for tid in sorted(groups):
        steps = [s for s, _ in groups[tid]]
        arr = np.array([v for _, v in groups[tid]])
        dt = arr[0, -1]
        tmeta = {"constraint": cfg.constraint, "seed": cfg.seed, "chain": cfg.chain, "index": tid}
        if steps != list(range(len(steps))):
            tmeta["downsample_indices"] = steps
        trajs.append(Trajectory(arr[:, :dof], arr[:, dof:2 * dof], dt, tmeta))
    targets = np.array(json.loads(meta["targets"])) if "targets" in meta else None
    return DemonstrationSet(trajs, cfg, targets)


def _read_meta(path: Path) -> dict:
    mp = meta_path(path)
    if not mp.exists():
        raise FormatError(f"metadata sidecar {mp} is missing")
    meta = parse_kv(mp.read_text(), str(mp))
    for key in ("chain", "constraint", "seed", "config"):
        if key not in meta:
            raise FormatError(f"{mp}: missing field {key!r}")
    try:
        json.loads(meta["config"])
    except json.JSONDecodeError as e:
        raise FormatError(f"{mp}: config field is not valid JSON ({e})") from None
    return meta


# --- models -------------------------------------------------------------------

MODEL_FIELDS = ("format_version", "feature_kind", "name", "k", "dim_phi", "objective_value", "config_hash")


def dump_model(model: ConstraintModel, est: LambdaEstimate = None) -> str:
    head = {
        "magic": MODEL_MAGIC,
        "format_version": MODEL_FORMAT_VERSION,
        "feature_kind": model.feature_kind,
        "name": model.name or "model",
        "k": model.k,
        "dim_phi": model.dim_phi,
        "objective_value": fmt(est.objective_value) if est is not None else "nan",
        "reference": fmt(est.reference) if est is not None else "nan",
        "config_hash": (est.config_hash or "none") if est is not None else "none",
    }
    body = "".join(" ".join(fmt(x) for x in row) + "\n" for row in model.lam)
    return dump_kv(head) + "rows:\n" + body + "end\n"


def write_model(model: ConstraintModel, path: PathLike, est: LambdaEstimate = None) -> Path:
    return atomic_write(path, dump_model(model, est))


def parse_model(text: str, source: str = "<model>") -> tuple[ConstraintModel, LambdaEstimate]:
    lines = text.splitlines()
    try:
        split = next(i for i, l in enumerate(lines) if l.strip() == "rows:")
    except StopIteration:
        raise FormatError(f"{source}: no 'rows:' block (truncated file?)") from None
    head = parse_kv("\n".join(lines[:split]), source)
    if head.get("magic") != MODEL_MAGIC:
        raise FormatError(f"{source}: not a constraint model file")
    for key in MODEL_FIELDS:
        if key not in head:
            raise FormatError(f"{source}: missing field {key!r}")
    try:
        version = int(head["format_version"])
        k, dim = int(head["k"]), int(head["dim_phi"])
        objective = float(head["objective_value"])
        reference = float(head.get("reference", "nan"))
    except ValueError as e:
        raise FormatError(f"{source}: {e}") from None
    if version != MODEL_FORMAT_VERSION:
        raise FormatError(f"{source}: format_version {version} is not supported (expected {MODEL_FORMAT_VERSION})")
    body = [l.strip() for l in lines[split + 1:]]
    if "end" not in body:
        raise FormatError(f"{source}: missing 'end' marker (truncated file?)")
    body = body[: body.index("end")]
    if len(body) != k:
        raise FormatError(f"{source}: k = {k} but {len(body)} rows present")
    try:
        rows = np.array([[float(x) for x in l.split()] for l in body]).reshape(k, -1)
    except ValueError as e:
        raise FormatError(f"{source}: bad row block ({e})") from None
    if rows.shape[1] != dim:
        raise FormatError(f"{source}: rows have {rows.shape[1]} columns, dim_phi = {dim}")
    model = ConstraintModel(rows, head["feature_kind"], head["name"])
    if model.k != k:
        raise FormatError(f"{source}: model has all-zero rows")
    est = LambdaEstimate(rows, objective, k, reference=reference, config_hash=head["config_hash"])
    return model, est


def read_model(path: PathLike) -> tuple[ConstraintModel, LambdaEstimate]:
    path = Path(path)
    if not path.exists():
        raise FormatError(f"model file {path} does not exist")
    return parse_model(path.read_text(), str(path))


# --- configs ------------------------------------------------------------------

def load_config(path: PathLike) -> dict:
    """Flat JSON object of overrides; a missing or malformed file is a config error."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return cfg
