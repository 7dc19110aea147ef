"""Persistence: binary snapshots, trace CSV, JSON reports, YAML configs and run manifests."""

from __future__ import annotations

import csv
import hashlib
import json
import platform
import struct
from pathlib import Path

import numpy as np
import scipy
import yaml

from .evolution import BlowupReport, EvolutionTrace
from .grid import Field, GridSpec

MAGIC = b"NLSSNAP\0"
VERSION = 1
# magic, version, dim, points, complex flag, extent, time tag, padding to 64 bytes
HEADER = struct.Struct("<8sIIIIdd24x")
assert HEADER.size == 64


class FormatError(ValueError):
    pass


def write_snapshot(path, f: Field) -> Path:
    path = Path(path)
    is_complex = np.iscomplexobj(f.values)
    head = HEADER.pack(MAGIC, VERSION, f.grid.dim, f.grid.points, int(is_complex),
                       f.grid.extent, f.time)
    data = f.values.astype("<c16" if is_complex else "<f8", copy=False)
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(np.ascontiguousarray(data).tobytes(order="C"))
    return path


def read_snapshot(path) -> Field:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, dim, points, cflag, extent, t = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    grid = GridSpec(dim, extent, points)
    dtype = "<c16" if cflag else "<f8"
    body = np.frombuffer(raw, dtype=dtype, offset=HEADER.size)
    if body.size != int(np.prod(grid.shape)):
        raise FormatError(f"{path}: expected {np.prod(grid.shape)} values, found {body.size}")
    return Field(grid, body.reshape(grid.shape).copy(), t)


def write_trace_csv(path, trace: EvolutionTrace) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EvolutionTrace.COLUMNS)
        for row in trace.rows():
            w.writerow([repr(float(v)) for v in row])
    return path


def read_trace_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = [[float(v) for v in row] for row in r]
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    return {name: data[:, i] for i, name in enumerate(header)}


def write_series_csv(path, columns: dict) -> Path:
    path = Path(path)
    names = list(columns)
    cols = [np.asarray(columns[n]) for n in names]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for i in range(len(cols[0]) if cols else 0):
            w.writerow([_scalar(c[i]) for c in cols])
    return path


def _scalar(v):
    if isinstance(v, np.ndarray):
        return " ".join(repr(float(x)) for x in v.ravel())
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, str):
        return v
    return repr(float(v))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    if hasattr(obj, "value") and not isinstance(obj, (int, float, str)):
        return obj.value
    return obj


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


def read_json(path):
    return json.loads(Path(path).read_text())


def write_report(path, report: BlowupReport) -> Path:
    return write_json(path, report.as_dict())


def read_report(path) -> BlowupReport:
    return BlowupReport.from_dict(read_json(path))


def dump_yaml(obj) -> str:
    return yaml.safe_dump(_jsonable(obj), sort_keys=True, default_flow_style=False)


def write_yaml(path, obj) -> Path:
    path = Path(path)
    path.write_text(dump_yaml(obj))
    return path


def read_yaml(path) -> dict:
    data = yaml.safe_load(Path(path).read_text())
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise FormatError(f"{path}: top level must be a mapping")
    return data


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(cfg_dict: dict) -> str:
    return hashlib.sha256(dump_yaml(cfg_dict).encode()).hexdigest()


def versions() -> dict:
    from . import __version__

    return {"nlsblowup": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def write_manifest(run_dir, cfg_dict: dict, files: list, verdicts: dict | None = None) -> Path:
    run_dir = Path(run_dir)
    entries = {}
    for f in files:
        p = Path(f)
        rel = p.relative_to(run_dir) if p.is_absolute() else p
        entries[str(rel)] = sha256_file(run_dir / rel)
    manifest = {
        "config_hash": config_hash(cfg_dict),
        "versions": versions(),
        "files": entries,
        "verdicts": verdicts or {},
    }
    return write_json(run_dir / "manifest.json", manifest)


def verify_manifest(run_dir) -> list[str]:
    """Names of listed files that are missing or fail their checksum."""
    run_dir = Path(run_dir)
    manifest = read_json(run_dir / "manifest.json")
    bad = []
    for name, digest in manifest["files"].items():
        p = run_dir / name
        if not p.exists() or sha256_file(p) != digest:
            bad.append(name)
    return bad
