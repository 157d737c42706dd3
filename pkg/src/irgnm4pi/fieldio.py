"""Field files and run logs.

A field is stored as two files sharing a stem: ``<stem>.raw`` holds the
samples as little-endian float64 in row-major order and ``<stem>.json`` holds
dims, spacing (nm), axis order and a kind tag. Run logs are plain text with a
JSON header and tab-separated sections; every float is written with
``repr`` so reruns produce identical bytes.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .grid import Field

__all__ = [
    "KINDS",
    "StoredField",
    "write_field",
    "read_field",
    "RunLog",
    "read_run_log",
    "dumps_json",
]

KINDS = ("object", "data", "weight", "kernel_real", "kernel_imag", "phase")
_DTYPE = np.dtype("<f8")
_AXIS_NAMES = {1: ("x",), 2: ("x", "z"), 3: ("x", "y", "z")}


def _stem(path) -> Path:
    p = Path(path)
    return p.with_name(p.name[: -len(p.suffix)]) if p.suffix in (".raw", ".json") else p


def _sibling(stem: Path, ext: str) -> Path:
    return stem.with_name(stem.name + ext)


@dataclass(frozen=True)
class StoredField(Field):
    kind: str = "object"
    axis_order: tuple[str, ...] = ()
    meta: dict = field(default_factory=dict, compare=False)


def write_field(path, values, spacing: Sequence[float], kind: str,
                axis_order: Sequence[str] | None = None,
                meta: dict | None = None) -> tuple[Path, Path]:
    """Write ``values`` (real) to ``<stem>.raw`` and its header to ``<stem>.json``."""
    if kind not in KINDS:
        raise ValueError(f"unknown field kind {kind!r}; expected one of {KINDS}")
    arr = np.asarray(values)
    if np.iscomplexobj(arr):
        raise ValueError("complex fields must be split into kernel_real/kernel_imag")
    arr = np.ascontiguousarray(arr, dtype=_DTYPE)
    if not np.all(np.isfinite(arr)):
        raise ValueError("field values must be finite")
    spacing = [float(h) for h in spacing]
    if len(spacing) != arr.ndim:
        raise ValueError("spacing needs one entry per axis")
    axes = list(axis_order) if axis_order is not None else list(
        _AXIS_NAMES.get(arr.ndim, tuple(f"axis{j}" for j in range(arr.ndim))))
    stem = _stem(path)
    stem.parent.mkdir(parents=True, exist_ok=True)
    raw, hdr = _sibling(stem, ".raw"), _sibling(stem, ".json")
    raw.write_bytes(arr.tobytes(order="C"))
    header = {
        "dims": list(arr.shape),
        "spacing_nm": spacing,
        "axis_order": axes,
        "kind": kind,
        "dtype": "float64",
        "byte_order": "little",
        "layout": "row-major",
    }
    if meta:
        header["meta"] = meta
    hdr.write_text(dumps_json(header) + "\n")
    return raw, hdr


def read_field(path) -> StoredField:
    stem = _stem(path)
    header = json.loads(_sibling(stem, ".json").read_text())
    if header.get("dtype", "float64") != "float64" or header.get("byte_order", "little") != "little":
        raise ValueError("only little-endian float64 payloads are supported")
    dims = tuple(int(d) for d in header["dims"])
    payload = _sibling(stem, ".raw").read_bytes()
    expected = int(np.prod(dims)) * _DTYPE.itemsize
    if len(payload) != expected:
        raise ValueError(f"{stem}.raw has {len(payload)} bytes, header implies {expected}")
    values = np.frombuffer(payload, dtype=_DTYPE).reshape(dims).astype(float)
    kind = header["kind"]
    if kind not in KINDS:
        raise ValueError(f"unknown field kind {kind!r}")
    return StoredField(values, tuple(header["spacing_nm"]), kind=kind,
                       axis_order=tuple(header.get("axis_order", ())),
                       meta=header.get("meta", {}))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def dumps_json(obj: Any) -> str:
    """Deterministic JSON (sorted keys, shortest round-trip floats, non-finite as strings)."""
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False)


class RunLog:
    """Append-only run record: config echo, trace, solver reports and checks."""

    MAGIC = "# irgnm4pi run log v1"

    def __init__(self, command: str, config: dict):
        self.command = command
        self.config = config
        self._sections: list[tuple[str, list[str]]] = []
        self.checks: list[tuple[str, bool]] = []

    def add_table(self, name: str, columns: Sequence[str], rows: Sequence[Sequence]) -> None:
        lines = ["\t".join(columns)]
        lines += ["\t".join(_cell(v) for v in r) for r in rows]
        self._sections.append((name, lines))

    def add_tsv(self, name: str, text: str) -> None:
        self._sections.append((name, text.rstrip("\n").split("\n")))

    def add_records(self, name: str, records: Sequence[dict]) -> None:
        self._sections.append((name, [json.dumps(_jsonable(r), sort_keys=True) for r in records]))

    def add_metric(self, name: str, value, passed: bool | None = None) -> None:
        """A named scalar; ``passed`` marks it as an acceptance check."""
        status = "-" if passed is None else ("PASS" if passed else "FAIL")
        if passed is not None:
            self.checks.append((name, bool(passed)))
        self._sections.append(("metric", [f"{name}\t{_cell(value)}\t{status}"]))

    @property
    def failed(self) -> bool:
        return any(not ok for _, ok in self.checks)

    def render(self) -> str:
        out = [self.MAGIC, f"# command: {self.command}", "# config:"]
        out += ["#   " + line for line in dumps_json(self.config).split("\n")]
        metrics = [lines[0] for name, lines in self._sections if name == "metric"]
        for name, lines in self._sections:
            if name == "metric":
                continue
            out.append(f"[{name}]")
            out.extend(lines)
        if metrics:
            out.append("[metrics]")
            out.append("name\tvalue\tstatus")
            out.extend(metrics)
        return "\n".join(out) + "\n"

    def write(self, path) -> Path:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(self.render())
        return p


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def read_run_log(path) -> dict:
    """Parse a run log into ``{"config": dict, "sections": {name: [lines]}, "metrics": {...}}``."""
    text = Path(path).read_text().split("\n")
    if not text or text[0] != RunLog.MAGIC:
        raise ValueError(f"{path} is not a run log")
    cfg_lines, sections, current = [], {}, None
    for line in text[1:]:
        if line.startswith("#   "):
            cfg_lines.append(line[4:])
        elif line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            sections.setdefault(current, [])
        elif current is not None and line:
            sections[current].append(line)
    metrics = {}
    for line in sections.get("metrics", [])[1:]:
        name, value, status = line.split("\t")
        metrics[name] = (value, status)
    return {"config": json.loads("\n".join(cfg_lines)) if cfg_lines else {},
            "sections": sections, "metrics": metrics}
