"""JSON export helpers: versioned records and atomic writes."""

import json
import os
import tempfile
import threading
from collections.abc import Iterable
from pathlib import Path
from typing import Any, Union

import numpy as np

from sake import __version__
from sake.sysrisk import RiskCurve

EXPORT_VERSION = 1

PathLike = Union[str, Path]

_append_lock = threading.Lock()


def _default(obj: Any) -> Any:
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


def dumps(data: Any) -> str:
    return json.dumps(data, indent=2, sort_keys=True, default=_default)


def write_json_atomic(path: PathLike, data: Any) -> Path:
    """Write JSON via a temp file in the same directory and an atomic rename."""
    filepath = Path(path)
    filepath.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=filepath.parent, prefix=f".{filepath.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(dumps(data))
            f.write("\n")
        os.replace(tmp, filepath)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return filepath


def read_json(path: PathLike) -> Any:
    with open(path) as f:
        return json.load(f)


def append_jsonl(path: PathLike, records: Iterable[dict[str, Any]]) -> int:
    """Append one JSON object per line; returns the number of records written."""
    filepath = Path(path)
    filepath.parent.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps(r, sort_keys=True, default=_default) for r in records]
    with _append_lock, open(filepath, "a") as f:
        for line in lines:
            f.write(line + "\n")
    return len(lines)


def read_jsonl(path: PathLike) -> list[dict[str, Any]]:
    filepath = Path(path)
    if not filepath.exists():
        return []
    with open(filepath) as f:
        return [json.loads(line) for line in f if line.strip()]


def envelope(kind: str, payload: dict[str, Any]) -> dict[str, Any]:
    """Wrap a payload with its kind and the export and package versions."""
    return {"kind": kind, "version": EXPORT_VERSION, "sake_version": __version__, **payload}


def curve_to_dict(curve: RiskCurve) -> dict[str, Any]:
    return {
        "grid": list(curve.grid),
        "risk": curve.risk.tolist(),
        "ucb": [curve.ucb_at(L) for L in curve.grid],
        "ridge": curve.ridge,
        "level": curve.level,
        "resamples": curve.B,
    }
