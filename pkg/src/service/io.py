# src/service/io.py — hash-stamped CSV / JSON artifacts
from __future__ import annotations

import json
import os
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from ..errors import ArtifactMismatchError, MissingArtifactError

UNITS = "energy: hbar^2/2I; time: 4*pi*I/hbar; angle: rad"


def write_csv(path: str, rows: np.ndarray, columns: Sequence[str], config_hash: str,
              note: Optional[str] = None, fmt: str = "%.17g") -> str:
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.size and rows.shape[1] != len(columns):
        raise ValueError(f"{len(columns)} column names for {rows.shape[1]} columns")
    header = [f"config_hash={config_hash}", f"units: {UNITS}"]
    if note:
        header.append(note)
    header.append(",".join(columns))
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    np.savetxt(path, rows.reshape(-1, len(columns)), delimiter=",", fmt=fmt, header="\n".join(header), comments="# ")
    return path


def read_header(path: str) -> Dict[str, str]:
    out: Dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if not line.startswith("#"):
                break
            text = line[1:].strip()
            if text.startswith("config_hash="):
                out["config_hash"] = text.split("=", 1)[1]
            elif text.startswith("units:"):
                out["units"] = text.split(":", 1)[1].strip()
            else:
                out["columns"] = text
    return out


def read_csv(path: str, expected_hash: Optional[str] = None) -> Tuple[np.ndarray, Dict[str, str]]:
    if not os.path.isfile(path):
        raise MissingArtifactError(f"missing artifact: {path}")
    header = read_header(path)
    check_hash(path, header.get("config_hash"), expected_hash)
    ncol = len(header.get("columns", "").split(","))
    data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    return data.reshape(-1, ncol), header


def write_json(path: str, payload: Dict[str, Any], config_hash: str) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    body = dict(payload, config_hash=config_hash)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(body, f, sort_keys=True, indent=2, default=_jsonable)
        f.write("\n")
    return path


def read_json(path: str, expected_hash: Optional[str] = None) -> Dict[str, Any]:
    if not os.path.isfile(path):
        raise MissingArtifactError(f"missing artifact: {path}")
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    check_hash(path, data.get("config_hash"), expected_hash)
    return data


def check_hash(path: str, found: Optional[str], expected: Optional[str]) -> None:
    if expected is not None and found != expected:
        raise ArtifactMismatchError(f"{path}: config_hash {found} does not match {expected}")


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")
