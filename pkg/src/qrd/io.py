"""JSON encoding of complex matrices and vectors as nested ``[re, im]`` pairs."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def _pair(z) -> list[float]:
    z = complex(z)
    return [float(z.real), float(z.imag)]


def _num(v, where: str) -> complex:
    if isinstance(v, (int, float)):
        return complex(v)
    if isinstance(v, (list, tuple)) and len(v) == 2 and all(isinstance(t, (int, float)) for t in v):
        return complex(v[0], v[1])
    raise ValueError(f"{where}: expected a number or an [re, im] pair, got {v!r}")


def matrix_to_json(m: np.ndarray) -> list:
    return [[_pair(z) for z in row] for row in np.asarray(m)]


def matrix_from_json(obj, where: str = "matrix") -> np.ndarray:
    if not isinstance(obj, list) or not obj or not all(isinstance(r, list) for r in obj):
        raise ValueError(f"{where}: expected a non-empty list of rows")
    n = len(obj[0])
    if any(len(r) != n for r in obj):
        raise ValueError(f"{where}: rows have unequal length")
    return np.array([[_num(v, where) for v in row] for row in obj], dtype=complex)


def vector_to_json(v: np.ndarray) -> list:
    return [_pair(z) for z in np.asarray(v).reshape(-1)]


def vector_from_json(obj, where: str = "vector") -> np.ndarray:
    if not isinstance(obj, list) or not obj:
        raise ValueError(f"{where}: expected a non-empty list")
    return np.array([_num(v, where) for v in obj], dtype=complex)


def read_json(path) -> dict:
    with open(Path(path)) as fh:
        return json.load(fh)


def write_json(obj, path=None) -> str:
    text = json.dumps(obj, indent=2, sort_keys=False)
    if path is not None:
        Path(path).write_text(text + "\n")
    return text
