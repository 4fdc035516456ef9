"""Small reference ensembles used by the tests, the CLI and the verify suites.

Each fixture also exists as JSON under ``fixtures/`` at the repository root; the
CLI accepts either a file path or one of the names below.
"""
from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from .ensemble import Ensemble, strip_side_info, to_json, visible
from .io import write_json

_S = 1 / np.sqrt(2)
OMEGA = np.diag([0.75, 0.25])


def single_pure() -> Ensemble:
    return Ensemble.from_states([1.0], [[1, 0]])


def single_mixed() -> Ensemble:
    return Ensemble.from_states([1.0], [np.diag([0.7, 0.3])])


def classical_pair() -> Ensemble:
    return Ensemble.from_states([0.5, 0.5], [[1, 0], [0, 1]])


def nonorthogonal_pair() -> Ensemble:
    return Ensemble.from_states([0.5, 0.5], [[1, 0], [_S, _S]])


def redundant_product() -> Ensemble:
    """{1/2, omega (x) |0><0|}, {1/2, omega (x) |+><+|}: omega is the redundant part."""
    base = nonorthogonal_pair()
    return Ensemble.from_states(base.probs, [np.kron(OMEGA, it.rho) for it in base.items])


BASE = {
    "single_pure": single_pure,
    "single_mixed": single_mixed,
    "classical_pair": classical_pair,
    "nonorthogonal_pair": nonorthogonal_pair,
    "redundant_product": redundant_product,
}

# stripped counterpart of the redundant fixture
STRIPPED = {"redundant_product": "nonorthogonal_pair"}


def get(name: str) -> Ensemble:
    """Fixture by name; ``<base>_visible`` gives the visible variant, ``blind_pair`` the nonorthogonal pair."""
    if name == "blind_pair":
        name = "nonorthogonal_pair"
    if name.endswith("_visible") and name[: -len("_visible")] in BASE:
        return visible(BASE[name[: -len("_visible")]]())
    if name not in BASE:
        raise KeyError(f"unknown fixture {name!r}; known: {', '.join(names())}")
    return BASE[name]()


def names() -> list[str]:
    return list(BASE) + [f"{n}_visible" for n in BASE]


def write_all(directory) -> list[Path]:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name in names() + ["blind_pair"]:
        p = out / f"{name}.json"
        write_json(to_json(get(name)), p)
        paths.append(p)
    return paths


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description="write fixture ensembles as JSON")
    ap.add_argument("directory")
    for p in write_all(ap.parse_args().directory):
        print(p)
