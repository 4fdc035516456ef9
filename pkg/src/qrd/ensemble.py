"""Ensemble sources {p_x, rho_x, |j_x>} and their cq states and purifications."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .io import matrix_from_json, matrix_to_json, vector_from_json, vector_to_json
from .qcore import DensityOp, DimLayout, PureState, hermitize, purification_vectors

PROB_TOL = 1e-9
POWER_CAP_BITS = 16.0


class EnsembleError(ValueError):
    pass


@dataclass(frozen=True)
class Item:
    p: float
    rho: np.ndarray
    j: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class Ensemble:
    """Source ensemble on A with pure side information on J (``dim_j == 1`` is blind)."""

    dim_a: int
    items: tuple[Item, ...]
    dim_j: int = 1

    def __post_init__(self):
        items = []
        if not self.items:
            raise EnsembleError("ensemble has no items")
        for k, it in enumerate(self.items):
            if not isinstance(it, Item):
                it = Item(*it)
            rho = np.asarray(it.rho, complex)
            if rho.shape != (self.dim_a, self.dim_a):
                raise EnsembleError(f"item {k}: rho has shape {rho.shape}, expected {(self.dim_a,) * 2}")
            if not np.all(np.isfinite(rho)):
                raise EnsembleError(f"item {k}: rho has non-finite entries")
            if np.max(np.abs(rho - rho.conj().T)) > 1e-10:
                raise EnsembleError(f"item {k}: rho is not Hermitian")
            if abs(np.trace(rho).real - 1) > 1e-9:
                raise EnsembleError(f"item {k}: rho has trace {np.trace(rho).real:.10g}")
            if np.linalg.eigvalsh(rho)[0] < -1e-10:
                raise EnsembleError(f"item {k}: rho is not positive semidefinite")
            if not (0.0 <= it.p <= 1.0):
                raise EnsembleError(f"item {k}: probability {it.p} outside [0, 1]")
            j = it.j
            if self.dim_j > 1:
                if j is None:
                    raise EnsembleError(f"item {k}: side information missing but dim_j = {self.dim_j}")
                j = np.asarray(j, complex).reshape(-1)
                if j.shape[0] != self.dim_j:
                    raise EnsembleError(f"item {k}: j has dim {j.shape[0]}, expected {self.dim_j}")
                if abs(np.linalg.norm(j) - 1) > 1e-10:
                    raise EnsembleError(f"item {k}: j is not normalized")
            else:
                j = np.ones(1, complex)
            rho = hermitize(rho)
            rho.setflags(write=False)
            j.setflags(write=False)
            items.append(Item(float(it.p), rho, j))
        total = sum(it.p for it in items)
        if abs(total - 1.0) > PROB_TOL:
            raise EnsembleError(f"probabilities sum to {total:.12g}, expected 1")
        object.__setattr__(self, "items", tuple(items))

    @classmethod
    def from_states(cls, probs: Sequence[float], states: Sequence, sides: Sequence | None = None) -> "Ensemble":
        """Build from state vectors or density matrices (and optional side-information vectors)."""
        mats = []
        for s in states:
            s = np.asarray(s, complex)
            mats.append(np.outer(s, s.conj()) if s.ndim == 1 else s)
        dim_j = 1 if sides is None else len(np.asarray(sides[0]).reshape(-1))
        js = [None] * len(mats) if sides is None else [np.asarray(v, complex) for v in sides]
        return cls(mats[0].shape[0], tuple(Item(p, m, j) for p, m, j in zip(probs, mats, js)), dim_j)

    # -- basic quantities --------------------------------------------------------
    @property
    def n(self) -> int:
        return len(self.items)

    @property
    def probs(self) -> np.ndarray:
        return np.array([it.p for it in self.items])

    @property
    def dim_in(self) -> int:
        return self.dim_a * self.dim_j

    @cached_property
    def rank_r(self) -> int:
        return max(purification_vectors(it.rho).shape[1] for it in self.items)

    def sigma(self, x: int) -> np.ndarray:
        """Input state rho_x (x) |j_x><j_x| on AJ."""
        it = self.items[x]
        return np.kron(it.rho, np.outer(it.j, it.j.conj()))

    @cached_property
    def sigmas(self) -> np.ndarray:
        return np.stack([self.sigma(x) for x in range(self.n)])

    @cached_property
    def average_input(self) -> np.ndarray:
        """rho^{AJ} = sum_x p_x rho_x (x) |j_x><j_x|."""
        return np.einsum("x,xij->ij", self.probs, self.sigmas)

    @cached_property
    def psi_matrix(self) -> np.ndarray:
        """Purification as a (dim AJ) x (dim X X' R) matrix, reference order X, X', R."""
        n, dr = self.n, self.rank_r
        psi = np.zeros((self.dim_in, n * n * dr), complex)
        for x, it in enumerate(self.items):
            pv = purification_vectors(it.rho)  # dimA x rank
            pad = np.zeros((self.dim_a, dr), complex)
            pad[:, : pv.shape[1]] = pv
            # |phi_x>^{AR} |j_x>^J -> matrix over (A J) x R
            block = np.einsum("ar,j->ajr", pad, it.j).reshape(self.dim_in, dr)
            col = (x * n + x) * dr
            psi[:, col: col + dr] += np.sqrt(it.p) * block
        return psi

    def with_items(self, items, dim_j=None) -> "Ensemble":
        return Ensemble(self.dim_a, tuple(items), self.dim_j if dim_j is None else dim_j)


def cq_state(e: Ensemble) -> DensityOp:
    n = e.n
    m = np.zeros((e.dim_in * n,) * 2, complex)
    for x in range(n):
        m += e.items[x].p * np.kron(e.sigma(x), np.diag(np.eye(n)[x]))
    return DensityOp(m, DimLayout((("A", e.dim_a), ("J", e.dim_j), ("X", n))), check=False)


def purified_source(e: Ensemble) -> PureState:
    """|psi> = sum_x sqrt(p_x) |phi_x>^{AR} |j_x>^J |x>^X |x>^{X'} in label order A, J, X, X', R."""
    vec = e.psi_matrix.reshape(-1)
    layout = DimLayout((("A", e.dim_a), ("J", e.dim_j), ("X", e.n), ("X'", e.n), ("R", e.rank_r)))
    return PureState(vec / np.linalg.norm(vec), layout)


def tensor_power(e: Ensemble, k: int) -> Ensemble:
    if k < 1:
        raise EnsembleError("tensor power needs k >= 1")
    if k * np.log2(e.dim_a * e.dim_j * e.n) > POWER_CAP_BITS + 1e-12:
        raise EnsembleError(f"tensor power k={k} exceeds the {POWER_CAP_BITS:g}-bit size cap")
    if k == 1:
        return e
    items = []
    for combo in itertools.product(e.items, repeat=k):
        p = float(np.prod([it.p for it in combo]))
        rho = combo[0].rho
        j = combo[0].j
        for it in combo[1:]:
            rho = np.kron(rho, it.rho)
            j = np.kron(j, it.j)
        items.append(Item(p, rho, j))
    return Ensemble(e.dim_a ** k, tuple(items), e.dim_j ** k)


def visible(e: Ensemble) -> Ensemble:
    """Replace side information by the orthonormal labels |x>."""
    eye = np.eye(e.n)
    return Ensemble(e.dim_a, tuple(Item(it.p, it.rho, eye[x]) for x, it in enumerate(e.items)), e.n)


def strip_side_info(e: Ensemble) -> Ensemble:
    return Ensemble(e.dim_a, tuple(Item(it.p, it.rho, None) for it in e.items), 1)


# -- file format ---------------------------------------------------------------

def to_json(e: Ensemble) -> dict:
    out = {"dimA": e.dim_a, "items": []}
    for it in e.items:
        d = {"p": it.p, "rho": matrix_to_json(it.rho)}
        if e.dim_j > 1:
            d["j"] = vector_to_json(it.j)
        out["items"].append(d)
    return out


def from_json(obj) -> Ensemble:
    if not isinstance(obj, dict) or "dimA" not in obj or "items" not in obj:
        raise EnsembleError("ensemble JSON needs keys 'dimA' and 'items'")
    dim_a = obj["dimA"]
    if not isinstance(dim_a, int) or dim_a < 1:
        raise EnsembleError(f"'dimA' must be a positive integer, got {dim_a!r}")
    raw = obj["items"]
    if not isinstance(raw, list) or not raw:
        raise EnsembleError("'items' must be a non-empty list")
    items = []
    dim_j = None
    for k, it in enumerate(raw):
        if not isinstance(it, dict) or "p" not in it or "rho" not in it:
            raise EnsembleError(f"item {k}: needs fields 'p' and 'rho'")
        try:
            rho = matrix_from_json(it["rho"], f"item {k}: rho")
        except ValueError as exc:
            raise EnsembleError(str(exc)) from None
        j = None
        if it.get("j") is not None:
            try:
                j = vector_from_json(it["j"], f"item {k}: j")
            except ValueError as exc:
                raise EnsembleError(str(exc)) from None
            if dim_j is None:
                dim_j = len(j)
            elif len(j) != dim_j:
                raise EnsembleError(f"item {k}: j has dim {len(j)}, earlier items use {dim_j}")
        elif dim_j is not None:
            raise EnsembleError(f"item {k}: missing 'j' while earlier items carry side information")
        if not isinstance(it["p"], (int, float)):
            raise EnsembleError(f"item {k}: 'p' must be a number")
        items.append(Item(float(it["p"]), rho, j))
    if dim_j is not None and any(it.j is None for it in items):
        bad = next(k for k, it in enumerate(items) if it.j is None)
        raise EnsembleError(f"item {bad}: missing 'j' while other items carry side information")
    return Ensemble(dim_a, tuple(items), dim_j or 1)
