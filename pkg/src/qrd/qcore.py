"""Hermitian linear algebra and entropic functionals on labeled finite systems.

All logarithms are base 2. Matrices are plain complex numpy arrays; the
:class:`DimLayout` attached to a :class:`DensityOp` names each tensor factor so
partial traces and channel applications can address systems by label.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

HERM_TOL = 1e-10
TRACE_TOL = 1e-10
NEG_TOL = 1e-10
CLIP = 1e-12


class LayoutError(ValueError):
    pass


class StateError(ValueError):
    pass


@dataclass(frozen=True)
class DimLayout:
    factors: tuple[tuple[str, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple((str(l), int(d)) for l, d in self.factors))
        labels = [l for l, _ in self.factors]
        if len(set(labels)) != len(labels):
            raise LayoutError(f"duplicate labels in layout: {labels}")
        for l, d in self.factors:
            if d < 1:
                raise LayoutError(f"factor {l!r} has non-positive dimension {d}")

    @classmethod
    def of(cls, **dims: int) -> "DimLayout":
        return cls(tuple(dims.items()))

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(l for l, _ in self.factors)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(d for _, d in self.factors)

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims, dtype=np.int64)) if self.factors else 1

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise LayoutError(f"unknown label {label!r}; layout has {self.labels}") from None

    def dim_of(self, labels: Iterable[str]) -> int:
        return int(np.prod([self.factors[self.index(l)][1] for l in labels], dtype=np.int64))

    def select(self, labels: Iterable[str]) -> "DimLayout":
        return DimLayout(tuple(self.factors[self.index(l)] for l in labels))

    def __add__(self, other: "DimLayout") -> "DimLayout":
        return DimLayout(self.factors + other.factors)


def _as_matrix(m) -> np.ndarray:
    a = np.asarray(m, dtype=complex)
    if a.ndim != 2:
        raise StateError(f"expected a 2-d matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise StateError("matrix has non-finite entries")
    return a


def hermitize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.conj().T)


@dataclass(frozen=True)
class DensityOp:
    """A density operator together with the layout of its tensor factors."""

    matrix: np.ndarray
    layout: DimLayout
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        m = _as_matrix(self.matrix)
        if m.shape != (self.layout.dim, self.layout.dim):
            raise LayoutError(f"matrix shape {m.shape} does not match layout dim {self.layout.dim}")
        if self.check:
            if np.max(np.abs(m - m.conj().T), initial=0.0) > HERM_TOL:
                raise StateError("density operator is not Hermitian")
            if abs(np.trace(m).real - 1.0) > TRACE_TOL:
                raise StateError(f"density operator has trace {np.trace(m).real:.12g}")
            if np.linalg.eigvalsh(hermitize(m))[0] < -NEG_TOL:
                raise StateError("density operator has a negative eigenvalue")
        m = hermitize(m)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def single(cls, matrix, label: str = "A", check: bool = True) -> "DensityOp":
        m = _as_matrix(matrix)
        return cls(m, DimLayout(((label, m.shape[0]),)), check=check)

    @property
    def dim(self) -> int:
        return self.layout.dim

    @property
    def labels(self) -> tuple[str, ...]:
        return self.layout.labels

    def relabel(self, mapping: dict[str, str]) -> "DensityOp":
        layout = DimLayout(tuple((mapping.get(l, l), d) for l, d in self.layout.factors))
        return DensityOp(self.matrix, layout, check=False)

    def reorder(self, labels: Sequence[str]) -> "DensityOp":
        """Permute tensor factors into the given label order."""
        if sorted(labels) != sorted(self.labels):
            raise LayoutError(f"reorder needs a permutation of {self.labels}, got {list(labels)}")
        perm = [self.layout.index(l) for l in labels]
        m = permute_matrix(self.matrix, self.layout.dims, perm)
        return DensityOp(m, self.layout.select(labels), check=False)


@dataclass(frozen=True)
class PureState:
    vector: np.ndarray
    layout: DimLayout

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=complex).reshape(-1)
        if v.shape[0] != self.layout.dim:
            raise LayoutError(f"vector length {v.shape[0]} does not match layout dim {self.layout.dim}")
        if abs(np.linalg.norm(v) - 1.0) > 1e-10:
            raise StateError(f"state vector has norm {np.linalg.norm(v):.12g}")
        v.setflags(write=False)
        object.__setattr__(self, "vector", v)

    def dm(self) -> DensityOp:
        return DensityOp(np.outer(self.vector, self.vector.conj()), self.layout, check=False)


# -- raw array helpers -------------------------------------------------------

def permute_matrix(m: np.ndarray, dims: Sequence[int], perm: Sequence[int]) -> np.ndarray:
    n = len(dims)
    t = m.reshape(tuple(dims) * 2)
    t = t.transpose(list(perm) + [n + p for p in perm])
    d = m.shape[0]
    return t.reshape(d, d)


def ptrace(m: np.ndarray, dims: Sequence[int], keep: Sequence[int]) -> np.ndarray:
    """Partial trace of a matrix, keeping factor indices ``keep`` in the given order."""
    n = len(dims)
    keep = list(keep)
    drop = [i for i in range(n) if i not in keep]
    t = m.reshape(tuple(dims) * 2)
    # trace out from the highest index down so axis numbers stay valid
    for i in sorted(drop, reverse=True):
        t = np.trace(t, axis1=i, axis2=i + t.ndim // 2)
    remaining = [i for i in range(n) if i in keep]
    k = len(remaining)
    order = [remaining.index(i) for i in keep]
    t = t.transpose(order + [k + o for o in order])
    dk = int(np.prod([dims[i] for i in keep], dtype=np.int64)) if keep else 1
    return t.reshape(dk, dk)


def eigh_psd(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    w, v = np.linalg.eigh(hermitize(m))
    return w, v


def entropy_of(m: np.ndarray) -> float:
    """Von Neumann entropy (bits) of a Hermitian PSD matrix, 0 log 0 := 0."""
    w = np.linalg.eigvalsh(hermitize(m))
    if w[0] < -NEG_TOL:
        raise StateError(f"negative eigenvalue {w[0]:.3g} in entropy input")
    w = w[w > CLIP]
    return float(-np.sum(w * np.log2(w)))


def entropy_vals(w: np.ndarray) -> float:
    w = w[w > CLIP]
    return float(-np.sum(w * np.log2(w)))


def sqrtm_psd(m: np.ndarray) -> np.ndarray:
    w, v = eigh_psd(m)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.conj().T


def root_fidelity_of(a: np.ndarray, b: np.ndarray) -> float:
    sa = sqrtm_psd(a)
    w = np.linalg.eigvalsh(hermitize(sa @ b @ sa))
    return float(np.sum(np.sqrt(np.clip(w, 0.0, None))))


def fidelity_of(a: np.ndarray, b: np.ndarray) -> float:
    return min(1.0, root_fidelity_of(a, b) ** 2)


def trace_norm(m: np.ndarray) -> float:
    return float(np.sum(np.linalg.svd(m, compute_uv=False)))


def h2(p: float) -> float:
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return float(-p * np.log2(p) - (1 - p) * np.log2(1 - p))


# -- labeled operations -------------------------------------------------------

def _parts(a):
    if isinstance(a, DensityOp):
        return a.matrix, a.layout
    if isinstance(a, PureState):
        return np.outer(a.vector, a.vector.conj()), a.layout
    m = _as_matrix(a)
    return m, None


def tensor(a, b):
    """Kronecker product; layouts are concatenated when both operands carry one."""
    if isinstance(a, PureState) and isinstance(b, PureState):
        return PureState(np.kron(a.vector, b.vector), a.layout + b.layout)
    ma, la = _parts(a)
    mb, lb = _parts(b)
    m = np.kron(ma, mb)
    if la is None or lb is None:
        return m
    return DensityOp(m, la + lb, check=False)


def partial_trace(rho: DensityOp, keep: Iterable[str]) -> DensityOp:
    keep = list(keep)
    idx = [rho.layout.index(l) for l in keep]
    # keep factors in layout order, matching the "order preserved" contract
    idx_sorted = sorted(idx)
    m = ptrace(rho.matrix, rho.layout.dims, idx_sorted)
    return DensityOp(m, DimLayout(tuple(rho.layout.factors[i] for i in idx_sorted)), check=False)


def vn_entropy(rho) -> float:
    m = rho.matrix if isinstance(rho, DensityOp) else _as_matrix(rho)
    return entropy_of(m)


def mutual_information(rho: DensityOp, part_a: Iterable[str], part_b: Iterable[str]) -> float:
    part_a, part_b = list(part_a), list(part_b)
    if set(part_a) & set(part_b) or not part_a or not part_b:
        raise LayoutError("mutual information needs two disjoint non-empty parts")
    if sorted(part_a + part_b) != sorted(rho.labels):
        raise LayoutError(f"parts {part_a}|{part_b} do not cover layout {rho.labels}")
    sa = vn_entropy(partial_trace(rho, part_a))
    sb = vn_entropy(partial_trace(rho, part_b))
    return sa + sb - vn_entropy(rho)


def _same_dims(rho, sigma) -> tuple[np.ndarray, np.ndarray]:
    a = rho.matrix if isinstance(rho, DensityOp) else _as_matrix(rho)
    b = sigma.matrix if isinstance(sigma, DensityOp) else _as_matrix(sigma)
    if a.shape != b.shape:
        raise LayoutError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a, b


def fidelity(rho, sigma) -> float:
    """Squared fidelity (Tr|sqrt(rho) sqrt(sigma)|)^2; equals |<a|b>|^2 on pure states."""
    a, b = _same_dims(rho, sigma)
    return fidelity_of(a, b)


def trace_distance(rho, sigma) -> float:
    a, b = _same_dims(rho, sigma)
    return 0.5 * trace_norm(a - b)


def fannes_bound(eps: float, d: int) -> float:
    if d < 2:
        raise ValueError("Fannes bound needs d >= 2")
    if eps < 0 or eps > 1 - 1 / d + 1e-15:
        raise ValueError(f"eps={eps} outside [0, 1 - 1/d]")
    return eps * np.log2(d - 1) + h2(eps)


def _phase_fix(v: np.ndarray) -> np.ndarray:
    # first amplitude of non-negligible size made real positive
    for col in range(v.shape[1]):
        nz = np.flatnonzero(np.abs(v[:, col]) > 1e-12)
        if nz.size:
            a = v[nz[0], col]
            v[:, col] *= np.conj(a) / abs(a)
    return v


def purification_vectors(m: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Matrix ``P`` (dim x rank) with ``P P^dagger = m``; columns sqrt(l_i)|e_i>."""
    w, v = eigh_psd(m)
    order = np.argsort(-w, kind="stable")
    w, v = w[order], v[:, order]
    r = max(1, int(np.sum(w > tol)))
    v = _phase_fix(v[:, :r].copy())
    return v * np.sqrt(np.clip(w[:r], 0.0, None))


def purify(rho: DensityOp, ref_label: str = "R") -> PureState:
    """Purification sum_i sqrt(l_i)|e_i>|i>, reference dimension = rank(rho)."""
    if ref_label in rho.labels:
        raise LayoutError(f"reference label {ref_label!r} already in layout")
    p = purification_vectors(rho.matrix)
    vec = p.reshape(-1)
    vec = vec / np.linalg.norm(vec)
    return PureState(vec, rho.layout + DimLayout(((ref_label, p.shape[1]),)))


# -- random instances ---------------------------------------------------------

def random_unitary(d: int, rng: np.random.Generator) -> np.ndarray:
    z = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_pure(d: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    return v / np.linalg.norm(v)


def random_density(d: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    """Random density matrix from a Ginibre draw (Hilbert-Schmidt measure for full rank)."""
    k = d if rank is None else rank
    g = rng.standard_normal((d, k)) + 1j * rng.standard_normal((d, k))
    m = g @ g.conj().T
    return hermitize(m / np.trace(m).real)
