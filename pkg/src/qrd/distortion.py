"""Distortion functions on output cq states tau^{BX} and their per-copy criteria."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ensemble import Ensemble
from .qcore import (
    DensityOp,
    DimLayout,
    LayoutError,
    fidelity_of,
    hermitize,
    ptrace,
    random_density,
    sqrtm_psd,
    trace_norm,
)

KINDS = ("fidelity", "trace")
INV_FLOOR = 1e-10
SMOOTH = 1e-9


def _support_factor(rho: np.ndarray) -> np.ndarray:
    """F with F F^dag = rho restricted to its support, so sqrt(rho) tau sqrt(rho) ~ F^dag tau F.

    Working on the support keeps spurious ~1e-17 eigenvalues (and their square
    roots) out of the fidelity of rank-deficient references.
    """
    w, v = np.linalg.eigh(hermitize(rho))
    keep = w > 1e-12 * max(w.max(), 1e-300)
    return v[:, keep] * np.sqrt(w[keep])


@dataclass(frozen=True, eq=False)
class Distortion:
    """Distortion relative to the ideal output rho^{BX} = sum_x p_x rho_x (x) |x><x|.

    ``kind="fidelity"`` is ``1 - F`` (squared fidelity); ``kind="trace"`` is the
    trace distance. ``lipschitz_k`` is exact (1/2) for the trace distance; for the
    fidelity it is an empirical estimate and ``lipschitz_certified`` is False.
    """

    kind: str
    probs: np.ndarray
    refs: np.ndarray
    lipschitz_k: float = 0.5
    lipschitz_certified: bool = True
    _sqrt_refs: np.ndarray = field(init=False, repr=False)
    _factors: list = field(init=False, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown distortion kind {self.kind!r}; choose from {KINDS}")
        probs = np.asarray(self.probs, float)
        refs = np.asarray(self.refs, complex)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "refs", refs)
        object.__setattr__(self, "_sqrt_refs", np.stack([sqrtm_psd(r) for r in refs]))
        object.__setattr__(self, "_factors", [_support_factor(r) for r in refs])

    @classmethod
    def for_ensemble(cls, e: Ensemble, kind: str = "fidelity", dim_b: int | None = None) -> "Distortion":
        """Reference rho^{BX} from the ensemble through the identity A -> B (zero padded if dim B > dim A)."""
        db = e.dim_a if dim_b is None else dim_b
        if db < e.dim_a:
            raise LayoutError(f"dim B = {db} is smaller than dim A = {e.dim_a}")
        refs = np.zeros((e.n, db, db), complex)
        for x, it in enumerate(e.items):
            refs[x, : e.dim_a, : e.dim_a] = it.rho
        if kind == "trace":
            return cls(kind, e.probs, refs, 0.5, True)
        return cls(kind, e.probs, refs, FIDELITY_K_ESTIMATE, False)

    @property
    def n(self) -> int:
        return len(self.probs)

    @property
    def dim_b(self) -> int:
        return self.refs.shape[1]

    @property
    def reference(self) -> DensityOp:
        m = np.zeros((self.dim_b * self.n,) * 2, complex)
        for x in range(self.n):
            m += self.probs[x] * np.kron(self.refs[x], np.diag(np.eye(self.n)[x]))
        return DensityOp(m, DimLayout((("B", self.dim_b), ("X", self.n))), check=False)

    # -- evaluation on full matrices ------------------------------------------------
    def delta(self, tau) -> float:
        t = tau.matrix if isinstance(tau, DensityOp) else np.asarray(tau, complex)
        ref = self.reference.matrix
        if t.shape != ref.shape:
            raise LayoutError(f"tau has shape {t.shape}, reference is {ref.shape}")
        if self.kind == "fidelity":
            return max(0.0, 1.0 - fidelity_of(ref, t))
        return 0.5 * trace_norm(t - ref)

    # -- evaluation on conditional outputs tau_x (the solvers' fast path) -------------
    def cq_value(self, taus: np.ndarray) -> float:
        return self.cq_value_grad(taus, grad=False)[0]

    def cq_value_grad(self, taus: np.ndarray, grad: bool = True):
        """Value and gradient w.r.t. each tau_x of Delta(sum_x p_x tau_x (x) |x><x|).

        The gradient G_x satisfies dDelta = sum_x Re Tr(G_x dtau_x).
        """
        n = self.n
        grads = np.zeros_like(taus) if grad else None
        if self.kind == "fidelity":
            rf = np.zeros(n)
            inv = []
            for x in range(n):
                f = self._factors[x]
                w, v = np.linalg.eigh(hermitize(f.conj().T @ taus[x] @ f))
                w = np.clip(w, 0.0, None)
                rf[x] = np.sum(np.sqrt(w))
                if grad:
                    inv.append((v / np.sqrt(np.maximum(w, INV_FLOOR))) @ v.conj().T)
            root = float(self.probs @ rf)
            value = max(0.0, 1.0 - root ** 2)
            if grad:
                for x in range(n):
                    f = self._factors[x]
                    grads[x] = -root * self.probs[x] * (f @ inv[x] @ f.conj().T)
            return value, grads
        value = 0.0
        for x in range(n):
            w, v = np.linalg.eigh(hermitize(taus[x] - self.refs[x]))
            value += 0.5 * self.probs[x] * float(np.sum(np.abs(w)))
            if grad:
                sgn = w / np.sqrt(w ** 2 + SMOOTH ** 2)
                grads[x] = 0.5 * self.probs[x] * (v * sgn) @ v.conj().T
        return value, grads


def per_copy(d: Distortion, xi, mode: str = "max") -> float:
    """Per-copy distortion of a state on (B_1 X_1 ... B_n X_n), factors in that order."""
    if mode not in ("max", "ave"):
        raise ValueError("mode must be 'max' or 'ave'")
    m = xi.matrix if isinstance(xi, DensityOp) else np.asarray(xi, complex)
    pair = d.dim_b * d.n
    if isinstance(xi, DensityOp):
        dims = list(xi.layout.dims)
        if len(dims) % 2 or any(dims[2 * i] != d.dim_b or dims[2 * i + 1] != d.n for i in range(len(dims) // 2)):
            raise LayoutError(f"layout {xi.layout.factors} is not a sequence of (B, X) pairs")
        k = len(dims) // 2
    else:
        k = int(round(np.log(m.shape[0]) / np.log(pair)))
        if pair ** k != m.shape[0]:
            raise LayoutError(f"dimension {m.shape[0]} is not a power of dim(BX) = {pair}")
        dims = [d.dim_b, d.n] * k
    vals = [d.delta(ptrace(m, dims, [2 * i, 2 * i + 1])) for i in range(k)]
    return max(vals) if mode == "max" else float(np.mean(vals))


def convexity_gap(d: Distortion, t1: np.ndarray, t2: np.ndarray, lam: float) -> float:
    """lam*D(t1) + (1-lam)*D(t2) - D(lam t1 + (1-lam) t2); non-negative for convex D."""
    return lam * d.delta(t1) + (1 - lam) * d.delta(t2) - d.delta(lam * t1 + (1 - lam) * t2)


def random_cq(d: Distortion, rng: np.random.Generator) -> np.ndarray:
    """Random output state sum_x p_x tau_x (x) |x><x| with the reference's X-marginal."""
    m = np.zeros((d.dim_b * d.n,) * 2, complex)
    for x in range(d.n):
        m += d.probs[x] * np.kron(random_density(d.dim_b, rng), np.diag(np.eye(d.n)[x]))
    return m


def estimate_lipschitz(d: Distortion, rng: np.random.Generator, samples: int = 2000) -> float:
    """Largest observed |D(a) - D(b)| / ||a - b||_1 over random nearby cq pairs."""
    best = 0.0
    for _ in range(samples):
        a = random_cq(d, rng) if rng.random() < 0.5 else d.reference.matrix.copy()
        b = random_cq(d, rng)
        t = rng.uniform(1e-3, 1.0)
        b = (1 - t) * a + t * b
        gap = trace_norm(a - b)
        if gap > 1e-12:
            best = max(best, abs(d.delta(a) - d.delta(b)) / gap)
    return best


# Largest ratio seen by estimate_lipschitz over 40 seeded random qubit/qutrit
# ensembles (seed 20261019, 500 pairs each). 1 - F is only Holder-1/2 near
# rank-deficient outputs, so no finite constant is certified.
FIDELITY_K_ESTIMATE = 4.33
