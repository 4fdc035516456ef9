"""CPTP maps stored as Choi matrices.

Choi convention (unnormalized, ``Tr choi = dim_in``)::

    choi = sum_ij |i><j|_In (x) N(|i><j|)

with row index ``i * dim_out + b``. Trace preservation reads ``Tr_Out choi = I_In``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .qcore import (
    DensityOp,
    DimLayout,
    LayoutError,
    hermitize,
    permute_matrix,
    ptrace,
)

KRAUS_TOL = 1e-10
PSD_TOL = 1e-9
TP_TOL = 1e-8


class ProjectionError(RuntimeError):
    pass


def choi_tp_residual(choi: np.ndarray, d_in: int, d_out: int) -> float:
    return float(np.max(np.abs(ptrace(choi, (d_in, d_out), [0]) - np.eye(d_in))))


def choi_min_eig(choi: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(hermitize(choi))[0])


@dataclass(frozen=True)
class Channel:
    choi: np.ndarray
    dim_in: int
    dim_out: int
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        c = np.asarray(self.choi, dtype=complex)
        d = self.dim_in * self.dim_out
        if c.shape != (d, d):
            raise LayoutError(f"Choi shape {c.shape} does not match {self.dim_in}x{self.dim_out}")
        c = hermitize(c)
        if self.check:
            if choi_min_eig(c) < -PSD_TOL:
                raise ValueError(f"Choi matrix not PSD (min eig {choi_min_eig(c):.3g})")
            if choi_tp_residual(c, self.dim_in, self.dim_out) > TP_TOL:
                raise ValueError("Choi matrix is not trace preserving")
        c.setflags(write=False)
        object.__setattr__(self, "choi", c)

    # -- representations ----------------------------------------------------
    def kraus(self, tol: float = KRAUS_TOL) -> list[np.ndarray]:
        """Kraus operators K_k (dim_out x dim_in) from eigenvectors with eigenvalue > tol."""
        w, v = np.linalg.eigh(self.choi)
        ops = []
        for lam, vec in zip(w[::-1], v[:, ::-1].T):
            if lam <= tol:
                break
            # vec[i*dout + b] = <i,b|v>; K[b,i] = sqrt(lam) vec[i*dout+b]
            ops.append(np.sqrt(lam) * vec.reshape(self.dim_in, self.dim_out).T)
        if not ops:
            ops.append(np.zeros((self.dim_out, self.dim_in), complex))
        return ops

    def stinespring(self) -> np.ndarray:
        """Isometry V: In -> Out (x) Env with ``Tr_Env V rho V^dag = N(rho)``; Env dim = Choi rank."""
        ks = self.kraus()
        r = len(ks)
        v = np.zeros((self.dim_out * r, self.dim_in), complex)
        for k, op in enumerate(ks):
            # output index b * r + k  (Out first, Env second)
            v[k::r, :] = op
        return v

    @property
    def env_dim(self) -> int:
        return len(self.kraus())

    def is_cptp(self, tol: float = 1e-8) -> bool:
        return (
            choi_min_eig(self.choi) >= -tol
            and choi_tp_residual(self.choi, self.dim_in, self.dim_out) <= tol
        )

    # -- action ---------------------------------------------------------------
    def apply_matrix(self, rho: np.ndarray, d_rest: int = 1) -> np.ndarray:
        """Apply to a matrix on In (x) Rest (In first) and return the matrix on Out (x) Rest."""
        return choi_apply(self.choi, self.dim_in, self.dim_out, rho, d_rest)

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        return self.apply_matrix(np.asarray(rho, complex))

    def compose(self, other: "Channel") -> "Channel":
        """``self o other`` (apply ``other`` first)."""
        if other.dim_out != self.dim_in:
            raise LayoutError("composition dimension mismatch")
        kr = [a @ b for a in self.kraus() for b in other.kraus()]
        return from_kraus(kr, check=False)

    def tensor(self, other: "Channel") -> "Channel":
        c = np.kron(self.choi, other.choi)
        dims = (self.dim_in, self.dim_out, other.dim_in, other.dim_out)
        c = permute_matrix(c, dims, [0, 2, 1, 3])
        return Channel(c, self.dim_in * other.dim_in, self.dim_out * other.dim_out, check=False)


def choi_apply(choi: np.ndarray, d_in: int, d_out: int, rho: np.ndarray, d_rest: int = 1) -> np.ndarray:
    """(N (x) id)(rho) for rho on In (x) Rest; output on Out (x) Rest."""
    c = choi.reshape(d_in, d_out, d_in, d_out).transpose(1, 3, 0, 2).reshape(d_out * d_out, d_in * d_in)
    r = rho.reshape(d_in, d_rest, d_in, d_rest).transpose(0, 2, 1, 3).reshape(d_in * d_in, d_rest * d_rest)
    out = (c @ r).reshape(d_out, d_out, d_rest, d_rest).transpose(0, 2, 1, 3)
    d = d_out * d_rest
    return out.reshape(d, d)


def choi_adjoint(rho: np.ndarray, g: np.ndarray, d_in: int, d_out: int, d_rest: int = 1) -> np.ndarray:
    """Gradient w.r.t. the Choi matrix of ``Re Tr(g . choi_apply(choi, rho))``."""
    # grad[i b, j c] = sum_{r s} rho[j s, i r] g[b r, c s]
    r = rho.reshape(d_in, d_rest, d_in, d_rest).transpose(2, 0, 3, 1).reshape(d_in * d_in, d_rest * d_rest)
    q = g.reshape(d_out, d_rest, d_out, d_rest).transpose(1, 3, 0, 2).reshape(d_rest * d_rest, d_out * d_out)
    out = (r @ q).reshape(d_in, d_in, d_out, d_out).transpose(0, 2, 1, 3)
    d = d_in * d_out
    return out.reshape(d, d)


def from_kraus(ops: Sequence[np.ndarray], check: bool = True) -> Channel:
    ops = [np.asarray(k, complex) for k in ops]
    d_out, d_in = ops[0].shape
    c = np.zeros((d_in * d_out, d_in * d_out), complex)
    for k in ops:
        vec = k.T.reshape(-1)  # vec[i*dout+b] = K[b,i]
        c += np.outer(vec, vec.conj())
    return Channel(c, d_in, d_out, check=check)


def from_isometry(v: np.ndarray, d_out: int, check: bool = True) -> Channel:
    """Channel ``rho -> Tr_Env V rho V^dag`` for V: In -> Out (x) Env (Out first)."""
    v = np.asarray(v, complex)
    d_in = v.shape[1]
    r = v.shape[0] // d_out
    ops = [v[k::r, :] for k in range(r)]
    return from_kraus(ops, check=check)


def complementary(ch: Channel) -> Channel:
    """Channel In -> Env, ``rho -> Tr_Out V rho V^dag`` for the minimal Stinespring isometry."""
    v = ch.stinespring()
    r = v.shape[0] // ch.dim_out
    # Kraus ops of the complement: rows of V belonging to a fixed output index b
    ops = [v[b * r:(b + 1) * r, :] for b in range(ch.dim_out)]
    return from_kraus(ops, check=False)


def apply(ch: Channel, rho: DensityOp, on: Sequence[str] | str, out_label: str | None = None) -> DensityOp:
    """Apply ``ch`` to the factors ``on`` of ``rho``; identity elsewhere.

    The output factor replaces ``on`` at the position of its first label and is
    named ``out_label`` (default: the first label of ``on``).
    """
    if isinstance(on, str):
        on = [on]
    on = list(on)
    lay = rho.layout
    if lay.dim_of(on) != ch.dim_in:
        raise LayoutError(f"factors {on} have dim {lay.dim_of(on)}, channel expects {ch.dim_in}")
    rest = [l for l in lay.labels if l not in on]
    m = permute_matrix(rho.matrix, lay.dims, [lay.index(l) for l in on + rest])
    out = ch.apply_matrix(m, lay.dim_of(rest) if rest else 1)
    name = out_label or on[0]
    pos = lay.index(on[0])
    new_factors = [(name, ch.dim_out)] + [lay.factors[lay.index(l)] for l in rest]
    # restore position of the output factor among the untouched ones
    before = [l for l in lay.labels[:pos] if l not in on]
    order = list(range(1, 1 + len(before))) + [0] + list(range(1 + len(before), 1 + len(rest)))
    out = permute_matrix(out, [d for _, d in new_factors], order)
    layout = DimLayout(tuple(new_factors[i] for i in order))
    return DensityOp(out, layout, check=False)


# -- projection onto the CPTP set ------------------------------------------------

def _psd_part(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(hermitize(m))
    return (v * np.clip(w, 0.0, None)) @ v.conj().T


def _tp_correct(m: np.ndarray, d_in: int, d_out: int) -> np.ndarray:
    deficit = np.eye(d_in) - ptrace(m, (d_in, d_out), [0])
    return m + np.kron(deficit, np.eye(d_out)) / d_out


def cptp_residual(m: np.ndarray, d_in: int, d_out: int) -> float:
    return max(0.0, -choi_min_eig(m), choi_tp_residual(m, d_in, d_out))


def project_cptp(
    m: np.ndarray,
    d_in: int,
    d_out: int,
    tol: float = 1e-9,
    max_rounds: int = 500,
    method: str = "alternating",
    raise_on_fail: bool = True,
) -> Channel:
    """Map a square matrix onto the CPTP Choi set.

    ``dual`` solves the exact Euclidean projection through its dual problem;
    ``alternating`` alternates PSD clipping and the trace-preserving affine
    correction; ``dykstra`` adds the Dykstra correction on the PSD step so the
    iteration converges to the Euclidean projection.
    """
    x = hermitize(np.asarray(m, complex))
    if method == "dual":
        # Newton converges quadratically, so a tight inner tolerance is cheap and keeps this idempotent
        c, res, _ = project_psd_affine(x, tp_constraints(d_in, d_out), min(tol * 1e-3, 1e-12))
        c = _tp_correct(c, d_in, d_out)
        if raise_on_fail and cptp_residual(c, d_in, d_out) > max(tol, 1e-8):
            raise ProjectionError(f"CPTP projection did not converge: residual {res:.3g}")
        return Channel(c, d_in, d_out, check=False)
    if x.shape != (d_in * d_out,) * 2:
        raise LayoutError(f"matrix shape {x.shape} does not match {d_in}x{d_out}")
    if cptp_residual(x, d_in, d_out) <= tol:
        return Channel(x, d_in, d_out, check=False)
    inc = np.zeros_like(x)
    for _ in range(max_rounds):
        if method == "dykstra":
            y = _psd_part(x + inc)
            inc = x + inc - y
        else:
            y = _psd_part(x)
        x = _tp_correct(y, d_in, d_out)
        if cptp_residual(x, d_in, d_out) <= tol:
            return Channel(x, d_in, d_out, check=False)
    res = cptp_residual(x, d_in, d_out)
    if raise_on_fail:
        raise ProjectionError(f"CPTP projection did not converge: residual {res:.3g}")
    return Channel(_tp_correct(_psd_part(x), d_in, d_out), d_in, d_out, check=False)


def herm_basis(d: int) -> np.ndarray:
    """Orthonormal basis (Hilbert-Schmidt) of d x d Hermitian matrices, shape (d*d, d, d)."""
    out = []
    for i in range(d):
        e = np.zeros((d, d), complex)
        e[i, i] = 1.0
        out.append(e)
    for i in range(d):
        for j in range(i + 1, d):
            e = np.zeros((d, d), complex)
            e[i, j] = e[j, i] = 1 / np.sqrt(2)
            out.append(e)
            e = np.zeros((d, d), complex)
            e[i, j] = -1j / np.sqrt(2)
            e[j, i] = 1j / np.sqrt(2)
            out.append(e)
    return np.stack(out)


@dataclass(frozen=True, eq=False)
class AffineSet:
    """{C : Tr(A_k C) = b_k} for Hermitian A_k; redundant rows are allowed."""

    ops: np.ndarray   # (K, d, d)
    rhs: np.ndarray   # (K,)

    def __post_init__(self):
        a = self.ops.reshape(len(self.ops), -1)
        # Tr(A C) = vec(A^T) . vec(C); A Hermitian so A^T = conj(A)
        object.__setattr__(self, "_flat", a)
        object.__setattr__(self, "_rows", a.conj())
        u, s, vh = np.linalg.svd(a.conj() @ a.T, hermitian=True)
        inv = np.where(s > 1e-10 * s[0], 1.0 / np.where(s > 0, s, 1.0), 0.0)
        object.__setattr__(self, "_gram_pinv", (u * inv) @ vh)

    def values(self, c: np.ndarray) -> np.ndarray:
        return (self._rows @ c.reshape(-1)).real

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        d = self.ops.shape[1]
        return (y @ self._flat).reshape(d, d)

    def residual(self, c: np.ndarray) -> float:
        return float(np.max(np.abs(self.values(c) - self.rhs)))

    def project(self, c: np.ndarray) -> np.ndarray:
        y = self._gram_pinv @ (self.values(c) - self.rhs)
        return hermitize(c - self.adjoint(y))

    def __add__(self, other: "AffineSet") -> "AffineSet":
        return AffineSet(np.concatenate([self.ops, other.ops]), np.concatenate([self.rhs, other.rhs]))


def tp_constraints(d_in: int, d_out: int) -> AffineSet:
    basis = herm_basis(d_in)
    ops = np.stack([np.kron(e, np.eye(d_out)) for e in basis])
    return AffineSet(ops, np.trace(basis, axis1=1, axis2=2).real)


def output_constraints(sigmas, targets, d_out: int, d_env: int = 1) -> AffineSet:
    """Tr_Env N(sigma_x) = target_x for Choi matrices of maps In -> Out (x) Env."""
    basis = herm_basis(d_out)
    ops, rhs = [], []
    for s, t in zip(sigmas, targets):
        for f in basis:
            ops.append(np.kron(np.asarray(s).T, np.kron(f, np.eye(d_env))))
            rhs.append(np.trace(f @ t).real)
    return AffineSet(np.stack(ops), np.array(rhs))


def _dual_newton(m: np.ndarray, aff: AffineSet, y: np.ndarray, tol: float, max_iter: int = 60):
    """Semismooth Newton on the projection dual; returns (y, residual) or None on stall."""
    ops, rhs = aff.ops, aff.rhs

    def parts(yv):
        w, v = np.linalg.eigh(m + aff.adjoint(yv))
        wp = np.clip(w, 0.0, None)
        c = (v * wp) @ v.conj().T
        return w, v, wp, c, 0.5 * float(np.sum(wp ** 2)) - float(rhs @ yv)

    w, v, wp, c, theta = parts(y)
    for _ in range(max_iter):
        grad = aff.values(c) - rhs
        res = float(np.max(np.abs(grad)))
        if res <= tol:
            return y, res
        dw = w[:, None] - w[None, :]
        same = np.abs(dw) < 1e-14
        omega = np.where(same, (w[:, None] > 0).astype(float), (wp[:, None] - wp[None, :]) / np.where(same, 1.0, dw))
        b = (v.conj().T[None] @ ops @ v[None]).reshape(len(ops), -1)
        h = ((b.conj() * omega.reshape(-1)) @ b.T).real
        # regularize by the residual so steps stay well defined where the Hessian is singular
        h += (min(1e-2, res) + 1e-12) * np.eye(len(h))
        step = -np.linalg.solve(h, grad)
        slope = float(grad @ step)
        if slope >= 0:
            step, slope = -grad, -float(grad @ grad)
        t = 1.0
        gnorm = float(np.linalg.norm(grad))
        while t > 1e-10:
            w2, v2, wp2, c2, th2 = parts(y + t * step)
            # near the solution theta stalls at rounding level; the residual still shows progress
            if th2 <= theta + 1e-4 * t * slope or np.linalg.norm(aff.values(c2) - rhs) <= 0.9 * gnorm:
                break
            t *= 0.5
        else:
            return None
        y, w, v, wp, c, theta = y + t * step, w2, v2, wp2, c2, th2
    return None


def project_psd_affine(m: np.ndarray, aff: AffineSet, tol: float = 1e-10, max_iter: int = 3000,
                       y0: np.ndarray | None = None) -> tuple[np.ndarray, float, np.ndarray]:
    """Euclidean projection of Hermitian ``m`` onto {C >= 0} intersected with ``aff``.

    Minimizes the smooth dual ``1/2 ||(m + A*y)_+||^2 - <b, y>``: semismooth
    Newton first, L-BFGS if Newton stalls, then a few alternating polish steps.
    Returns (C, max constraint residual, dual solution).
    """
    m = hermitize(np.asarray(m, complex))
    y = np.zeros(len(aff.rhs)) if y0 is None else y0
    out = _dual_newton(m, aff, y, tol)
    if out is not None:
        y = out[0]
    else:
        from scipy.optimize import minimize

        def dual(yv):
            w, v = np.linalg.eigh(m + aff.adjoint(yv))
            w = np.clip(w, 0.0, None)
            c = (v * w) @ v.conj().T
            return 0.5 * float(np.sum(w ** 2)) - float(aff.rhs @ yv), aff.values(c) - aff.rhs

        y = minimize(dual, y, jac=True, method="L-BFGS-B",
                     options={"maxiter": max_iter, "gtol": tol * 1e-2, "ftol": 1e-16, "maxcor": 30}).x
    c = _psd_part(m + aff.adjoint(y))
    err = aff.residual(c)
    for _ in range(50):
        if err <= tol:
            break
        c = _psd_part(aff.project(c))
        err = aff.residual(c)
    return c, err, y


class AffineProjector:
    """Callable projection onto PSD intersected with ``aff`` that warm-starts from its last dual."""

    def __init__(self, aff: AffineSet, tol: float = 1e-10):
        self.aff, self.tol = aff, tol
        self._y = None

    def __call__(self, m: np.ndarray) -> np.ndarray:
        c, _, self._y = project_psd_affine(m, self.aff, self.tol, y0=self._y)
        return c


# -- constructors ----------------------------------------------------------------

def identity(d: int) -> Channel:
    v = np.eye(d).reshape(-1)
    return Channel(np.outer(v, v), d, d)


def replacer(sigma: np.ndarray, d_in: int | None = None) -> Channel:
    sigma = np.asarray(sigma, complex)
    d_in = sigma.shape[0] if d_in is None else d_in
    return Channel(np.kron(np.eye(d_in), sigma), d_in, sigma.shape[0])


def dephasing(basis: np.ndarray | int) -> Channel:
    """Measure-and-reprepare in an orthonormal basis (columns of ``basis``)."""
    b = np.eye(basis) if isinstance(basis, (int, np.integer)) else np.asarray(basis, complex)
    ops = [np.outer(b[:, k], b[:, k].conj()) for k in range(b.shape[1])]
    return from_kraus(ops)


def depolarizing(d: int, p: float) -> Channel:
    """``rho -> (1-p) rho + p Tr(rho) I/d``."""
    return Channel((1 - p) * identity(d).choi + p * np.eye(d * d) / d, d, d)


def partial_trace_channel(dims: Sequence[int], keep: Sequence[int]) -> Channel:
    """Channel tracing out every factor not listed in ``keep`` (kept order as given)."""
    dims = list(dims)
    keep = list(keep)
    drop = [i for i in range(len(dims)) if i not in keep]
    d_in = int(np.prod(dims))
    d_out = int(np.prod([dims[i] for i in keep])) if keep else 1
    d_drop = int(np.prod([dims[i] for i in drop])) if drop else 1
    ops = [np.zeros((d_out, d_in), complex) for _ in range(d_drop)]
    for col in range(d_in):
        idx = np.unravel_index(col, dims)
        kept = int(np.ravel_multi_index([idx[i] for i in keep], [dims[i] for i in keep])) if keep else 0
        dropped = int(np.ravel_multi_index([idx[i] for i in drop], [dims[i] for i in drop])) if drop else 0
        ops[dropped][kept, col] = 1.0
    return from_kraus(ops)


def random_channel(d_in: int, d_out: int, rng: np.random.Generator, rank: int | None = None) -> Channel:
    """Random channel from a Haar-like random isometry In -> Out (x) Env."""
    r = d_in * d_out if rank is None else rank
    if d_out * r < d_in:
        raise ValueError(f"rank {r} too small for an isometry {d_in} -> {d_out} x env")
    g = rng.standard_normal((d_out * r, d_in)) + 1j * rng.standard_normal((d_out * r, d_in))
    q, _ = np.linalg.qr(g)
    return from_isometry(q, d_out, check=False)


# -- JSON ------------------------------------------------------------------------

def to_json(ch: Channel) -> dict:
    from .io import matrix_to_json

    return {"choi": matrix_to_json(ch.choi), "dimIn": ch.dim_in, "dimOut": ch.dim_out}


def from_json(obj: dict) -> Channel:
    from .io import matrix_from_json

    return Channel(matrix_from_json(obj["choi"]), int(obj["dimIn"]), int(obj["dimOut"]))
