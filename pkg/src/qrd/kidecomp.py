"""Koashi-Imoto decomposition of an ensemble into classical, redundant and quantum parts.

The decomposition is read off the minimal sufficient *-algebra of the family
{p_x rho_x}. On the support of the average state w, that algebra is generated by
the ratios T_x = w^{-1/2} p_x rho_x w^{-1/2} together with closure under
conjugation by w (the modular group of w). Its block structure
``(+)_c M(d_c) (x) I(m_c)`` gives Q_c (dimension d_c, where the algebra acts
irreducibly) and N_c (multiplicity m_c, carrying omega_c).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import Channel, from_kraus
from .ensemble import Ensemble
from .qcore import DensityOp, entropy_of, hermitize

SUPPORT_TOL = 1e-10
REL_GAP = 1e-6


class KIError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class KIBlock:
    dim_q: int
    dim_n: int
    omega: np.ndarray          # state on N_c
    p_c_given_x: np.ndarray    # shape (n,)
    rho_cx: np.ndarray         # shape (n, d_q, d_q); zero where p_{c|x} = 0
    vectors: np.ndarray        # columns: A-space vectors for |k>^N |q>^Q, k major


@dataclass(frozen=True, eq=False)
class KIDecomposition:
    """Block data plus the KI isometry ``iso`` (rows: padded C (x) N (x) Q, columns: A).

    ``iso^dag iso`` is the projector onto the joint support of the ensemble; on
    full-support ensembles it is the identity.
    """

    blocks: tuple[KIBlock, ...]
    probs: np.ndarray
    dim_a: int
    support: np.ndarray
    seed: int
    residual: float = field(default=0.0)

    @property
    def dim_c(self) -> int:
        return len(self.blocks)

    @property
    def dim_n(self) -> int:
        return max(b.dim_n for b in self.blocks)

    @property
    def dim_q(self) -> int:
        return max(b.dim_q for b in self.blocks)

    @property
    def iso(self) -> np.ndarray:
        dn, dq = self.dim_n, self.dim_q
        u = np.zeros((self.dim_c * dn * dq, self.dim_a), complex)
        for c, b in enumerate(self.blocks):
            for k in range(b.dim_n):
                for q in range(b.dim_q):
                    row = (c * dn + k) * dq + q
                    u[row] = b.vectors[:, k * b.dim_q + q].conj()
        return u

    def omega_cnqx(self) -> np.ndarray:
        """sum_x p_x sum_c p_{c|x} |c><c| (x) omega_c (x) rho_cx (x) |x><x| in the padded space."""
        n = len(self.probs)
        dn, dq = self.dim_n, self.dim_q
        dim = self.dim_c * dn * dq
        out = np.zeros((dim * n, dim * n), complex)
        for x in range(n):
            out += self.probs[x] * np.kron(self.state_x(x), np.diag(np.eye(n)[x]))
        return out

    def state_x(self, x: int) -> np.ndarray:
        dn, dq = self.dim_n, self.dim_q
        out = np.zeros((self.dim_c * dn * dq,) * 2, complex)
        for c, b in enumerate(self.blocks):
            om = np.zeros((dn, dn), complex)
            om[: b.dim_n, : b.dim_n] = b.omega
            rq = np.zeros((dq, dq), complex)
            rq[: b.dim_q, : b.dim_q] = b.rho_cx[x]
            cc = np.zeros((self.dim_c, self.dim_c))
            cc[c, c] = 1.0
            out += b.p_c_given_x[x] * np.kron(cc, np.kron(om, rq))
        return out

    def omega_cq(self) -> np.ndarray:
        """omega^{CQ} = sum_x p_x sum_c p_{c|x} |c><c| (x) rho_cx (padded Q)."""
        dq = self.dim_q
        out = np.zeros((self.dim_c * dq,) * 2, complex)
        for c, b in enumerate(self.blocks):
            avg = np.einsum("x,x,xij->ij", self.probs, b.p_c_given_x, b.rho_cx)
            out[c * dq: c * dq + b.dim_q, c * dq: c * dq + b.dim_q] = avg
        return out

    def table(self) -> list[dict]:
        return [
            {"c": c, "dimQ": b.dim_q, "dimN": b.dim_n, "p_c_given_x": [float(v) for v in b.p_c_given_x]}
            for c, b in enumerate(self.blocks)
        ]


# -- algebra machinery ---------------------------------------------------------

def _invariant_commutant(gens: list[np.ndarray], w: np.ndarray, tol: float) -> list[np.ndarray]:
    """Largest subspace of the generators' commutant that is invariant under Ad(w), w unitary.

    Its commutant is the smallest *-algebra containing ``gens`` and closed under
    Ad(w). Working with null spaces and subspace intersections avoids the error
    growth of building the algebra from products.
    """
    comm = _commutant(gens, tol)
    w_inv = w.conj().T
    for _ in range(w.shape[0] ** 2):
        img = _intersection(comm, [w @ c @ w_inv for c in comm], tol)
        img = _intersection(img, [w_inv @ c @ w for c in comm], tol) if img else img
        if len(img) == len(comm):
            return comm
        comm = img
    raise KIError("modular closure did not stabilize")


def _commutant(mats: list[np.ndarray], tol: float) -> list[np.ndarray]:
    """Basis of {Y : [Y, M] = 0 for all M in mats} via the null space of the stacked map."""
    s = mats[0].shape[0]
    eye = np.eye(s)
    rows = []
    for m in mats:
        # vec(Y M - M Y) with row-major vec: (I (x) M^T - M (x) I) vec(Y)
        rows.append(np.kron(eye, m.T) - np.kron(m, eye))
    big = np.vstack(rows)
    # economy SVD when tall: vh is already square then
    _, sv, vh = np.linalg.svd(big, full_matrices=big.shape[0] < big.shape[1])
    scale = max(sv[0], 1.0) if sv.size else 1.0
    null = [vh[k].conj().reshape(s, s) for k in range(vh.shape[0]) if k >= sv.size or sv[k] < tol * scale]
    return null


def _intersection(a: list[np.ndarray], b: list[np.ndarray], tol: float) -> list[np.ndarray]:
    s = a[0].shape[0]
    ma = np.stack([m.reshape(-1) for m in a], axis=1)
    mb = np.stack([m.reshape(-1) for m in b], axis=1)
    qa, _ = np.linalg.qr(ma)
    qb, _ = np.linalg.qr(mb)
    u, sv, _ = np.linalg.svd(qa.conj().T @ qb)
    out = []
    for k, val in enumerate(sv):
        # principal angle below sqrt(2e-6 tol)
        if val > 1 - 1e-6 * tol:
            out.append((qa @ u[:, k]).reshape(s, s))
    return out


def _cluster(vals: np.ndarray) -> list[list[int]]:
    order = np.argsort(vals)
    spread = max(np.max(np.abs(vals)), 1.0)
    groups = [[int(order[0])]]
    for a, b in zip(order[:-1], order[1:]):
        if vals[b] - vals[a] > REL_GAP * spread:
            groups.append([])
        groups[-1].append(int(b))
    return groups


def _rand_combo(mats: list[np.ndarray], rng: np.random.Generator, hermitian: bool) -> np.ndarray:
    coef = rng.standard_normal(len(mats)) + 1j * rng.standard_normal(len(mats))
    m = sum(c * x for c, x in zip(coef, mats))
    return hermitize(m) if hermitian else m


def ki_decompose(e: Ensemble, tol: float = 1e-9, seed: int = 0) -> KIDecomposition:
    """Decompose the A-part of ``e`` (side information is not part of the structure)."""
    if not (1e-12 <= tol <= 1e-6):
        raise ValueError("tol must lie in [1e-12, 1e-6]")
    rng = np.random.default_rng(seed)
    probs = e.probs
    rhos = np.stack([it.rho for it in e.items])
    avg = np.einsum("x,xij->ij", probs, rhos)
    lam, vec = np.linalg.eigh(hermitize(avg))
    keep = lam > SUPPORT_TOL
    sup = vec[:, keep]
    lam = lam[keep]
    s = sup.shape[1]
    # Closing under Ad(avg) is the same as closing under Ad(avg^{it}) for one t
    # that keeps distinct eigenvalue ratios at distinct phases; the latter is unitary.
    spread = float(np.log(lam.max() / lam.min()))
    w = np.diag(np.exp(1j * np.log(lam) / (spread + 1.0)))
    wm12 = np.diag(lam ** -0.5)
    gens = [hermitize(wm12 @ (probs[x] * sup.conj().T @ rhos[x] @ sup) @ wm12) for x in range(e.n)]
    alg_tol = max(tol, 1e-9) * 10
    comm = _invariant_commutant(gens, w, alg_tol)
    alg = _commutant(comm, alg_tol)
    center = _intersection(alg, comm, alg_tol)

    z = _rand_combo(center, rng, hermitian=True)
    zv, zu = np.linalg.eigh(z)
    block_groups = _cluster(zv)

    blocks = []
    for grp in block_groups:
        pc = zu[:, grp]                      # basis of the central block (s x n_c)
        h = _rand_combo(comm, rng, hermitian=True)
        hv, hu = np.linalg.eigh(hermitize(pc.conj().T @ h @ pc))
        copies = _cluster(hv)
        m_c = len(copies)
        d_c = len(copies[0])
        if any(len(g) != d_c for g in copies):
            raise KIError("commutant eigenspaces have unequal dimension; structure not resolved")
        spaces = [pc @ hu[:, g] for g in copies]
        vectors = [spaces[0]]
        for k in range(1, m_c):
            for _attempt in range(5):
                g = _rand_combo(comm, rng, hermitian=False)
                mk = spaces[k].conj().T @ g @ spaces[0]
                sv = np.linalg.svd(mk, compute_uv=False)
                if sv[-1] > 1e-6 * max(sv[0], 1e-300):
                    break
            else:
                raise KIError("could not align multiplicity copies")
            u, _, vh = np.linalg.svd(mk)
            vectors.append(spaces[k] @ (u @ vh))
        # columns ordered k major, q minor
        vecs_s = np.concatenate(vectors, axis=1)
        vecs_a = sup @ vecs_s
        n = e.n
        pcx = np.zeros(n)
        rcx = np.zeros((n, d_c, d_c), complex)
        om_acc = np.zeros((m_c, m_c), complex)
        for x in range(n):
            r = vecs_a.conj().T @ rhos[x] @ vecs_a
            t = np.trace(r).real
            pcx[x] = max(t, 0.0)
            if t > tol:
                r4 = r.reshape(m_c, d_c, m_c, d_c)
                rcx[x] = hermitize(np.einsum("kakb->ab", r4) / t)
                om_acc += probs[x] * np.einsum("kala->kl", r4)
        q = float(probs @ pcx)
        omega = hermitize(om_acc / q) if q > 0 else np.eye(m_c) / m_c
        blocks.append(KIBlock(d_c, m_c, omega, pcx, rcx, vecs_a))

    # deterministic presentation: heavier blocks first, then larger Q
    weights = [float(probs @ b.p_c_given_x) for b in blocks]
    order = sorted(range(len(blocks)), key=lambda i: (-round(weights[i], 12), -blocks[i].dim_q, -blocks[i].dim_n,
                                                   int(np.argmax(blocks[i].p_c_given_x > tol))))
    blocks = [blocks[i] for i in order]
    dec = KIDecomposition(tuple(blocks), probs, e.dim_a, sup, seed)
    res = reconstruction_residual(dec, e)
    object.__setattr__(dec, "residual", res)
    return dec


def reconstruction_residual(d: KIDecomposition, e: Ensemble) -> float:
    u = d.iso
    res = 0.0
    for x, it in enumerate(e.items):
        res = max(res, float(np.max(np.abs(u @ it.rho @ u.conj().T - d.state_x(x)))))
    return res


# -- checks ------------------------------------------------------------------------

def commutant_dim(ops: list[np.ndarray], tol: float = 1e-8) -> int:
    """Dimension of the commutant of a set of Hermitian operators."""
    ops = [o for o in ops if np.max(np.abs(o), initial=0.0) > 0]
    if not ops:
        return 1
    d = ops[0].shape[0]
    eye = np.eye(d)
    big = np.vstack([np.kron(eye, o.T) - np.kron(o, eye) for o in ops])
    sv = np.linalg.svd(big, compute_uv=False)
    scale = max(sv[0], 1.0)
    return int(np.sum(sv < tol * scale)) + (d * d - sv.size)


def find_intertwiner(a: KIBlock, b: KIBlock, tol: float = 1e-8, per_x_alpha: bool = False) -> np.ndarray | None:
    """Unitary V with V (p_{c|x} rho_cx) = alpha (p_{c'|x} rho_c'x) V for all x, or None.

    By default alpha must not depend on x: only then are the two blocks copies of
    one block carrying no information about x. ``per_x_alpha=True`` lets alpha vary
    with x, which also pairs up genuinely classical one-dimensional blocks.
    """
    if a.dim_q != b.dim_q:
        return None
    pa, pb = a.p_c_given_x, b.p_c_given_x
    if np.any((pa > tol) != (pb > tol)):
        return None
    on = pa > tol
    if not per_x_alpha and on.any():
        ratio = pa[on] / pb[on]
        if np.ptp(ratio) > 1e-6 * ratio.max():
            return None
    d = a.dim_q
    eye = np.eye(d)
    rows = []
    for x in range(len(pa)):
        if pa[x] > tol:
            # alpha_x fixed by taking traces: V rho_cx = rho_c'x V
            rows.append(np.kron(eye, a.rho_cx[x].T) - np.kron(b.rho_cx[x], eye))
    if not rows:
        return np.eye(d)
    big = np.vstack(rows)
    _, sv, vh = np.linalg.svd(big)
    full = np.concatenate([sv, np.zeros(d * d - sv.size)]) if sv.size < d * d else sv
    if full[-1] > tol * max(sv[0], 1.0):
        return None
    v = vh[-1].conj().reshape(d, d)
    vs = np.linalg.svd(v, compute_uv=False)
    if vs[-1] < 1e-6 * vs[0]:
        return None
    u, _, wh = np.linalg.svd(v)
    return u @ wh


@dataclass
class KIReport:
    residual: float
    commutant_dims: list[int]
    intertwiners: list[tuple[int, int]]
    passed: bool

    def lines(self) -> list[str]:
        return [
            f"reconstruction residual: {self.residual:.3e}",
            f"per-block commutant dims: {self.commutant_dims}",
            "inter-block intertwiners: " + ("none found" if not self.intertwiners else str(self.intertwiners)),
            "PASS" if self.passed else "FAIL",
        ]


def verify_ki(d: KIDecomposition, e: Ensemble, tol: float = 1e-7) -> KIReport:
    res = reconstruction_residual(d, e)
    dims = []
    for b in d.blocks:
        ops = [b.p_c_given_x[x] * b.rho_cx[x] for x in range(len(b.p_c_given_x))]
        dims.append(commutant_dim(ops, 1e-8))
    pairs = []
    for i in range(len(d.blocks)):
        for j in range(i + 1, len(d.blocks)):
            if find_intertwiner(d.blocks[i], d.blocks[j]) is not None:
                pairs.append((i, j))
    ok = res <= tol and all(k == 1 for k in dims) and not pairs
    return KIReport(res, dims, pairs, ok)


# -- rates and KI operations ----------------------------------------------------------

def blind_rate(e: Ensemble, dec: KIDecomposition | None = None) -> float:
    """S(CQ) of omega^{CQ}, the optimal blind rate."""
    dec = ki_decompose(e) if dec is None else dec
    return entropy_of(dec.omega_cq())


def k_off(dec: KIDecomposition) -> Channel:
    """Channel A -> C (x) Q (padded) discarding the redundant part."""
    dn, dq, dc = dec.dim_n, dec.dim_q, dec.dim_c
    ops = []
    for k in range(dn):
        op = np.zeros((dc * dq, dec.dim_a), complex)
        for c, b in enumerate(dec.blocks):
            if k < b.dim_n:
                for q in range(b.dim_q):
                    op[c * dq + q] = b.vectors[:, k * b.dim_q + q].conj()
        ops.append(op)
    # states outside the support go to |c=0, q=0>
    sup = dec.support
    kernel = np.eye(dec.dim_a) - sup @ sup.conj().T
    kw, kv = np.linalg.eigh(hermitize(kernel))
    for val, v in zip(kw, kv.T):
        if val > 0.5:
            op = np.zeros((dc * dq, dec.dim_a), complex)
            op[0] = v.conj()
            ops.append(op)
    return from_kraus(ops)


def k_on(dec: KIDecomposition) -> Channel:
    """Channel C (x) Q -> A re-attaching omega_c to the redundant part of block c."""
    dq, dc = dec.dim_q, dec.dim_c
    ops = []
    used = np.zeros(dc * dq, bool)
    for c, b in enumerate(dec.blocks):
        lam, fv = np.linalg.eigh(hermitize(b.omega))
        for val, f in zip(lam, fv.T):
            if val <= 1e-14:
                continue
            op = np.zeros((dec.dim_a, dc * dq), complex)
            for q in range(b.dim_q):
                col = c * dq + q
                vec = sum(f[k] * b.vectors[:, k * b.dim_q + q] for k in range(b.dim_n))
                op[:, col] = np.sqrt(val) * vec
            ops.append(op)
        used[c * dq: c * dq + b.dim_q] = True
    # padded Q slots are mapped to a fixed support vector
    anchor = dec.blocks[0].vectors[:, 0]
    for col in np.flatnonzero(~used):
        op = np.zeros((dec.dim_a, dc * dq), complex)
        op[:, col] = anchor
        ops.append(op)
    return from_kraus(ops)


def ki_off(dec: KIDecomposition, rho: DensityOp, on: str = "A") -> DensityOp:
    from .channel import apply

    return apply(k_off(dec), rho, on, out_label="CQ")


def ki_on(dec: KIDecomposition, omega: DensityOp, on: str = "CQ") -> DensityOp:
    from .channel import apply

    return apply(k_on(dec), omega, on, out_label="A")


def preserving_channel(dec: KIDecomposition, rng: np.random.Generator) -> Channel:
    """Random channel A -> A of the block form that leaves every rho_x invariant.

    Each block applies a random unitary on N_c that commutes with omega_c
    (a random phase per eigenvector of omega_c), identity on Q_c.
    """
    ops = []
    u_total = np.zeros((dec.dim_a, dec.dim_a), complex)
    for b in dec.blocks:
        lam, fv = np.linalg.eigh(hermitize(b.omega))
        phases = np.exp(2j * np.pi * rng.random(b.dim_n))
        # degenerate eigenspaces of omega_c admit a full random unitary
        uc = np.zeros((b.dim_n, b.dim_n), complex)
        i = 0
        while i < b.dim_n:
            j = i
            while j + 1 < b.dim_n and abs(lam[j + 1] - lam[i]) < 1e-9:
                j += 1
            blk = fv[:, i: j + 1]
            from .qcore import random_unitary

            r = random_unitary(j - i + 1, rng) * phases[i]
            uc += blk @ r @ blk.conj().T
            i = j + 1
        full = np.kron(uc, np.eye(b.dim_q))
        u_total += b.vectors @ full @ b.vectors.conj().T
    sup = dec.support
    u_total += np.eye(dec.dim_a) - sup @ sup.conj().T
    ops.append(u_total)
    return from_kraus(ops, check=False)
