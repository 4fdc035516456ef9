"""Entanglement of purification and the unassisted rate bounds g_k(D).

For a channel N: AJ -> B with purified output tau^{B W}, minimizing S(B E_B)
over channels on the purifying system is the same as minimizing S(M(rho^{AJ}))
over all channels M: AJ -> B (x) E_B whose B-marginal is N. The unassisted
solver therefore optimizes M directly:

    g_k(D) = (1/k) min { S(M(rho^{AJ (x) k})) : Delta_ave(Tr_{E_B} M) <= D }.

The visible rate uses that E_p(B:X) of a cq state is the least S(sum_x p_x w_x)
over extensions w_x of its conditional states.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .channel import (
    AffineProjector,
    AffineSet,
    Channel,
    choi_adjoint,
    choi_apply,
    herm_basis,
    tp_constraints,
)
from .distortion import Distortion
from .ensemble import Ensemble, strip_side_info, tensor_power, visible
from .kidecomp import ki_decompose
from .optim import SolverOpts, augmented_lagrangian, entropy_and_grad, lambda_sweep, pgd, restore_feasibility
from .qcore import DensityOp, entropy_of, hermitize, permute_matrix, ptrace, purification_vectors
from .rdsolver import (
    EXACT_D,
    FEAS_SLACK,
    ChannelDistortion,
    RDPoint,
    _choi_of,
    _wishart_choi,
    faithful_choi,
    rea_point,
    solve_channel_problem,
)

TOL_K_ORDER = 0.02


@dataclass
class EpEstimate:
    upper: float
    lower: float
    channel: Channel
    restarts_used: int
    restart_spread: float = 0.0
    values: list = field(default_factory=list)


# -- entanglement of purification -------------------------------------------------

def _random_start(d_in: int, d_out: int, rng: np.random.Generator) -> np.ndarray:
    return _wishart_choi(d_in, d_out, rng)


def ep(rho: DensityOp, part_a, part_r, opts: SolverOpts | None = None, dim_out: int | None = None) -> EpEstimate:
    """Estimate E_p(A:R): least S(A A'') over channels A' -> A'' on the purifying system.

    The lower value is max(I(A:R)/2, 0), a standard bound that is not tight in general.
    """
    opts = SolverOpts(restarts=20) if opts is None else opts
    part_a, part_r = list(part_a), list(part_r)
    labels = list(rho.layout.labels)
    if sorted(part_a + part_r) != sorted(labels) or set(part_a) & set(part_r) or not part_a or not part_r:
        raise ValueError(f"{part_a} and {part_r} do not partition the labels {labels}")
    lay = rho.layout
    m = permute_matrix(rho.matrix, lay.dims, [lay.index(l) for l in part_a + part_r])
    da, dr = lay.dim_of(part_a), lay.dim_of(part_r)
    pv = purification_vectors(m)                   # (A R) x A'
    dp = pv.shape[1]
    psi = pv.reshape(da, dr, dp)
    # rho^{A' A}[(a' a), (b' b)] = sum_r psi[a, r, a'] conj psi[b, r, b']
    r_pa = np.einsum("xrp,yrq->pxqy", psi, psi.conj()).reshape(dp * da, dp * da)
    s_a = entropy_of(ptrace(m, (da, dr), [0]))
    s_r = entropy_of(ptrace(m, (da, dr), [1]))
    lower = max(0.5 * (s_a + s_r - entropy_of(m)), 0.0)
    d_out = dp if dim_out is None else dim_out

    vals, chans, n_starts = extension_search(r_pa, dp, da, d_out, opts)
    best = int(np.argmin(vals))
    upper = max(float(vals[best]), lower)
    return EpEstimate(upper, lower, Channel(hermitize(chans[best]), dp, d_out, check=False),
                      n_starts, float(max(vals) - min(vals)), [float(v) for v in vals])


def extension_search(state: np.ndarray, d_ext: int, d_keep: int, d_out: int, opts: SolverOpts):
    """Minimize S(Lambda(Ext) Keep) over channels Lambda: Ext -> d_out.

    ``state`` lives on Ext (x) Keep. Starts: full trace, identity (when it fits),
    then ``opts.restarts`` random channels. Returns (values, Choi matrices, #starts).
    """
    def f(c):
        t = choi_apply(c, d_ext, d_out, state, d_keep)
        val, g = entropy_and_grad(t)
        return val, choi_adjoint(state, g, d_ext, d_out, d_keep)

    rng = np.random.default_rng(opts.seed)
    fixed = np.zeros((d_out, d_out), complex)
    fixed[0, 0] = 1.0
    starts = [np.kron(np.eye(d_ext), fixed)]
    if d_out >= d_ext:
        ident = np.zeros((d_ext * d_out,) * 2, complex)
        for i in range(d_ext):
            for j in range(d_ext):
                ident[i * d_out + i, j * d_out + j] = 1.0
        starts.append(ident)
    starts += [_random_start(d_ext, d_out, rng) for _ in range(opts.restarts)]
    aff = tp_constraints(d_ext, d_out)
    vals, chans = [], []
    for x0 in starts:
        res = pgd(f, AffineProjector(aff), x0, opts)
        vals.append(res.value)
        chans.append(res.x)
    return vals, chans, len(starts)


# -- per-copy averaged distortion for k copies ----------------------------------------

class PerCopyDistortion:
    """Delta_ave over k copies, evaluated on conditional outputs tau_{x_1..x_k} on B^k.

    ``refs`` holds the product references; pinning outputs to them is sufficient
    (not necessary) for zero distortion.
    """

    def __init__(self, base: Distortion, k: int):
        self.base, self.k = base, k
        self.probs = np.array([np.prod(c) for c in itertools.product(base.probs, repeat=k)])
        refs = []
        for combo in itertools.product(range(base.n), repeat=k):
            r = np.ones((1, 1), complex)
            for x in combo:
                r = np.kron(r, base.refs[x])
            refs.append(r)
        self.refs = np.stack(refs)
        self.kind = base.kind
        letters = "abcdefghijklmnopqrstuvwxyz"
        self._xs = letters[:k]
        self._rows = letters[k:2 * k]
        self._cols = letters[2 * k:3 * k]

    @property
    def n(self) -> int:
        return len(self.probs)

    @property
    def dim_b(self) -> int:
        return self.base.dim_b ** self.k

    def _marginal_spec(self, i: int) -> tuple[str, str]:
        xs, rows, cols = self._xs, self._rows, self._cols
        cols_tr = "".join(cols[j] if j == i else rows[j] for j in range(self.k))
        weights = ",".join(xs[j] for j in range(self.k) if j != i)
        src = xs + rows + cols_tr + ("," + weights if weights else "")
        return src, xs[i] + rows[i] + cols[i]

    def cq_value_grad(self, taus: np.ndarray, grad: bool = True):
        n1, db, k = self.base.n, self.base.dim_b, self.k
        t = taus.reshape((n1,) * k + (db,) * (2 * k))
        val = 0.0
        g = np.zeros_like(t) if grad else None
        p = self.base.probs
        eye = np.eye(db)
        for i in range(k):
            src, dst = self._marginal_spec(i)
            marg = np.einsum(src + "->" + dst, t, *([p] * (k - 1)))
            v, gi = self.base.cq_value_grad(marg, grad)
            val += v / k
            if grad:
                # spread g_i over the other copies: weights p_{x_j}, identity on B_j
                xs, rows, cols = self._xs, self._rows, self._cols
                ops = [gi] + [p] * (k - 1) + [eye] * (k - 1)
                subs = [xs[i] + rows[i] + cols[i]]
                subs += [xs[j] for j in range(k) if j != i]
                subs += [rows[j] + cols[j] for j in range(k) if j != i]
                g += np.einsum(",".join(subs) + "->" + xs + rows + cols, *ops) / k
        if grad:
            d = db ** k
            g = g.reshape(self.n, d, d)
        return val, g

    def cq_value(self, taus: np.ndarray) -> float:
        return self.cq_value_grad(taus, grad=False)[0]


def _distortion_for(dist: Distortion, k: int):
    return dist if k == 1 else PerCopyDistortion(dist, k)


# -- unassisted rate ----------------------------------------------------------------

class UnassistedProblem:
    """S(M(rho^{AJ})) for M: AJ -> B (x) E_B."""

    def __init__(self, e: Ensemble, dist, dim_b: int, dim_env: int):
        self.e, self.dim_b, self.dim_env = e, dim_b, dim_env
        self.d_in = e.dim_in
        self.d_out = dim_b * dim_env
        self.rho = e.average_input
        self.dmap = ChannelDistortion(dist, e.sigmas, self.d_in, dim_b, dim_env)

    def __call__(self, c: np.ndarray):
        t = choi_apply(c, self.d_in, self.d_out, self.rho)
        val, g = entropy_and_grad(t)
        return val, choi_adjoint(self.rho, g, self.d_in, self.d_out)

    def anchor(self) -> np.ndarray:
        return faithful_choi(self.e, self.dim_b, self.dim_env)


def ki_seed_choi(e: Ensemble, dim_b: int, dim_env: int, seed: int = 0) -> np.ndarray | None:
    """M = (attach purified redundant part) o K_off, on the A-part; J is discarded.

    Its output entropy is S(CQ) and its B-marginal reproduces every rho_x.
    """
    dec = ki_decompose(strip_side_info(e), seed=seed)
    dn, dq, dc, da = dec.dim_n, dec.dim_q, dec.dim_c, e.dim_a
    purs = [purification_vectors(b.omega) for b in dec.blocks]
    if max(p.shape[1] for p in purs) > dim_env or dim_b < da:
        return None
    w = np.zeros((dc * dn * dq * dim_env, dc * dq), complex)
    for c, (b, pv) in enumerate(zip(dec.blocks, purs)):
        for q in range(b.dim_q):
            for kk in range(b.dim_n):
                for r in range(pv.shape[1]):
                    w[(((c * dn + kk) * dq + q) * dim_env) + r, c * dq + q] = pv[kk, r]
    back = np.kron(dec.iso.conj().T, np.eye(dim_env))        # (A E) x (CNQ E)
    from .kidecomp import k_off

    embed = np.zeros((dim_b * dim_env, da * dim_env))
    for a in range(da):
        for r in range(dim_env):
            embed[a * dim_env + r, a * dim_env + r] = 1.0
    ops = []
    for kop in k_off(dec).kraus():
        base = embed @ back @ w @ kop                        # (B E) x A
        for j in range(e.dim_j):
            bra = np.zeros((1, e.dim_j))
            bra[0, j] = 1.0
            ops.append(np.kron(base, bra))
    return _choi_of(ops)


def _reorder_tensor_choi(c1: np.ndarray, e1: Ensemble, dim_b: int, dim_env: int) -> np.ndarray:
    """Choi of M (x) M as a map (A A)(J J) -> (B B)(E E)."""
    ch = Channel(hermitize(c1), e1.dim_in, dim_b * dim_env, check=False)
    ks = ch.kraus()
    da, dj = e1.dim_a, e1.dim_j
    ops = []
    for ka in ks:
        for kb in ks:
            op = np.kron(ka, kb)  # rows (B1 E1 B2 E2), cols (A1 J1 A2 J2)
            op = op.reshape(dim_b, dim_env, dim_b, dim_env, da, dj, da, dj)
            op = op.transpose(0, 2, 1, 3, 4, 6, 5, 7)
            ops.append(op.reshape(dim_b * dim_b * dim_env * dim_env, da * da * dj * dj))
    return _choi_of(ops)


def _point_from_runs(runs, D, dmap, d_in, d_out, k, lower):
    feas = [r for r in runs if dmap.value(r[0]) <= D + FEAS_SLACK]
    pool = feas if feas else runs
    x, val, info = min(pool, key=lambda r: r[1])
    vals = [r[1] / k for r in pool]
    rate = max(float(val) / k, 0.0)
    return RDPoint(
        D=float(D),
        rate=rate,
        channel=Channel(hermitize(x), d_in, d_out, check=False),
        converged=bool(info["converged"]) and bool(feas),
        iters=int(sum(r[2]["iters"] for r in runs)),
        objective_history=[float(v) / k for v in info["history"]],
        feasibility_residual=max(0.0, dmap.value(x) - D),
        fallback=bool(info["fallback"]),
        restart_spread=float(max(vals) - min(vals)),
        extra={"upper": rate, "lower": min(lower, rate), "k": k},
    )


def unassisted_point(e: Ensemble, D: float, dist: Distortion, k: int = 1, opts: SolverOpts | None = None,
                     dim_env: int | None = None) -> RDPoint:
    """Achievable rate g_k(D), an upper bound on the unassisted R(D).

    ``extra['lower']`` is the assisted rate at the same D (assistance never hurts).
    For k = 2 the search is warm-started from M_1 (x) M_1, so g_2 <= g_1 holds up to
    solver tolerance; ``extra['k_order_violation']`` records any excess.
    """
    if D < 0:
        raise ValueError(f"distortion bound D = {D} is negative")
    if k not in (1, 2):
        raise ValueError("k must be 1 or 2")
    opts = SolverOpts(restarts=20) if opts is None else opts
    dim_b = dist.dim_b
    env1 = e.dim_in * dim_b if dim_env is None else dim_env
    assisted = rea_point(e, D, dist, SolverOpts(**{**opts.__dict__, "restarts": 1}))
    if k == 1:
        prob = UnassistedProblem(e, dist, dim_b, env1)
        rng = np.random.default_rng(opts.seed)
        rea_seed = _attach_env(assisted.channel.choi, e.dim_in, dim_b, env1)
        starts = [prob.anchor(), rea_seed]
        ki = ki_seed_choi(e, dim_b, env1, opts.seed)
        if ki is not None:
            starts.append(ki)
        starts += [_wishart_choi(prob.d_in, prob.d_out, rng) for _ in range(opts.restarts)]
        exact = prob.dmap.exact_set(e.probs) if D <= EXACT_D else None
        runs = solve_channel_problem(prob, prob.dmap, prob.d_in, prob.d_out, D, starts, opts, prob.anchor(), exact)
        return _point_from_runs(runs, D, prob.dmap, prob.d_in, prob.d_out, 1, assisted.rate)
    one = unassisted_point(e, D, dist, 1, opts, env1)
    e2 = tensor_power(e, 2)
    prob = UnassistedProblem(e2, PerCopyDistortion(dist, 2), dim_b ** 2, env1 ** 2)
    warm = _reorder_tensor_choi(one.channel.choi, e, dim_b, env1)
    rng = np.random.default_rng(opts.seed)
    starts = [warm] + [_wishart_choi(prob.d_in, prob.d_out, rng) for _ in range(min(opts.restarts, 1))]
    runs = solve_channel_problem(prob, prob.dmap, prob.d_in, prob.d_out, D, starts, opts, prob.anchor())
    pt = _point_from_runs(runs, D, prob.dmap, prob.d_in, prob.d_out, 2, assisted.rate)
    pt.extra["g1"] = one.rate
    pt.extra["k_order_violation"] = max(0.0, pt.rate - one.rate)
    return pt


def _attach_env(c: np.ndarray, d_in: int, dim_b: int, dim_env: int) -> np.ndarray:
    """Choi of N (x) |0><0|_E from the Choi of N."""
    fixed = np.zeros((dim_env, dim_env))
    fixed[0, 0] = 1.0
    c4 = c.reshape(d_in, dim_b, d_in, dim_b)
    out = np.einsum("ibjc,ef->ibejcf", c4, fixed)
    d = d_in * dim_b * dim_env
    return out.reshape(d, d)


# -- visible rate -------------------------------------------------------------------

def _project_density(m: np.ndarray) -> np.ndarray:
    """Euclidean projection of a Hermitian matrix onto density matrices (eigenvalue simplex)."""
    w, v = np.linalg.eigh(hermitize(m))
    u = np.sort(w)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, len(u) + 1)
    rho = idx[u - css / idx > 0][-1]
    theta = css[rho - 1] / rho
    return (v * np.clip(w - theta, 0.0, None)) @ v.conj().T


class VisibleProblem:
    """Families w_x on B (x) F: objective S(sum_x p_x w_x), distortion on Tr_F w_x."""

    def __init__(self, dist, dim_f: int):
        self.dist = dist
        self.dim_b, self.dim_f = dist.dim_b, dim_f
        self.d = self.dim_b * dim_f
        self.probs = dist.probs

    def __call__(self, w: np.ndarray):
        avg = np.einsum("x,xij->ij", self.probs, w)
        val, g = entropy_and_grad(avg)
        return val, self.probs[:, None, None] * g[None]

    def marginals(self, w: np.ndarray) -> np.ndarray:
        db, df = self.dim_b, self.dim_f
        return w.reshape(len(w), db, df, db, df).trace(axis1=2, axis2=4)

    def constraint(self, w: np.ndarray):
        val, g = self.dist.cq_value_grad(self.marginals(w))
        return val, np.stack([np.kron(gx, np.eye(self.dim_f)) for gx in g])

    def value(self, w: np.ndarray) -> float:
        return self.dist.cq_value(self.marginals(w))

    def anchor(self) -> np.ndarray:
        fixed = np.zeros((self.dim_f, self.dim_f))
        fixed[0, 0] = 1.0
        return np.stack([np.kron(r, fixed) for r in self.dist.refs])

    def exact_projector(self):
        basis = herm_basis(self.dim_b)
        ops = np.stack([np.kron(f, np.eye(self.dim_f)) for f in basis])
        projs = [AffineProjector(AffineSet(ops, np.array([np.trace(f @ r).real for f in basis])))
                 for r in self.dist.refs]
        return lambda w: np.stack([p(hermitize(x)) for p, x in zip(projs, w)])

    def certificate(self, w: np.ndarray, dim_a: int) -> Channel:
        """Trace A, read the label J = |x>, prepare Tr_F w_x."""
        taus = self.marginals(w)
        n, db = len(taus), self.dim_b
        c = np.zeros((dim_a * n * db,) * 2, complex)
        for a in range(dim_a):
            for x in range(n):
                i = a * n + x
                c[i * db:(i + 1) * db, i * db:(i + 1) * db] = hermitize(taus[x])
        return Channel(c, dim_a * n, db, check=False)


def visible_point(e: Ensemble, D: float, dist: Distortion, k: int = 1, opts: SolverOpts | None = None,
                  dim_f: int | None = None) -> RDPoint:
    """(1/k) min E_p(B^k : X^k) over encoders that see the label x.

    Side information of ``e`` is replaced by the labels |x>; the certificate channel
    acts on visible(e) (or its k-th tensor power).
    """
    if D < 0:
        raise ValueError(f"distortion bound D = {D} is negative")
    if k not in (1, 2):
        raise ValueError("k must be 1 or 2")
    opts = SolverOpts(restarts=20) if opts is None else opts
    ev = visible(e)
    df1 = dist.dim_b * e.n if dim_f is None else dim_f
    one = None
    if k == 2:
        tensor_power(ev, 2)  # enforces the size cap
        one = visible_point(e, D, dist, 1, opts, df1)
    kd = _distortion_for(dist, k)
    prob = VisibleProblem(kd, df1 ** k)
    rng = np.random.default_rng(opts.seed)
    starts = [prob.anchor()]
    if one is not None:
        starts.append(_tensor_family(one.extra["family"], dist.dim_b, df1, dist.probs))
        starts += [np.stack([_project_density(_wishart_choi(1, prob.d, rng)) for _ in range(kd.n)])
                   for _ in range(min(opts.restarts, 1))]
    else:
        starts += [np.stack([_project_density(_wishart_choi(1, prob.d, rng)) for _ in range(kd.n)])
                   for _ in range(opts.restarts)]
    exact = D <= EXACT_D and k == 1
    proj = prob.exact_projector() if exact else (lambda w: np.stack([_project_density(x) for x in w]))
    runs = []
    for x0 in starts:
        fallback = False
        if exact:
            res = pgd(prob, proj, x0, opts)
            x, conv, iters, hist = res.x, res.converged, res.iters, res.history
        else:
            al = augmented_lagrangian(prob, prob.constraint, D, proj, x0, opts)
            if not al.converged and al.violation > 1e-4:
                al = lambda_sweep(prob, prob.constraint, D, proj, x0, opts)
                fallback = True
            x, conv, iters, hist = al.x, al.converged, al.iters, al.history
            x, _ = restore_feasibility(x, prob.anchor(), prob.value, D)
        runs.append((x, prob(x)[0], {"converged": conv, "iters": iters, "history": hist, "fallback": fallback}))
    feas = [r for r in runs if prob.value(r[0]) <= D + FEAS_SLACK]
    pool = feas if feas else runs
    x, val, info = min(pool, key=lambda r: r[1])
    vals = [r[1] / k for r in pool]
    rate = max(float(val) / k, 0.0)
    pt = RDPoint(
        D=float(D), rate=rate, channel=prob.certificate(x, e.dim_a ** k),
        converged=bool(info["converged"]) and bool(feas),
        iters=int(sum(r[2]["iters"] for r in runs)),
        objective_history=[float(v) / k for v in info["history"]],
        feasibility_residual=max(0.0, prob.value(x) - D), fallback=bool(info["fallback"]),
        restart_spread=float(max(vals) - min(vals)),
        extra={"upper": rate, "k": k, "family": x},
    )
    if one is not None:
        pt.extra["g1"] = one.rate
        pt.extra["k_order_violation"] = max(0.0, rate - one.rate)
    return pt


def _tensor_family(w: np.ndarray, db: int, df: int, probs: np.ndarray) -> np.ndarray:
    """w_{x1} (x) w_{x2} reordered from (B1 F1 B2 F2) to (B1 B2 F1 F2)."""
    out = []
    for a in range(len(w)):
        for b in range(len(w)):
            m = np.kron(w[a], w[b])
            out.append(permute_matrix(m, (db, df, db, df), [0, 2, 1, 3]))
    return np.stack(out)


# -- blind limit ---------------------------------------------------------------------

@dataclass
class BlindLimitReport:
    D: float
    blind_rate: float
    unassisted: float
    difference: float
    tol: float
    passed: bool

    def lines(self) -> list[str]:
        return [
            f"D = {self.D:.9g}",
            f"S(CQ) = {self.blind_rate:.9g}",
            f"g1(D) = {self.unassisted:.9g}",
            f"|difference| = {self.difference:.9g} (tol {self.tol:.9g})",
            "PASS" if self.passed else "FAIL",
        ]


def blind_limit_check(e: Ensemble, D_small: float = 1e-3, opts: SolverOpts | None = None,
                      tol_blind: float = 0.05) -> BlindLimitReport:
    from .kidecomp import blind_rate

    if e.dim_j != 1:
        raise ValueError("blind limit check needs an ensemble without side information")
    dist = Distortion.for_ensemble(e, "fidelity")
    pt = unassisted_point(e, D_small, dist, 1, opts)
    s_cq = blind_rate(e)
    diff = abs(pt.rate - s_cq)
    return BlindLimitReport(D_small, s_cq, pt.rate, diff, tol_blind, diff <= tol_blind)
