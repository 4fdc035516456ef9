"""Entanglement-assisted rate-distortion function as a convex program over channels.

    R_ea(D) = min { 1/2 I(B : X X' R)_tau : N: AJ -> B CPTP, Delta(N) <= D },
    tau = (N (x) id)(|psi><psi|)

The reference X X' R is compressed to the support of the purification, which
leaves every entropy unchanged.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .channel import (
    AffineSet,
    Channel,
    choi_adjoint,
    choi_apply,
    AffineProjector,
    output_constraints,
    tp_constraints,
)
from .distortion import Distortion
from .ensemble import Ensemble
from .optim import (
    SolverOpts,
    augmented_lagrangian,
    entropy_and_grad,
    lambda_sweep,
    pgd,
    restore_feasibility,
)
from .qcore import entropy_of, hermitize, ptrace

# D at or below this is solved with the outputs pinned exactly to rho_x
EXACT_D = 1e-9
# a random net cannot hit the measure-zero feasible set of tiny D; below this the oracle relaxes to it
BRUTE_D_FLOOR = 1e-3
FEAS_SLACK = 1e-6


@dataclass
class RDPoint:
    D: float
    rate: float
    channel: Channel
    converged: bool
    iters: int
    objective_history: list = field(default_factory=list)
    feasibility_residual: float = 0.0
    fallback: bool = False
    cleanup: str = ""
    restart_spread: float = 0.0
    extra: dict = field(default_factory=dict)


def _wishart_choi(d_in: int, d_out: int, rng: np.random.Generator) -> np.ndarray:
    d = d_in * d_out
    g = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    return g @ g.conj().T / d


def faithful_choi(e: Ensemble, dim_b: int, dim_env: int = 1) -> np.ndarray:
    """Choi of AJ -> B (x) Env: embed A into B, discard J, environment in |0>."""
    ops = []
    for j in range(e.dim_j):
        k = np.zeros((dim_b * dim_env, e.dim_in), complex)
        for a in range(e.dim_a):
            k[a * dim_env, a * e.dim_j + j] = 1.0
        ops.append(k)
    return _choi_of(ops)


def _choi_of(ops) -> np.ndarray:
    d_out, d_in = ops[0].shape
    c = np.zeros((d_in * d_out,) * 2, complex)
    for k in ops:
        v = k.T.reshape(-1)
        c += np.outer(v, v.conj())
    return c


class ChannelDistortion:
    """Delta of the B-marginals Tr_Env N(sigma_x) as a function of the Choi matrix of N."""

    def __init__(self, dist: Distortion, sigmas: np.ndarray, d_in: int, d_b: int, d_env: int = 1):
        self.dist, self.sigmas = dist, sigmas
        self.d_in, self.d_b, self.d_env = d_in, d_b, d_env

    def outputs(self, c: np.ndarray) -> np.ndarray:
        di, db, de = self.d_in, self.d_b, self.d_env
        c4 = c.reshape(di, db, de, di, db, de).trace(axis1=2, axis2=5) if de > 1 else c.reshape(di, db, di, db)
        cm = c4.transpose(0, 2, 1, 3).reshape(di * di, db * db)
        return (self.sigmas.reshape(len(self.sigmas), -1) @ cm).reshape(-1, db, db)

    def __call__(self, c: np.ndarray) -> tuple[float, np.ndarray]:
        di, db, de = self.d_in, self.d_b, self.d_env
        val, gx = self.dist.cq_value_grad(self.outputs(c))
        # grad[i b, j c] = sum_x sigma_x[j, i] g_x[b, c]
        st = self.sigmas.transpose(0, 2, 1).reshape(len(self.sigmas), -1)
        grad = (st.T @ gx.reshape(len(gx), -1)).reshape(di, di, db, db).transpose(0, 2, 1, 3)
        d = di * db
        if de > 1:
            grad = np.einsum("ibjc,ef->ibejcf", grad, np.eye(de))
            d *= de
        return val, grad.reshape(d, d)

    def value(self, c: np.ndarray) -> float:
        return self.dist.cq_value(self.outputs(c))

    def exact_set(self, probs: np.ndarray) -> AffineSet:
        keep = probs > 0
        return output_constraints(self.sigmas[keep], self.dist.refs[keep], self.d_b, self.d_env)


class ReaProblem:
    """Objective 1/2 I(B:W) for N: AJ -> B on the compressed purification."""

    def __init__(self, e: Ensemble, dist: Distortion, dim_b: int | None = None):
        self.e = e
        self.dim_b = dist.dim_b if dim_b is None else dim_b
        if self.dim_b != dist.dim_b:
            raise ValueError(f"distortion reference has dim B = {dist.dim_b}, solver asked for {self.dim_b}")
        if dist.n != e.n:
            raise ValueError("distortion and ensemble disagree on the number of items")
        self.dist = dist
        self.d_in = e.dim_in
        u, s, _ = np.linalg.svd(e.psi_matrix, full_matrices=False)
        r = int(np.sum(s > 1e-12 * s[0]))
        psi = u[:, :r] * s[:r]          # (AJ) x W with W = support of the reference
        vec = psi.reshape(-1)
        self.pure_vec = vec
        self.r = r
        self.pure = np.outer(vec, vec.conj())
        self.s_w = entropy_of(e.average_input)
        self.dmap = ChannelDistortion(dist, e.sigmas, self.d_in, self.dim_b)
        self.tp = tp_constraints(self.d_in, self.dim_b)

    def tau_bw(self, c: np.ndarray) -> np.ndarray:
        return choi_apply(c, self.d_in, self.dim_b, self.pure, self.r)

    def __call__(self, c: np.ndarray) -> tuple[float, np.ndarray]:
        t = self.tau_bw(c)
        s_bw, g_bw = entropy_and_grad(t)
        s_b, g_b = entropy_and_grad(ptrace(t, (self.dim_b, self.r), [0]))
        g = 0.5 * (np.kron(g_b, np.eye(self.r)) - g_bw)
        val = 0.5 * (s_b - s_bw + self.s_w)
        return val, choi_adjoint(self.pure, g, self.d_in, self.dim_b, self.r)

    def value(self, c: np.ndarray) -> float:
        return self(c)[0]

    def anchor(self) -> np.ndarray:
        return faithful_choi(self.e, self.dim_b)

    def barycenter(self) -> np.ndarray:
        sig = np.zeros((self.dim_b, self.dim_b), complex)
        sig[: self.e.dim_a, : self.e.dim_a] = np.einsum("x,xij->ij", self.e.probs, np.stack([it.rho for it in self.e.items]))
        return np.kron(np.eye(self.d_in), sig)


def solve_channel_problem(f, dmap: ChannelDistortion, d_in: int, d_out: int, D: float, starts: list,
                          opts: SolverOpts, anchor: np.ndarray, exact: AffineSet | None = None):
    """Run the constrained solve from each start; returns list of (choi, value, info dict)."""
    aff = tp_constraints(d_in, d_out)
    if exact is not None:
        aff = aff + exact
    results = []
    for x0 in starts:
        fallback = False
        proj = AffineProjector(aff)
        if exact is not None:
            res = pgd(f, proj, x0, opts)
            x, conv, iters, hist = res.x, res.converged, res.iters, res.history
        else:
            al = augmented_lagrangian(f, dmap, D, proj, x0, opts)
            if not al.converged and al.violation > 1e-4:
                al = lambda_sweep(f, dmap, D, proj, x0, opts)
                fallback = True
            x, conv, iters, hist = al.x, al.converged, al.iters, al.history
            x, t = restore_feasibility(x, anchor, dmap.value, D)
        val = f(x)[0]
        results.append((x, val, {"converged": conv, "iters": iters, "history": hist, "fallback": fallback}))
    return results


def _finish(ch_choi: np.ndarray, d_in: int, d_out: int) -> Channel:
    return Channel(hermitize(ch_choi), d_in, d_out, check=False)


def rea_point(e: Ensemble, D: float, dist: Distortion, opts: SolverOpts | None = None, dim_b: int | None = None) -> RDPoint:
    """Minimum of 1/2 I(B : X X' R) over channels AJ -> B with Delta <= D."""
    if D < 0:
        raise ValueError(f"distortion bound D = {D} is negative")
    opts = SolverOpts() if opts is None else opts
    prob = ReaProblem(e, dist, dim_b)
    rng = np.random.default_rng(opts.seed)
    starts = [prob.anchor(), prob.barycenter()]
    starts += [_wishart_choi(prob.d_in, prob.dim_b, rng) for _ in range(opts.restarts)]
    exact = prob.dmap.exact_set(e.probs) if D <= EXACT_D else None
    runs = solve_channel_problem(prob, prob.dmap, prob.d_in, prob.dim_b, D, starts, opts, prob.anchor(), exact)
    return _best_point(runs, D, prob.dmap, prob.d_in, prob.dim_b)


def _best_point(runs, D, dmap, d_in, d_out) -> RDPoint:
    feas = [r for r in runs if dmap.value(r[0]) <= D + FEAS_SLACK]
    pool = feas if feas else runs
    x, val, info = min(pool, key=lambda r: r[1])
    vals = [r[1] for r in pool]
    return RDPoint(
        D=float(D),
        rate=max(float(val), 0.0),
        channel=_finish(x, d_in, d_out),
        converged=bool(info["converged"]) and bool(feas),
        iters=int(sum(r[2]["iters"] for r in runs)),
        objective_history=[float(v) for v in info["history"]],
        feasibility_residual=max(0.0, dmap.value(x) - D),
        fallback=bool(info["fallback"]),
        restart_spread=float(max(vals) - min(vals)),
    )


# -- curves ----------------------------------------------------------------------

def curve_residuals(points: list[RDPoint]) -> tuple[float, float]:
    """(worst monotonicity violation, worst convexity violation) over consecutive points."""
    mono = 0.0
    conv = 0.0
    for a, b in zip(points[:-1], points[1:]):
        mono = max(mono, b.rate - a.rate)
    for a, b, c in zip(points[:-2], points[1:-1], points[2:]):
        if c.D > a.D:
            lam = (c.D - b.D) / (c.D - a.D)
            conv = max(conv, b.rate - (lam * a.rate + (1 - lam) * c.rate))
    return mono, conv


def rea_curve(e: Ensemble, d_grid, dist: Distortion, opts: SolverOpts | None = None, dim_b: int | None = None) -> list[RDPoint]:
    """Points of R_ea on a sorted grid, repaired to be non-increasing and convex.

    Repairs reuse certificates: a violating point takes the previous point's
    channel (monotone repair) or the mixture of its neighbours' channels
    (convex repair). Repaired points carry a non-empty ``cleanup`` field.
    """
    grid = [float(d) for d in d_grid]
    if any(b < a for a, b in zip(grid[:-1], grid[1:])):
        raise ValueError("D grid must be sorted ascending")
    opts = SolverOpts() if opts is None else opts
    prob = ReaProblem(e, dist, dim_b)
    pts = [rea_point(e, d, dist, opts, dim_b) for d in grid]
    tol = 1e-9
    for _ in range(4 * len(pts) + 4):
        changed = False
        for i in range(1, len(pts)):
            if pts[i].rate > pts[i - 1].rate + tol:
                pts[i] = replace(pts[i - 1], D=pts[i].D, cleanup="monotone",
                                 feasibility_residual=max(0.0, prob.dmap.value(pts[i - 1].channel.choi) - pts[i].D))
                changed = True
        for i in range(1, len(pts) - 1):
            a, b, c = pts[i - 1], pts[i], pts[i + 1]
            if c.D <= a.D:
                continue
            lam = (c.D - b.D) / (c.D - a.D)
            if b.rate > lam * a.rate + (1 - lam) * c.rate + tol:
                mix = lam * a.channel.choi + (1 - lam) * c.channel.choi
                mix, _ = restore_feasibility(mix, prob.anchor(), prob.dmap.value, b.D)
                val = prob.value(mix)
                if val < b.rate:
                    pts[i] = replace(b, rate=max(val, 0.0), channel=_finish(mix, prob.d_in, prob.dim_b), cleanup="convex",
                                     feasibility_residual=max(0.0, prob.dmap.value(mix) - b.D))
                    changed = True
        if not changed:
            break
    return pts


# -- brute-force oracle -------------------------------------------------------------

def _batch_entropy(m: np.ndarray) -> np.ndarray:
    w = np.clip(np.linalg.eigvalsh(m), 1e-300, None)
    return -np.sum(np.where(w > 1e-12, w * np.log2(w), 0.0), axis=-1)


def _batch_eval(v: np.ndarray, prob: ReaProblem, dist: Distortion, d_b: int, kraus: int):
    """Objective and distortion for isometries v: (batch, d_b*kraus, d_in)."""
    psi = prob.pure_vec
    d_in, r = prob.d_in, prob.r
    phi = np.einsum("noi,iw->now", v, psi.reshape(d_in, r)).reshape(len(v), d_b, kraus, r)
    t_bw = np.einsum("nbkw,nckv->nbwcv", phi, phi.conj()).reshape(len(v), d_b * r, d_b * r)
    t_b = np.einsum("nbkw,nckw->nbc", phi, phi.conj())
    obj = 0.5 * (_batch_entropy(t_b) - _batch_entropy(t_bw) + prob.s_w)
    v4 = v.reshape(len(v), d_b, kraus, d_in)
    taus = np.einsum("nbki,xij,nckj->nxbc", v4, prob.e.sigmas, v4.conj(), optimize=True)
    if dist.kind == "fidelity":
        s = dist._sqrt_refs
        m = np.einsum("xab,nxbc,xcd->nxad", s, taus, s, optimize=True)
        w = np.clip(np.linalg.eigvalsh(m), 0.0, None)
        root = np.sqrt(w).sum(-1) @ dist.probs
        delta = 1.0 - root ** 2
    else:
        w = np.linalg.eigvalsh(taus - dist.refs[None])
        delta = 0.5 * (np.abs(w).sum(-1) @ dist.probs)
    return obj, delta


def _isometries(g: np.ndarray) -> np.ndarray:
    u, _, vh = np.linalg.svd(g, full_matrices=False)
    return u @ vh


def brute_force_rea(e: Ensemble, D: float, dist: Distortion, samples: int = 100_000, refine: int = 100,
                    rounds: int = 300, seed: int = 0, kraus: int | None = None, proposals: int = 4,
                    bisect: int = 4) -> float:
    """Randomized search over Kraus isometries for min 1/2 I(B:W) with Delta <= D.

    Samples isometries G (G^dag G)^{-1/2} from Gaussian G, half of them as
    perturbations of the faithful channel at log-uniform scales, then hill-climbs
    the best ``refine`` feasible candidates with adaptive steps: each round draws
    ``proposals`` perturbations per candidate and halves infeasible ones up to
    ``bisect`` times, so moves along the constraint boundary are not wasted.
    Bounds below ``BRUTE_D_FLOOR`` are evaluated at the floor.
    """
    if e.dim_in > 2 or dist.dim_b > 2:
        raise ValueError("brute force search is capped at dim(AJ) <= 2 and dim(B) <= 2")
    if D < 0:
        raise ValueError(f"distortion bound D = {D} is negative")
    D = max(D, BRUTE_D_FLOOR)
    d_b, d_in = dist.dim_b, e.dim_in
    kraus = d_in * d_b if kraus is None else kraus
    prob = ReaProblem(e, dist)
    rng = np.random.default_rng(seed)
    base = np.zeros((d_b * kraus, d_in), complex)
    for a in range(min(d_in, d_b)):
        base[a * kraus, a] = 1.0
    chunk = 10_000
    pool_v, pool_f = [], []
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        g = rng.standard_normal((m, d_b * kraus, d_in)) + 1j * rng.standard_normal((m, d_b * kraus, d_in))
        half = m // 2
        scales = 10 ** rng.uniform(-3, 0.5, size=half)
        g[:half] = base[None] + scales[:, None, None] * g[:half]
        v = _isometries(g)
        obj, delta = _batch_eval(v, prob, dist, d_b, kraus)
        ok = delta <= D
        pool_v.append(v[ok])
        pool_f.append(obj[ok])
        done += m
    # anchors: faithful isometry and constant outputs are always in the net
    anc = _isometries(base[None] + 0j)
    obj, delta = _batch_eval(anc, prob, dist, d_b, kraus)
    pool_v.append(anc[delta <= D])
    pool_f.append(obj[delta <= D])
    v_all = np.concatenate(pool_v)
    f_all = np.concatenate(pool_f)
    if len(f_all) == 0:
        return float("nan")
    idx = np.argsort(f_all)[:refine]
    cur_v, cur_f = v_all[idx], f_all[idx]
    nb = len(cur_f)
    step = np.full(nb, 0.3)
    for _ in range(rounds):
        # several proposals per point; infeasible ones are pulled back towards the point by bisection
        pert = rng.standard_normal((proposals,) + cur_v.shape) + 1j * rng.standard_normal((proposals,) + cur_v.shape)
        pert *= step[None, :, None, None]
        t = np.ones((proposals, nb))
        best_v, best_f = cur_v.copy(), cur_f.copy()
        for b in range(bisect + 1):
            cand = _isometries(cur_v[None] + t[..., None, None] * pert)
            obj, delta = _batch_eval(cand.reshape((-1,) + cur_v.shape[1:]), prob, dist, d_b, kraus)
            obj, delta = obj.reshape(t.shape), delta.reshape(t.shape)
            ok = delta <= D
            win = ok & (obj < best_f[None])
            if win.any():
                k = np.argmin(np.where(win, obj, np.inf), axis=0)
                cols = np.flatnonzero(win[k, np.arange(nb)])
                best_v[cols] = cand[k[cols], cols]
                best_f[cols] = obj[k[cols], cols]
            t = np.where(ok, t, t * 0.5)
            if ok.all():
                break
        better = best_f < cur_f
        cur_v, cur_f = best_v, best_f
        step = np.where(better, np.minimum(step * 1.5, 1.0), np.maximum(step * 0.8, 1e-4))
    return max(float(np.min(cur_f)), 0.0)
