"""Property suites behind ``qrd verify``: each check returns the worst residual over seeded instances."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import fixtures
from .channel import Channel, from_isometry, from_kraus, project_cptp, random_channel
from .distortion import Distortion, convexity_gap, random_cq
from .ensemble import Ensemble, strip_side_info, visible
from .epsolver import ep, unassisted_point
from .kidecomp import (
    KIBlock,
    blind_rate,
    commutant_dim,
    find_intertwiner,
    ki_decompose,
    preserving_channel,
    verify_ki,
)
from .optim import SolverOpts
from .qcore import (
    DensityOp,
    DimLayout,
    entropy_of,
    fannes_bound,
    ptrace,
    random_density,
    random_pure,
    trace_norm,
)
from .rateregion import pareto_filter, region_corner, region_curve
from .rdsolver import ReaProblem, rea_curve, rea_point

SUITES = ("entropy", "channels", "ki", "rdea", "ep", "region")
INSTANCES = 200


@dataclass
class PropertyResult:
    suite: str
    name: str
    n: int
    residual: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.residual)) and self.residual <= self.tol

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{self.suite}\t{self.name}\tn={self.n}\tresidual={self.residual:.9g}\ttol={self.tol:.9g}\t{status}"


def _mi(m: np.ndarray, da: int, db: int) -> float:
    return entropy_of(ptrace(m, (da, db), [0])) + entropy_of(ptrace(m, (da, db), [1])) - entropy_of(m)


def _worst(fn: Callable[[np.random.Generator], float], rng: np.random.Generator, n: int) -> float:
    return max(fn(rng) for _ in range(n))


# -- entropy ------------------------------------------------------------------------

def _entropy_suite(rng, n):
    def subadd(r):
        da, db = r.integers(2, 4, size=2)
        m = random_density(da * db, r)
        return entropy_of(m) - entropy_of(ptrace(m, (da, db), [0])) - entropy_of(ptrace(m, (da, db), [1]))

    def dpi(r):
        da, dr = r.integers(2, 4, size=2)
        m = random_density(da * dr, r)
        ca = random_channel(da, int(r.integers(2, 4)), r)
        cr = random_channel(dr, int(r.integers(2, 4)), r)
        t = ca.apply_matrix(m, dr)
        # second side: swap, apply, keep order (B, R')
        t2 = _apply_second(cr, t, ca.dim_out, dr)
        return _mi(t2, ca.dim_out, cr.dim_out) - _mi(m, da, dr)

    def superadd(r):
        v1 = random_pure(4, r)
        v2 = random_pure(4, r)
        joint = random_channel(4, 4, r)                   # A1 A2 -> B1 B2
        psi = np.kron(v1, v2).reshape(2, 2, 2, 2).transpose(0, 2, 1, 3).reshape(-1)  # A1 A2 R1 R2
        t = joint.apply_matrix(np.outer(psi, psi.conj()), 4)                       # B1 B2 R1 R2
        t4 = t.reshape([2] * 8)
        whole = _mi(t, 4, 4)
        t1 = np.einsum("abcdebgd->aceg", t4).reshape(4, 4)                        # B1 R1
        t2 = np.einsum("abcdafch->bdfh", t4).reshape(4, 4)                         # B2 R2
        return _mi(t1, 2, 2) + _mi(t2, 2, 2) - whole

    def fannes(r):
        d = int(r.integers(2, 5))
        a, b = random_density(d, r), random_density(d, r)
        if r.random() < 0.5:
            b = (1 - 0.1 * r.random()) * a + 0.1 * r.random() * b
            b /= np.trace(b).real
        eps = 0.5 * trace_norm(a - b)
        if eps > 1 - 1 / d:
            return 0.0
        return abs(entropy_of(a) - entropy_of(b)) - fannes_bound(eps, d)

    return [("subadditivity", _worst(subadd, rng, n), 1e-8),
            ("data_processing", _worst(dpi, rng, n), 1e-8),
            ("superadditivity", _worst(superadd, rng, n), 1e-8),
            ("fannes", _worst(fannes, rng, n), 1e-10)]


def _apply_second(ch: Channel, m: np.ndarray, d1: int, d2: int) -> np.ndarray:
    sw = m.reshape(d1, d2, d1, d2).transpose(1, 0, 3, 2).reshape(d1 * d2, d1 * d2)
    out = ch.apply_matrix(sw, d1)
    do = ch.dim_out
    return out.reshape(do, d1, do, d1).transpose(1, 0, 3, 2).reshape(d1 * do, d1 * do)


# -- channels -------------------------------------------------------------------------

def _channel_suite(rng, n):
    def round_trip(r):
        din, dout = (int(v) for v in r.integers(1, 4, size=2))
        ch = random_channel(din, dout, r, rank=int(r.integers(-(-din // dout), din * dout + 1)))
        rho = random_density(din, r)
        via_kraus = sum(k @ rho @ k.conj().T for k in ch.kraus())
        v = ch.stinespring()
        big = v @ rho @ v.conj().T
        env = v.shape[0] // dout
        via_stine = ptrace(big, (dout, env), [0])
        back = from_kraus(ch.kraus(), check=False)
        return max(np.abs(ch(rho) - via_kraus).max(), np.abs(ch(rho) - via_stine).max(),
                   np.abs(back.choi - ch.choi).max())

    def idempotent(r):
        din, dout = (int(v) for v in r.integers(1, 4, size=2))
        m = r.standard_normal((din * dout,) * 2) + 1j * r.standard_normal((din * dout,) * 2)
        p1 = project_cptp(m + m.conj().T, din, dout, method="dual").choi
        p2 = project_cptp(p1, din, dout, method="dual").choi
        return float(np.linalg.norm(p1 - p2))

    def positivity(r):
        din, dout = (int(v) for v in r.integers(1, 4, size=2))
        ch = random_channel(din, dout, r)
        out = ch(random_density(din, r))
        return max(-float(np.linalg.eigvalsh(out)[0]), abs(np.trace(out).real - 1))

    return [("round_trip", _worst(round_trip, rng, n), 1e-8),
            ("projection_idempotent", _worst(idempotent, rng, n), 1e-10),
            ("positivity_trace", _worst(positivity, rng, n), 1e-10)]


# -- Koashi-Imoto ------------------------------------------------------------------------

def random_ki_ensemble(rng: np.random.Generator) -> Ensemble:
    """Block-structured ensemble: random classical split, redundant factor and quantum part."""
    n = int(rng.integers(2, 4))
    probs = rng.dirichlet(np.ones(n))
    blocks = int(rng.integers(1, 3))
    dims = [(int(rng.integers(1, 3)), int(rng.integers(1, 3))) for _ in range(blocks)]   # (dim N, dim Q)
    da = sum(dn * dq for dn, dq in dims)
    pcx = rng.dirichlet(np.ones(blocks), size=n)
    omegas = [random_density(dn, rng) for dn, _ in dims]
    states = []
    for x in range(n):
        rho = np.zeros((da, da), complex)
        off = 0
        for c, (dn, dq) in enumerate(dims):
            d = dn * dq
            rho[off:off + d, off:off + d] = pcx[x, c] * np.kron(omegas[c], random_density(dq, rng, rank=1))
            off += d
        states.append(rho)
    u = np.linalg.qr(rng.standard_normal((da, da)) + 1j * rng.standard_normal((da, da)))[0]
    return Ensemble.from_states(probs, [u @ s @ u.conj().T for s in states])


def _ki_suite(rng, n):
    fix = [fixtures.get(name) for name in fixtures.BASE]

    def conditions(e):
        rep = verify_ki(ki_decompose(e, seed=0), e)
        return 0.0 if rep.passed else 1.0 + rep.residual

    fixture_res = max(conditions(e) for e in fix)
    random_res = max(conditions(random_ki_ensemble(rng)) for _ in range(n))

    def preserving(e, r):
        dec = ki_decompose(e, seed=0)
        lam = preserving_channel(dec, r)
        return max(float(np.abs(lam(it.rho) - it.rho).max()) for it in e.items)

    pres = max(preserving(e, rng) for e in fix + [random_ki_ensemble(rng) for _ in range(20)])

    # merged blocks: two orthogonal classical values forced into one Q block have a nontrivial commutant
    merged = [np.diag([1.0, 0.0]), np.diag([0.0, 1.0])]
    merged_res = 0.0 if commutant_dim(merged) > 1 else 1.0

    # a redundant part split into two look-alike blocks is detected by an intertwiner
    rs = np.stack([random_density(2, rng, rank=1) for _ in range(2)])
    u = np.linalg.qr(rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2)))[0]
    pc = np.array([0.5, 0.5])
    blk_a = KIBlock(2, 1, np.ones((1, 1)), pc, rs, np.eye(2))
    blk_b = KIBlock(2, 1, np.ones((1, 1)), pc, np.stack([u @ r @ u.conj().T for r in rs]), np.eye(2))
    split_res = 0.0 if find_intertwiner(blk_a, blk_b) is not None else 1.0

    def redundant_rate(r):
        e = random_ki_ensemble(r)
        om = random_density(2, r)
        big = Ensemble.from_states(e.probs, [np.kron(om, it.rho) for it in e.items])
        return abs(blind_rate(big) - blind_rate(e))

    vis = max(abs(blind_rate(strip_side_info(visible(e))) - blind_rate(e)) for e in fix)
    return [("conditions_fixtures", fixture_res, 0.0),
            ("conditions_random", random_res, 0.0),
            ("preserving_channel", pres, 1e-8),
            ("counterexample_merged_blocks", merged_res, 0.0),
            ("counterexample_split_redundant", split_res, 0.0),
            ("blind_rate_redundant_invariance", _worst(redundant_rate, rng, 20), 1e-7),
            ("blind_rate_visible", vis, 1e-9)]


# -- assisted rate --------------------------------------------------------------------

def random_qubit_ensemble(rng: np.random.Generator, n: int = 2) -> Ensemble:
    return Ensemble.from_states(rng.dirichlet(np.ones(n)), [random_pure(2, rng) for _ in range(n)])


def _fd_relative(f, c: np.ndarray, g: np.ndarray, rng: np.random.Generator, h: float = 1e-5) -> float:
    d = rng.standard_normal(c.shape) + 1j * rng.standard_normal(c.shape)
    d = (d + d.conj().T) / 2
    d /= np.linalg.norm(d)
    fd = (f(c + h * d) - f(c - h * d)) / (2 * h)
    an = float(np.real(np.vdot(g, d)))
    return abs(fd - an) / max(abs(an), abs(fd), 1e-3)


def _interior_choi(din: int, dout: int, rng: np.random.Generator) -> np.ndarray:
    ch = random_channel(din, dout, rng)
    return 0.7 * ch.choi + 0.3 * np.eye(din * dout) / dout


def _rdea_suite(rng, n):
    def grad_obj(r):
        e = random_qubit_ensemble(r, int(r.integers(2, 4)))
        prob = ReaProblem(e, Distortion.for_ensemble(e))
        c = _interior_choi(e.dim_in, 2, r)
        _, g = prob(c)
        return _fd_relative(prob.value, c, g, r)

    def grad_dist(r):
        e = random_qubit_ensemble(r)
        kind = "fidelity" if r.random() < 0.5 else "trace"
        prob = ReaProblem(e, Distortion.for_ensemble(e, kind))
        c = _interior_choi(e.dim_in, 2, r)
        _, g = prob.dmap(c)
        return _fd_relative(prob.dmap.value, c, g, r)

    def convex(r):
        e = random_qubit_ensemble(r)
        prob = ReaProblem(e, Distortion.for_ensemble(e))
        c1, c2 = random_channel(2, 2, r).choi, random_channel(2, 2, r).choi
        lam = r.random()
        return prob.value(lam * c1 + (1 - lam) * c2) - lam * prob.value(c1) - (1 - lam) * prob.value(c2)

    def dist_convex(r):
        e = random_qubit_ensemble(r)
        d = Distortion.for_ensemble(e, "fidelity" if r.random() < 0.5 else "trace")
        return -convexity_gap(d, random_cq(d, r), random_cq(d, r), r.random())

    def trace_lipschitz(r):
        e = random_qubit_ensemble(r)
        d = Distortion.for_ensemble(e, "trace")
        a, b = random_cq(d, r), random_cq(d, r)
        return abs(d.delta(a) - d.delta(b)) - 0.5 * trace_norm(a - b)

    opts = SolverOpts(restarts=0)
    grid = [0.0, 0.1, 0.2, 0.3, 0.4, 0.55]
    curve_res = 0.0
    for name in ("classical_pair", "nonorthogonal_pair"):
        e = fixtures.get(name)
        pts = rea_curve(e, grid, Distortion.for_ensemble(e), opts)
        mono = max(b.rate - a.rate for a, b in zip(pts, pts[1:]))
        conv = max(pts[i].rate - 0.5 * (pts[i - 1].rate + pts[i + 1].rate) for i in range(1, len(pts) - 1)
                   if abs(grid[i] - 0.5 * (grid[i - 1] + grid[i + 1])) < 1e-12)
        curve_res = max(curve_res, mono, conv)
    return [("gradient_objective_fd", _worst(grad_obj, rng, n), 1e-4),
            ("gradient_distortion_fd", _worst(grad_dist, rng, n), 1e-4),
            ("objective_convexity", _worst(convex, rng, n), 1e-8),
            ("distortion_convexity", _worst(dist_convex, rng, n), 1e-9),
            ("trace_lipschitz", _worst(trace_lipschitz, rng, n), 1e-10),
            ("curve_monotone_convex", curve_res, 1e-3)]


# -- entanglement of purification ---------------------------------------------------------

def _ep_suite(rng, n):
    opts = SolverOpts(restarts=3)
    m = max(3, n // 40)

    def bipartite(mat, da, dr):
        return DensityOp(mat, DimLayout((("A", da), ("R", dr))))

    def sandwich(r):
        mat = random_density(4, r)
        est = ep(bipartite(mat, 2, 2), ["A"], ["R"], opts)
        cap = min(entropy_of(ptrace(mat, (2, 2), [0])), entropy_of(ptrace(mat, (2, 2), [1])))
        return max(est.lower - est.upper, -est.lower, est.upper - cap - 1e-8)

    def product(r):
        mat = np.kron(random_density(2, r), random_density(2, r))
        return ep(bipartite(mat, 2, 2), ["A"], ["R"], opts).upper

    def pure(r):
        v = random_pure(4, r)
        mat = np.outer(v, v.conj())
        return abs(ep(bipartite(mat, 2, 2), ["A"], ["R"], opts).upper - entropy_of(ptrace(mat, (2, 2), [0])))

    def monotone(r):
        mat = random_density(4, r, rank=2)
        before = ep(bipartite(mat, 2, 2), ["A"], ["R"], opts).upper
        after_m = random_channel(2, 2, r).apply_matrix(mat, 2)
        after = ep(bipartite(after_m, 2, 2), ["A"], ["R"], opts).upper
        return after - before

    classical = ep(bipartite(np.diag([0.5, 0, 0, 0.5]).astype(complex), 2, 2), ["A"], ["R"], opts)
    # a zero-entropy optimum is approached like -x log x: 1e-8 in the state is ~1e-6 in bits
    return [("sandwich", _worst(sandwich, rng, m), 1e-9),
            ("product_zero", _worst(product, rng, m), 1e-5),
            ("pure_entropy", _worst(pure, rng, m), 1e-6),
            ("local_monotonicity", _worst(monotone, rng, m), 0.02),
            ("classical_correlated", abs(classical.upper - 1.0), 1e-4)]


# -- rate region ----------------------------------------------------------------------------

def _region_suite(rng, n):
    def trace_consistency(r):
        e = random_qubit_ensemble(r)
        d = Distortion.for_ensemble(e)
        ch = random_channel(2, 2, r)
        dw = ch.env_dim
        tr = from_kraus([np.eye(dw)[i:i + 1] for i in range(dw)], check=False)
        pt = region_corner(e, ch, tr, d)
        return abs(pt.R_min - ReaProblem(e, d).value(ch.choi))

    def identity_purity(r):
        e = random_qubit_ensemble(r)
        d = Distortion.for_ensemble(e)
        ch = random_channel(2, 2, r)
        ident = from_isometry(np.eye(ch.env_dim), ch.env_dim, check=False)
        pt = region_corner(e, ch, ident, d)
        return abs(pt.sum_min - entropy_of(e.average_input))

    m = max(3, n // 10)
    e = fixtures.get("classical_pair")
    d = Distortion.for_ensemble(e)
    opts = SolverOpts(restarts=1)
    pts = region_curve(e, 0.1, d, opts, pareto=False)
    front = pareto_filter(pts)
    mono = max([b.sum_min - a.sum_min for a, b in zip(front, front[1:])] + [0.0])
    neg = max(max(-p.R_min, -p.sum_min) for p in pts)
    assisted = rea_point(e, 0.1, d, opts).rate
    ua = unassisted_point(e, 0.1, d, 1, opts).rate
    bracket = max(min(p.R_min for p in pts) - assisted - 0.02, min(p.sum_min for p in pts) - ua - 0.02)
    return [("trace_lambda_matches_assisted", _worst(trace_consistency, rng, m), 1e-9),
            ("identity_lambda_purity", _worst(identity_purity, rng, m), 1e-8),
            ("pareto_monotone", mono, 0.0),
            ("nonnegative", neg, 1e-12),
            ("endpoint_bracketing", bracket, 0.0)]


_RUNNERS = {
    "entropy": _entropy_suite,
    "channels": _channel_suite,
    "ki": _ki_suite,
    "rdea": _rdea_suite,
    "ep": _ep_suite,
    "region": _region_suite,
}


def run_suite(suite: str, seed: int = 0, instances: int = INSTANCES) -> list[PropertyResult]:
    """Run one suite (or ``all``) with a fixed seed; deterministic for a given (suite, seed, instances)."""
    if suite == "all":
        return [r for s in SUITES for r in run_suite(s, seed, instances)]
    if suite not in _RUNNERS:
        raise ValueError(f"unknown suite {suite!r}; choose from {', '.join(SUITES + ('all',))}")
    rng = np.random.default_rng([seed, SUITES.index(suite)])
    return [PropertyResult(suite, name, instances, float(res), tol) for name, res, tol in _RUNNERS[suite](rng, instances)]
