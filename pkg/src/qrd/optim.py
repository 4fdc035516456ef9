"""Projected-gradient machinery shared by the rate solvers.

Variables are stacks of Hermitian matrices, shape (m, d, d). A problem supplies
an objective with gradient, an exact projection onto the feasible convex set,
and optionally one scalar convex constraint ``g(X) <= bound`` handled by an
augmented Lagrangian.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .qcore import entropy_vals, hermitize

LN2 = np.log(2.0)
LOG_FLOOR = 1e-15

ValueGrad = Callable[[np.ndarray], tuple[float, np.ndarray]]
Project = Callable[[np.ndarray], np.ndarray]


@dataclass
class SolverOpts:
    max_iters: int = 200
    tol_obj: float = 1e-8
    tol_grad: float = 1e-6
    restarts: int = 1
    seed: int = 0
    step_init: float = 0.5
    lagrange_sweep: list = field(default_factory=lambda: [0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0])
    outer_rounds: int = 25
    feas_tol: float = 1e-7
    mu_init: float | None = None

    def __post_init__(self):
        if min(self.tol_obj, self.tol_grad, self.step_init, self.feas_tol) <= 0:
            raise ValueError("tolerances and step_init must be positive")
        if self.max_iters < 1 or self.restarts < 0:
            raise ValueError("max_iters must be >= 1 and restarts >= 0")
        if any(lam < 0 for lam in self.lagrange_sweep):
            raise ValueError("lagrange_sweep entries must be >= 0")


def entropy_and_grad(m: np.ndarray) -> tuple[float, np.ndarray]:
    """S(m) in bits and its gradient -(log2 m + I/ln 2) (eigenvalues floored for the log)."""
    w, v = np.linalg.eigh(hermitize(m))
    w = np.clip(w, 0.0, None)
    g = -(v * (np.log2(np.maximum(w, LOG_FLOOR)) + 1.0 / LN2)) @ v.conj().T
    return entropy_vals(w), g


@dataclass
class PGDResult:
    x: np.ndarray
    value: float
    iters: int
    converged: bool
    history: list


def _inner(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.real(np.vdot(a, b)))


def pgd(f: ValueGrad, proj: Project, x0: np.ndarray, opts: SolverOpts, max_iters: int | None = None,
        accelerate: bool = False) -> PGDResult:
    """Projected gradient with backtracking on the projection arc.

    With ``accelerate`` the gradient is taken at a Nesterov extrapolation point
    and momentum is reset whenever the objective goes up.
    """
    max_iters = opts.max_iters if max_iters is None else max_iters
    x = proj(x0)
    fx, gx = f(x)
    z, fz, gz = x, fx, gx
    t_mom = 1.0
    step = opts.step_init
    hist = [fx]
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        accepted = False
        for _ in range(40):
            y = proj(z - step * gz)
            d = y - z
            fy, gy = f(y)
            if fy <= fz + _inner(gz, d) + _inner(d, d) / (2 * step) + 1e-13:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            if z is x:
                converged = True  # no descent possible at machine precision
                break
            z, fz, gz, t_mom = x, fx, gx, 1.0
            continue
        gmap = np.sqrt(_inner(d, d)) / step
        if accelerate and fy > fx:
            # restart momentum from the last iterate
            z, fz, gz, t_mom = x, fx, gx, 1.0
            continue
        x_prev = x
        x, fx, gx = y, fy, gy
        hist.append(fx)
        if gmap < opts.tol_grad:
            converged = True
            break
        if len(hist) > 10 and abs(hist[-11] - fx) <= opts.tol_obj * max(1.0, abs(fx)):
            converged = True
            break
        if accelerate:
            t_next = 0.5 * (1 + np.sqrt(1 + 4 * t_mom * t_mom))
            z = proj(x + ((t_mom - 1) / t_next) * (x - x_prev))
            t_mom = t_next
            fz, gz = f(z)
        else:
            z, fz, gz = x, fx, gx
            step = min(step * 2.0, 1e3)
    return PGDResult(x, fx, it, converged, hist)


@dataclass
class ALResult:
    x: np.ndarray
    value: float
    violation: float
    iters: int
    converged: bool
    history: list
    fallback: bool = False


def augmented_lagrangian(
    f: ValueGrad,
    g: ValueGrad,
    bound: float,
    proj: Project,
    x0: np.ndarray,
    opts: SolverOpts,
) -> ALResult:
    """min f(X) s.t. g(X) <= bound over the projection's set.

    Penalty mu doubles while the iterate is infeasible and the violation does not
    shrink by 4x; the multiplier is updated after every inner solve. Convergence
    also needs complementary slackness, otherwise a stiff penalty can leave the
    iterate strictly inside the constraint with a stale multiplier.
    """
    # a large mu ill-conditions the inner solve; only tight bounds get a stiffer start
    lam = 0.0
    mu = opts.mu_init if opts.mu_init is not None else float(np.clip(0.05 / max(bound, 1e-12), 1.0, 1e5))
    x = x0
    hist: list = []
    iters = 0
    prev_viol = np.inf
    converged = False
    inner_iters = max(50, opts.max_iters // 4)

    def lag(z):
        fv, fg = f(z)
        gv, gg = g(z)
        t = lam + mu * (gv - bound)
        if t > 0:
            return fv + (t * t - lam * lam) / (2 * mu), fg + t * gg
        return fv - lam * lam / (2 * mu), fg

    for _ in range(opts.outer_rounds):
        res = pgd(lag, proj, x, opts, max_iters=inner_iters)
        x = res.x
        iters += res.iters
        fv, _ = f(x)
        gv, _ = g(x)
        hist.append(fv)
        viol = max(0.0, gv - bound)
        lam = max(0.0, lam + mu * (gv - bound))
        slack_ok = lam == 0.0 or bound - gv <= 1e-6 + 1e-4 * bound
        if viol <= opts.feas_tol and res.converged and slack_ok:
            converged = True
            break
        if viol > opts.feas_tol and viol > 0.25 * prev_viol:
            mu *= 2.0
        prev_viol = viol
    fv, _ = f(x)
    gv, _ = g(x)
    return ALResult(x, fv, max(0.0, gv - bound), iters, converged, hist)


def lambda_sweep(f: ValueGrad, g: ValueGrad, bound: float, proj: Project, x0: np.ndarray, opts: SolverOpts) -> ALResult:
    """Fallback: minimize f + lam*g over the sweep and keep the best feasible point."""
    best = None
    iters = 0
    hist = []
    for lam in opts.lagrange_sweep:
        def pen(z, lam=lam):
            fv, fg = f(z)
            gv, gg = g(z)
            return fv + lam * gv, fg + lam * gg

        res = pgd(pen, proj, x0, opts)
        iters += res.iters
        fv, _ = f(res.x)
        gv, _ = g(res.x)
        hist.append(fv)
        if gv <= bound + opts.feas_tol and (best is None or fv < best[1]):
            best = (res.x, fv, max(0.0, gv - bound))
    if best is None:
        fv, _ = f(x0)
        gv, _ = g(x0)
        return ALResult(x0, fv, max(0.0, gv - bound), iters, False, hist, True)
    return ALResult(best[0], best[1], best[2], iters, True, hist, True)


def restore_feasibility(x: np.ndarray, anchor: np.ndarray, g: Callable[[np.ndarray], float], bound: float,
                        steps: int = 60) -> tuple[np.ndarray, float]:
    """Smallest mixture (1-t) x + t anchor with g <= bound, by bisection on t.

    ``anchor`` must satisfy g(anchor) <= bound; for convex g the feasible t form an interval [t*, 1].
    """
    if g(x) <= bound:
        return x, 0.0
    lo, hi = 0.0, 1.0
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if g((1 - mid) * x + mid * anchor) <= bound:
            hi = mid
        else:
            lo = mid
    return (1 - hi) * x + hi * anchor, hi
