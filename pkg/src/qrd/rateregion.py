"""Qubit/ebit rate region: corner points from a channel N and a map Lambda on its environment.

For N: AJ -> B with minimal Stinespring environment W and Lambda: W -> E_B, the
state Lambda(tau^{B W R}) gives two bounds per copy:

    R     >= 1/2 I(B E_B : R)     (R_min)
    R + E >= S(B E_B)             (sum_min)

where R purifies the source (equivalently R X X' of the purified ensemble).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .channel import Channel, choi_apply, from_isometry, from_kraus, partial_trace_channel, random_channel
from .distortion import Distortion
from .ensemble import Ensemble, tensor_power
from .epsolver import PerCopyDistortion, extension_search, unassisted_point
from .optim import SolverOpts
from .qcore import LayoutError, entropy_of, hermitize, ptrace
from .rdsolver import rea_point

RANDOM_LAMBDAS = 50
# on ties the named constructions win over random draws
_KIND_ORDER = {"trace": 0, "identity": 1, "ep": 3, "unassisted": 4, "random": 5}


@dataclass
class RegionPoint:
    D: float
    k: int
    R_min: float
    sum_min: float
    N: Channel
    Lambda: Channel
    lambda_kind: str = "given"


def _prime_factors(n: int) -> list[int]:
    out, p = [], 2
    while p * p <= n:
        while n % p == 0:
            out.append(p)
            n //= p
        p += 1
    if n > 1:
        out.append(n)
    return out


def _global_state(e: Ensemble, n: Channel) -> tuple[np.ndarray, int, int, int]:
    """Pure state on W (x) B (x) R after the Stinespring isometry of ``n``; returns (rho, dW, dB, dR)."""
    u, s, _ = np.linalg.svd(e.psi_matrix, full_matrices=False)
    r = int(np.sum(s > 1e-12 * s[0]))
    psi = u[:, :r] * s[:r]                         # (AJ) x R
    v = n.stinespring()                            # (B W) x AJ
    dw = v.shape[0] // n.dim_out
    vec = (v @ psi).reshape(n.dim_out, dw, r).transpose(1, 0, 2).reshape(-1)
    return np.outer(vec, vec.conj()), dw, n.dim_out, r


def _corner_values(state: np.ndarray, dw: int, db: int, dr: int, lam: Channel, s_r: float) -> tuple[float, float]:
    t = choi_apply(lam.choi, dw, lam.dim_out, state, db * dr)   # E (x) B (x) R
    de = lam.dim_out
    s_be = entropy_of(ptrace(t, (de * db, dr), [0]))
    s_ber = entropy_of(t)
    return 0.5 * max(s_be + s_r - s_ber, 0.0), s_be


def _distortion_of(e: Ensemble, n: Channel, dist, k: int) -> float:
    d = dist if k == 1 else PerCopyDistortion(dist, k)
    return float(d.cq_value(np.stack([n(s) for s in e.sigmas])))


def region_corner(e: Ensemble, N: Channel, Lambda: Channel, dist: Distortion, k: int = 1) -> RegionPoint:
    """Per-copy (R_min, sum_min) for the pair (N, Lambda) on k copies of the source.

    ``Lambda`` acts on the minimal Stinespring environment of ``N`` (dimension
    ``N.env_dim``, Kraus order of ``N.kraus()``). ``D`` reports the distortion of N.
    """
    ek = e if k == 1 else tensor_power(e, k)
    if N.dim_in != ek.dim_in:
        raise LayoutError(f"N has input dim {N.dim_in}, source needs {ek.dim_in}")
    if N.dim_out != dist.dim_b ** k:
        raise LayoutError(f"N has output dim {N.dim_out}, distortion expects {dist.dim_b ** k}")
    state, dw, db, dr = _global_state(ek, N)
    if Lambda.dim_in != dw:
        raise LayoutError(f"Lambda takes dim {Lambda.dim_in}, environment of N has dim {dw}")
    r_min, s_be = _corner_values(state, dw, db, dr, Lambda, entropy_of(ek.average_input))
    return RegionPoint(_distortion_of(ek, N, dist, k), k, r_min / k, s_be / k, N, Lambda)


def _lambda_from_joint(m: Channel, n: Channel, dim_b: int, dim_e: int) -> Channel:
    """Lambda on the minimal environment of N = Tr_E M with Lambda(V_N) reproducing M."""
    ks = m.kraus()
    split = [k.reshape(dim_b, dim_e, -1) for k in ks]
    # Kraus set of N indexed by (e, i) -> env' = E (x) I
    kp = np.stack([split[i][:, e, :].reshape(-1) for e in range(dim_e) for i in range(len(ks))])
    lc = np.stack([k.reshape(-1) for k in n.kraus()])
    w = kp @ np.linalg.pinv(lc)                    # K'_j = sum_m w[j, m] L_m
    # W: env_N -> E (x) I is an isometry up to rounding; polar-clean it
    u, _, vh = np.linalg.svd(w, full_matrices=False)
    return from_isometry(u @ vh, dim_e, check=False)


def _lambda_family(dw: int, rng: np.random.Generator, dim_e: int) -> list[tuple[str, Channel]]:
    fam: list[tuple[str, Channel]] = [("trace", from_kraus([np.eye(dw)[i:i + 1] for i in range(dw)], check=False)),
                                      ("identity", from_kraus([np.eye(dw)], check=False))]
    primes = _prime_factors(dw)
    if len(primes) > 1:
        seen = set()
        for size in range(1, len(primes)):
            for keep in itertools.combinations(range(len(primes)), size):
                key = tuple(primes[i] for i in keep)
                if key in seen:
                    continue
                seen.add(key)
                fam.append((f"partial:{'x'.join(map(str, key))}", partial_trace_channel(primes, list(keep))))
    for _ in range(RANDOM_LAMBDAS):
        d_out = int(rng.integers(1, dim_e + 1))
        fam.append(("random", random_channel(dw, d_out, rng)))
    return fam


def pareto_filter(points: list[RegionPoint], tol: float = 1e-12) -> list[RegionPoint]:
    """Points not dominated in (R_min, sum_min), sorted by increasing R_min."""
    out: list[RegionPoint] = []
    key = lambda q: (round(q.R_min, 10), round(q.sum_min, 10), _KIND_ORDER.get(q.lambda_kind, 2))
    for p in sorted(points, key=key):
        if not out or p.sum_min < out[-1].sum_min - tol:
            out.append(p)
    return out


def region_curve(e: Ensemble, D: float, dist: Distortion, opts: SolverOpts | None = None,
                 dim_e: int | None = None, pareto: bool = True) -> list[RegionPoint]:
    """Achievable corner points at distortion D (k = 1), Pareto filtered.

    Two channels are used: the assisted-rate certificate, swept over a family of
    Lambdas (trace, identity, partial traces, random channels, optimized), and the
    unassisted optimizer M split into N = Tr_E M and its Lambda.
    """
    opts = SolverOpts(restarts=5) if opts is None else opts
    rng = np.random.default_rng(opts.seed)
    pts: list[RegionPoint] = []
    s_r = entropy_of(e.average_input)

    n1 = rea_point(e, D, dist, opts).channel
    state, dw, db, dr = _global_state(e, n1)
    d_lam = max(dw, 1) if dim_e is None else dim_e
    fam = _lambda_family(dw, rng, d_lam)
    # optimized Lambda: least S(B E_B) for this N
    wb = ptrace(state, (dw * db, dr), [0])
    vals, chans, _ = extension_search(wb, dw, db, d_lam, opts)
    best = int(np.argmin(vals))
    fam.append(("ep", Channel(hermitize(chans[best]), dw, d_lam, check=False)))
    for kind, lam in fam:
        r_min, s_be = _corner_values(state, dw, db, dr, lam, s_r)
        pts.append(RegionPoint(float(D), 1, r_min, s_be, n1, lam, kind))

    ua = unassisted_point(e, D, dist, 1, opts)
    m = ua.channel
    dim_env = m.dim_out // dist.dim_b
    c4 = m.choi.reshape(m.dim_in, dist.dim_b, dim_env, m.dim_in, dist.dim_b, dim_env)
    n2 = Channel(hermitize(np.einsum("ibejce->ibjc", c4).reshape(m.dim_in * dist.dim_b, -1)),
                 m.dim_in, dist.dim_b, check=False)
    lam2 = _lambda_from_joint(m, n2, dist.dim_b, dim_env)
    state2, dw2, db2, dr2 = _global_state(e, n2)
    r_min, s_be = _corner_values(state2, dw2, db2, dr2, lam2, s_r)
    pts.append(RegionPoint(float(D), 1, r_min, s_be, n2, lam2, "unassisted"))
    return pareto_filter(pts) if pareto else pts
