"""Command-line front end: ``qrd <subcommand> ...``.

Exit codes: 0 success, 1 invalid input (message names the flag, file or field),
2 solver non-convergence under ``--strict`` or a failing ``verify``/``blind-limit`` check.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, fixtures
from .distortion import KINDS, Distortion
from .ensemble import Ensemble, EnsembleError, cq_state, from_json
from .io import matrix_to_json, read_json
from .optim import SolverOpts

SEED_MAX = 2 ** 64


class UsageError(Exception):
    """Invalid command-line input; exits with status 1."""


# -- formatting ------------------------------------------------------------------------

def fmt(v) -> str:
    """Cell text: 9 significant digits for reals, lower-case booleans."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v) + 0.0:.9g}"
    return str(v)


def _json_value(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return float(f"{float(v) + 0.0:.9g}")
    return v


def render(header: dict, columns: list[str], rows: list[dict], fmt_kind: str, footer: dict | None = None) -> str:
    footer = footer or {}
    if fmt_kind == "json":
        doc = {"meta": {k: _json_value(v) for k, v in header.items()},
               "columns": columns,
               "rows": [{c: _json_value(r[c]) for c in columns} for r in rows]}
        if footer:
            doc["summary"] = {k: _json_value(v) for k, v in footer.items()}
        return json.dumps(doc, indent=2) + "\n"
    buf = io.StringIO()
    buf.write("# qrd " + " ".join(f"{k}={fmt(v)}" for k, v in header.items()) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(r[c]) for c in columns])
    for k, v in footer.items():
        buf.write(f"# {k}={fmt(v)}\n")
    return buf.getvalue()


def _parse_cell(s: str):
    if s in ("true", "false"):
        return s == "true"
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def read_table(text: str) -> tuple[dict, list[dict]]:
    """Parse CSV written by :func:`render`; returns (meta, rows) with typed cells."""
    meta: dict = {}
    body = []
    for line in text.splitlines():
        if line.startswith("#"):
            toks = line[1:].split()
            if toks and toks[0] == "qrd":
                toks = toks[1:]
            for t in toks:
                k, _, v = t.partition("=")
                meta[k] = _parse_cell(v)
        elif line.strip():
            body.append(line)
    rows = [{k: _parse_cell(v) for k, v in r.items()} for r in csv.DictReader(body)]
    return meta, rows


# -- argument validation --------------------------------------------------------------

def parse_grid(spec: str) -> np.ndarray:
    parts = spec.split(":")
    if len(parts) != 3:
        raise UsageError(f"--dgrid: expected a:b:n, got {spec!r}")
    try:
        a, b, n = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise UsageError(f"--dgrid: could not parse {spec!r} as a:b:n") from None
    if not (np.isfinite(a) and np.isfinite(b)) or a < 0 or b < a:
        raise UsageError(f"--dgrid: need 0 <= a <= b, got a={a:g}, b={b:g}")
    if n < 1:
        raise UsageError(f"--dgrid: need n >= 1, got {n}")
    return np.linspace(a, b, n) if n > 1 else np.array([a])


def load_ensemble(ref: str) -> Ensemble:
    p = Path(ref)
    if p.suffix == ".json" or p.exists():
        if not p.is_file():
            raise UsageError(f"--ensemble: file not found: {ref}")
        try:
            obj = read_json(p)
        except json.JSONDecodeError as exc:
            raise UsageError(f"--ensemble: {ref}: invalid JSON ({exc})") from None
        try:
            return from_json(obj)
        except (EnsembleError, ValueError) as exc:
            raise UsageError(f"--ensemble: {ref}: {exc}") from None
    try:
        return fixtures.get(ref)
    except KeyError:
        raise UsageError(f"--ensemble: {ref!r} is neither a file nor a fixture "
                         f"({', '.join(fixtures.names())})") from None


def thread_count() -> int:
    raw = os.environ.get("QRD_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"QRD_THREADS: expected a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"QRD_THREADS: expected a positive integer, got {n}")
    return n


def grid_map(fn, grid) -> list:
    """fn over the grid points, results in grid order whatever the thread count."""
    with ThreadPoolExecutor(max_workers=thread_count()) as pool:
        return list(pool.map(fn, grid))


@dataclass
class RunConfig:
    subcommand: str
    ensemble: str
    distortion: str
    grid: np.ndarray
    seed: int
    restarts: int
    max_iters: int
    tol_grad: float
    out: str | None
    format: str

    def opts(self) -> SolverOpts:
        return SolverOpts(max_iters=self.max_iters, tol_grad=self.tol_grad, restarts=self.restarts, seed=self.seed)

    def header(self, **extra) -> dict:
        h = {"cmd": self.subcommand, "version": __version__, "ensemble": self.ensemble,
             "distortion": self.distortion, "seed": self.seed, "restarts": self.restarts}
        h.update(extra)
        return h


def _config(args) -> RunConfig:
    if not 0 <= args.seed < SEED_MAX:
        raise UsageError(f"--seed: must be in [0, 2^64), got {args.seed}")
    if args.restarts < 0:
        raise UsageError(f"--restarts: must be >= 0, got {args.restarts}")
    if args.max_iters < 1:
        raise UsageError(f"--max-iters: must be >= 1, got {args.max_iters}")
    if not args.tol_grad > 0:
        raise UsageError(f"--tol-grad: must be positive, got {args.tol_grad}")
    grid = parse_grid(args.dgrid) if getattr(args, "dgrid", None) is not None else np.array([])
    return RunConfig(args.command, getattr(args, "ensemble", ""), getattr(args, "distortion", "fidelity"), grid,
                     args.seed, args.restarts, args.max_iters, args.tol_grad, args.out, args.format)


def emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    try:
        Path(out).write_text(text)
    except OSError as exc:
        raise UsageError(f"--out: cannot write {out}: {exc.strerror}") from None


# -- subcommands -------------------------------------------------------------------------

def _dist(cfg: RunConfig, e: Ensemble) -> Distortion:
    return Distortion.for_ensemble(e, cfg.distortion)


def cmd_ki(args, cfg: RunConfig) -> int:
    from .kidecomp import KIError, blind_rate, ki_decompose, verify_ki

    e = load_ensemble(args.ensemble)
    try:
        dec = ki_decompose(e, seed=cfg.seed % 2 ** 32)
    except KIError as exc:
        print(f"ki: decomposition failed: {exc}", file=sys.stderr)
        return 2
    rep = verify_ki(dec, e)
    s_cq = blind_rate(e, dec)
    if cfg.format == "json":
        doc = {"meta": {"cmd": "ki", "version": __version__, "ensemble": cfg.ensemble, "seed": cfg.seed},
               "S_CQ": _json_value(s_cq), "residual": _json_value(rep.residual), "checks_passed": rep.passed,
               "probs": [_json_value(p) for p in dec.probs],
               "blocks": [{"c": c, "dimQ": b.dim_q, "dimN": b.dim_n,
                           "p_c_given_x": [_json_value(v) for v in b.p_c_given_x],
                           "omega": matrix_to_json(b.omega),
                           "rho_cx": [matrix_to_json(r) for r in b.rho_cx],
                           "vectors": matrix_to_json(b.vectors)} for c, b in enumerate(dec.blocks)]}
        emit(json.dumps(doc, indent=2) + "\n", cfg.out)
    else:
        cols = ["c", "dimQ", "dimN"] + [f"p_c_given_x{x}" for x in range(e.n)]
        rows = [{"c": t["c"], "dimQ": t["dimQ"], "dimN": t["dimN"],
                 **{f"p_c_given_x{x}": v for x, v in enumerate(t["p_c_given_x"])}} for t in dec.table()]
        footer = {"S_CQ": s_cq, "residual": rep.residual, "checks_passed": rep.passed}
        emit(render({"cmd": "ki", "version": __version__, "ensemble": cfg.ensemble, "seed": cfg.seed},
                    cols, rows, "csv", footer), cfg.out)
    return 2 if args.strict and not rep.passed else 0


RD_COLUMNS = ["D", "rate_bits", "converged", "iters", "feasibility_residual"]


def _rd_row(pt) -> dict:
    return {"D": pt.D, "rate_bits": pt.rate, "converged": pt.converged, "iters": pt.iters,
            "feasibility_residual": pt.feasibility_residual}


def cmd_rd_ea(args, cfg: RunConfig) -> int:
    from .rdsolver import rea_point

    e = load_ensemble(args.ensemble)
    dist = _dist(cfg, e)
    pts = grid_map(lambda d: rea_point(e, float(d), dist, cfg.opts()), cfg.grid)
    emit(render(cfg.header(dgrid=args.dgrid), RD_COLUMNS, [_rd_row(p) for p in pts], cfg.format), cfg.out)
    return 2 if args.strict and not all(p.converged for p in pts) else 0


def cmd_rd_ua(args, cfg: RunConfig) -> int:
    from .epsolver import unassisted_point, visible_point
    from .rdsolver import rea_point

    if args.k not in (1, 2):
        raise UsageError(f"--k: must be 1 or 2, got {args.k}")
    if args.dim_env is not None and args.dim_env < 1:
        raise UsageError(f"--dim-env: must be >= 1, got {args.dim_env}")
    e = load_ensemble(args.ensemble)
    dist = _dist(cfg, e)

    def point(d):
        d = float(d)
        if args.visible:
            pt = visible_point(e, d, dist, args.k, cfg.opts(), args.dim_env)
            lower = rea_point(e, d, dist, SolverOpts(**{**cfg.opts().__dict__, "restarts": 1})).rate
        else:
            pt = unassisted_point(e, d, dist, args.k, cfg.opts(), args.dim_env)
            lower = pt.extra["lower"]
        return pt, lower

    res = grid_map(point, cfg.grid)
    rows = [{**_rd_row(p), "upper": p.rate, "lower": lo, "restart_spread": p.restart_spread} for p, lo in res]
    head = cfg.header(dgrid=args.dgrid, k=args.k, visible=bool(args.visible),
                      dim_env="auto" if args.dim_env is None else args.dim_env)
    emit(render(head, RD_COLUMNS + ["upper", "lower", "restart_spread"], rows, cfg.format), cfg.out)
    return 2 if args.strict and not all(p.converged for p, _ in res) else 0


def cmd_ep(args, cfg: RunConfig) -> int:
    from .epsolver import ep

    if args.dim_out is not None and args.dim_out < 1:
        raise UsageError(f"--dim-out: must be >= 1, got {args.dim_out}")
    e = load_ensemble(args.ensemble)
    rho = cq_state(e)
    labels = list(rho.layout.labels)
    part_x = [l for l in labels if l == "X"]
    est = ep(rho, [l for l in labels if l != "X"], part_x, cfg.opts(), args.dim_out)
    row = {"upper": est.upper, "lower": est.lower, "restart_spread": est.restart_spread,
           "restarts": est.restarts_used}
    head = {k: v for k, v in cfg.header().items() if k != "distortion"}
    emit(render(head, list(row), [row], cfg.format), cfg.out)
    return 0


def cmd_blind_limit(args, cfg: RunConfig) -> int:
    from .epsolver import blind_limit_check

    if not args.d > 0:
        raise UsageError(f"--d: must be positive, got {args.d}")
    e = load_ensemble(args.ensemble)
    if e.dim_j != 1:
        raise UsageError(f"--ensemble: {args.ensemble} carries side information; the blind limit needs dim J = 1")
    rep = blind_limit_check(e, args.d, cfg.opts(), args.tol)
    row = {"D": rep.D, "blind_rate": rep.blind_rate, "unassisted": rep.unassisted,
           "difference": rep.difference, "tol": rep.tol, "passed": rep.passed}
    head = {k: v for k, v in cfg.header().items() if k != "distortion"}
    emit(render(head, list(row), [row], cfg.format), cfg.out)
    return 0 if rep.passed or not args.strict else 2


def cmd_region(args, cfg: RunConfig) -> int:
    from .rateregion import region_curve

    if args.dim_e is not None and args.dim_e < 1:
        raise UsageError(f"--dim-e: must be >= 1, got {args.dim_e}")
    e = load_ensemble(args.ensemble)
    dist = _dist(cfg, e)
    curves = grid_map(lambda d: region_curve(e, float(d), dist, cfg.opts(), args.dim_e), cfg.grid)
    rows = [{"D": p.D, "R_min": p.R_min, "sum_min": p.sum_min, "lambda_kind": p.lambda_kind}
            for pts in curves for p in pts]
    emit(render(cfg.header(dgrid=args.dgrid), ["D", "R_min", "sum_min", "lambda_kind"], rows, cfg.format), cfg.out)
    return 0


def cmd_verify(args, cfg: RunConfig) -> int:
    from .verify import SUITES, run_suite

    if args.suite not in SUITES + ("all",):
        raise UsageError(f"--suite: unknown suite {args.suite!r}; choose from {', '.join(SUITES + ('all',))}")
    if args.instances < 1:
        raise UsageError(f"--instances: must be >= 1, got {args.instances}")
    results = run_suite(args.suite, cfg.seed, args.instances)
    cols = ["suite", "property", "n", "residual", "tol", "status"]
    rows = [{"suite": r.suite, "property": r.name, "n": r.n, "residual": r.residual, "tol": r.tol,
             "status": "PASS" if r.passed else "FAIL"} for r in results]
    head = {"cmd": "verify", "version": __version__, "suite": args.suite, "seed": cfg.seed,
            "instances": args.instances}
    emit(render(head, cols, rows, cfg.format, {"all_passed": all(r.passed for r in results)}), cfg.out)
    return 0 if all(r.passed for r in results) else 2


# -- parser ------------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="RNG seed, 0 <= seed < 2^64")
    common.add_argument("--restarts", type=int, default=3, help="random restarts per point")
    common.add_argument("--max-iters", type=int, default=200)
    common.add_argument("--tol-grad", type=float, default=1e-6)
    common.add_argument("--out", default=None, help="output file (default: stdout)")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--strict", action="store_true", help="exit 2 when a point does not converge")

    src = _Parser(add_help=False)
    src.add_argument("--ensemble", required=True, help="ensemble JSON file or fixture name")

    rd = _Parser(add_help=False)
    rd.add_argument("--dgrid", default="0:0.5:6", help="distortion grid a:b:n")
    rd.add_argument("--distortion", choices=KINDS, default="fidelity")

    p = _Parser(prog="qrd", description="Rate-distortion tools for quantum ensemble sources.")
    p.add_argument("--version", action="version", version=f"qrd {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("ki", parents=[common, src], help="Koashi-Imoto block table and S(CQ)")
    sub.add_parser("rd-ea", parents=[common, src, rd], help="entanglement-assisted rate curve")
    ua = sub.add_parser("rd-ua", parents=[common, src, rd], help="unassisted achievable rate g_k")
    ua.add_argument("--k", type=int, default=1, help="block length (1 or 2)")
    ua.add_argument("--dim-env", type=int, default=None, help="environment dimension of the joint encoder")
    ua.add_argument("--visible", action="store_true", help="encoder sees the label x")
    e = sub.add_parser("ep", parents=[common, src], help="entanglement of purification E_p(A:X) of the cq state")
    e.add_argument("--dim-out", type=int, default=None)
    bl = sub.add_parser("blind-limit", parents=[common, src], help="compare g_1 at small D with S(CQ)")
    bl.add_argument("--d", type=float, default=1e-3, help="small distortion")
    bl.add_argument("--tol", type=float, default=0.05)
    rg = sub.add_parser("region", parents=[common, src, rd], help="qubit/ebit region corner points")
    rg.add_argument("--dim-e", type=int, default=None, help="output dimension of Lambda")
    v = sub.add_parser("verify", parents=[common], help="property suites")
    v.add_argument("--suite", default="all")
    v.add_argument("--instances", type=int, default=200)
    return p


COMMANDS = {"ki": cmd_ki, "rd-ea": cmd_rd_ea, "rd-ua": cmd_rd_ua, "ep": cmd_ep,
            "blind-limit": cmd_blind_limit, "region": cmd_region, "verify": cmd_verify}


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = _config(args)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"qrd {args.command}: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
