"""Command line: forward | abf | solve | check {...} | manufacture.

Exit codes: 0 success, 1 validation failure, 2 solver failure, 3 configuration or usage error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .abf import (AbfParams, SearchExhausted, default_params, find_shift, match_boundary,
                  phi_profile, r0_threshold, validate_abf)
from .discretization import DiscreteField, DiscreteProblem, PolarGrid2D, RadialGrid
from .geometry import GeodesicCap
from .io import (ConfigError, RunConfig, curvature_data, dumps, load_config, serialize_report,
                 write_field_csv, write_K_table)
from .kernel import (ProblemDims, ProductJet, curvature_K, f_operator, mu_matrix,
                     principal_curvatures)
from .solver import (CertificateInvalid, ContinuityConfig, PathStalled, SolverError,
                     continuity_solve)

EXIT_OK, EXIT_INVALID, EXIT_SOLVER, EXIT_CONFIG = 0, 1, 2, 3

log = logging.getLogger("prodsphere")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _floats(text: str):
    return [float(x) for x in text.split(",") if x.strip()] if text else []


def parse_k_spec(spec: str) -> dict:
    """constant:0.5 | radial_bump:c1,c2 | scaled_subsolution:c | table:path"""
    kind, _, rest = spec.partition(":")
    try:
        if kind == "constant":
            return {"kind": kind, "params": {"value": float(rest)}}
        if kind == "scaled_subsolution":
            return {"kind": kind, "params": {"c": float(rest)}}
        if kind == "radial_bump":
            c1, c2 = _floats(rest)
            return {"kind": kind, "params": {"c1": c1, "c2": c2}}
        if kind == "table" and rest:
            return {"kind": kind, "params": {"path": rest}}
    except ValueError:
        pass
    raise ConfigError(f"cannot parse K spec '{spec}'")


def make_grid(cap: GeodesicCap, grid: dict):
    try:
        if grid["backend"] == "radial":
            return RadialGrid(cap, grid["nr"])
        return PolarGrid2D(cap, grid["nr"], grid["nphi"])
    except ValueError as exc:
        raise ConfigError(f"grid: {exc}") from None


def _abf_base(params: dict, cap) -> AbfParams:
    base = default_params(cap)
    return AbfParams(params.get("E", base.E), params.get("scaleF", base.scaleF))


def build_problem(cfg: RunConfig):
    """(DiscreteProblem, AbfParams) for a run configuration."""
    dims = ProblemDims(cfg.m, cfg.n)
    dims.require_solvable()
    cap = GeodesicCap(cfg.m, cfg.theta_max)
    grid = make_grid(cap, cfg.grid)
    kind, bp = cfg.boundary["kind"], cfg.boundary["params"]
    Kkind = cfg.K["kind"]
    try:
        if kind == "abf_params":
            params = AbfParams(bp["E"], bp["scaleF"], bp["A"])
        elif kind == "constant":
            params = match_boundary(_abf_base(bp, cap), cap, bp["value"])
        elif Kkind == "scaled_subsolution":
            params = match_boundary(_abf_base(bp, cap), cap, r0_threshold(dims))
        else:
            params = find_shift(cap, dims, curvature_data(cfg.K), _abf_base(bp, cap), grid=grid)
        params.check_cap(cap)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"boundary: {exc}") from None
    psi = phi_profile(grid.theta, params)[0]
    if Kkind == "scaled_subsolution":
        c = cfg.K["params"]["c"]
        if not 0 < c <= 1:
            raise ConfigError("scaled_subsolution needs 0 < c <= 1")
        K = c * DiscreteProblem(grid, dims, np.ones(grid.n_nodes), psi).F_h(psi)
    else:
        data = curvature_data(cfg.K)
        if not data.radial and grid.backend == "radial":
            raise ConfigError("an azimuthally varying K table needs the polar2d backend")
        K = np.asarray(data(grid.theta, grid.phi), dtype=float)
    return DiscreteProblem(grid, dims, K, psi), params


def run_solve(cfg: RunConfig, field_csv=None, report_json=None, out=sys.stdout) -> int:
    field_csv = field_csv or cfg.outputs.get("field_csv")
    report_json = report_json or cfg.outputs.get("report_json")

    def emit(text):
        if report_json:
            Path(report_json).write_text(text)
        out.write(text)

    try:
        problem, params = build_problem(cfg)
    except SearchExhausted as exc:
        emit(serialize_report(None, cfg, {"message": str(exc)}, status="abf_search_exhausted"))
        return EXIT_INVALID
    extra = {"abf": {"E": params.E, "scaleF": params.scaleF, "A": params.A},
             "grid": problem.grid.describe(),
             "newton_tol": cfg.solver.tol(problem.grid.backend)}
    try:
        report = continuity_solve(problem, cfg.solver)
    except CertificateInvalid as exc:
        cert = validate_abf(DiscreteField(problem.grid, problem.psi),
                            DiscreteField(problem.grid, problem.K), problem.dims,
                            problem.grid.cap)
        emit(serialize_report(None, cfg, {**extra, "message": str(exc),
                                          "certificate": cert.to_dict()},
                              status="certificate_invalid"))
        return EXIT_INVALID
    except PathStalled as exc:
        emit(serialize_report(None, cfg, {**extra, "message": str(exc), "last_t": exc.last_t,
                                          "path": [p.to_dict() for p in exc.path]},
                              status="path_stalled"))
        return EXIT_SOLVER
    except SolverError as exc:
        emit(serialize_report(None, cfg, {**extra, "message": str(exc)}, status="solver_failed"))
        return EXIT_SOLVER
    from .verification import comparison_check

    verdict = comparison_check(report.u, problem.psi, problem)
    extra["comparison_vs_psi"] = verdict.to_dict()
    if field_csv:
        write_field_csv(field_csv, report.u, problem.dims)
    emit(serialize_report(report, cfg, extra))
    return EXIT_OK


# --- subcommands ----------------------------------------------------------------------------

def cmd_forward(args, out) -> int:
    dims = ProblemDims(args.m, args.n)
    k = args.m + args.n
    grad = np.array(_floats(args.grad)) if args.grad else np.zeros(k)
    hess = np.array(_floats(args.hess)) if args.hess else np.zeros(k * k)
    if grad.shape != (k,) or hess.shape != (k * k,):
        raise ConfigError(f"--grad needs {k} values and --hess {k * k} (row-major)")
    hess = hess.reshape(k, k)
    if not np.allclose(hess, hess.T):
        raise ConfigError("--hess must be symmetric")
    jet = ProductJet.from_arrays(args.u, grad, hess, args.m)
    mu = mu_matrix(jet)
    out.write(dumps({"K": curvature_K(jet, dims), "F": f_operator(jet, dims), "det_M": mu.det,
                     "min_eig_M": mu.min_eig,
                     "principal_curvatures": principal_curvatures(jet, dims)}))
    return EXIT_OK


def cmd_abf(args, out) -> int:
    dims = ProblemDims(args.m, args.n)
    dims.require_solvable()
    cap = GeodesicCap(args.m, args.theta_max)
    Kspec = parse_k_spec(args.k)
    if Kspec["kind"] == "scaled_subsolution":
        raise ConfigError("abf needs an explicit K (constant, radial_bump or table)")
    K = curvature_data(Kspec)
    grid = make_grid(cap, {"backend": args.backend, "nr": args.nr, "nphi": args.nphi})
    base = default_params(cap)
    params = AbfParams(args.E if args.E is not None else base.E, args.scaleF)
    try:
        params.check_cap(cap)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    try:
        found = find_shift(cap, dims, K, params, grid=grid)
    except SearchExhausted as exc:
        out.write(dumps({"status": "search_exhausted", "message": str(exc)}))
        return EXIT_INVALID
    cert = validate_abf(found, K, dims, cap, grid=grid)
    out.write(dumps({"E": found.E, "scaleF": found.scaleF, "A": found.A,
                     "certificate": cert.to_dict()}))
    return EXIT_OK if cert.valid else EXIT_INVALID


def cmd_solve(args, out) -> int:
    cfg = load_config(args.config)
    return run_solve(cfg, args.field_csv, args.report_json, out)


def cmd_manufacture(args, out) -> int:
    from .verification import abf_radial_profile, manufacture_problem

    dims = ProblemDims(args.m, args.n)
    dims.require_solvable()
    cap = GeodesicCap(args.m, args.theta_max)
    b = r0_threshold(dims) if args.boundary is None else args.boundary
    star = match_boundary(AbfParams(args.E_star), cap, b)
    grid = make_grid(cap, {"backend": args.backend, "nr": args.nr, "nphi": args.nphi})
    mp = manufacture_problem(abf_radial_profile(star), dims, cap, grid=grid)
    table = Path(args.out_k)
    if grid.backend == "radial":
        write_K_table(table, grid.theta, mp.K.values)
    else:
        write_K_table(table, grid.theta, mp.K.values, grid.phi)
    doc = {"u_star": {"E": star.E, "scaleF": star.scaleF, "A": star.A},
           "psi_boundary": mp.psi_boundary, "certificate": mp.certificate.to_dict(),
           "K_table": str(table)}
    if args.config_out:
        cfg = {"dims": {"m": args.m, "n": args.n}, "cap": {"theta_max": args.theta_max},
               "K": {"kind": "table", "params": {"path": str(table.resolve())}},
               "boundary": {"kind": "constant", "params": {"value": mp.psi_boundary}},
               "grid": grid.describe(), "solver": ContinuityConfig().to_dict(), "outputs": {}}
        Path(args.config_out).write_text(dumps(cfg))
        doc["config"] = args.config_out
    if args.u_star_csv:
        write_field_csv(args.u_star_csv, mp.u_star, dims)
    out.write(dumps(doc))
    return EXIT_OK if mp.certificate.valid else EXIT_INVALID


def cmd_check(args, out) -> int:
    from . import verification as V

    rng = np.random.default_rng(args.seed)
    if args.what == "oracle":
        rows = []
        while len(rows) < args.samples:
            dims = ProblemDims(int(rng.choice([2, 3])) if args.m is None else args.m,
                               1 if args.n is None else args.n)
            jet = V.random_jet(rng, dims)
            if abs(mu_matrix(jet).det) < 1e-2:
                continue
            point = V.random_chart_point(rng, dims)
            rows.append(V.extrinsic_oracle(V.jet_field(jet, point, dims), point, dims, args.fd_step))
        ratios = np.array([r.convergence_ratio for r in rows])
        ok = bool(np.all((ratios >= 3) & (ratios <= 5)))
        out.write(dumps({"samples": len(rows), "ratio_min": ratios.min(), "ratio_max": ratios.max(),
                         "rel_error_max": max(r.rel_error for r in rows),
                         "swap_signs_observed": sorted({r.swap_sign for r in rows}),
                         "passed": ok}))
        return EXIT_OK if ok else EXIT_INVALID
    if args.what == "jacobian":
        worst = V.jacobian_deviation(rng, args.backend, args.samples)
        ok = worst < 1e-6
        out.write(dumps({"backend": args.backend, "max_rel_deviation": worst, "passed": ok}))
        return EXIT_OK if ok else EXIT_INVALID
    if args.what == "obstruction":
        reps = [V.global_obstruction_demo(V.random_smooth_field(rng)) for _ in range(args.samples)]
        ok = all(r.passed for r in reps)
        out.write(dumps({"samples": len(reps), "largest_xx_eig_max": max(r.largest_xx_eig for r in reps),
                         "passed": ok}))
        return EXIT_OK if ok else EXIT_INVALID
    if args.config is None:
        raise ConfigError(f"check {args.what} needs --config")
    cfg = load_config(args.config)
    problem, params = build_problem(cfg)
    try:
        report = continuity_solve(problem, cfg.solver)
    except CertificateInvalid as exc:
        out.write(dumps({"status": "certificate_invalid", "message": str(exc)}))
        return EXIT_INVALID
    except SolverError as exc:
        out.write(dumps({"status": "solver_failed", "message": str(exc)}))
        return EXIT_SOLVER
    if args.what == "comparison":
        verdict = V.comparison_check(report.u, problem.psi, problem)
        out.write(dumps(verdict.to_dict()))
        return EXIT_OK if verdict.confirmed else EXIT_INVALID
    if problem.grid.backend != "radial":
        raise ConfigError("boundary-identity needs the radial backend")
    rep = V.boundary_identity_check(report.u, params, problem.dims)
    out.write(dumps(rep.to_dict()))
    return EXIT_OK if rep.passed else EXIT_INVALID


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="prodsphere", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("forward", help="K, F and principal curvatures of one jet")
    f.add_argument("--m", type=int, required=True)
    f.add_argument("--n", type=int, required=True)
    f.add_argument("--u", type=float, default=0.0)
    f.add_argument("--grad", default="", help="comma-separated, m+n values")
    f.add_argument("--hess", default="", help="comma-separated, (m+n)^2 values row-major")

    def grid_args(q):
        q.add_argument("--backend", choices=["radial", "polar2d"], default="radial")
        q.add_argument("--nr", type=int, default=None)
        q.add_argument("--nphi", type=int, default=128)

    a = sub.add_parser("abf", help="find the shift A of the boundary function for K")
    a.add_argument("--m", type=int, required=True)
    a.add_argument("--n", type=int, required=True)
    a.add_argument("--theta-max", type=float, required=True)
    a.add_argument("--k", required=True, help="constant:c | radial_bump:c1,c2 | table:path")
    a.add_argument("--E", type=float, default=None)
    a.add_argument("--scaleF", type=float, default=1.0)
    grid_args(a)

    s = sub.add_parser("solve", help="solve the Dirichlet problem of a run configuration")
    s.add_argument("--config", required=True)
    s.add_argument("--field-csv", default=None)
    s.add_argument("--report-json", default=None)

    c = sub.add_parser("check", help="independent checks")
    c.add_argument("what", choices=["oracle", "jacobian", "comparison", "obstruction",
                                    "boundary-identity"])
    c.add_argument("--config", default=None)
    c.add_argument("--samples", type=int, default=20)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--fd-step", type=float, default=1e-2)
    c.add_argument("--m", type=int, default=None)
    c.add_argument("--n", type=int, default=None)
    c.add_argument("--backend", choices=["radial", "polar2d"], default="radial")

    mf = sub.add_parser("manufacture", help="K table for a manufactured radial solution")
    mf.add_argument("--m", type=int, required=True)
    mf.add_argument("--n", type=int, required=True)
    mf.add_argument("--theta-max", type=float, required=True)
    mf.add_argument("--E-star", type=float, default=0.15)
    mf.add_argument("--boundary", type=float, default=None, help="u*(theta_max); default r0")
    mf.add_argument("--out-k", required=True)
    mf.add_argument("--config-out", default=None)
    mf.add_argument("--u-star-csv", default=None)
    grid_args(mf)
    return p


COMMANDS = {"forward": cmd_forward, "abf": cmd_abf, "solve": cmd_solve, "check": cmd_check,
            "manufacture": cmd_manufacture}


def run_cli(argv=None, out=None) -> int:
    out = sys.stdout if out is None else out
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "nr", 0) is None:
        args.nr = 129 if args.backend == "radial" else 65
    try:
        return COMMANDS[args.command](args, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        # m <= n and other validation failures of the inputs themselves
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
