"""Continuity method with damped Newton corrections for det M(u) = K f^s.

The path K_t = (1 - t) F_h(psi) + t K starts at a problem solved exactly by u = psi
(F_h is the discrete operator det M / f^s on the solver grid) and ends at the target.
Each accepted path point is a converged Newton iterate with M(u) positive definite at
every node.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .abf import AbfCertificate, r0_threshold, validate_abf
from .discretization import DiscreteField, DiscreteProblem
from .kernel import PD_THRESHOLD, f_eval, f_r_eval

log = logging.getLogger(__name__)

DEFAULT_TOL = {"radial": 1e-10, "polar2d": 1e-8}


@dataclass
class ContinuityConfig:
    dt0: float = 0.1
    dt_min: float = 1e-4
    newton_tol: float | None = None
    max_newton: int = 50
    max_halvings: int = 30
    linear_tol: float = 1e-10

    def __post_init__(self):
        if not (0 < self.dt_min <= self.dt0 <= 1):
            raise ValueError("need 0 < dt_min <= dt0 <= 1")
        if self.newton_tol is not None and not self.newton_tol > 0:
            raise ValueError("newton_tol must be positive")
        if self.max_newton < 0 or self.max_halvings < 0:
            raise ValueError("iteration limits must be non-negative")

    def tol(self, backend: str) -> float:
        return DEFAULT_TOL[backend] if self.newton_tol is None else self.newton_tol

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ContinuityConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown solver settings: {sorted(unknown)}")
        return cls(**d)


class SolverError(RuntimeError):
    pass


class CertificateInvalid(SolverError):
    pass


class NewtonDiverged(SolverError):
    pass


class MaxIterations(SolverError):
    pass


class LineSearchFailed(SolverError):
    pass


class PathStalled(SolverError):
    def __init__(self, msg, last_t: float, path: list):
        super().__init__(msg)
        self.last_t = last_t
        self.path = path


@dataclass
class NewtonHistory:
    residuals: list = field(default_factory=list)
    damping: list = field(default_factory=list)
    rejections: list = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.damping)


@dataclass
class PathPoint:
    t: float
    u: DiscreteField
    residual_norm: float
    newton_iters: int
    min_eig_M: float
    K_bracketed: bool = True
    below_r0: bool = True

    def to_dict(self) -> dict:
        return {"t": self.t, "residual_norm": self.residual_norm, "newton_iters": self.newton_iters,
                "min_eig_M": self.min_eig_M, "K_bracketed": self.K_bracketed,
                "below_r0": self.below_r0}


@dataclass
class SolveReport:
    path: list
    u: DiscreteField
    diagnostics: dict
    config: ContinuityConfig
    certificate: AbfCertificate | None = None
    status: str = "converged"

    @property
    def final_residual(self) -> float:
        return self.path[-1].residual_norm


def newton_solve(u_init, K_target, problem: DiscreteProblem, config: ContinuityConfig):
    """Damped Newton on the interior residual.  Returns (full nodal u, NewtonHistory).

    A trial step is accepted when every node stays positive definite and the residual
    sup-norm decreases; otherwise the step is halved, up to ``max_halvings`` times.
    """
    tol = config.tol(problem.grid.backend)
    I = problem.interior
    u = np.array(u_init.values if isinstance(u_init, DiscreteField) else u_init, dtype=float)
    K = np.asarray(K_target, dtype=float)
    r = problem.residual(u, K)
    rn = float(np.max(np.abs(r)))
    hist = NewtonHistory([rn])
    for it in range(config.max_newton + 1):
        if rn <= tol:
            return u, hist
        if it == config.max_newton:
            raise MaxIterations(f"residual {rn:.3e} after {it} Newton steps")
        J = problem.jacobian(u, K)
        du = problem.solve_linear(J, -r)
        if not np.all(np.isfinite(du)):
            raise LineSearchFailed("linear solve produced non-finite values")
        # normwise backward error of the inner solve
        lin = np.max(np.abs(J @ du + r)) / (abs(J).sum(axis=1).max() * np.max(np.abs(du)) + rn)
        if lin > config.linear_tol:
            raise LineSearchFailed(f"linear solve failed (relative residual {lin:.2e})")
        lam = 1.0
        for _ in range(config.max_halvings + 1):
            trial = u.copy()
            trial[I] += lam * du
            eig = problem.min_eig(trial).min()
            if np.isfinite(eig) and eig > PD_THRESHOLD:
                rt = problem.residual(trial, K)
                rtn = float(np.max(np.abs(rt)))
                if rtn < rn:
                    break
                reason = "no decrease"
            else:
                reason = "not positive definite"
            hist.rejections.append((it, lam, reason))
            log.debug("newton step %d rejected at lambda=%g: %s", it, lam, reason)
            lam *= 0.5
        else:
            raise LineSearchFailed(f"no acceptable step after {config.max_halvings} halvings "
                                   f"(residual {rn:.3e})")
        u, r, rn = trial, rt, rtn
        hist.residuals.append(rn)
        hist.damping.append(lam)
    raise AssertionError("unreachable")


def diagnostics(u, psi, problem: DiscreteProblem) -> dict:
    """Size, convexity and maximum-principle quantities of a solved field, with pass flags."""
    uv = np.asarray(u.values if isinstance(u, DiscreteField) else u, dtype=float)
    pv = np.asarray(psi.values if isinstance(psi, DiscreteField) else psi, dtype=float)
    dims, grid = problem.dims, problem.grid
    summ = grid.mu_summary(uv, dims)
    r0 = r0_threshold(dims)
    fr_f = f_r_eval(uv, summ["p"], 0.0, dims) / f_eval(uv, summ["p"], 0.0, dims)
    tau = dims.tau
    d = {
        "sup_u": float(np.max(np.abs(uv))),
        "sup_grad_u": float(np.max(summ["grad_norm"])),
        "sup_hess_u": float(np.max(summ["hess_norm"])),
        "min_eig_M": float(np.min(summ["min_eig"])),
        "u_minus_psi_min": float(np.min(uv - pv)),
        "boundary_max_gap": float(np.max(uv) - np.max(uv[grid.boundary])),
        "fr_over_f_min": float(np.min(fr_f)),
        "max_u": float(np.max(uv)),
        "r0": float(r0),
    }
    fr_bound = (tau / 3) / (1 + np.exp(2 * r0))
    d["flags"] = {
        "psi_le_u": bool(d["u_minus_psi_min"] >= -1e-8),
        "max_on_boundary": bool(d["boundary_max_gap"] <= 1e-8),
        "u_le_r0": bool(d["max_u"] <= r0 + 1e-12),
        "fr_over_f_bound": bool(d["fr_over_f_min"] >= fr_bound - 1e-12),
        "positive_definite": bool(d["min_eig_M"] > PD_THRESHOLD),
    }
    return d


def _path_point(t, u, K_t, F0, K1, problem, hist, r0):
    slack = 1e-12 * np.maximum(1.0, np.abs(F0))
    ordered = bool(np.all(K1 <= K_t + slack) and np.all(K_t <= F0 + slack))
    return PathPoint(t, DiscreteField(problem.grid, u), hist.residuals[-1], hist.iterations,
                     float(problem.min_eig(u).min()), K_bracketed=ordered,
                     below_r0=bool(np.max(u) <= r0 + 1e-12))


def continuity_solve(problem: DiscreteProblem, config: ContinuityConfig | None = None,
                     certificate: AbfCertificate | None = None) -> SolveReport:
    """March K_t from F_h(psi) to K, correcting with Newton; psi = problem.psi.

    Without an explicit certificate, the start field is certified on the solver grid
    (positive definite everywhere, sup psi <= r0, F_h(psi) >= K at every node).
    """
    config = ContinuityConfig() if config is None else config
    dims = problem.dims
    dims.require_solvable()
    psi = DiscreteField(problem.grid, problem.psi)
    if certificate is None:
        certificate = validate_abf(psi, DiscreteField(problem.grid, problem.K), dims,
                                   problem.grid.cap)
    if not certificate.valid:
        raise CertificateInvalid(
            f"boundary function is not admissible: sup_psi={certificate.sup_psi:.6g} "
            f"(r0={certificate.r0:.6g}), margin_pd={certificate.margin_pd:.3g}, "
            f"margin_sub={certificate.margin_sub:.3g}")
    r0 = certificate.r0
    F0 = problem.F_h(problem.psi)
    K1 = problem.K
    try:
        u, hist = newton_solve(problem.psi, F0, problem, config)
    except SolverError as exc:
        raise NewtonDiverged(f"Newton failed at t=0, where psi is an exact solution: {exc}")
    path = [_path_point(0.0, u, F0, F0, K1, problem, hist, r0)]
    t, dt = 0.0, config.dt0
    while t < 1.0:
        t_next = t + dt
        if t_next > 1.0 - 1e-12:
            t_next = 1.0
        K_t = (1 - t_next) * F0 + t_next * K1
        try:
            u_new, hist = newton_solve(u, K_t, problem, config)
        except SolverError as exc:
            dt *= 0.5
            log.info("step to t=%.6g failed (%s); dt -> %.3g", t_next, exc, dt)
            if dt < config.dt_min:
                raise PathStalled(f"continuity step fell below dt_min at t={t:.6g}", t, path)
            continue
        u, t = u_new, t_next
        path.append(_path_point(t, u, K_t, F0, K1, problem, hist, r0))
        dt = min(config.dt0, 2 * dt)
    return SolveReport(path, DiscreteField(problem.grid, u), diagnostics(u, problem.psi, problem),
                       config, certificate)
