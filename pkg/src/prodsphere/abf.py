"""Admissible boundary functions built from psi = -ln(scaleF (x_1 - E)) - A on a cap.

x_1 = cos(theta) is the first ambient coordinate of S^m.  The family has
M(phi)_xx = E/(x_1 - E) * delta, so it is uniformly convex on the cap whenever
0 < E < cos(theta_max), and the shift A only moves the value.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .geometry import FrameJet2, GeodesicCap, x1_jet
from .kernel import PD_THRESHOLD, ProblemDims, radial_F, radial_min_eig

DEFAULT_AUDIT_FACTOR = 4
DEFAULT_AUDIT_NR = 129
DEFAULT_AUDIT_NPHI = 128


class SearchExhausted(RuntimeError):
    """No shift A below the cap satisfies the admissibility conditions."""


def r0_threshold(dims: ProblemDims) -> float:
    dims.require_solvable()
    tau = dims.tau
    return 0.5 * np.log((tau / 3) / (1 - tau / 2))


def openness_bound(dims: ProblemDims) -> float:
    """Largest r with tau (1 + e^{2r}) - 2 e^{2r} >= 0, i.e. f_r >= 0 for all p, q."""
    dims.require_solvable()
    tau = dims.tau
    return 0.5 * np.log((tau / 2) / (1 - tau / 2))


@dataclass(frozen=True)
class AbfParams:
    E: float
    scaleF: float = 1.0
    A: float = 0.0

    def __post_init__(self):
        for name in ("E", "scaleF", "A"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not self.scaleF > 0:
            raise ValueError("scaleF must be positive")
        if not self.E > 0:
            raise ValueError("E must be positive")

    def check_cap(self, cap: GeodesicCap):
        if not self.E < np.cos(cap.theta_max):
            raise ValueError(f"E={self.E} must be below cos(theta_max)={np.cos(cap.theta_max):.6g}")

    def with_A(self, A: float) -> "AbfParams":
        return replace(self, A=float(A))


def default_params(cap: GeodesicCap) -> AbfParams:
    return AbfParams(E=0.5 * np.cos(cap.theta_max), scaleF=1.0)


def phi_jet(theta: float, params: AbfParams, m: int = 2) -> FrameJet2:
    """Jet of phi = -ln(scaleF (x_1 - E)) (no shift), by the chain rule through x_1."""
    x = x1_jet(theta, m)
    d = x.value - params.E
    if not d > 0:
        raise ValueError(f"cos(theta) - E = {d} must be positive")
    grad = -x.grad / d
    hess = -x.hess / d + np.outer(x.grad, x.grad) / d**2
    return FrameJet2(-np.log(params.scaleF * d), grad, hess)


def phi_profile(theta, params: AbfParams):
    """(value, d/dtheta, d^2/dtheta^2) of psi = phi - A, vectorized over theta."""
    theta = np.asarray(theta, dtype=float)
    d = np.cos(theta) - params.E
    if np.any(d <= 0):
        raise ValueError("cos(theta) - E must be positive")
    s = np.sin(theta)
    value = -np.log(params.scaleF * d) - params.A
    return value, s / d, np.cos(theta) / d + s**2 / d**2


def match_boundary(params: AbfParams, cap: GeodesicCap, boundary_value: float) -> AbfParams:
    """Family member with psi(theta_max) = boundary_value."""
    phi_b = -np.log(params.scaleF * (np.cos(cap.theta_max) - params.E))
    return params.with_A(phi_b - boundary_value)


def analytic_F(theta, params: AbfParams, dims: ProblemDims):
    v, d1, d2 = phi_profile(theta, params)
    return radial_F(v, d1, d2, theta, dims)


def sample_K(K, theta, phi=0.0):
    if callable(K):
        return np.asarray(K(theta, phi), dtype=float)
    return np.broadcast_to(np.asarray(K, dtype=float), np.broadcast(theta, phi).shape)


def audit_nodes(cap: GeodesicCap, K, grid=None, factor: int = DEFAULT_AUDIT_FACTOR):
    """(theta, phi) sample of the cap refined ``factor`` times relative to the solver grid."""
    nr = DEFAULT_AUDIT_NR if grid is None else grid.nr
    theta = np.linspace(0.0, cap.theta_max, factor * (nr - 1) + 1)
    if getattr(K, "radial", True):
        phi = np.zeros(1)
    else:
        nphi = getattr(grid, "nphi", DEFAULT_AUDIT_NPHI)
        phi = np.arange(factor * nphi) * 2 * np.pi / (factor * nphi)
    T, P = np.meshgrid(theta, phi, indexing="ij")
    return T.ravel(), P.ravel()


def _radial_K_max(K, theta, phi):
    """Max of K over the azimuth samples for each theta (the family is radial)."""
    Kv = sample_K(K, theta, phi)
    uniq, inv = np.unique(theta, return_inverse=True)
    out = np.full(len(uniq), -np.inf)
    np.maximum.at(out, inv, Kv)
    return uniq, out


@dataclass
class AbfCertificate:
    r0: float
    sup_psi: float
    margin_pd: float
    margin_sub: float
    checks: dict = field(default_factory=dict)

    @property
    def valid(self) -> bool:
        return self.sup_psi <= self.r0 and self.margin_pd > PD_THRESHOLD and self.margin_sub >= 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["valid"] = self.valid
        return d


def _family_margins(params: AbfParams, K, dims, cap, grid=None, factor=DEFAULT_AUDIT_FACTOR):
    """Subsolution margin min(F(psi) - K) on solver and audit nodes, analytic and discrete."""
    checks = {}
    T, P = audit_nodes(cap, K, grid, factor)
    th, kmax = _radial_K_max(K, T, P)
    checks["audit_analytic"] = float(np.min(analytic_F(th, params, dims) - kmax))
    if grid is not None:
        Kg = sample_K(K, grid.theta, grid.phi)
        checks["grid_analytic"] = float(np.min(analytic_F(grid.theta, params, dims) - Kg))
        from .discretization import DiscreteProblem

        psi = phi_profile(grid.theta, params)[0]
        Fh = DiscreteProblem(grid, dims, np.ones(grid.n_nodes), psi).F_h(psi)
        checks["grid_discrete"] = float(np.min(Fh - Kg))
    return min(checks.values()), checks


def find_shift(cap: GeodesicCap, dims: ProblemDims, K, params: AbfParams | None = None, *,
               grid=None, step: float = 1e-3, A_cap: float = 1e3,
               audit_factor: int = DEFAULT_AUDIT_FACTOR) -> AbfParams:
    """Smallest A (to within ``step``) making psi = phi - A admissible for K.

    Starts at the least A with sup psi <= r0, then doubles the increment until the
    subsolution condition F(psi) >= K holds, then bisects.  F(psi) is increasing in A once
    psi <= r0 because f_r >= 0 there and M(psi) does not depend on A.
    """
    dims.require_solvable()
    params = default_params(cap) if params is None else params
    params.check_cap(cap)
    r0 = r0_threshold(dims)
    A_min = float(phi_profile(cap.theta_max, params.with_A(0.0))[0]) - r0

    def ok(A):
        return _family_margins(params.with_A(A), K, dims, cap, grid, audit_factor)[0] >= 0

    if ok(A_min):
        return params.with_A(A_min)
    lo, inc = A_min, step
    hi = A_min + inc
    while not ok(hi):
        lo = hi
        inc *= 2
        hi = A_min + inc
        if hi > A_cap:
            raise SearchExhausted(
                f"no admissible shift A <= {A_cap:g}; K is too large for E={params.E:g}, "
                f"scaleF={params.scaleF:g}")
    while hi - lo > step:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return params.with_A(hi)


def validate_abf(psi, K, dims: ProblemDims, cap: GeodesicCap, *, grid=None,
                 audit_factor: int = DEFAULT_AUDIT_FACTOR) -> AbfCertificate:
    """Admissibility certificate for an ABF family member or a discrete field.

    ``psi`` is an :class:`AbfParams` (checked analytically on solver and audit nodes, and
    with the discrete operator on ``grid`` when given) or a
    :class:`~prodsphere.discretization.DiscreteField` (checked with the discrete operator
    at every node of its grid).
    """
    r0 = r0_threshold(dims)
    if isinstance(psi, AbfParams):
        psi.check_cap(cap)
        margin_sub, checks = _family_margins(psi, K, dims, cap, grid, audit_factor)
        theta = audit_nodes(cap, 1.0, grid, audit_factor)[0]
        v, d1, d2 = phi_profile(theta, psi)
        margin_pd = float(np.min(radial_min_eig(d1, d2, theta, dims.m)))
        sup_psi = float(phi_profile(cap.theta_max, psi)[0])
        if grid is not None:
            from .discretization import DiscreteField, pd_scan

            gv = phi_profile(grid.theta, psi)[0]
            margin_pd = min(margin_pd, pd_scan(DiscreteField(grid, gv), dims)[0])
        return AbfCertificate(r0, sup_psi, margin_pd, margin_sub, checks)

    from .discretization import DiscreteField, DiscreteProblem, pd_scan

    if not isinstance(psi, DiscreteField):
        raise TypeError("psi must be AbfParams or a DiscreteField")
    g = psi.grid
    Kv = K.values if isinstance(K, DiscreteField) else sample_K(K, g.theta, g.phi)
    Fh = DiscreteProblem(g, dims, np.ones(g.n_nodes), psi.values).F_h(psi.values)
    margin_sub = float(np.min(Fh - Kv))
    return AbfCertificate(r0, float(psi.values.max()), pd_scan(psi, dims)[0], margin_sub,
                          {"grid_discrete": margin_sub})
