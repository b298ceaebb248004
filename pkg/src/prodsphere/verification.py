"""Independent checks of the kernel and the solver.

* :func:`extrinsic_oracle` recomputes K from the embedded hypersurface by finite
  differences of embedded points and normals, with no use of the M(u) algebra.
* :func:`comparison_check` tests the comparison principle for the discrete operator.
* :func:`global_obstruction_demo` samples u on a closed S^m x S^n and inspects M(u) at the max.
* :func:`boundary_identity_check` compares tangential second derivatives at the Dirichlet ring.
* :func:`manufacture_problem` builds K = F(u*) for a prescribed radial u*.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .abf import (AbfCertificate, AbfParams, default_params, match_boundary, phi_jet,
                  phi_profile, r0_threshold, validate_abf)
from .discretization import DiscreteField, DiscreteProblem, PolarGrid2D, RadialGrid
from .fields import AmbientField, RadialProfile, ambient_stack
from .geometry import GeodesicCap, hyperspherical, tangent_frame
from .kernel import (PD_THRESHOLD, ProblemDims, ProductJet, curvature_K, embed_point, mu_matrix,
                     radial_F, radial_min_eig, swap_factors)


# --- extrinsic oracle -----------------------------------------------------------------------

@dataclass
class OracleReport:
    K_analytic: float
    K_extrinsic: float
    rel_error: float
    fd_step: float
    convergence_ratio: float
    rel_error_half: float = np.nan
    normal_tangent_max: float = np.nan
    unit_norm_error: float = np.nan
    swap_sign: float = np.nan  # sign of K(n, m, -u) / K(m, n, u), observed not assumed

    def to_dict(self) -> dict:
        return {k: float(v) for k, v in asdict(self).items()}


def product_chart(dims: ProblemDims):
    """Parameters (angles of S^m, angles of S^n) -> (gamma, rho)."""
    m = dims.m

    def chart(params):
        params = np.asarray(params, dtype=float)
        return hyperspherical(params[:m]), hyperspherical(params[m:])

    return chart


def _embedded(field: AmbientField, chart, params):
    gamma, rho = chart(params)
    return embed_point(gamma, rho, float(field.value(gamma, rho)))


def _tangents(field, chart, params, step):
    k = len(params)
    cols = []
    for a in range(k):
        e = np.zeros(k)
        e[a] = step
        cols.append((_embedded(field, chart, params + e) - _embedded(field, chart, params - e))
                    / (2 * step))
    return np.column_stack(cols)


def _unit_normal(field, chart, params, step, reference):
    X = _embedded(field, chart, params)
    T = _tangents(field, chart, params, step)
    q, _ = np.linalg.qr(np.column_stack([X, T]), mode="complete")
    nvec = q[:, -1]
    return nvec if nvec @ reference >= 0 else -nvec


def _extrinsic_K(field, chart, params, step, reference):
    params = np.asarray(params, dtype=float)
    k = len(params)
    T = _tangents(field, chart, params, step)
    g = T.T @ T
    if np.linalg.det(g) < 1e-14:
        raise ValueError("degenerate tangents: det g below 1e-14")
    dn = []
    for a in range(k):
        e = np.zeros(k)
        e[a] = step
        dn.append((_unit_normal(field, chart, params + e, step, reference)
                   - _unit_normal(field, chart, params - e, step, reference)) / (2 * step))
    h = -np.array(dn) @ T
    h = 0.5 * (h + h.T)
    nvec = _unit_normal(field, chart, params, step, reference)
    return float(np.linalg.det(h) / np.linalg.det(g)), float(np.max(np.abs(nvec @ T)))


def extrinsic_oracle(field: AmbientField, point, dims: ProblemDims, fd_step: float = 1e-2,
                     chart=None) -> OracleReport:
    """K from finite differences of the embedded hypersurface at a chart point.

    The normal is the unit vector orthogonal to X and to the tangents, oriented to have a
    positive component along (gamma, -e^u rho); h_AB = -<n_A, X_B>.  The convergence
    ratio is err(fd_step) / err(fd_step / 2).
    """
    chart = product_chart(dims) if chart is None else chart
    point = np.asarray(point, dtype=float)
    gamma, rho = chart(point)
    u = float(field.value(gamma, rho))
    reference = np.concatenate([gamma, -np.exp(u) * rho])
    jet = field.jet(gamma, rho)
    K_an = curvature_K(jet, dims)
    swap_sign = float(np.sign(curvature_K(swap_factors(jet), ProblemDims(dims.n, dims.m)) * K_an))
    K1, orth = _extrinsic_K(field, chart, point, fd_step, reference)
    K2, _ = _extrinsic_K(field, chart, point, fd_step / 2, reference)
    scale = max(abs(K_an), 1e-300)
    e1, e2 = abs(K1 - K_an) / scale, abs(K2 - K_an) / scale
    X = _embedded(field, chart, point)
    return OracleReport(K_an, K1, e1, fd_step, e1 / e2 if e2 > 0 else np.inf, e2, orth,
                        abs(np.linalg.norm(X) - 1), swap_sign)


def random_chart_point(rng: np.random.Generator, dims: ProblemDims, margin: float = 0.3):
    """Chart parameters away from the coordinate singularities of the hyperspherical chart."""
    def angles(k):
        a = rng.uniform(margin, np.pi - margin, size=k)
        if k:
            a[-1] = rng.uniform(0, 2 * np.pi)
        return a
    return np.concatenate([angles(dims.m), angles(dims.n)])


def random_jet(rng: np.random.Generator, dims: ProblemDims, bound: float = 1.0) -> ProductJet:
    k = dims.m + dims.n
    H = rng.uniform(-bound, bound, size=(k, k))
    H = np.clip(0.5 * (H + H.T), -bound, bound)
    return ProductJet.from_arrays(rng.uniform(-bound, bound), rng.uniform(-bound, bound, size=k),
                                  H, dims.m)


def jet_field(jet: ProductJet, params, dims: ProblemDims) -> AmbientField:
    """Smooth field whose covariant jet at the chart point ``params`` is ``jet``."""
    gamma, rho = product_chart(dims)(params)
    return AmbientField.with_jet(jet, gamma, rho, tangent_frame(gamma), tangent_frame(rho))


# --- Jacobian ------------------------------------------------------------------------------

def jacobian_deviation(rng, backend: str, samples: int, step: float = 1e-6) -> float:
    """Max relative deviation of the assembled Jacobian from central differences.

    Iterates are ABF fields with a small random perturbation, kept only when M(u) is
    positive definite at every interior node.
    """
    dims = ProblemDims(2, 1)
    cap = GeodesicCap(2, np.pi / 3)
    grid = RadialGrid(cap, 33) if backend == "radial" else PolarGrid2D(cap, 17, 32)
    th, ph = grid.theta, grid.phi
    worst, accepted = 0.0, 0
    while accepted < samples:
        params = AbfParams(rng.uniform(0.1, 0.3), A=rng.uniform(1, 3))
        u = phi_profile(th, params)[0] + 0.02 * rng.normal() * np.cos(th)
        if backend == "polar2d":
            u += 0.02 * rng.normal() * np.sin(th) ** 2 * np.cos(ph - rng.uniform(0, 2 * np.pi))
        K = rng.uniform(0.2, 2.0, size=grid.n_nodes)
        problem = DiscreteProblem(grid, dims, K, u)
        if problem.min_eig(u)[grid.interior].min() <= 0:
            continue
        accepted += 1
        J = problem.jacobian(u).toarray()
        Jfd = np.empty_like(J)
        for col, i in enumerate(grid.interior):
            up, um = u.copy(), u.copy()
            up[i] += step
            um[i] -= step
            Jfd[:, col] = (problem.residual(up) - problem.residual(um)) / (2 * step)
        worst = max(worst, float(np.max(np.abs(J - Jfd)) / np.max(np.abs(J))))
    return worst


# --- comparison principle -------------------------------------------------------------------

@dataclass
class ComparisonVerdict:
    precondition_failed: bool
    branch1: bool
    branch2: bool
    reason: str = ""
    margins: dict = field(default_factory=dict)

    @property
    def confirmed(self) -> bool:
        return not self.precondition_failed and (self.branch1 or self.branch2)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["confirmed"] = self.confirmed
        return d


def comparison_check(u, v, problem: DiscreteProblem, r0: float | None = None,
                     tol: float = 1e-10, g_rtol: float = 1e-8) -> ComparisonVerdict:
    """Check the comparison principle for G = F_h, the discrete det M / f^s.

    Preconditions: M(u), M(v) positive definite at every node, u, v <= r0, and
    G(u) <= G(v) at interior nodes (relative slack ``g_rtol``).  Then one of
    v - sup_bdry(v - u) <= u or v <= u must hold at every node (slack ``tol``).
    """
    uv = np.asarray(u.values if isinstance(u, DiscreteField) else u, dtype=float)
    vv = np.asarray(v.values if isinstance(v, DiscreteField) else v, dtype=float)
    r0 = r0_threshold(problem.dims) if r0 is None else r0
    I, B = problem.grid.interior, problem.grid.boundary
    eu, ev = problem.min_eig(uv).min(), problem.min_eig(vv).min()
    Gu, Gv = problem.F_h(uv)[I], problem.F_h(vv)[I]
    margins = {"min_eig_u": float(eu), "min_eig_v": float(ev),
               "max_u_minus_r0": float(uv.max() - r0), "max_v_minus_r0": float(vv.max() - r0),
               "G_order_violation": float(np.max((Gu - Gv) / np.maximum(1.0, np.abs(Gv))))}
    reasons = []
    if min(eu, ev) <= PD_THRESHOLD:
        reasons.append("M(u) or M(v) not positive definite")
    if max(uv.max(), vv.max()) > r0 + 1e-12:
        reasons.append("u or v exceeds r0")
    if margins["G_order_violation"] > g_rtol:
        reasons.append("G(u) <= G(v) fails")
    if reasons:
        return ComparisonVerdict(True, False, False, "; ".join(reasons), margins)
    shift = np.max(vv[B] - uv[B])
    b1 = float(np.max(vv - shift - uv))
    b2 = float(np.max(vv - uv))
    margins.update(branch1_excess=b1, branch2_excess=b2)
    return ComparisonVerdict(False, b1 <= tol, b2 <= tol, "", margins)


# --- global obstruction ---------------------------------------------------------------------

@dataclass
class ObstructionReport:
    argmax: tuple
    u_max: float
    largest_xx_eig: float
    grad_norm: float
    tol: float
    passed: bool

    def to_dict(self) -> dict:
        d = asdict(self)
        d["argmax"] = [float(x) for x in self.argmax]
        return d


def random_smooth_field(rng: np.random.Generator, m: int = 2, n: int = 1,
                        amplitude: float = 0.3) -> AmbientField:
    """Random quadratic plus one trigonometric mode in the ambient coordinates."""
    dim = m + n + 2
    b = rng.normal(size=dim)
    C = rng.normal(size=(dim, dim))
    C = 0.5 * (C + C.T)
    w = rng.normal(size=dim)
    beta = rng.uniform(0, 2 * np.pi)
    c0 = rng.normal()
    a = amplitude / 3

    def value(gamma, rho):
        z = ambient_stack(gamma, rho)
        return c0 + a * (z @ b + 0.5 * np.einsum("...i,ij,...j->...", z, C, z)
                         + np.sin(z @ w + beta))

    def grad(gamma, rho):
        z = np.concatenate([gamma, rho])
        return a * (b + C @ z + np.cos(z @ w + beta) * w)

    def hess(gamma, rho):
        z = np.concatenate([gamma, rho])
        return a * (C - np.sin(z @ w + beta) * np.outer(w, w))

    return AmbientField(m, n, value, grad, hess, "random")


def product_sample_grid(n_theta: int = 48, n_phi: int = 96, n_psi: int = 64):
    """Nodes of S^2 x S^1: offset colatitudes (no node at the poles), uniform longitudes."""
    theta = (np.arange(n_theta) + 0.5) * np.pi / n_theta
    phi = np.arange(n_phi) * 2 * np.pi / n_phi
    psi = np.arange(n_psi) * 2 * np.pi / n_psi
    T, P = np.meshgrid(theta, phi, indexing="ij")
    gamma = np.stack([np.cos(T), np.sin(T) * np.cos(P), np.sin(T) * np.sin(P)], -1).reshape(-1, 3)
    rho = np.stack([np.cos(psi), np.sin(psi)], -1)
    return gamma, rho


def global_obstruction_demo(field: AmbientField, grid=None, tol: float = 0.05) -> ObstructionReport:
    """Largest eigenvalue of the xx-block of M(u) at the discrete maximum of u on S^2 x S^1."""
    if (field.m, field.n) != (2, 1):
        raise ValueError("the sample grid covers S^2 x S^1")
    gamma, rho = product_sample_grid() if grid is None else grid
    vals = field.value(gamma[:, None, :], rho[None, :, :])
    i, j = np.unravel_index(np.argmax(vals), vals.shape)
    jet = field.jet(gamma[i], rho[j])
    eig = float(np.linalg.eigvalsh(mu_matrix(jet).xx)[-1])
    return ObstructionReport((*gamma[i], *rho[j]), float(vals[i, j]), eig,
                             float(np.linalg.norm(jet.grad)), tol, eig <= -1 + tol)


# --- boundary Hessian identity --------------------------------------------------------------

@dataclass
class BoundaryIdentityReport:
    lhs: float
    rhs: float
    defect: float
    h: float
    normal_derivative: float
    implied_h_TT: float
    tol: float
    passed: bool

    def to_dict(self) -> dict:
        return {k: (bool(v) if isinstance(v, (bool, np.bool_)) else float(v))
                for k, v in asdict(self).items()}


def boundary_identity_check(u: DiscreteField, psi: AbfParams, dims: ProblemDims,
                            ds: float = 1e-3) -> BoundaryIdentityReport:
    """Tangential identity u_TT - psi_TT = cot(theta_max) d_theta(u - psi) at the Dirichlet ring.

    u_TT is the second derivative of u along the great circle tangent to the ring at a
    ring point, computed from a cubic through the last four nodes; psi_TT comes from the
    analytic ABF Hessian.  The right side uses the one-sided second-order difference of
    u - psi.  The defect is O(h^2); the tolerance is h^2 max(1, |w3|) with w3 the third
    derivative of u - psi at the ring.  ``implied_h_TT`` solves lhs = -h_TT d_theta(u - psi)
    for the second fundamental form of the ring along the outward normal.
    """
    grid = u.grid
    if not isinstance(grid, RadialGrid):
        raise ValueError("boundary_identity_check needs a radial solution")
    th, h, tm = grid.theta, grid.h, grid.cap.theta_max
    cubic = np.polynomial.Polynomial.fit(th[-4:], u.values[-4:], 3)

    def along(s):
        return cubic(np.arccos(np.cos(s) * np.cos(tm)))

    u_TT = (along(ds) - 2 * along(0.0) + along(-ds)) / ds**2
    psi_TT = phi_jet(tm, psi, dims.m).hess[1, 1] if dims.m >= 2 else 0.0
    w = u.values - phi_profile(th, psi)[0]
    dw = (3 * w[-1] - 4 * w[-2] + w[-3]) / (2 * h)
    lhs, rhs = u_TT - psi_TT, dw / np.tan(tm)
    defect = lhs - rhs
    implied = -lhs / dw if abs(dw) > 1e-12 else np.nan
    # truncation of the one-sided difference is h^2/3 * (u - psi)''' at the ring
    w3 = abs(np.polynomial.Polynomial.fit(th[-4:], w[-4:], 3).deriv(3)(tm))
    tol = h**2 * max(1.0, w3)
    return BoundaryIdentityReport(lhs, rhs, defect, h, dw, implied, tol, abs(defect) <= tol)


# --- manufactured problems ------------------------------------------------------------------

@dataclass
class ManufacturedProblem:
    grid: object
    dims: ProblemDims
    K: DiscreteField
    psi_boundary: float
    psi: DiscreteField
    psi_params: AbfParams
    u_star: DiscreteField
    certificate: AbfCertificate

    def problem(self) -> DiscreteProblem:
        return DiscreteProblem(self.grid, self.dims, self.K.values, self.psi.values)


def abf_radial_profile(params: AbfParams) -> RadialProfile:
    return RadialProfile(lambda t: phi_profile(t, params)[0], lambda t: phi_profile(t, params)[1],
                         lambda t: phi_profile(t, params)[2], f"abf(E={params.E:g})")


def manufacture_problem(u_star: RadialProfile, dims: ProblemDims, cap: GeodesicCap,
                        grid=None, start: AbfParams | None = None) -> ManufacturedProblem:
    """K = F(u*) at the nodes, Dirichlet data u*(theta_max), start psi from the ABF family.

    The start field is the family member (default E = cos(theta_max)/2) with the same
    boundary value as u*; its admissibility for K is reported in ``certificate``.
    """
    dims.require_solvable()
    grid = RadialGrid(cap, 129) if grid is None else grid
    th = grid.theta
    v, d1, d2 = u_star.value(th), u_star.d1(th), u_star.d2(th)
    if np.min(radial_min_eig(d1, d2, th, dims.m)) <= PD_THRESHOLD:
        raise ValueError("u_star is not convex (M(u_star) fails to be positive definite)")
    r0 = r0_threshold(dims)
    if np.max(v) > r0 + 1e-12:
        raise ValueError(f"u_star exceeds r0 = {r0:.6g}")
    K = radial_F(v, d1, d2, th, dims)
    b = float(u_star.value(cap.theta_max))
    params = match_boundary(default_params(cap) if start is None else start, cap, b)
    psi = DiscreteField(grid, phi_profile(th, params)[0])
    psi.values[grid.boundary] = v[grid.boundary]
    Kf = DiscreteField(grid, K)
    cert = validate_abf(psi, Kf, dims, cap)
    return ManufacturedProblem(grid, dims, Kf, b, psi, params, DiscreteField(grid, v), cert)
