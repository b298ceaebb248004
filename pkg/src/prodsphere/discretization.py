"""Finite-difference residual and Jacobian of det M(u) = K f^{(m+n+2)/2} on a geodesic cap.

Two backends, both for u independent of the S^n factor (so the yy-block of M(u) is the
identity and det M(u) = det of the xx-block):

* :class:`RadialGrid` - u = u(theta) on S^m, nodes theta_k = k h.
* :class:`PolarGrid2D` - u = u(theta, phi) on S^2, one shared pole node plus rings.

Each grid produces *frame jets* (gradient and covariant Hessian in the orthonormal
polar frame) at every node, either directly from nodal values (used for residuals, written
in difference form to limit cancellation) or as sparse linear operators (used for the
Jacobian, which is exact because frame jets are linear in the nodal values).

Interior rows use second-order central differences; the pole uses the ghost symmetry
u(-theta) = u(theta) (radial) or great-circle differences through the pole (2D).  Dirichlet
nodes carry one-sided second-order stencils, used only for diagnostics.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg

from .geometry import GeodesicCap
from .kernel import PD_THRESHOLD, ProblemDims, f_eval, f_p_eval, f_r_eval


class _Stencil:
    """Accumulates (row, col, weight) triplets for a sparse operator."""

    def __init__(self, n):
        self.n = n
        self.rows, self.cols, self.vals = [], [], []

    def add(self, rows, cols, w):
        rows = np.asarray(rows).ravel()
        cols = np.asarray(cols).ravel()
        self.rows.append(rows)
        self.cols.append(cols)
        self.vals.append(np.broadcast_to(np.asarray(w, float), np.shape(rows)).ravel())

    def tocsr(self):
        if not self.rows:
            return sp.csr_matrix((self.n, self.n))
        return sp.coo_matrix((np.concatenate(self.vals),
                              (np.concatenate(self.rows), np.concatenate(self.cols))),
                             shape=(self.n, self.n)).tocsr()


class RadialGrid:
    backend = "radial"

    def __init__(self, cap: GeodesicCap, nr: int):
        if nr < 5:
            raise ValueError("radial grid needs at least 5 nodes")
        self.cap, self.nr = cap, nr
        self.h = cap.theta_max / (nr - 1)
        theta = np.arange(nr) * self.h
        theta[-1] = cap.theta_max
        self.theta = theta
        self.phi = np.zeros(nr)
        self.n_nodes = nr
        self.interior = np.arange(nr - 1)
        self.boundary = np.array([nr - 1])

    def __eq__(self, other):
        return isinstance(other, RadialGrid) and (self.cap, self.nr) == (other.cap, other.nr)

    def refined(self, factor: int) -> "RadialGrid":
        return RadialGrid(self.cap, factor * (self.nr - 1) + 1)

    def describe(self) -> dict:
        return {"backend": self.backend, "nr": self.nr}

    def jets(self, u) -> dict:
        u = np.asarray(u, float)
        h, N = self.h, self.nr
        d = np.diff(u)
        G1 = np.zeros(N)
        H11 = np.empty(N)
        G1[1:-1] = (d[1:] + d[:-1]) / (2 * h)
        H11[1:-1] = (d[1:] - d[:-1]) / h**2
        H11[0] = 2 * d[0] / h**2
        G1[-1] = (3 * d[-1] - d[-2]) / (2 * h)
        H11[-1] = (2 * d[-1] - 3 * d[-2] + d[-3]) / h**2
        T = np.empty(N)
        T[0] = H11[0]
        T[1:] = G1[1:] / np.tan(self.theta[1:])
        return {"G1": G1, "H11": H11, "T": T}

    @cached_property
    def operators(self) -> dict:
        h, N = self.h, self.nr
        k = np.arange(1, N - 1)
        G1, H11 = _Stencil(N), _Stencil(N)
        G1.add(k, k + 1, 1 / (2 * h))
        G1.add(k, k - 1, -1 / (2 * h))
        H11.add(k, k + 1, 1 / h**2)
        H11.add(k, k, -2 / h**2)
        H11.add(k, k - 1, 1 / h**2)
        H11.add([0, 0], [0, 1], [-2 / h**2, 2 / h**2])
        b = N - 1
        G1.add([b] * 3, [b, b - 1, b - 2], np.array([3, -4, 1]) / (2 * h))
        H11.add([b] * 4, [b, b - 1, b - 2, b - 3], np.array([2, -5, 4, -1]) / h**2)
        G1, H11 = G1.tocsr(), H11.tocsr()
        cot = np.zeros(N)
        cot[1:] = 1 / np.tan(self.theta[1:])
        pole = np.zeros(N)
        pole[0] = 1.0
        T = sp.diags(cot) @ G1 + sp.diags(pole) @ H11
        return {"G1": G1, "H11": H11, "T": sp.csr_matrix(T)}

    def pointwise(self, u, jets, K, dims: ProblemDims, derivatives: bool = False):
        """Residual det M - K f^s at every node, plus its partials when requested."""
        m, s = dims.m, dims.power
        G1, H11, T = jets["G1"], jets["H11"], jets["T"]
        a = H11 - G1**2 - 1
        b = T - 1
        det = a * b ** (m - 1)
        p = G1**2
        f = f_eval(u, p, 0.0, dims)
        R = det - K * f**s
        if not derivatives:
            return R
        kfs1 = K * s * f ** (s - 1)
        dR_da = b ** (m - 1)
        dR_db = (m - 1) * a * b ** (m - 2) if m >= 2 else np.zeros_like(a)
        partials = {
            "H11": dR_da,
            "T": dR_db,
            "G1": -2 * G1 * dR_da - kfs1 * f_p_eval(u, dims) * 2 * G1,
        }
        return R, partials, -kfs1 * f_r_eval(u, p, 0.0, dims)

    def mu_summary(self, u, dims: ProblemDims, jets=None) -> dict:
        jets = self.jets(u) if jets is None else jets
        G1, H11, T = jets["G1"], jets["H11"], jets["T"]
        a, b = H11 - G1**2 - 1, T - 1
        m = dims.m
        min_eig = np.minimum(a, 1.0)
        hess_norm = np.abs(H11)
        if m >= 2:
            min_eig = np.minimum(min_eig, b)
            hess_norm = np.maximum(hess_norm, np.abs(T))
        return {"det": a * b ** (m - 1), "min_eig": min_eig, "p": G1**2,
                "grad_norm": np.abs(G1), "hess_norm": hess_norm, "du_dtheta": G1}

    def solve_linear(self, J, rhs):
        n = J.shape[0]
        ab = np.zeros((3, n))
        dia = J.todia()
        for off, data in zip(dia.offsets, dia.data):
            if abs(off) > 1:
                if np.any(data != 0):
                    raise ValueError("radial Jacobian is not tridiagonal")
                continue
            # dia storage: data[j] holds A[j - off, j]; banded wants ab[1 - off, j]
            ab[1 - off] += data[:n]
        return scipy.linalg.solve_banded((1, 1), ab, rhs)


class PolarGrid2D:
    backend = "polar2d"

    def __init__(self, cap: GeodesicCap, nr: int, nphi: int):
        if cap.m != 2:
            raise ValueError("the polar backend is defined on S^2 only (m = 2)")
        if nr < 5:
            raise ValueError("polar grid needs nr >= 5")
        if nphi < 8 or nphi % 2:
            raise ValueError("nphi must be even and >= 8")
        self.cap, self.nr, self.nphi = cap, nr, nphi
        self.h = cap.theta_max / (nr - 1)
        self.hphi = 2 * np.pi / nphi
        rings = np.arange(1, nr) * self.h
        rings[-1] = cap.theta_max
        self.ring_theta = rings
        self.phi_nodes = np.arange(nphi) * self.hphi
        self.theta = np.concatenate([[0.0], np.repeat(rings, nphi)])
        self.phi = np.concatenate([[0.0], np.tile(self.phi_nodes, nr - 1)])
        self.n_nodes = 1 + (nr - 1) * nphi
        self.boundary = np.arange(self.n_nodes - nphi, self.n_nodes)
        self.interior = np.arange(self.n_nodes - nphi)

    def __eq__(self, other):
        return isinstance(other, PolarGrid2D) and (self.cap, self.nr, self.nphi) == (
            other.cap, other.nr, other.nphi)

    def refined(self, factor: int) -> "PolarGrid2D":
        return PolarGrid2D(self.cap, factor * (self.nr - 1) + 1, factor * self.nphi)

    def describe(self) -> dict:
        return {"backend": self.backend, "nr": self.nr, "nphi": self.nphi}

    def index(self, j, l):
        j = np.asarray(j)
        l = np.mod(np.asarray(l), self.nphi)
        return np.where(j == 0, 0, 1 + (j - 1) * self.nphi + l)

    def _panel(self, u):
        u = np.asarray(u, float)
        return np.vstack([np.full(self.nphi, u[0]), u[1:].reshape(self.nr - 1, self.nphi)])

    def jets(self, u) -> dict:
        P = self._panel(u)
        h, hp, N = self.h, self.hphi, self.nr - 1
        right = lambda A: np.roll(A, -1, axis=-1)  # value at l + 1
        left = lambda A: np.roll(A, 1, axis=-1)  # value at l - 1
        u_t = np.empty((N + 1, self.nphi))
        u_tt = np.empty_like(u_t)
        dplus, dminus = P[2:] - P[1:-1], P[1:-1] - P[:-2]
        u_t[1:-1] = (dplus + dminus) / (2 * h)
        u_tt[1:-1] = (dplus - dminus) / h**2
        d1, d2, d3 = P[N] - P[N - 1], P[N - 1] - P[N - 2], P[N - 2] - P[N - 3]
        u_t[N] = (3 * d1 - d2) / (2 * h)
        u_tt[N] = (2 * d1 - 3 * d2 + d3) / h**2
        Dp = (right(P) - left(P)) / (2 * hp)
        u_p = Dp
        u_pp = ((right(P) - P) - (P - left(P))) / hp**2
        u_tp = np.empty_like(u_t)
        u_tp[1:-1] = (Dp[2:] - Dp[:-2]) / (2 * h)
        u_tp[N] = (3 * Dp[N] - 4 * Dp[N - 1] + Dp[N - 2]) / (2 * h)
        th = self.ring_theta[:, None]
        s, c = np.sin(th), 1 / np.tan(th)
        g1 = u_t[1:]
        g2 = u_p[1:] / s
        H11 = u_tt[1:]
        H12 = (u_tp[1:] - c * u_p[1:]) / s
        H22 = u_pp[1:] / s**2 + c * u_t[1:]
        # pole: great-circle differences through the pole along each azimuth
        opp = (np.arange(self.nphi) + self.nphi // 2) % self.nphi
        r1, u0 = P[1], P[0, 0]
        D = ((r1 - u0) + (r1[opp] - u0)) / h**2
        d = (r1 - r1[opp]) / (2 * h)
        ph = self.phi_nodes
        pole = {
            "g1": 2 * np.mean(d * np.cos(ph)),
            "g2": 2 * np.mean(d * np.sin(ph)),
            "H11": np.mean(D) + 2 * np.mean(D * np.cos(2 * ph)),
            "H22": np.mean(D) - 2 * np.mean(D * np.cos(2 * ph)),
            "H12": 2 * np.mean(D * np.sin(2 * ph)),
        }
        out = {}
        for key, arr in (("g1", g1), ("g2", g2), ("H11", H11), ("H12", H12), ("H22", H22)):
            out[key] = np.concatenate([[pole[key]], arr.ravel()])
        out["u_theta"] = np.concatenate([[0.0], u_t[1:].ravel()])
        out["u_phi"] = np.concatenate([[0.0], u_p[1:].ravel()])
        return out

    @cached_property
    def operators(self) -> dict:
        h, hp, nphi, Nn = self.h, self.hphi, self.nphi, self.n_nodes
        N = self.nr - 1
        idx = self.index
        J, L = np.meshgrid(np.arange(1, N), np.arange(nphi), indexing="ij")
        Dt, Dtt, Dp, Dpp, Dtp = (_Stencil(Nn) for _ in range(5))
        row = idx(J, L)
        Dt.add(row, idx(J + 1, L), 1 / (2 * h))
        Dt.add(row, idx(J - 1, L), -1 / (2 * h))
        Dtt.add(row, idx(J + 1, L), 1 / h**2)
        Dtt.add(row, row, -2 / h**2)
        Dtt.add(row, idx(J - 1, L), 1 / h**2)
        w = 1 / (4 * h * hp)
        Dtp.add(row, idx(J + 1, L + 1), w)
        Dtp.add(row, idx(J + 1, L - 1), -w)
        Dtp.add(row, idx(J - 1, L + 1), -w)
        Dtp.add(row, idx(J - 1, L - 1), w)
        Lb = np.arange(nphi)
        rb = idx(N, Lb)
        for k, c in enumerate((3, -4, 1)):
            Dt.add(rb, idx(N - k, Lb), c / (2 * h))
            Dtp.add(rb, idx(N - k, Lb + 1), c / (2 * h) / (2 * hp))
            Dtp.add(rb, idx(N - k, Lb - 1), -c / (2 * h) / (2 * hp))
        for k, c in enumerate((2, -5, 4, -1)):
            Dtt.add(rb, idx(N - k, Lb), c / h**2)
        Ja, La = np.meshgrid(np.arange(1, N + 1), np.arange(nphi), indexing="ij")
        ra = idx(Ja, La)
        Dp.add(ra, idx(Ja, La + 1), 1 / (2 * hp))
        Dp.add(ra, idx(Ja, La - 1), -1 / (2 * hp))
        Dpp.add(ra, idx(Ja, La + 1), 1 / hp**2)
        Dpp.add(ra, ra, -2 / hp**2)
        Dpp.add(ra, idx(Ja, La - 1), 1 / hp**2)
        Dt, Dtt, Dp, Dpp, Dtp = (S.tocsr() for S in (Dt, Dtt, Dp, Dpp, Dtp))

        inv_s = np.zeros(Nn)
        cot = np.zeros(Nn)
        inv_s[1:] = 1 / np.sin(self.theta[1:])
        cot[1:] = 1 / np.tan(self.theta[1:])
        S, C = sp.diags(inv_s), sp.diags(cot)
        ops = {
            "g1": Dt,
            "g2": S @ Dp,
            "H11": Dtt,
            "H12": S @ (Dtp - C @ Dp),
            "H22": S @ S @ Dpp + C @ Dt,
        }
        # pole rows
        ph = self.phi_nodes
        opp = (np.arange(nphi) + nphi // 2) % nphi
        r1 = idx(1, np.arange(nphi))
        D_rows = np.zeros((nphi, Nn))  # D_l as rows over nodes
        d_rows = np.zeros((nphi, Nn))
        for l in range(nphi):
            D_rows[l, r1[l]] += 1 / h**2
            D_rows[l, r1[opp[l]]] += 1 / h**2
            D_rows[l, 0] -= 2 / h**2
            d_rows[l, r1[l]] += 1 / (2 * h)
            d_rows[l, r1[opp[l]]] -= 1 / (2 * h)
        pole_rows = {
            "g1": 2 * np.cos(ph) @ d_rows / nphi,
            "g2": 2 * np.sin(ph) @ d_rows / nphi,
            "H11": (1 + 2 * np.cos(2 * ph)) @ D_rows / nphi,
            "H22": (1 - 2 * np.cos(2 * ph)) @ D_rows / nphi,
            "H12": 2 * np.sin(2 * ph) @ D_rows / nphi,
        }
        for key, rowvec in pole_rows.items():
            nz = np.nonzero(rowvec)[0]
            P = sp.csr_matrix((rowvec[nz], (np.zeros(len(nz), int), nz)), shape=(Nn, Nn))
            ops[key] = sp.csr_matrix(ops[key] + P)
        return ops

    def pointwise(self, u, jets, K, dims: ProblemDims, derivatives: bool = False):
        s = dims.power
        g1, g2 = jets["g1"], jets["g2"]
        M11 = jets["H11"] - g1**2 - 1
        M12 = jets["H12"] - g1 * g2
        M22 = jets["H22"] - g2**2 - 1
        det = M11 * M22 - M12**2
        p = g1**2 + g2**2
        f = f_eval(u, p, 0.0, dims)
        R = det - K * f**s
        if not derivatives:
            return R
        kfs1 = K * s * f ** (s - 1)
        dp = -kfs1 * f_p_eval(u, dims)
        partials = {
            "H11": M22,
            "H22": M11,
            "H12": -2 * M12,
            "g1": -2 * g1 * M22 + 2 * M12 * g2 + 2 * g1 * dp,
            "g2": -2 * g2 * M11 + 2 * M12 * g1 + 2 * g2 * dp,
        }
        return R, partials, -kfs1 * f_r_eval(u, p, 0.0, dims)

    def mu_summary(self, u, dims: ProblemDims, jets=None) -> dict:
        jets = self.jets(u) if jets is None else jets
        g1, g2 = jets["g1"], jets["g2"]
        M11 = jets["H11"] - g1**2 - 1
        M12 = jets["H12"] - g1 * g2
        M22 = jets["H22"] - g2**2 - 1
        half_tr = 0.5 * (M11 + M22)
        rad = np.sqrt(0.25 * (M11 - M22) ** 2 + M12**2)
        H11, H12, H22 = jets["H11"], jets["H12"], jets["H22"]
        hess_norm = np.abs(0.5 * (H11 + H22)) + np.sqrt(0.25 * (H11 - H22) ** 2 + H12**2)
        p = g1**2 + g2**2
        return {"det": M11 * M22 - M12**2, "min_eig": np.minimum(half_tr - rad, 1.0), "p": p,
                "grad_norm": np.sqrt(p), "hess_norm": hess_norm,
                "du_dtheta": jets["u_theta"], "du_dphi": jets["u_phi"]}

    def solve_linear(self, J, rhs, refinements: int = 2):
        """Sparse LU with a few steps of iterative refinement."""
        J = sp.csc_matrix(J)
        lu = scipy.sparse.linalg.splu(J)
        x = lu.solve(rhs)
        for _ in range(refinements):
            x = x + lu.solve(rhs - J @ x)
        return x


# --- fields and assembled systems -----------------------------------------------------------

@dataclass
class DiscreteField:
    grid: object
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_nodes,):
            raise ValueError(f"field has {self.values.shape} values, grid has {self.grid.n_nodes} nodes")


@dataclass
class AssemblyOutput:
    residual: np.ndarray | None = None
    jacobian: sp.spmatrix | None = None
    min_eig_M: float | None = None


def _jacobian(grid, u, K, dims, rows, cols):
    jets = grid.jets(u)
    _, partials, dR_du = grid.pointwise(u, jets, K, dims, derivatives=True)
    ops = grid.operators
    J = sp.diags(dR_du)
    for key, d in partials.items():
        J = J + sp.diags(d) @ ops[key]
    J = sp.csr_matrix(J)
    return J[rows][:, cols]


class DiscreteProblem:
    """Dirichlet problem on a grid: unknowns at interior nodes, boundary values from ``psi``.

    ``psi`` is a full nodal field; its boundary values are the Dirichlet data and its
    interior values serve as the starting iterate of the continuity method.
    """

    def __init__(self, grid, dims: ProblemDims, K, psi):
        self.grid, self.dims = grid, dims
        self.K = np.asarray(K, dtype=float)
        self.psi = np.asarray(psi, dtype=float)
        for name, arr in (("K", self.K), ("psi", self.psi)):
            if arr.shape != (grid.n_nodes,):
                raise ValueError(f"{name} must have one value per node")
        if np.any(self.K <= 0):
            raise ValueError("K must be positive")

    @property
    def interior(self):
        return self.grid.interior

    def full(self, w) -> np.ndarray:
        u = self.psi.copy()
        u[self.grid.interior] = w
        return u

    def residual(self, u, K=None) -> np.ndarray:
        K = self.K if K is None else K
        u = np.asarray(u, float)
        R = self.grid.pointwise(u, self.grid.jets(u), K, self.dims)
        return R[self.grid.interior]

    def jacobian(self, u, K=None):
        K = self.K if K is None else K
        I = self.grid.interior
        return _jacobian(self.grid, np.asarray(u, float), K, self.dims, I, I)

    def assemble(self, u, K=None) -> AssemblyOutput:
        return AssemblyOutput(self.residual(u, K), self.jacobian(u, K),
                              float(self.min_eig(u)[self.grid.interior].min()))

    def F_h(self, u) -> np.ndarray:
        """Discrete F(u) = det M / f^s at every node (one-sided stencils on the boundary)."""
        summ = self.grid.mu_summary(u, self.dims)
        f = f_eval(u, summ["p"], 0.0, self.dims)
        return summ["det"] * f ** (-self.dims.power)

    def min_eig(self, u) -> np.ndarray:
        return self.grid.mu_summary(u, self.dims)["min_eig"]

    def solve_linear(self, J, rhs):
        return self.grid.solve_linear(J, rhs)


# --- module-level operations ----------------------------------------------------------------

def _boundary_check(u: DiscreteField, psi_boundary, tol=0.0):
    ub = u.values[u.grid.boundary]
    if np.any(np.abs(ub - np.asarray(psi_boundary, float)) > tol):
        raise ValueError("u does not carry the Dirichlet data on the boundary")


def _values(K, grid):
    if isinstance(K, DiscreteField):
        if K.grid != grid:
            raise ValueError("K and u live on different grids")
        return K.values
    K = np.asarray(K, float)
    return np.broadcast_to(K, (grid.n_nodes,)) if K.ndim == 0 else K


def radial_residual(u: DiscreteField, K, psi_boundary: float, dims: ProblemDims) -> AssemblyOutput:
    if not isinstance(u.grid, RadialGrid):
        raise ValueError("radial_residual needs a RadialGrid field")
    _boundary_check(u, psi_boundary)
    Kv = _values(K, u.grid)
    R = u.grid.pointwise(u.values, u.grid.jets(u.values), Kv, dims)
    return AssemblyOutput(residual=R[u.grid.interior])


def radial_jacobian(u: DiscreteField, K, dims: ProblemDims) -> AssemblyOutput:
    if not isinstance(u.grid, RadialGrid):
        raise ValueError("radial_jacobian needs a RadialGrid field")
    I = u.grid.interior
    return AssemblyOutput(jacobian=_jacobian(u.grid, u.values, _values(K, u.grid), dims, I, I))


def grid2d_assemble(u: DiscreteField, K, psi_ring, dims: ProblemDims) -> AssemblyOutput:
    if dims.m != 2 or not isinstance(u.grid, PolarGrid2D):
        raise ValueError("the polar backend requires m = 2 and a PolarGrid2D field")
    _boundary_check(u, psi_ring)
    problem = DiscreteProblem(u.grid, dims, _values(K, u.grid), u.values)
    return problem.assemble(u.values)


def pd_scan(u: DiscreteField, dims: ProblemDims):
    """Smallest eigenvalue of the full M(u) at each node; returns (global min, per-node flags, per-node min)."""
    eig = u.grid.mu_summary(u.values, dims)["min_eig"]
    return float(eig.min()), eig > PD_THRESHOLD, eig
