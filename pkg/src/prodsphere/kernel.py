"""Pointwise algebra of the embedding X(gamma, rho) = a(u) gamma + b(u) rho.

Everything here acts on a single :class:`ProductJet` (value, first and second
covariant derivatives of u in orthonormal frames of S^m and S^n), except the
scalar weight functions ``f_*_eval`` which broadcast over numpy arrays.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

U_CAP = 50.0
PD_THRESHOLD = 1e-10


@dataclass(frozen=True)
class ProblemDims:
    m: int
    n: int

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError(f"m, n must be >= 1, got m={self.m}, n={self.n}")

    @property
    def tau(self) -> float:
        return 2.0 * (self.m - self.n) / (self.m + self.n + 2)

    @property
    def power(self) -> float:
        """Exponent (m+n+2)/2 on f in the Monge-Ampere equation."""
        return 0.5 * (self.m + self.n + 2)

    def require_solvable(self):
        if self.m <= self.n:
            raise ValueError(
                f"m > n is required (got m={self.m}, n={self.n}); for m < n swap the two "
                "factor spheres and replace u by -u, which leaves the embedding unchanged"
            )


def _clip(r):
    return np.clip(r, -U_CAP, U_CAP)


def _check_pq(p, q):
    if np.any(np.asarray(p) < 0) or np.any(np.asarray(q) < 0):
        raise ValueError("p and q are squared gradient norms and must be non-negative")


def f_eval(r, p, q, dims: ProblemDims):
    _check_pq(p, q)
    r = _clip(r)
    e2 = np.exp(2 * r)
    return np.exp(dims.tau * r) * (1 + p / (1 + e2) + e2 * q / (1 + e2))


def f_r_eval(r, p, q, dims: ProblemDims):
    _check_pq(p, q)
    tau = dims.tau
    r = _clip(r)
    e2 = np.exp(2 * r)
    bracket = (tau + (tau * (1 + e2) - 2 * e2) * p / (1 + e2) ** 2
               + tau * e2 * q / (1 + e2) + 2 * e2 * q / (1 + e2) ** 2)
    return np.exp(tau * r) * bracket


def f_p_eval(r, dims: ProblemDims):
    r = _clip(r)
    return np.exp(dims.tau * r) / (1 + np.exp(2 * r))


def f_q_eval(r, dims: ProblemDims):
    r = _clip(r)
    e2 = np.exp(2 * r)
    return np.exp(dims.tau * r) * e2 / (1 + e2)


@dataclass(frozen=True)
class ProductJet:
    """Value, gradient and Hessian of u at one point of S^m x S^n, orthonormal frames."""

    u: float
    grad_x: np.ndarray
    grad_y: np.ndarray
    hess_xx: np.ndarray
    hess_xy: np.ndarray
    hess_yy: np.ndarray

    def __post_init__(self):
        m, n = len(self.grad_x), len(self.grad_y)
        for name, shape in (("hess_xx", (m, m)), ("hess_xy", (m, n)), ("hess_yy", (n, n))):
            if np.shape(getattr(self, name)) != shape:
                raise ValueError(f"{name} has shape {np.shape(getattr(self, name))}, expected {shape}")

    @property
    def dims(self) -> ProblemDims:
        return ProblemDims(len(self.grad_x), len(self.grad_y))

    @property
    def p(self) -> float:
        return float(np.dot(self.grad_x, self.grad_x))

    @property
    def q(self) -> float:
        return float(np.dot(self.grad_y, self.grad_y))

    @property
    def grad(self) -> np.ndarray:
        return np.concatenate([self.grad_x, self.grad_y])

    @property
    def hess(self) -> np.ndarray:
        return np.block([[self.hess_xx, self.hess_xy], [self.hess_xy.T, self.hess_yy]])

    @classmethod
    def from_arrays(cls, u, grad, hess, m: int) -> "ProductJet":
        grad = np.asarray(grad, dtype=float)
        hess = np.asarray(hess, dtype=float)
        return cls(float(u), grad[:m], grad[m:], hess[:m, :m], hess[:m, m:], hess[m:, m:])

    @classmethod
    def constant(cls, c: float, dims: ProblemDims) -> "ProductJet":
        m, n = dims.m, dims.n
        return cls(float(c), np.zeros(m), np.zeros(n), np.zeros((m, m)), np.zeros((m, n)), np.zeros((n, n)))

    @classmethod
    def x_only(cls, value, grad_x, hess_xx, n: int) -> "ProductJet":
        """Jet of a function that does not depend on the S^n factor."""
        m = len(grad_x)
        return cls(float(value), np.asarray(grad_x, float), np.zeros(n),
                   np.asarray(hess_xx, float), np.zeros((m, n)), np.zeros((n, n)))

    def __add__(self, other: "ProductJet") -> "ProductJet":
        return ProductJet(self.u + other.u, self.grad_x + other.grad_x, self.grad_y + other.grad_y,
                          self.hess_xx + other.hess_xx, self.hess_xy + other.hess_xy,
                          self.hess_yy + other.hess_yy)

    def scaled(self, c: float) -> "ProductJet":
        return ProductJet(c * self.u, c * self.grad_x, c * self.grad_y,
                          c * self.hess_xx, c * self.hess_xy, c * self.hess_yy)


def swap_factors(jet: ProductJet) -> ProductJet:
    """Jet of v = -u with the roles of S^m and S^n exchanged."""
    return ProductJet(-jet.u, -jet.grad_y, -jet.grad_x, -jet.hess_yy, -jet.hess_xy.T, -jet.hess_xx)


@dataclass(frozen=True)
class MuMatrix:
    matrix: np.ndarray
    m: int

    @property
    def xx(self):
        return self.matrix[:self.m, :self.m]

    @property
    def xy(self):
        return self.matrix[:self.m, self.m:]

    @property
    def yy(self):
        return self.matrix[self.m:, self.m:]

    @property
    def min_eig(self) -> float:
        return float(np.linalg.eigvalsh(self.matrix)[0])

    @property
    def is_convex(self) -> bool:
        return self.min_eig > PD_THRESHOLD

    def lu(self):
        return scipy.linalg.lu_factor(self.matrix)

    @property
    def det(self) -> float:
        lu, piv = self.lu()
        sign = (-1.0) ** np.count_nonzero(piv != np.arange(len(piv)))
        return float(sign * np.prod(np.diag(lu)))


def mu_matrix(jet: ProductJet) -> MuMatrix:
    gx, gy = jet.grad_x, jet.grad_y
    m, n = len(gx), len(gy)
    xx = jet.hess_xx - np.outer(gx, gx) - np.eye(m)
    yy = jet.hess_yy + np.outer(gy, gy) + np.eye(n)
    return MuMatrix(np.block([[xx, jet.hess_xy], [jet.hess_xy.T, yy]]), m)


def _check_dims(jet: ProductJet, dims: ProblemDims):
    if jet.dims != dims:
        raise ValueError(f"jet has dims {jet.dims}, expected {dims}")


def curvature_K(jet: ProductJet, dims: ProblemDims) -> float:
    """Gauss-Kronecker curvature of the embedded hypersurface at the jet."""
    _check_dims(jet, dims)
    u = _clip(jet.u)
    e2 = np.exp(2 * u)
    denom = (1 + (jet.p + e2 * jet.q) / (1 + e2)) ** dims.power
    return float(np.exp((dims.n - dims.m) * u) * mu_matrix(jet).det / denom)


def f_operator(jet: ProductJet, dims: ProblemDims) -> float:
    """f(u, p, q)^(-(m+n+2)/2) det M(u)."""
    _check_dims(jet, dims)
    return float(mu_matrix(jet).det * f_eval(jet.u, jet.p, jet.q, dims) ** (-dims.power))


def embed_point(gamma, rho, u: float, tol: float = 1e-12) -> np.ndarray:
    gamma = np.asarray(gamma, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if abs(np.linalg.norm(gamma) - 1) > tol or abs(np.linalg.norm(rho) - 1) > tol:
        raise ValueError("gamma and rho must be unit vectors")
    u = _clip(u)
    return np.concatenate([gamma / np.sqrt(1 + np.exp(-2 * u)), rho / np.sqrt(1 + np.exp(2 * u))])


@dataclass(frozen=True)
class GeomSample:
    X: np.ndarray
    tangents: np.ndarray  # columns X_A
    g: np.ndarray
    normal: np.ndarray
    h: np.ndarray
    K: float


def canonical_placement(dims: ProblemDims):
    """gamma = e_0, rho = e_0 with the remaining standard basis vectors as frames."""
    m, n = dims.m, dims.n
    return (np.eye(m + 1)[0], np.eye(n + 1)[0], np.eye(m + 1)[:, 1:], np.eye(n + 1)[:, 1:])


def tangent_vectors(jet: ProductJet, gamma, rho, frame_x, frame_y) -> np.ndarray:
    """Tangent vectors X_A, as columns of an (m+n+2) x (m+n) array."""
    m, n = jet.dims.m, jet.dims.n
    u = _clip(jet.u)
    eu, e2 = np.exp(u), np.exp(2 * u)
    grad = jet.grad
    zx, zy = np.zeros((m + 1, n)), np.zeros((n + 1, m))
    gamma_A = np.hstack([frame_x, zx])
    rho_A = np.hstack([zy, frame_y])
    top = eu * np.outer(gamma, grad) + eu * (1 + e2) * gamma_A
    bottom = (1 + e2) * rho_A - e2 * np.outer(rho, grad)
    return np.vstack([top, bottom]) / (1 + e2) ** 1.5


def normal_vector(jet: ProductJet, gamma, rho, frame_x, frame_y) -> np.ndarray:
    u = _clip(jet.u)
    eu, e2 = np.exp(u), np.exp(2 * u)
    top = -gamma + frame_x @ jet.grad_x
    bottom = eu * rho + eu * (frame_y @ jet.grad_y)
    num = np.concatenate([top, bottom])
    return -num / np.sqrt(1 + e2 + jet.p + e2 * jet.q)


def induced_metric(jet: ProductJet) -> np.ndarray:
    m, n = jet.dims.m, jet.dims.n
    u = _clip(jet.u)
    e2 = np.exp(2 * u)
    grad = jet.grad
    block = np.diag(np.concatenate([np.full(m, 1 + e2), np.full(n, 1 + 1 / e2)]))
    return e2 / (1 + e2) ** 2 * (np.outer(grad, grad) + block)


def second_fundamental(jet: ProductJet, dims: ProblemDims, placement=None) -> GeomSample:
    """Metric, normal and second fundamental form of the embedding at ``jet``.

    ``placement`` is (gamma, rho, frame_x, frame_y); the default is the canonical one.
    g and h do not depend on it.
    """
    _check_dims(jet, dims)
    gamma, rho, fx, fy = placement if placement is not None else canonical_placement(dims)
    u = _clip(jet.u)
    e2 = np.exp(2 * u)
    g = induced_metric(jet)
    scale = np.exp(u) / np.sqrt((1 + e2) * (1 + e2 + jet.p + e2 * jet.q))
    h = scale * mu_matrix(jet).matrix
    K = float(np.linalg.det(h) / np.linalg.det(g))
    X = embed_point(gamma, rho, jet.u)
    return GeomSample(X, tangent_vectors(jet, gamma, rho, fx, fy), g,
                      normal_vector(jet, gamma, rho, fx, fy), h, K)


def principal_curvatures(jet: ProductJet, dims: ProblemDims) -> np.ndarray:
    sample = second_fundamental(jet, dims)
    return scipy.linalg.eigh(sample.h, sample.g, eigvals_only=True)


def _householder_to_e1(v: np.ndarray) -> np.ndarray:
    """Orthogonal Q with Q v = |v| e_1."""
    k = len(v)
    norm = np.linalg.norm(v)
    if k == 0 or norm == 0.0:
        return np.eye(k)
    w = v - norm * np.eye(k)[0]
    wn = np.linalg.norm(w)
    if wn < 1e-300:
        return np.eye(k)
    w = w / wn
    return np.eye(k) - 2 * np.outer(w, w)


def rotate_jet(jet: ProductJet, qx: np.ndarray, qy: np.ndarray) -> ProductJet:
    """Express the jet in rotated frames e'_i = sum_j qx[i, j] e_j (similarly for y)."""
    return ProductJet(jet.u, qx @ jet.grad_x, qy @ jet.grad_y, qx @ jet.hess_xx @ qx.T,
                      qx @ jet.hess_xy @ qy.T, qy @ jet.hess_yy @ qy.T)


def metric_det_special_frame(jet: ProductJet) -> float:
    """det g from the closed form valid in frames with grad_x = u_1 e_1, grad_y = u_{m+1} e_{m+1}."""
    m, n = jet.dims.m, jet.dims.n
    rj = rotate_jet(jet, _householder_to_e1(jet.grad_x), _householder_to_e1(jet.grad_y))
    u = _clip(rj.u)
    e2 = np.exp(2 * u)
    u1, um1 = rj.grad_x[0], rj.grad_y[0]
    return float(np.exp(2 * m * u) / (1 + e2) ** (m + n) * (1 + (u1**2 + e2 * um1**2) / (1 + e2)))


@dataclass(frozen=True)
class LinearizationCoeffs:
    second_order: np.ndarray  # (m+n) x (m+n), multiplies v_AB
    first_order: np.ndarray  # (m+n,), multiplies v_A
    zeroth_order: float  # multiplies v


def linearization_coeffs(jet: ProductJet, dims: ProblemDims) -> LinearizationCoeffs:
    """Coefficients of the linearized operator DF(u) v = a^AB v_AB + b^A v_A + c v."""
    _check_dims(jet, dims)
    mu = mu_matrix(jet)
    lu = mu.lu()
    if np.min(np.abs(np.diag(lu[0]))) == 0.0:
        raise np.linalg.LinAlgError("M(u) is singular")
    m = dims.m
    inv = scipy.linalg.lu_solve(lu, np.eye(m + dims.n))
    f = f_eval(jet.u, jet.p, jet.q, dims)
    F = mu.det * f ** (-dims.power)
    lower = dims.power * F / f
    first = np.empty(m + dims.n)
    first[:m] = -2 * F * (inv[:m, :m] @ jet.grad_x) - lower * 2 * f_p_eval(jet.u, dims) * jet.grad_x
    first[m:] = 2 * F * (inv[m:, m:] @ jet.grad_y) - lower * 2 * f_q_eval(jet.u, dims) * jet.grad_y
    zeroth = -lower * f_r_eval(jet.u, jet.p, jet.q, dims)
    return LinearizationCoeffs(F * inv, first, float(zeroth))


def apply_linearization(coeffs: LinearizationCoeffs, v: ProductJet) -> float:
    return float(np.sum(coeffs.second_order * v.hess) + coeffs.first_order @ v.grad
                 + coeffs.zeroth_order * v.u)


# --- vectorized forms for fields that depend on the S^m factor only -------------------------

def radial_mu_blocks(d1, d2, theta, m: int):
    """Radial and tangential eigenvalues of the xx-block of M(u) for radial u(theta).

    Returns (a, b) with a = u'' - u'^2 - 1 and b = u' cot(theta) - 1 (b = u''(0) - 1 at the
    pole).  The yy-block is the identity.
    """
    d1, d2, theta = np.broadcast_arrays(np.asarray(d1, float), np.asarray(d2, float),
                                        np.asarray(theta, float))
    a = d2 - d1**2 - 1
    with np.errstate(divide="ignore", invalid="ignore"):
        b = np.where(theta == 0.0, d2 - 1, d1 / np.tan(theta) - 1)
    return a, b


def radial_det_M(d1, d2, theta, m: int):
    a, b = radial_mu_blocks(d1, d2, theta, m)
    return a * b ** (m - 1)


def radial_min_eig(d1, d2, theta, m: int):
    a, b = radial_mu_blocks(d1, d2, theta, m)
    out = np.minimum(a, 1.0)
    return np.minimum(out, b) if m >= 2 else out


def radial_F(value, d1, d2, theta, dims: ProblemDims):
    """F(u) for radial u(theta) independent of the S^n factor."""
    det = radial_det_M(d1, d2, theta, dims.m)
    return det * f_eval(value, np.asarray(d1, float) ** 2, 0.0, dims) ** (-dims.power)
