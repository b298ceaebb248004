"""Charts and covariant calculus on S^m and S^m x S^n.

All jets are expressed in orthonormal frames.  On a geodesic cap the frame is
the geodesic polar one: e_1 = d/dtheta (radial), the remaining vectors
tangent to the geodesic sphere of radius theta.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GeodesicCap:
    """Closed geodesic ball of radius ``theta_max`` around the pole of S^m."""

    m: int
    theta_max: float

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"sphere dimension must be a positive integer, got {self.m}")
        if not (0.0 < self.theta_max < np.pi / 2):
            raise ValueError(f"theta_max must lie in (0, pi/2), got {self.theta_max}")

    @property
    def boundary_curvature(self) -> float:
        """cot(theta_max): principal curvature of the boundary sphere w.r.t. the inward normal."""
        return 1.0 / np.tan(self.theta_max)


@dataclass(frozen=True)
class FrameJet2:
    value: float
    grad: np.ndarray
    hess: np.ndarray

    def __post_init__(self):
        hess = np.asarray(self.hess, dtype=float)
        if hess.shape != (len(self.grad), len(self.grad)):
            raise ValueError("hess must be square and match grad")
        if not np.allclose(hess, hess.T, rtol=0, atol=1e-12 * max(1.0, np.abs(hess).max())):
            raise ValueError("hess must be symmetric")


def _check_theta(theta: float, closed_at_zero: bool = True):
    lo_ok = theta >= 0.0 if closed_at_zero else theta > 0.0
    if not (lo_ok and theta < np.pi / 2):
        raise ValueError(f"theta={theta} outside the admissible range")


def x1_jet(theta: float, m: int = 2) -> FrameJet2:
    """Jet of the coordinate function x_1 = cos(theta) on S^m."""
    _check_theta(theta)
    grad = np.zeros(m)
    grad[0] = -np.sin(theta)
    return FrameJet2(np.cos(theta), grad, -np.cos(theta) * np.eye(m))


def radial_hessian(du: float, ddu: float, theta: float, m: int, value: float = 0.0) -> FrameJet2:
    """Frame jet of a radial function u(theta) on S^m.

    The covariant Hessian is diag(u'', u' cot(theta), ..., u' cot(theta)).  At the
    pole u'(0) must vanish and the tangential entries take their limit u''(0).
    """
    _check_theta(theta)
    grad = np.zeros(m)
    if theta == 0.0:
        if du != 0.0:
            raise ValueError("a smooth radial function has zero derivative at the pole")
        tangential = ddu
    else:
        grad[0] = du
        tangential = du / np.tan(theta)
    diag = np.full(m, tangential, dtype=float)
    diag[0] = ddu
    return FrameJet2(value, grad, np.diag(diag))


def polar2d_hessian(u_t, u_p, u_tt, u_tp, u_pp, theta, value: float = 0.0) -> FrameJet2:
    """Frame jet on S^2 from chart partials in (theta, phi), metric dtheta^2 + sin^2 dphi^2."""
    if not (0.0 < theta < np.pi / 2):
        raise ValueError(f"theta={theta} outside (0, pi/2)")
    s, cot = np.sin(theta), 1.0 / np.tan(theta)
    h12 = (u_tp - cot * u_p) / s
    hess = np.array([[u_tt, h12], [h12, u_pp / s**2 + cot * u_t]])
    return FrameJet2(value, np.array([u_t, u_p / s]), hess)


@dataclass(frozen=True)
class CliffordReference:
    m: int
    n: int
    c: float
    principal_curvatures: np.ndarray
    K: float


def clifford_reference(m: int, n: int, c: float) -> CliffordReference:
    """Closed form for constant u = c: the product S^m(cos a) x S^n(sin a)."""
    if m < 1 or n < 1:
        raise ValueError("m, n must be >= 1")
    kappa = np.concatenate([np.full(m, -np.exp(-c)), np.full(n, np.exp(c))])
    return CliffordReference(m, n, c, kappa, (-1.0) ** m * np.exp((n - m) * c))


def tangent_frame(x: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the tangent space x^perp of the unit sphere at x, as columns."""
    x = np.asarray(x, dtype=float)
    q, _ = np.linalg.qr(np.column_stack([x, np.eye(len(x))]))
    frame = q[:, 1:len(x)]
    return frame


def hyperspherical(angles) -> np.ndarray:
    """Point of S^k from k hyperspherical angles (the first one is the polar angle)."""
    angles = np.atleast_1d(np.asarray(angles, dtype=float))
    k = len(angles)
    x = np.empty(k + 1)
    sprod = 1.0
    for i in range(k):
        x[i] = sprod * np.cos(angles[i])
        sprod *= np.sin(angles[i])
    x[k] = sprod
    return x
