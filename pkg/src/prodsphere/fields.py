"""Field and data descriptions shared by the solver, the ABF construction and the checks.

* :class:`RadialProfile` - a radial function u(theta) on a cap, with analytic derivatives.
* curvature data families ``ConstantK``, ``RadialBumpK``, ``TableK`` - K(theta, phi) > 0.
* :class:`AmbientField` - u given as a function of the ambient coordinates (gamma, rho),
  whose covariant jets are obtained by tangential projection.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import tangent_frame
from .kernel import ProductJet


@dataclass(frozen=True)
class RadialProfile:
    value: Callable
    d1: Callable
    d2: Callable
    label: str = "radial"

    def __call__(self, theta):
        return self.value(theta)

    def shifted(self, c: float) -> "RadialProfile":
        return RadialProfile(lambda t: self.value(t) + c, self.d1, self.d2, self.label)

    def plus(self, other: "RadialProfile", scale: float = 1.0) -> "RadialProfile":
        return RadialProfile(
            lambda t: self.value(t) + scale * other.value(t),
            lambda t: self.d1(t) + scale * other.d1(t),
            lambda t: self.d2(t) + scale * other.d2(t),
            f"{self.label}+{scale:g}*{other.label}",
        )


def cos_minus_const(c0: float) -> RadialProfile:
    """cos(theta) - c0."""
    return RadialProfile(lambda t: np.cos(t) - c0, lambda t: -np.sin(t), lambda t: -np.cos(t),
                         "cos")


# --- curvature data -------------------------------------------------------------------------

class CurvatureData:
    radial = True

    def __call__(self, theta, phi=0.0):  # pragma: no cover - interface
        raise NotImplementedError

    def to_dict(self) -> dict:  # pragma: no cover - interface
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantK(CurvatureData):
    value: float

    def __post_init__(self):
        if not self.value > 0:
            raise ValueError("K must be positive")

    def __call__(self, theta, phi=0.0):
        return np.full(np.broadcast(np.asarray(theta), np.asarray(phi)).shape, float(self.value))

    def to_dict(self):
        return {"kind": "constant", "params": {"value": self.value}}


@dataclass(frozen=True)
class RadialBumpK(CurvatureData):
    """K = c1 + c2 cos^2(theta)."""

    c1: float
    c2: float

    def __post_init__(self):
        if not (self.c1 > 0 and self.c1 + self.c2 > 0):
            raise ValueError("radial_bump K must be positive on the cap")

    def __call__(self, theta, phi=0.0):
        theta, phi = np.broadcast_arrays(np.asarray(theta, float), np.asarray(phi, float))
        return self.c1 + self.c2 * np.cos(theta) ** 2

    def to_dict(self):
        return {"kind": "radial_bump", "params": {"c1": self.c1, "c2": self.c2}}


class TableK(CurvatureData):
    """Tabulated K on a radial or polar node set, linearly interpolated elsewhere.

    Radial tables are (theta, K) samples.  Polar tables hold a pole value plus rings of
    ``nphi`` equally spaced azimuths; interpolation is bilinear in (theta, phi), periodic in
    phi, and linear in theta between the pole and the first ring.
    """

    def __init__(self, theta, K, phi=None, path: str | None = None):
        theta = np.asarray(theta, dtype=float)
        K = np.asarray(K, dtype=float)
        if np.any(K <= 0) or not np.all(np.isfinite(K)):
            raise ValueError("tabulated K must be finite and positive")
        self.path = path
        self.theta_nodes, self.K_nodes = theta, K
        self.phi_nodes = None if phi is None else np.asarray(phi, dtype=float)
        if phi is None:
            order = np.argsort(theta)
            self._t, self._k = theta[order], K[order]
            self.radial = True
            return
        self.radial = False
        pole = theta == 0.0
        if pole.sum() != 1:
            raise ValueError("a polar K table needs exactly one pole row (theta = 0)")
        self._pole = float(K[pole][0])
        rings = np.unique(theta[~pole])
        phis = np.unique(np.asarray(phi)[~pole])
        table = np.full((len(rings), len(phis)), np.nan)
        ti = np.searchsorted(rings, theta[~pole])
        pi = np.searchsorted(phis, np.asarray(phi)[~pole])
        table[ti, pi] = K[~pole]
        if np.isnan(table).any():
            raise ValueError("polar K table must be a full ring x azimuth product")
        self._rings, self._phis, self._table = rings, phis, table

    def __call__(self, theta, phi=0.0):
        theta, phi = np.broadcast_arrays(np.asarray(theta, float), np.asarray(phi, float))
        if self.radial:
            return np.interp(theta, self._t, self._k)
        nphi = len(self._phis)
        dphi = 2 * np.pi / nphi
        x = np.mod(phi, 2 * np.pi) / dphi
        x = np.where(np.abs(x - np.round(x)) < 1e-9, np.round(x), x)
        l0 = np.floor(x).astype(int) % nphi
        wx = x - np.floor(x)
        l1 = (l0 + 1) % nphi
        r = self._rings
        # ring values at this azimuth
        j1 = np.clip(np.searchsorted(r, theta, side="right"), 1, len(r) - 1)
        j0 = j1 - 1
        ring_val = lambda j: (1 - wx) * self._table[j, l0] + wx * self._table[j, l1]
        v0, v1 = ring_val(j0), ring_val(j1)
        wt = np.clip((theta - r[j0]) / (r[j1] - r[j0]), 0.0, 1.0)
        out = np.where(wt == 0.0, v0, (1 - wt) * v0 + wt * v1)
        inner = theta < r[0]
        if np.any(inner):
            w = theta / r[0]
            out = np.where(inner, (1 - w) * self._pole + w * ring_val(np.zeros_like(l0)), out)
        return out

    def to_dict(self):
        return {"kind": "table", "params": {"path": self.path}}


# --- ambient fields -------------------------------------------------------------------------

def ambient_stack(gamma, rho) -> np.ndarray:
    """z = (gamma, rho) along the last axis, broadcasting the leading axes."""
    gamma, rho = np.asarray(gamma, float), np.asarray(rho, float)
    lead = np.broadcast_shapes(gamma.shape[:-1], rho.shape[:-1])
    return np.concatenate([np.broadcast_to(gamma, lead + gamma.shape[-1:]),
                           np.broadcast_to(rho, lead + rho.shape[-1:])], axis=-1)


class AmbientField:
    """u(gamma, rho) defined through an extension to R^{m+1} x R^{n+1}.

    ``value`` accepts arrays with trailing dimensions m+1 and n+1.  ``grad`` and ``hess``
    return the ambient gradient (length m+n+2) and Hessian at a single point.
    """

    def __init__(self, m: int, n: int, value, grad, hess, label: str = "ambient"):
        self.m, self.n = m, n
        self.value, self.grad, self.hess = value, grad, hess
        self.label = label

    def jet(self, gamma, rho, frame_x=None, frame_y=None) -> ProductJet:
        m, n = self.m, self.n
        gamma = np.asarray(gamma, float)
        rho = np.asarray(rho, float)
        ex = tangent_frame(gamma) if frame_x is None else frame_x
        ey = tangent_frame(rho) if frame_y is None else frame_y
        gr = self.grad(gamma, rho)
        H = self.hess(gamma, rho)
        gx, gy = gr[:m + 1], gr[m + 1:]
        hxx, hxy, hyy = H[:m + 1, :m + 1], H[:m + 1, m + 1:], H[m + 1:, m + 1:]
        hess_xx = ex.T @ hxx @ ex - (gx @ gamma) * np.eye(m)
        hess_yy = ey.T @ hyy @ ey - (gy @ rho) * np.eye(n)
        hess_xx = 0.5 * (hess_xx + hess_xx.T)
        hess_yy = 0.5 * (hess_yy + hess_yy.T)
        return ProductJet(float(self.value(gamma, rho)), ex.T @ gx, ey.T @ gy, hess_xx,
                          ex.T @ hxy @ ey, hess_yy)

    @classmethod
    def quadratic(cls, m: int, n: int, c: float, b, C, center=None, label="quadratic"):
        """u = c + b.z + (z - center)^T C (z - center) / 2 with z = (gamma, rho)."""
        b = np.asarray(b, float)
        C = np.asarray(C, float)
        C = 0.5 * (C + C.T)
        z0 = np.zeros(m + n + 2) if center is None else np.asarray(center, float)

        def value(gamma, rho):
            z = ambient_stack(gamma, rho) - z0
            return c + (z + z0) @ b + 0.5 * np.einsum("...i,ij,...j->...", z, C, z)

        def grad(gamma, rho):
            z = np.concatenate([gamma, rho]) - z0
            return b + C @ z

        return cls(m, n, value, grad, lambda gamma, rho: C, label)

    @classmethod
    def with_jet(cls, jet: ProductJet, gamma, rho, frame_x, frame_y) -> "AmbientField":
        """Quadratic field whose covariant jet at (gamma, rho) in the given frames is ``jet``."""
        m, n = jet.dims.m, jet.dims.n
        b = np.concatenate([frame_x @ jet.grad_x, frame_y @ jet.grad_y])
        E = np.zeros((m + n + 2, m + n))
        E[:m + 1, :m] = frame_x
        E[m + 1:, m:] = frame_y
        C = E @ jet.hess @ E.T
        z0 = np.concatenate([gamma, rho])
        # b is tangent at z0 so b.z0 = 0 and the value at z0 is jet.u
        return cls.quadratic(m, n, jet.u, b, C, center=z0, label="jet")

    @classmethod
    def abf(cls, m: int, n: int, E: float, scaleF: float = 1.0, A: float = 0.0):
        """-ln(scaleF (x_1 - E)) - A with x_1 = gamma[0]."""
        dim = m + n + 2

        def value(gamma, rho):
            return -np.log(scaleF * (np.asarray(gamma)[..., 0] - E)) - A

        def grad(gamma, rho):
            g = np.zeros(dim)
            g[0] = -1.0 / (gamma[0] - E)
            return g

        def hess(gamma, rho):
            H = np.zeros((dim, dim))
            H[0, 0] = 1.0 / (gamma[0] - E) ** 2
            return H

        return cls(m, n, value, grad, hess, "abf")

    @classmethod
    def from_sympy(cls, m: int, n: int, expr, symbols, label: str = "sympy"):
        """Field from a sympy expression in the ambient symbols (gamma_0..gamma_m, rho_0..rho_n)."""
        import sympy as sp

        symbols = list(symbols)
        gexpr = [sp.diff(expr, s) for s in symbols]
        hexpr = [[sp.diff(g, s) for s in symbols] for g in gexpr]
        fv = sp.lambdify(symbols, expr, "numpy")
        fg = sp.lambdify(symbols, gexpr, "numpy")
        fh = sp.lambdify(symbols, hexpr, "numpy")

        def split(gamma, rho):
            gamma, rho = np.asarray(gamma, float), np.asarray(rho, float)
            return [gamma[..., i] for i in range(m + 1)] + [rho[..., i] for i in range(n + 1)]

        def value(gamma, rho):
            args = split(gamma, rho)
            return np.broadcast_to(np.asarray(fv(*args), float), args[0].shape) * 1.0

        return cls(m, n, value,
                   lambda g, r: np.asarray(fg(*split(g, r)), float),
                   lambda g, r: np.asarray(fh(*split(g, r)), float), label)
