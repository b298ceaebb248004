import numpy as np
import pytest
import sympy as sp

from prodsphere.abf import AbfParams, phi_jet
from prodsphere.fields import (AmbientField, ConstantK, RadialBumpK, TableK, ambient_stack,
                               cos_minus_const)
from prodsphere.geometry import tangent_frame
from prodsphere.kernel import ProblemDims


def test_constant_and_bump():
    assert ConstantK(0.5)(np.zeros(3), 1.0).tolist() == [0.5] * 3
    with pytest.raises(ValueError):
        ConstantK(0.0)
    with pytest.raises(ValueError):
        RadialBumpK(0.2, -0.3)
    assert RadialBumpK(0.4, 0.1)(0.0) == pytest.approx(0.5)
    assert RadialBumpK(0.4, 0.1).to_dict()["kind"] == "radial_bump"


def test_radial_profile_algebra():
    p = cos_minus_const(0.5)
    q = p.plus(p.shifted(1.0), 2.0)
    assert q(0.3) == pytest.approx(3 * np.cos(0.3) - 1.5 + 2.0)
    assert q.d1(0.3) == pytest.approx(-3 * np.sin(0.3))


def test_radial_table_interp():
    T = TableK([0.0, 0.5, 1.0], [1.0, 2.0, 4.0])
    assert T(0.75) == pytest.approx(3.0)
    assert T.radial
    with pytest.raises(ValueError):
        TableK([0.0, 1.0], [1.0, -1.0])


def test_polar_table_reproduces_nodes():
    rings, nphi = np.array([0.2, 0.4, 0.6]), 8
    phis = np.arange(nphi) * 2 * np.pi / nphi
    R, P = np.meshgrid(rings, phis, indexing="ij")
    fun = lambda t, p: 1 + 0.1 * np.cos(t) ** 2 * np.cos(p)
    theta = np.r_[0.0, R.ravel()]
    phi = np.r_[0.0, P.ravel()]
    T = TableK(theta, fun(theta, phi) * np.r_[1.0, np.ones(R.size)], phi=phi)
    np.testing.assert_allclose(T(theta, phi), fun(theta, phi), rtol=1e-14)
    assert not T.radial
    # periodic in phi
    assert T(0.3, 2 * np.pi + 0.1) == pytest.approx(T(0.3, 0.1))
    with pytest.raises(ValueError):
        TableK(theta[1:], np.ones(R.size), phi=phi[1:])


def test_ambient_stack_broadcast():
    z = ambient_stack(np.ones((4, 1, 3)), np.zeros((5, 2)))
    assert z.shape == (4, 5, 5)


def test_abf_ambient_matches_phi_jet():
    p = AbfParams(0.25, 1.3, 0.4)
    f = AmbientField.abf(2, 1, p.E, p.scaleF, p.A)
    t = 0.6
    gamma = np.array([np.cos(t), np.sin(t), 0.0])
    ex = np.array([[-np.sin(t), 0.0], [np.cos(t), 0.0], [0.0, 1.0]])
    jet = f.jet(gamma, np.array([1.0, 0.0]), ex, tangent_frame(np.array([1.0, 0.0])))
    ref = phi_jet(t, p, 2)
    assert jet.u == pytest.approx(ref.value - p.A)
    np.testing.assert_allclose(jet.grad_x, ref.grad, atol=1e-14)
    np.testing.assert_allclose(jet.hess_xx, ref.hess, atol=1e-13)


def test_sympy_field_matches_quadratic(rng):
    syms = sp.symbols("g0 g1 g2 r0 r1")
    b = rng.normal(size=5)
    C = rng.normal(size=(5, 5))
    C = C + C.T
    expr = sum(bi * s for bi, s in zip(b, syms)) + sp.Rational(1, 2) * sum(
        C[i, j] * syms[i] * syms[j] for i in range(5) for j in range(5))
    f1 = AmbientField.from_sympy(2, 1, expr, syms)
    f2 = AmbientField.quadratic(2, 1, 0.0, b, C)
    gamma = np.array([0.6, 0.0, 0.8])
    rho = np.array([0.0, 1.0])
    j1, j2 = f1.jet(gamma, rho), f2.jet(gamma, rho)
    assert j1.u == pytest.approx(j2.u)
    np.testing.assert_allclose(j1.hess, j2.hess, atol=1e-12)


def test_with_jet_roundtrip(rng):
    from prodsphere.verification import random_chart_point, random_jet
    d = ProblemDims(2, 1)
    jet = random_jet(rng, d)
    gamma = np.array([0.0, 0.6, 0.8])
    rho = np.array([1.0, 0.0])
    ex, ey = tangent_frame(gamma), tangent_frame(rho)
    back = AmbientField.with_jet(jet, gamma, rho, ex, ey).jet(gamma, rho, ex, ey)
    assert back.u == pytest.approx(jet.u)
    np.testing.assert_allclose(back.hess, jet.hess, atol=1e-13)
    np.testing.assert_allclose(back.grad, jet.grad, atol=1e-14)
