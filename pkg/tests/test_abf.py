import numpy as np
import pytest
from hypothesis import given, strategies as st

from prodsphere.abf import (AbfCertificate, AbfParams, SearchExhausted, analytic_F, audit_nodes,
                            default_params, find_shift, match_boundary, openness_bound,
                            phi_jet, phi_profile, r0_threshold, validate_abf)
from prodsphere.discretization import DiscreteField, PolarGrid2D, RadialGrid
from prodsphere.fields import ConstantK, RadialBumpK
from prodsphere.geometry import GeodesicCap
from prodsphere.kernel import PD_THRESHOLD, ProblemDims, ProductJet, mu_matrix


def test_thresholds(dims21):
    assert r0_threshold(dims21) == pytest.approx(0.5 * np.log(1 / 6))
    assert r0_threshold(dims21) == pytest.approx(-0.895880, abs=1e-6)
    assert r0_threshold(dims21) < openness_bound(dims21)
    with pytest.raises(ValueError):
        r0_threshold(ProblemDims(1, 2))


def test_params_validation(cap3):
    with pytest.raises(ValueError):
        AbfParams(E=0.0)
    with pytest.raises(ValueError):
        AbfParams(E=0.2, scaleF=-1)
    with pytest.raises(ValueError):
        AbfParams(E=0.6).check_cap(cap3)
    p = default_params(cap3)
    assert p.E == pytest.approx(0.25)
    assert isinstance(AbfParams(1, 2, 3).E, float)


@given(st.sampled_from([0.1, 0.25, 0.4]), st.floats(0, np.pi / 3), st.sampled_from([2, 3]))
def test_xx_block_closed_form(E, theta, m):
    p = AbfParams(E)
    j = phi_jet(theta, p, m)
    jet = ProductJet.x_only(j.value, j.grad, j.hess, 1)
    xx = mu_matrix(jet).xx
    np.testing.assert_allclose(xx, E / (np.cos(theta) - E) * np.eye(m), atol=1e-13)


def test_profile_matches_jet(cap3):
    p = AbfParams(0.2, 1.5, 0.7)
    th = np.linspace(0.05, cap3.theta_max, 9)
    v, d1, d2 = phi_profile(th, p)
    for t, a, b, c in zip(th, v, d1, d2):
        j = phi_jet(t, p)
        assert a == pytest.approx(j.value - p.A)
        assert b == pytest.approx(np.hypot(*j.grad))
        assert c == pytest.approx(j.hess[0, 0])


def test_match_boundary(cap3):
    p = match_boundary(default_params(cap3), cap3, -1.3)
    assert phi_profile(cap3.theta_max, p)[0] == pytest.approx(-1.3)


def test_F_increases_with_A(dims21, cap3):
    th = np.linspace(0, cap3.theta_max, 20)
    p = default_params(cap3)
    F = [analytic_F(th, p.with_A(A), dims21) for A in (2.0, 3.0, 5.0)]
    assert np.all(np.diff(np.array(F), axis=0) > 0)


def test_audit_nodes_refinement(cap3):
    g = RadialGrid(cap3, 33)
    T, P = audit_nodes(cap3, ConstantK(1.0), g, 4)
    assert len(T) == 129 and np.all(P == 0)
    assert np.isin(g.theta, T).all()


def test_find_shift_certificate(dims21, cap3):
    g = RadialGrid(cap3, 65)
    p = find_shift(cap3, dims21, ConstantK(0.5), grid=g)
    cert = validate_abf(p, ConstantK(0.5), dims21, cap3, grid=g)
    assert cert.valid
    assert cert.sup_psi <= r0_threshold(dims21)
    assert cert.margin_pd > PD_THRESHOLD
    assert set(cert.checks) == {"audit_analytic", "grid_analytic", "grid_discrete"}
    # minimality within the search step
    lower = validate_abf(p.with_A(p.A - 2e-3), ConstantK(0.5), dims21, cap3, grid=g)
    assert not lower.valid
    assert cert.to_dict()["valid"] is True


def test_find_shift_small_K_uses_lowest_shift(dims21, cap3):
    p = find_shift(cap3, dims21, ConstantK(1e-6))
    assert phi_profile(cap3.theta_max, p)[0] == pytest.approx(r0_threshold(dims21))


def test_find_shift_larger_K_needs_larger_shift(dims21, cap3):
    a = find_shift(cap3, dims21, ConstantK(0.5)).A
    b = find_shift(cap3, dims21, RadialBumpK(0.5, 0.5)).A
    assert b > a


def test_find_shift_exhausted(dims21, cap3):
    with pytest.raises(SearchExhausted):
        find_shift(cap3, dims21, ConstantK(1e3), A_cap=5.0)


def test_degenerate_E_terminates(dims21, cap3):
    p = find_shift(cap3, dims21, ConstantK(0.5), AbfParams(0.4999))
    assert np.isfinite(p.A)
    assert validate_abf(p, ConstantK(0.5), dims21, cap3).valid


def test_validate_discrete_field(dims21, cap3):
    g = PolarGrid2D(cap3, 33, 64)
    p = find_shift(cap3, dims21, ConstantK(0.5), grid=g)
    psi = DiscreteField(g, phi_profile(g.theta, p)[0])
    cert = validate_abf(psi, ConstantK(0.5), dims21, cap3)
    assert isinstance(cert, AbfCertificate) and cert.margin_pd > 0
    bad = validate_abf(psi, ConstantK(50.0), dims21, cap3)
    assert not bad.valid
    with pytest.raises(TypeError):
        validate_abf(np.zeros(3), ConstantK(0.5), dims21, cap3)


def test_coarse_grid_boundary_stencil_not_convex(dims21, cap3):
    g = RadialGrid(cap3, 17)
    p = default_params(cap3).with_A(10.0)
    cert = validate_abf(DiscreteField(g, phi_profile(g.theta, p)[0]), ConstantK(0.5), dims21, cap3)
    assert cert.margin_pd < 0 and not cert.valid
