import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from prodsphere.abf import AbfParams, r0_threshold
from prodsphere.discretization import RadialGrid
from prodsphere.fields import AmbientField, RadialProfile
from prodsphere.kernel import ProblemDims, ProductJet, curvature_K
from prodsphere.solver import continuity_solve
from prodsphere.verification import (abf_radial_profile, boundary_identity_check,
                                     comparison_check, extrinsic_oracle, global_obstruction_demo,
                                     jacobian_deviation, jet_field, manufacture_problem,
                                     product_chart, random_chart_point, random_jet,
                                     random_smooth_field)


@settings(max_examples=15)
@given(seed=st.integers(0, 2**32 - 1), m=st.sampled_from([2, 3]))
def test_oracle_second_order(seed, m):
    rng = np.random.default_rng(seed)
    dims = ProblemDims(m, 1)
    jet = random_jet(rng, dims)
    point = random_chart_point(rng, dims)
    rep = extrinsic_oracle(jet_field(jet, point, dims), point, dims)
    assert rep.K_analytic == pytest.approx(curvature_K(jet, dims), rel=1e-10)
    assert rep.unit_norm_error < 1e-14
    assert rep.swap_sign in (-1.0, 1.0)
    if rep.rel_error > 1e-8:
        assert 3 <= rep.convergence_ratio <= 5


def test_jet_field_reproduces_jet(rng, dims21):
    jet = random_jet(rng, dims21)
    point = random_chart_point(rng, dims21)
    gamma, rho = product_chart(dims21)(point)
    from prodsphere.geometry import tangent_frame
    back = jet_field(jet, point, dims21).jet(gamma, rho, tangent_frame(gamma), tangent_frame(rho))
    np.testing.assert_allclose(back.hess, jet.hess, atol=1e-13)


def test_oracle_constant_field(dims21):
    f = AmbientField.quadratic(2, 1, np.log(2), np.zeros(5), np.zeros((5, 5)))
    rep = extrinsic_oracle(f, np.array([1.0, 0.5, 2.0]), dims21)
    assert rep.K_analytic == pytest.approx(0.5)
    assert rep.rel_error < 1e-3


@pytest.mark.parametrize("backend", ["radial", "polar2d"])
def test_jacobian_deviation(backend, rng):
    assert jacobian_deviation(rng, backend, 2) < 1e-6


def test_obstruction_demo_random(rng):
    for _ in range(5):
        rep = global_obstruction_demo(random_smooth_field(rng))
        assert rep.passed and rep.largest_xx_eig <= -0.95
        assert rep.grad_norm < 0.2


def test_obstruction_demo_exact_at_constant():
    f = AmbientField.quadratic(2, 1, 0.3, np.zeros(5), np.zeros((5, 5)))
    assert global_obstruction_demo(f).largest_xx_eig == pytest.approx(-1.0)
    with pytest.raises(ValueError):
        global_obstruction_demo(AmbientField.quadratic(3, 1, 0.0, np.zeros(6), np.zeros((6, 6))))


def test_manufacture_rejects_bad_targets(cap3, dims21):
    star = abf_radial_profile(AbfParams(0.15))
    with pytest.raises(ValueError, match="r0"):
        manufacture_problem(star, dims21, cap3, RadialGrid(cap3, 33))
    concave = RadialProfile(lambda t: -5 + 0 * t, lambda t: 0 * t, lambda t: 0 * t)
    with pytest.raises(ValueError, match="convex"):
        manufacture_problem(concave, dims21, cap3, RadialGrid(cap3, 33))


def _manufactured(cap, dims, nr):
    star = abf_radial_profile(AbfParams(0.15))
    star = star.shifted(r0_threshold(dims) - float(star.value(cap.theta_max)))
    man = manufacture_problem(star, dims, cap, RadialGrid(cap, nr))
    return man, continuity_solve(man.problem())


def test_comparison_check_verdicts(cap3, dims21):
    man, rep = _manufactured(cap3, dims21, 65)
    prob = man.problem()
    v = comparison_check(rep.u, man.psi, prob)
    assert v.confirmed and v.branch2
    # swapping the roles breaks the G ordering precondition
    w = comparison_check(man.psi, rep.u, prob)
    assert w.precondition_failed and "G(u) <= G(v)" in w.reason
    too_high = comparison_check(rep.u.values + 1.0, man.psi, prob)
    assert too_high.precondition_failed
    assert set(v.to_dict()) >= {"confirmed", "margins", "branch1", "branch2"}


def test_boundary_identity_order(cap3, dims21):
    defects = []
    for nr in (65, 129):
        man, rep = _manufactured(cap3, dims21, nr)
        b = boundary_identity_check(rep.u, man.psi_params, dims21)
        assert b.passed
        defects.append(abs(b.defect))
    assert 3.0 < defects[0] / defects[1] < 5.0
    assert b.implied_h_TT == pytest.approx(-1 / np.tan(cap3.theta_max), rel=0.05)
