import numpy as np
import pytest

from prodsphere.abf import AbfParams, find_shift, phi_profile, r0_threshold, validate_abf
from prodsphere.discretization import DiscreteField, DiscreteProblem, RadialGrid
from prodsphere.fields import ConstantK
from prodsphere.solver import (CertificateInvalid, ContinuityConfig, MaxIterations,
                               NewtonDiverged, PathStalled, continuity_solve, diagnostics,
                               newton_solve)
from prodsphere.verification import abf_radial_profile, comparison_check, manufacture_problem


def scaled_problem(cap, dims, c, nr=65):
    g = RadialGrid(cap, nr)
    p = find_shift(cap, dims, ConstantK(0.5), grid=g)
    psi = phi_profile(g.theta, p)[0]
    F = DiscreteProblem(g, dims, np.ones(nr), psi).F_h(psi)
    return DiscreteProblem(g, dims, c * F, psi)


def test_config_roundtrip_and_validation():
    c = ContinuityConfig(dt0=0.05)
    assert ContinuityConfig.from_dict(c.to_dict()) == c
    assert c.tol("radial") == 1e-10 and c.tol("polar2d") == 1e-8
    assert ContinuityConfig(newton_tol=1e-9).tol("radial") == 1e-9
    with pytest.raises(ValueError):
        ContinuityConfig(dt0=0.0)
    with pytest.raises(ValueError):
        ContinuityConfig.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        ContinuityConfig(newton_tol=-1.0)


def test_newton_quadratic_convergence(cap3, dims21):
    prob = scaled_problem(cap3, dims21, 0.7)
    u, hist = newton_solve(prob.psi, prob.K, prob, ContinuityConfig())
    res = np.array(hist.residuals)
    assert res[-1] <= 1e-10
    # terminal contraction is much faster than linear
    assert res[-1] < 1e-3 * res[-3] or hist.iterations <= 3
    assert hist.iterations == len(hist.damping)


def test_newton_max_iterations(cap3, dims21):
    prob = scaled_problem(cap3, dims21, 0.3)
    with pytest.raises(MaxIterations):
        newton_solve(prob.psi, prob.K, prob, ContinuityConfig(max_newton=1))


@pytest.mark.parametrize("c", [0.3, 1.0])
def test_continuity_flags(cap3, dims21, c):
    prob = scaled_problem(cap3, dims21, c)
    rep = continuity_solve(prob)
    assert rep.path[0].t == 0.0 and rep.path[-1].t == 1.0
    assert all(p.K_bracketed and p.below_r0 and p.min_eig_M > 0 for p in rep.path)
    assert rep.final_residual <= 1e-10
    assert all(rep.diagnostics["flags"].values())
    assert comparison_check(rep.u, prob.psi, prob).confirmed
    if c == 1.0:
        np.testing.assert_allclose(rep.u.values, prob.psi, atol=1e-12)


def test_solution_monotone_in_K(cap3, dims21):
    a = continuity_solve(scaled_problem(cap3, dims21, 0.3)).u.values
    b = continuity_solve(scaled_problem(cap3, dims21, 0.7)).u.values
    # smaller K gives the larger solution (F is increasing in u below r0)
    assert np.all(a >= b - 1e-12)


def test_certificate_invalid(cap3, dims21):
    g = RadialGrid(cap3, 33)
    psi = phi_profile(g.theta, AbfParams(0.25))[0]  # A = 0, sup psi above r0
    prob = DiscreteProblem(g, dims21, np.full(33, 0.1), psi)
    with pytest.raises(CertificateInvalid):
        continuity_solve(prob)


def test_path_stalled_reports_progress(cap3, dims21):
    prob = scaled_problem(cap3, dims21, 0.3, nr=33)
    cfg = ContinuityConfig(dt0=0.5, dt_min=0.4, max_newton=1)
    with pytest.raises(PathStalled) as info:
        continuity_solve(prob, cfg)
    assert info.value.last_t < 1.0 and info.value.path[0].t == 0.0


def test_t0_failure_is_newton_diverged(cap3, dims21):
    # psi solves the t=0 problem to roundoff only, so an unreachable tolerance fails there
    prob = scaled_problem(cap3, dims21, 0.5, nr=33)
    with pytest.raises(NewtonDiverged):
        continuity_solve(prob, ContinuityConfig(newton_tol=1e-300, max_newton=0))


def test_manufactured_recovery(cap3, dims21):
    star = abf_radial_profile(AbfParams(0.15, 1.0, 0.0))
    b = float(star.value(cap3.theta_max))
    star = star.shifted(r0_threshold(dims21) - b)
    man = manufacture_problem(star, dims21, cap3, RadialGrid(cap3, 65))
    assert man.certificate.valid
    rep = continuity_solve(man.problem())
    err = np.max(np.abs(rep.u.values - man.u_star.values))
    assert err < 5e-4
    assert rep.u.values[-1] == man.u_star.values[-1]


def test_diagnostics_flags_detect_violation(cap3, dims21):
    prob = scaled_problem(cap3, dims21, 0.5, nr=33)
    d = diagnostics(prob.psi - 1.0, prob.psi, prob)
    assert not d["flags"]["psi_le_u"]
    u = prob.psi.copy()
    u[5] = 0.0
    assert not diagnostics(u, prob.psi, prob)["flags"]["u_le_r0"]
