import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shearkin.fitting import InsufficientData, loglog_fit
from shearkin.moment_dynamics import (
    DegenerateStress,
    MomentVector,
    abc_from_T,
    abc_limit,
    assemble_N,
    coefficient_frame,
    equilibrium_frame,
    general_N_entry,
    integrate_moments,
    integrate_stress,
    matrix_M,
    matrix_N4,
    moment_generator,
    rate_lower_bound,
    stress_rhs,
)
from shearkin.tensor_core import ShearFrame, SymTensor2

SQ3 = math.sqrt(3.0)


@pytest.fixture(scope="module")
def traj_mu1():
    return integrate_stress(SymTensor2.identity(), ShearFrame(1.0), 1e4)


# ------------------------------------------------------------- stress ODE


def test_rhs_examples():
    f0 = ShearFrame(0.0)
    for c in (0.1, 1.0, 10.0):
        assert stress_rhs(SymTensor2.identity(c), f0).max_abs() == 0.0
    r = stress_rhs(SymTensor2.diag(2.0, 1.0), f0)
    assert np.allclose(r.as_matrix(), np.diag([-1 / 3, 1 / 3]), atol=1e-15)
    r = stress_rhs(SymTensor2.identity(), ShearFrame(1.0))
    assert r.as_tuple() == pytest.approx((0.0, -1.0, 0.0), abs=1e-15)


def test_rhs_rejects_zero_trace():
    with pytest.raises(DegenerateStress):
        stress_rhs(SymTensor2(0.0, 0.0, 0.0), ShearFrame(1.0))


def test_mu0_relaxes_to_isotropy():
    tr = integrate_stress(SymTensor2.diag(2.0, 1.0), ShearFrame(0.0), 40.0)
    T = tr.T_at(40.0)
    # tr T is conserved at mu = 0 and the anisotropy decays like e^{-2t/tr T}
    assert np.allclose(T.as_matrix(), 1.5 * np.eye(2), atol=1e-8)
    mid = tr.T_at(5.0)
    assert mid.xx - mid.yy > 0


def test_mu1_asymptotics(traj_mu1):
    a, b, c = traj_mu1.abc_at(1e4)
    assert (a, b, c) == pytest.approx(abc_limit(1.0), rel=1e-2)


def test_mu2_abc_limit():
    tr = integrate_stress(SymTensor2.diag(3.0, 0.5), ShearFrame(2.0), 1e5)
    assert tr.abc_at(1e5) == pytest.approx((4 / 3, -1.0, 1.0), rel=1e-2)


def test_abc_error_is_order_one_over_t(traj_mu1):
    tr = integrate_stress(SymTensor2.identity(), ShearFrame(1.0), 1e5)
    lim = np.array(abc_limit(1.0))
    scaled = [t * np.max(np.abs(np.array(tr.abc_at(t)) - lim)) for t in np.geomspace(1e3, 1e5, 9)]
    assert max(scaled) < 2 * min(scaled)


def test_reconstruction_matches_stored(traj_mu1):
    fr = traj_mu1.frame
    for t, row in zip(traj_mu1.times[1::7], traj_mu1.T[1::7]):
        a, b, c = abc_from_T(SymTensor2(*row), t, fr)
        Tf = fr.from_frame(SymTensor2(t**3 * a, t**2 * b, t * c))
        assert np.allclose(Tf.as_tuple(), row, rtol=1e-12)


def test_trajectory_stays_pd(traj_mu1):
    for row in traj_mu1.T:
        T = SymTensor2(*row)
        assert T.is_positive_definite() and T.trace > 0


def test_spectrum_of_M():
    assert np.allclose(np.diag(matrix_M(0.0)), [-3, -2, -1])
    for mu in (-2.0, 0.3, 1.0, 5.0):
        assert sorted(np.linalg.eigvals(matrix_M(mu)).real) == pytest.approx([-3, -2, -1], abs=1e-12)
    v = np.array([1.0, 0.0, 0.0])
    assert np.allclose(matrix_M(1.0) @ v, -3 * v)
    assert abc_limit(0.0) == (0.0, -0.0, 1.0)
    assert abc_limit(1.0) == pytest.approx((1 / 3, -0.5, 1.0))


def test_abc_limit_is_fixed_point_of_leading_system():
    # at large t the forcing terms vanish and M z + (0,0,1) = 0 at the limit
    for mu in (0.5, 1.0, 2.0):
        z = np.array(abc_limit(mu))
        assert np.allclose(matrix_M(mu) @ z + [0, 0, 1], 0, atol=1e-15)


# ------------------------------------------------------------- frames


def test_equilibrium_frame():
    cf = equilibrium_frame()
    assert cf.resmeq2_residual() == 0.0
    assert np.allclose(cf.eta.as_matrix(), np.eye(2))
    assert cf.theta == 2.0


def test_consistency_along_trajectory(traj_mu1):
    sup = max(coefficient_frame(traj_mu1, t).resmeq2_residual() for t in np.geomspace(1e-3, 1e4, 60))
    assert sup <= 1e-8


def test_F_asymptotics(traj_mu1):
    t = 1e4
    cf = coefficient_frame(traj_mu1, t)
    a, b = traj_mu1.frame.a, traj_mu1.frame.b
    target = -(SQ3 * (np.outer(a, b) - np.outer(b, a)) + 4 * np.outer(b, b))
    assert np.linalg.norm(2 * t * cf.F - target) <= 0.05 * np.linalg.norm(target)


def test_eta_scaling(traj_mu1):
    t = 1e4
    eta = coefficient_frame(traj_mu1, t).eta
    assert eta.xx * t**1.5 == pytest.approx(SQ3, rel=0.05)
    assert eta.yy * math.sqrt(t) == pytest.approx(2.0, rel=0.05)


# ------------------------------------------------------------- 4th/6th moments


def test_N4_entries():
    N = matrix_N4()
    assert N[0, 1] == pytest.approx(2 * SQ3)
    assert N[4, 4] == -8.0
    assert np.max(np.linalg.eigvals(N).real) < 0


def test_general_entries():
    assert general_N_entry(4, 0, 4, 0) == 0.0
    assert general_N_entry(3, 1, 4, 0) == pytest.approx(-SQ3 / 2)
    with pytest.raises(IndexError):
        general_N_entry(3, 1, 2, 1)


def test_two_constructions_agree():
    assert np.allclose(assemble_N(4), matrix_N4(), rtol=0, atol=1e-15)


def test_generator_limit_matches_N4(traj_mu1):
    t = 1e4
    A, _ = moment_generator(coefficient_frame(traj_mu1, t), 4)
    R = np.diag([(-1.0) ** j for _, j in [(4, 0), (3, 1), (2, 2), (1, 3), (0, 4)]])
    assert np.allclose(R @ (t * A) @ R, matrix_N4(), atol=0.05)
    assert np.allclose(np.sort(np.linalg.eigvals(t * A).real), [-6, -5, -4, -3, -2], atol=0.05)


def test_zero_moments_stay_zero(traj_mu1):
    ms = integrate_moments(MomentVector(4, np.zeros(5)), traj_mu1, 1e3, t0=1.0)
    assert np.all(ms.h4 == 0.0)


def test_h4_decays_algebraically(traj_mu1):
    ms = integrate_moments(MomentVector(4, [1.0, 0.3, -0.2, 0.1, 0.5]), traj_mu1, 1e4, t0=1.0)
    mask = ms.times >= 1e2
    slope, _, r2 = loglog_fit(ms.times[mask], ms.norms(4)[mask])
    assert slope < -0.5 and r2 > 0.98


def test_h6_grows_at_most_algebraically(traj_mu1):
    h4 = MomentVector(4, [1.0, 0.3, -0.2, 0.1, 0.5])
    ms = integrate_moments(MomentVector(6, np.ones(7)), traj_mu1, 1e4, t0=1.0, h4_0=h4)
    mask = ms.times >= 1e3
    slope, _, r2 = loglog_fit(ms.times[mask], ms.norms(6)[mask])
    assert math.isfinite(slope) and slope < 4 and r2 > 0.9


def test_order6_requires_h4():
    tr = integrate_stress(SymTensor2.identity(), ShearFrame(1.0), 10.0)
    with pytest.raises(ValueError):
        integrate_moments(MomentVector(6, np.ones(7)), tr, 10.0, t0=1.0)


def test_rate_lower_bound_synthetic():
    t = np.geomspace(1, 1e4, 50)
    composite, R = rate_lower_bound((t, 1 / t), 0.0)
    assert composite == pytest.approx(5.0, abs=1e-10)
    assert R(100.0) == pytest.approx(100.0**1.0)
    with pytest.raises(InsufficientData):
        rate_lower_bound((t, np.zeros_like(t)), 0.0)


def test_rate_lower_bound_integrated(traj_mu1):
    ms = integrate_moments(MomentVector(4, [1.0, 0.3, -0.2, 0.1, 0.5]), traj_mu1, 1e4, t0=1.0)
    composite, _ = rate_lower_bound(ms, 0.0)
    assert composite > 0


# ------------------------------------------------------------- properties


@st.composite
def pd(draw):
    l1, l2 = draw(st.floats(0.05, 20)), draw(st.floats(0.05, 20))
    phi = draw(st.floats(0, math.pi))
    c, s = math.cos(phi), math.sin(phi)
    return SymTensor2(l1 * c * c + l2 * s * s, (l1 - l2) * c * s, l1 * s * s + l2 * c * c)


@given(pd(), st.floats(-3, 3))
def test_rhs_symmetric_and_finite(T, mu):
    r = stress_rhs(T, ShearFrame(mu))
    assert all(math.isfinite(x) for x in r.as_tuple())


@settings(max_examples=15, deadline=None)
@given(pd(), st.floats(0.2, 2.0))
def test_consistency_identity_holds(T0, mu):
    tr = integrate_stress(T0, ShearFrame(mu), 50.0)
    for t in (0.5, 3.0, 50.0):
        assert coefficient_frame(tr, t).resmeq2_residual() <= 1e-8


@settings(max_examples=10, deadline=None)
@given(pd())
def test_mu0_fixed_point_attracts(T0):
    tr = integrate_stress(T0, ShearFrame(0.0), 60.0 * T0.trace)
    T = tr.T_at(60.0 * T0.trace)
    assert T.trace == pytest.approx(T0.trace, rel=1e-8)
    assert np.allclose(T.as_matrix(), 0.5 * T0.trace * np.eye(2), atol=1e-6 * T0.trace)
