import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from shearkin import boltzmann_dsmc as ds
from shearkin.kernels import dsmc_kernels as K
from shearkin.tensor_core import ShearFrame, SymTensor2

ORACLES = json.loads((Path(__file__).parent / "oracles" / "frozen.json").read_text())
BACKENDS = ["numba", "numpy"]


def _collide(w, i, j, nu, backend, unif=0.0, gmax=10.0):
    ii, jj = np.array([i]), np.array([j])
    cn, sn, un = np.array([nu[0]]), np.array([nu[1]]), np.array([unif])
    st_ = np.zeros(2)
    if backend == "numba":
        return K.collide_loops(w, ii, jj, cn, sn, un, gmax, st_)
    return K.collide_numpy(w, ii, jj, cn, sn, un, gmax, st_, 1)


# ------------------------------------------------------------- drift


def test_drift_example():
    ens = ds.ParticleEnsemble(np.array([[1.0, 2.0], [0.0, -1.0]]))
    ds.drift_step(ens, ShearFrame(1.0), 0.5)
    assert np.allclose(ens.velocities, [[0.0, 2.0], [0.5, -1.0]])
    assert ens.t == 0.5


def test_drift_mu_zero_is_identity():
    v = np.random.default_rng(0).normal(size=(50, 2))
    ens = ds.ParticleEnsemble(v.copy())
    ds.drift_step(ens, ShearFrame(0.0), 1.0)
    assert np.array_equal(ens.velocities, v)


@settings(max_examples=30)
@given(st.floats(-3, 3), st.floats(0, 2), st.floats(0, 2 * math.pi), st.sampled_from(BACKENDS))
def test_drift_composes(mu, dt, phi, backend):
    # alpha (x) beta is nilpotent, so two half steps equal one full step
    frame = ShearFrame(mu, (math.cos(phi), math.sin(phi)), (-math.sin(phi), math.cos(phi)))
    v = np.random.default_rng(1).normal(size=(20, 2))
    a = ds.ParticleEnsemble(v.copy())
    b = ds.ParticleEnsemble(v.copy())
    ds.drift_step(a, frame, dt, backend)
    ds.drift_step(b, frame, dt / 2, backend)
    ds.drift_step(b, frame, dt / 2, backend)
    assert np.allclose(a.velocities, b.velocities, atol=1e-12)


# ------------------------------------------------------------- collisions


@pytest.mark.parametrize("backend", BACKENDS)
def test_head_on_collision_swaps(backend):
    w = np.array([[1.0, 0.0], [-1.0, 0.0]])
    assert _collide(w, 0, 1, (1.0, 0.0), backend) == 1
    assert np.array_equal(w, [[-1.0, 0.0], [1.0, 0.0]])


@pytest.mark.parametrize("backend", BACKENDS)
def test_perpendicular_nu_does_nothing(backend):
    w = np.array([[1.0, 0.0], [-1.0, 0.0]])
    assert _collide(w, 0, 1, (0.0, 1.0), backend) == 0
    assert np.array_equal(w, [[1.0, 0.0], [-1.0, 0.0]])


@pytest.mark.parametrize("backend", BACKENDS)
def test_majorant_exceedance_reported(backend):
    w = np.array([[5.0, 0.0], [-5.0, 0.0]])
    assert _collide(w, 0, 1, (1.0, 0.0), backend, gmax=1.0) == -1


@settings(max_examples=50)
@given(st.lists(st.floats(-5, 5), min_size=4, max_size=4), st.floats(0, 2 * math.pi),
       st.sampled_from(BACKENDS))
def test_collision_conserves(vals, phi, backend):
    w = np.array(vals, dtype=float).reshape(2, 2)
    m0, e0 = w.sum(axis=0), np.sum(w**2)
    _collide(w, 0, 1, (math.cos(phi), math.sin(phi)), backend, gmax=100.0)
    assert np.allclose(w.sum(axis=0), m0, atol=1e-12)
    assert abs(np.sum(w**2) - e0) <= 1e-12 * max(e0, 1.0)


def test_maxwellian_is_stationary_under_collisions():
    ens = ds.ParticleEnsemble.maxwellian(20_000, seed=3)
    cfg = ds.CollisionConfig(dt=0.05)
    for _ in range(20):
        ds._collide_with_retry(ens, cfg, None)
    assert ens.collisions > 0
    # each velocity component should still be N(0, 1)
    for k in range(2):
        _, p = stats.kstest(ens.velocities[:, k], "norm")
        assert p > 1e-3
    r = np.sum(ens.velocities**2, axis=1)
    edges = np.quantile(stats.chi2.rvs(2, size=10_000, random_state=0), np.linspace(0, 1, 11))
    edges[0], edges[-1] = 0.0, np.inf
    obs, _ = np.histogram(r, bins=edges)
    exp = np.diff(stats.chi2.cdf(edges, 2)) * ens.n
    assert stats.chisquare(obs, exp).pvalue > 1e-3


def test_collision_errors_tracked():
    ens = ds.ParticleEnsemble.bimodal(5000, seed=1)
    r = ds.run(ens, ShearFrame(0.5), ds.CollisionConfig(dt=0.05), 1.0, n_out=3)
    assert r.collisions > 0
    assert r.max_momentum_error <= 1e-12 and r.max_energy_error <= 1e-12


def test_config_validation():
    with pytest.raises(ValueError):
        ds.CollisionConfig(dt=0.0)
    with pytest.raises(ValueError):
        ds.CollisionConfig(scheme="bird")
    with pytest.raises(ValueError):
        ds.ParticleEnsemble(np.zeros((1, 2)))


# ------------------------------------------------------------- rescaling


def test_empirical_stress_of_maxwellian():
    ens = ds.ParticleEnsemble.maxwellian(100_000, seed=0)
    T = ds.empirical_stress(ens).as_matrix()
    assert np.allclose(T, 0.5 * np.eye(2), atol=0.01)


@pytest.mark.parametrize("seed", [0, 5])
def test_renormalised_stress_is_identity(seed):
    ens = ds.ParticleEnsemble.bimodal(10_000, seed=seed, angle=0.7)
    fr = ds.update_frame(ens)
    assert np.allclose(fr.renormalised_stress(ens).as_matrix(), np.eye(2), atol=1e-12)
    p = fr.rescale(ens.velocities)
    assert np.allclose(ens.weight * p.T @ p, 2 * np.eye(2), atol=1e-12)


def test_stats_require_enough_particles():
    with pytest.raises(ValueError):
        ds.empirical_stress(ds.ParticleEnsemble.maxwellian(100))


# ------------------------------------------------------------- energy defect


@settings(max_examples=100)
@given(st.floats(0, 2 * math.pi))
def test_defect_vanishes_at_identity(phi):
    C = ds.energy_defect_tensor(SymTensor2.identity(), (math.cos(phi), math.sin(phi)))
    assert C.max_abs() == 0.0


def test_defect_eigenvector_direction():
    # nu along an eigenvector of eta: eta nu = l nu, so both terms cancel
    C = ds.energy_defect_tensor(SymTensor2.diag(2.0, 1.0), (1.0, 0.0))
    assert C.max_abs() < 1e-15


def test_defect_oracle():
    C = ds.energy_defect_tensor(SymTensor2.diag(2.0, 1.0), np.array([1.0, 1.0]) / math.sqrt(2))
    assert np.allclose(C.as_matrix(), ORACLES["energy_defect_diag21_nu11"]["value"], atol=1e-15)


def test_defect_rejects_non_unit():
    with pytest.raises(ValueError):
        ds.energy_defect_tensor(SymTensor2.identity(), (1.0, 1.0))


@settings(max_examples=30)
@given(st.floats(0.3, 3), st.floats(0.3, 3), st.floats(0, 2 * math.pi),
       st.lists(st.floats(-3, 3), min_size=4, max_size=4))
def test_defect_is_collision_energy_change(l1, l2, phi, vals):
    eta = SymTensor2.diag(l1, l2)
    nu = np.array([math.cos(phi), math.sin(phi)])
    w, wp = np.array(vals[:2]), np.array(vals[2:])
    E = eta.as_matrix()
    d = (nu @ (w - wp)) * nu
    ps, pps = E @ (w - d), E @ (wp + d)
    p, pp = E @ w, E @ wp
    q = p - pp
    lhs = ps @ ps + pps @ pps - p @ p - pp @ pp
    rhs = 2 * q @ ds.energy_defect_tensor(eta, nu).as_matrix() @ q
    assert lhs == pytest.approx(rhs, abs=1e-9 * (1 + q @ q))


# ------------------------------------------------------------- stress rate


def test_trace_zero_at_identity():
    ens = ds.ParticleEnsemble.maxwellian(10_000, seed=2)
    tr, se = ds.stress_rate_trace(ens, SymTensor2.identity(), 100_000)
    assert abs(tr) <= 3 * se + 1e-15


def test_trace_zero_for_isotropic_ensemble_any_eta():
    ens = ds.ParticleEnsemble.maxwellian(20_000, seed=4)
    tr, se = ds.stress_rate_trace(ens, SymTensor2.diag(2.0, 1.0), 200_000)
    assert abs(tr - ORACLES["trace_P_diag21_isotropic_w"]) <= 4 * se


def test_trace_oracle_for_rescaled_maxwellian():
    # w = eta^-1 p with p ~ N(0, 2 Id): the rescaled density is G^M
    eta = SymTensor2.diag(2.0, 1.0)
    rng = np.random.default_rng(0)
    p = rng.standard_normal((100_000, 2)) * math.sqrt(2)
    ens = ds.ParticleEnsemble(p @ np.linalg.inv(eta.as_matrix()).T)
    tr, se = ds.stress_rate_trace(ens, eta, 400_000)
    assert abs(tr - ORACLES["trace_P_diag21_rescaled_maxwellian"]) <= 4 * se


def test_mc_stderr_scales():
    ens = ds.ParticleEnsemble.bimodal(10_000, seed=0)
    eta = SymTensor2.diag(1.5, 0.8)
    _, s1 = ds.stress_rate_trace(ens, eta, 25_000)
    _, s2 = ds.stress_rate_trace(ens, eta, 100_000)
    assert s1 / s2 == pytest.approx(2.0, rel=0.15)


def test_rate_through_defect_tensor_matches():
    ens = ds.ParticleEnsemble.bimodal(10_000, seed=2, angle=0.4)
    eta = SymTensor2(1.3, 0.2, 0.9)
    tr, _ = ds.stress_rate_trace(ens, eta, 50_000, seed=9)
    i, j, nu = ds._pairs(ens, 50_000, 9)
    u = ens.velocities[i] - ens.velocities[j]
    q = u @ eta.as_matrix().T
    vals = []
    for k in range(len(i)):
        C = ds.energy_defect_tensor(eta, nu[k]).as_matrix()
        vals.append(q[k] @ C @ q[k] * max(nu[k] @ u[k], 0.0))
    assert math.pi * ens.mass**2 * np.mean(vals) == pytest.approx(tr, rel=1e-10)


def test_mc_pairs_minimum():
    with pytest.raises(ValueError):
        ds.stress_rate(ds.ParticleEnsemble.maxwellian(2000), SymTensor2.identity(), 100)


# ------------------------------------------------------------- Maxwellian residual


def test_maxwellian_residual_sheared():
    r = ds.maxwellian_residual_check(64, mu=1.0)
    assert r.collision_residual <= r.quadrature_error
    assert r.drift_max >= 10 * r.quadrature_error
    assert r.drift_sign_ok and r.passed
    assert r.drift_max == pytest.approx(0.0293, rel=0.05)


def test_maxwellian_residual_unsheared():
    r = ds.maxwellian_residual_check(32, mu=0.0)
    assert r.drift_max == 0.0 and r.stationary and r.passed


# ------------------------------------------------------------- entropy


def test_entropy_production_maxwellian_within_noise():
    ens = ds.ParticleEnsemble.maxwellian(100_000, seed=1)
    fr = ds.update_frame(ens)
    ep = ds.entropy_production_estimate(ens, fr.eta, 32, 100_000)
    assert ep.quartic <= 0 and abs(ep.quartic) <= ep.noise_floor + 3 * ep.stderr


def test_entropy_production_bimodal_negative():
    ens = ds.ParticleEnsemble.bimodal(100_000, seed=1)
    fr = ds.update_frame(ens)
    ep = ds.entropy_production_estimate(ens, fr.eta, 32, 100_000, tr_F=-0.1)
    assert ep.quartic < -3 * ep.stderr
    assert ep.bound == pytest.approx(ep.quartic + 0.1)


def test_entropy_bins_minimum():
    ens = ds.ParticleEnsemble.maxwellian(2000)
    with pytest.raises(ValueError):
        ds.entropy_production_estimate(ens, SymTensor2.identity(), bins=16)


# ------------------------------------------------------------- runs


@pytest.fixture(scope="module")
def sheared_run():
    ens = ds.ParticleEnsemble.maxwellian(5000, seed=11)
    return ds.run(ens, ShearFrame(1.0), ds.CollisionConfig(dt=0.05), 1.0, n_out=6)


def test_run_mass_and_theta_bound(sheared_run):
    r = sheared_run
    assert np.all(r.mass == r.mass[0])
    assert np.max(ds.theta_bound_violations(r, 1.0)) <= 0
    assert r.theta[-1] > r.theta[0]  # shear heats the gas
    assert np.allclose(r.momentum, 0, atol=1e-12)


def test_run_mu_zero_energy_constant():
    ens = ds.ParticleEnsemble.bimodal(5000, seed=2)
    r = ds.run(ens, ShearFrame(0.0), ds.CollisionConfig(dt=0.05), 1.0, n_out=5)
    assert np.max(np.abs(r.theta / r.theta[0] - 1)) <= 1e-12
    assert np.all(r.hist_l1 >= 0)
    assert r.hist_l1[-1] < r.hist_l1[0]  # relaxation slows down


def test_run_does_not_touch_input():
    ens = ds.ParticleEnsemble.maxwellian(2000, seed=4)
    v = ens.velocities.copy()
    ds.run(ens, ShearFrame(1.0), ds.CollisionConfig(dt=0.1), 0.2, n_out=2)
    assert np.array_equal(ens.velocities, v)


def test_run_deterministic_and_backend_independent():
    ens = ds.ParticleEnsemble.bimodal(4000, seed=8)
    cfg = ds.CollisionConfig(dt=0.05)
    a = ds.run(ens, ShearFrame(0.5), cfg, 0.5, n_out=3, backend="numba")
    b = ds.run(ens, ShearFrame(0.5), cfg, 0.5, n_out=3, backend="numba")
    c = ds.run(ens, ShearFrame(0.5), cfg, 0.5, n_out=3, backend="numpy")
    assert np.array_equal(a.final.velocities, b.final.velocities)
    assert np.array_equal(a.final.velocities, c.final.velocities)
    assert np.array_equal(a.theta, c.theta)


def test_diagnostic_columns(sheared_run):
    cols = sheared_run.columns()
    assert {"t", "theta", "T_xx", "eta_yy", "tr_F", "hist_l1"} <= set(cols)
    assert all(len(v) == len(cols["t"]) for v in cols.values())


def test_snapshot_roundtrip(tmp_path, sheared_run):
    ens = sheared_run.final
    path = ds.write_snapshot(tmp_path / "s.bin", ens)
    v, t = ds.read_snapshot(path)
    assert np.array_equal(v, ens.velocities) and t == ens.t
    raw = path.read_bytes()
    (tmp_path / "bad.bin").write_bytes(raw[:-8])
    with pytest.raises(ValueError):
        ds.read_snapshot(tmp_path / "bad.bin")
