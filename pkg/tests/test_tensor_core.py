import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shearkin.tensor_core import (
    NotPositiveDefinite,
    ShearFrame,
    SymTensor2,
    check_objectivity,
    spectral,
    sym_func,
    sym_inv,
    sym_inv_sqrt,
    sym_sqrt,
    sym_sqrt_derivative,
    symrel_residual,
)


@st.composite
def pd_tensors(draw, lo=1e-2, hi=1e2):
    l1 = draw(st.floats(lo, hi))
    l2 = draw(st.floats(lo, hi))
    phi = draw(st.floats(0, math.pi))
    c, s = math.cos(phi), math.sin(phi)
    return SymTensor2(l1 * c * c + l2 * s * s, (l1 - l2) * c * s, l1 * s * s + l2 * c * c)


@st.composite
def sym_tensors(draw):
    f = st.floats(-10, 10)
    return SymTensor2(draw(f), draw(f), draw(f))


@st.composite
def frames(draw):
    phi = draw(st.floats(0, 2 * math.pi))
    sign = draw(st.sampled_from([-1.0, 1.0]))
    mu = draw(st.floats(-3, 3))
    a = (math.cos(phi), math.sin(phi))
    b = (-sign * math.sin(phi), sign * math.cos(phi))
    return ShearFrame(mu, a, b)


def close(A: SymTensor2, B, tol=1e-12):
    B = B.as_matrix() if isinstance(B, SymTensor2) else np.asarray(B)
    return np.allclose(A.as_matrix(), B, atol=tol, rtol=0)


# ---------------------------------------------------------------- examples


def test_inv_sqrt_identity():
    assert close(sym_inv_sqrt(SymTensor2.identity()), np.eye(2), 0)


def test_inv_sqrt_diagonal():
    assert close(sym_inv_sqrt(SymTensor2.diag(4.0, 1.0)), np.diag([0.5, 1.0]))


def test_inv_sqrt_offdiagonal_normalises():
    T = SymTensor2(2.0, 1.0, 2.0)
    e = sym_inv_sqrt(T).as_matrix()
    assert np.allclose(e @ T.as_matrix() @ e, np.eye(2), atol=1e-14)
    # eigenvalues 3 and 1 along (1,1) and (1,-1)
    expect = 0.5 * (np.array([[1, 1], [1, 1]]) / math.sqrt(3) + np.array([[1, -1], [-1, 1]]))
    assert np.allclose(e, expect, atol=1e-15)


def test_sqrt_derivative_examples():
    assert close(sym_sqrt_derivative(SymTensor2.identity(), SymTensor2(0, 0, 0)), np.zeros((2, 2)), 0)
    assert close(sym_sqrt_derivative(SymTensor2.identity(), SymTensor2.identity(2.0)), -np.eye(2))
    d = sym_sqrt_derivative(SymTensor2.diag(4.0, 1.0), SymTensor2.diag(1.0, 0.0))
    assert close(d, np.diag([-1 / 16, 0.0]))


def test_rejects_non_pd():
    with pytest.raises(NotPositiveDefinite):
        sym_inv_sqrt(SymTensor2(1.0, 2.0, 1.0))
    with pytest.raises(NotPositiveDefinite):
        sym_inv_sqrt(SymTensor2.diag(1.0, 1e-14))
    assert not SymTensor2(1.0, 2.0, 1.0).is_positive_definite()


def test_frame_validation():
    with pytest.raises(ValueError, match="unit"):
        ShearFrame(1.0, (1.0, 0.5), (0.0, 1.0))
    with pytest.raises(ValueError, match="orthogonal"):
        ShearFrame(1.0, (1.0, 0.0), (0.6, 0.8))


def test_objectivity_kernel_exact():
    om = ShearFrame(0.75, (1.0, 0.0), (0.0, 1.0)).objectivity_matrix()
    assert om.kernel_residual() == 0.0


def gaussian_objective(frame):
    def f(z, w):
        arg = frame.objective_argument(z, w)
        return np.exp(-0.5 * np.sum(arg * arg, axis=-1))
    return f


def test_objective_gaussian_passes():
    frame = ShearFrame(1.3, (0.6, 0.8), (-0.8, 0.6))
    rep = check_objectivity(gaussian_objective(frame), frame, samples=500)
    assert rep.passed and rep.max_deviation <= 1e-10


def test_non_objective_fails():
    frame = ShearFrame(1.0)
    rep = check_objectivity(lambda z, w: np.sum(z * z, axis=-1), frame)
    assert not rep.passed


def test_symrel_examples():
    frame = ShearFrame(1.3, (0.6, 0.8), (-0.8, 0.6))
    assert symrel_residual(gaussian_objective(frame), None, None, frame) < 1e-8
    f0 = ShearFrame(0.0)
    hom = lambda z, w: np.exp(-np.sum(w * w, axis=-1))  # noqa: E731
    assert symrel_residual(hom, None, None, f0) == 0.0
    # f(z, w) = z . beta has grad_z f = beta, grad_w f = 0
    frame = ShearFrame(1.0)
    zb = lambda z, w: z @ frame.b  # noqa: E731
    gz = lambda z, w: np.tile(frame.b, (len(z), 1))  # noqa: E731
    gw = lambda z, w: np.zeros_like(w)  # noqa: E731
    assert symrel_residual(zb, gz, gw, frame) == pytest.approx(1.0, abs=1e-15)


# ---------------------------------------------------------------- properties


@given(pd_tensors())
def test_inv_sqrt_normalises(T):
    e = sym_inv_sqrt(T).as_matrix()
    assert np.allclose(e @ T.as_matrix() @ e, np.eye(2), atol=1e-10)


@given(pd_tensors())
def test_inv_sqrt_roundtrip(T):
    # eta^-2 = T, so applying inv_sqrt to eta^-2 returns eta
    eta = sym_inv_sqrt(T)
    back = sym_inv_sqrt(sym_func(eta, lambda x: x**-2))
    assert np.allclose(back.as_matrix(), eta.as_matrix(), atol=1e-10 * max(1.0, eta.max_abs()))


@given(pd_tensors())
def test_sqrt_squares(T):
    r = sym_sqrt(T).as_matrix()
    assert np.allclose(r @ r, T.as_matrix(), rtol=1e-12, atol=1e-12 * T.max_abs())


@given(pd_tensors())
def test_spectral_matches_numpy(T):
    l1, l2, c, s = spectral(T)
    ref = np.linalg.eigvalsh(T.as_matrix())
    assert np.allclose([l2, l1], ref, rtol=1e-12, atol=1e-12 * T.max_abs())
    v = np.array([c, s])
    assert np.allclose(T.as_matrix() @ v, l1 * v, atol=1e-10 * T.max_abs())


@settings(max_examples=60)
@given(pd_tensors(lo=0.1, hi=10), sym_tensors())
def test_sqrt_derivative_matches_fd(T, dT):
    h = 1e-5
    plus = sym_inv_sqrt(T + dT.scaled(h)).as_matrix()
    minus = sym_inv_sqrt(T - dT.scaled(h)).as_matrix()
    fd = (plus - minus) / (2 * h)
    an = sym_sqrt_derivative(T, dT).as_matrix()
    assert np.linalg.norm(an - fd) <= 1e-6 * max(np.linalg.norm(fd), 1.0)


@given(sym_tensors(), frames())
def test_frame_roundtrip(T, frame):
    back = frame.from_frame(frame.to_frame(T))
    assert np.allclose(back.as_matrix(), T.as_matrix(), atol=1e-12)


@given(frames())
def test_kernel_annihilated(frame):
    assert frame.objectivity_matrix().kernel_residual() <= 1e-14 * max(1.0, abs(frame.mu))


@given(pd_tensors(lo=1e-3))
def test_pd_flag(T):
    assert T.is_positive_definite()
    assert T.xx > 0 and T.det > 0
    assert not T.scaled(-1.0).is_positive_definite()
