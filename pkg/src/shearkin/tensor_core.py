"""2x2 symmetric tensor algebra and shear-frame geometry.

Everything here works on plain floats through closed-form 2x2 spectral
formulas. The small eigenvalue is always recovered as det/largest so that
strongly anisotropic stresses (condition numbers around 1e8 at late times)
keep full relative accuracy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

PD_RATIO = 1e-13


class NotPositiveDefinite(ValueError):
    """Raised when a tensor that must be positive definite is not."""


@dataclass(frozen=True)
class SymTensor2:
    xx: float
    xy: float
    yy: float

    @classmethod
    def from_matrix(cls, m) -> "SymTensor2":
        m = np.asarray(m, dtype=float)
        return cls(float(m[0, 0]), 0.5 * float(m[0, 1] + m[1, 0]), float(m[1, 1]))

    @classmethod
    def identity(cls, scale: float = 1.0) -> "SymTensor2":
        return cls(scale, 0.0, scale)

    @classmethod
    def diag(cls, a: float, b: float) -> "SymTensor2":
        return cls(a, 0.0, b)

    def as_matrix(self) -> np.ndarray:
        return np.array([[self.xx, self.xy], [self.xy, self.yy]])

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.xx, self.xy, self.yy)

    @property
    def trace(self) -> float:
        return self.xx + self.yy

    @property
    def det(self) -> float:
        return self.xx * self.yy - self.xy * self.xy

    def __add__(self, other: "SymTensor2") -> "SymTensor2":
        return SymTensor2(self.xx + other.xx, self.xy + other.xy, self.yy + other.yy)

    def __sub__(self, other: "SymTensor2") -> "SymTensor2":
        return SymTensor2(self.xx - other.xx, self.xy - other.xy, self.yy - other.yy)

    def scaled(self, c: float) -> "SymTensor2":
        return SymTensor2(c * self.xx, c * self.xy, c * self.yy)

    def is_positive_definite(self) -> bool:
        try:
            spectral(self)
        except NotPositiveDefinite:
            return False
        return True

    def max_abs(self) -> float:
        return max(abs(self.xx), abs(self.xy), abs(self.yy))


def spectral(T: SymTensor2, require_pd: bool = True):
    """Closed-form eigen-decomposition of a symmetric 2x2 tensor.

    Returns ``(lam_big, lam_small, c, s)`` where ``(c, s)`` is the unit
    eigenvector of ``lam_big`` and ``(-s, c)`` that of ``lam_small``.
    """
    a, b, d = T.xx, T.xy, T.yy
    half_diff = 0.5 * (a - d)
    r = math.hypot(half_diff, b)
    m = 0.5 * (a + d)
    lam_big = m + r if m >= 0 else m - r
    det = a * d - b * b
    if lam_big != 0.0:
        lam_small = det / lam_big
    else:
        lam_small = m - r
    if lam_small > lam_big:
        lam_big, lam_small = lam_small, lam_big
    if require_pd and (lam_big <= 0.0 or not lam_small > PD_RATIO * lam_big):
        raise NotPositiveDefinite(
            f"eigenvalues ({lam_big:.6g}, {lam_small:.6g}) fail the PD test"
        )
    phi = 0.5 * math.atan2(2.0 * b, a - d)
    c, s = math.cos(phi), math.sin(phi)
    # atan2 convention gives the eigenvector of m + r; if a, d are both negative
    # the labelling above may have swapped, so re-check with a Rayleigh quotient.
    rq = a * c * c + 2.0 * b * c * s + d * s * s
    if abs(rq - lam_big) > abs(rq - lam_small):
        c, s = -s, c
    return lam_big, lam_small, c, s


def _compose(f1: float, f2: float, c: float, s: float) -> SymTensor2:
    # Q diag(f1, f2) Q^T with Q = [[c, -s], [s, c]]
    return SymTensor2(
        f1 * c * c + f2 * s * s,
        (f1 - f2) * c * s,
        f1 * s * s + f2 * c * c,
    )


def sym_func(T: SymTensor2, func) -> SymTensor2:
    """Apply a scalar function to the eigenvalues of a PD tensor."""
    l1, l2, c, s = spectral(T)
    return _compose(func(l1), func(l2), c, s)


def sym_inv_sqrt(T: SymTensor2) -> SymTensor2:
    """eta = T^(-1/2), the symmetric PD tensor with eta T eta = Id."""
    l1, l2, c, s = spectral(T)
    return _compose(1.0 / math.sqrt(l1), 1.0 / math.sqrt(l2), c, s)


def sym_sqrt(T: SymTensor2) -> SymTensor2:
    l1, l2, c, s = spectral(T)
    return _compose(math.sqrt(l1), math.sqrt(l2), c, s)


def sym_inv(T: SymTensor2) -> SymTensor2:
    l1, l2, c, s = spectral(T)
    return _compose(1.0 / l1, 1.0 / l2, c, s)


def sym_sqrt_derivative(T: SymTensor2, dT: SymTensor2) -> SymTensor2:
    """Time derivative of eta = T^(-1/2) given dT/dt.

    Solves eta_dot eta + eta eta_dot = -T^-1 dT T^-1 in the common eigenbasis,
    where the Lyapunov equation is diagonal:
    eta_dot_ij = -dT_ij / (l_i l_j (l_i^-1/2 + l_j^-1/2)).
    """
    l1, l2, c, s = spectral(T)
    # rotate dT into the eigenbasis
    d11 = c * c * dT.xx + 2.0 * c * s * dT.xy + s * s * dT.yy
    d22 = s * s * dT.xx - 2.0 * c * s * dT.xy + c * c * dT.yy
    d12 = -c * s * dT.xx + (c * c - s * s) * dT.xy + c * s * dT.yy
    e1, e2 = 1.0 / math.sqrt(l1), 1.0 / math.sqrt(l2)
    x11 = -d11 / (l1 * l1 * 2.0 * e1)
    x22 = -d22 / (l2 * l2 * 2.0 * e2)
    x12 = -d12 / (l1 * l2 * (e1 + e2))
    # back to the original basis
    return SymTensor2(
        c * c * x11 - 2.0 * c * s * x12 + s * s * x22,
        c * s * (x11 - x22) + (c * c - s * s) * x12,
        s * s * x11 + 2.0 * c * s * x12 + c * c * x22,
    )


@dataclass(frozen=True)
class ShearFrame:
    mu: float = 1.0
    alpha: tuple[float, float] = (1.0, 0.0)
    beta: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=float)
        b = np.asarray(self.beta, dtype=float)
        if a.shape != (2,) or b.shape != (2,):
            raise ValueError("alpha and beta must be 2-vectors")
        if abs(np.linalg.norm(a) - 1.0) > 1e-12:
            raise ValueError(f"alpha must be a unit vector, |alpha| = {np.linalg.norm(a)!r}")
        if abs(np.linalg.norm(b) - 1.0) > 1e-12:
            raise ValueError(f"beta must be a unit vector, |beta| = {np.linalg.norm(b)!r}")
        if abs(float(a @ b)) > 1e-12:
            raise ValueError(f"alpha and beta must be orthogonal, alpha.beta = {float(a @ b)!r}")
        object.__setattr__(self, "alpha", (float(a[0]), float(a[1])))
        object.__setattr__(self, "beta", (float(b[0]), float(b[1])))

    @property
    def a(self) -> np.ndarray:
        return np.array(self.alpha)

    @property
    def b(self) -> np.ndarray:
        return np.array(self.beta)

    @property
    def shear_matrix(self) -> np.ndarray:
        """alpha (x) beta, the nilpotent shear direction."""
        return np.outer(self.alpha, self.beta)

    @property
    def basis(self) -> np.ndarray:
        """Orthogonal matrix with columns alpha, beta."""
        return np.column_stack([self.alpha, self.beta])

    def to_frame(self, T: SymTensor2) -> SymTensor2:
        """Components of T in the (alpha, beta) basis."""
        R = self.basis
        return SymTensor2.from_matrix(R.T @ T.as_matrix() @ R)

    def from_frame(self, T: SymTensor2) -> SymTensor2:
        R = self.basis
        return SymTensor2.from_matrix(R @ T.as_matrix() @ R.T)

    def objectivity_matrix(self) -> "ObjectivityMatrix":
        S = np.hstack([-self.mu * self.shear_matrix, np.eye(2)])
        kernel = [
            np.concatenate([self.a, np.zeros(2)]),
            np.concatenate([self.b, self.mu * self.a]),
        ]
        return ObjectivityMatrix(S=S, kernel_basis=kernel)

    def objective_argument(self, z, w) -> np.ndarray:
        """S(z, w) = w - mu (beta . z) alpha, vectorised over leading axes."""
        z = np.asarray(z, dtype=float)
        w = np.asarray(w, dtype=float)
        bz = z @ self.b
        return w - self.mu * bz[..., None] * self.a


@dataclass(frozen=True)
class ObjectivityMatrix:
    S: np.ndarray
    kernel_basis: list = field(default_factory=list)

    def kernel_residual(self) -> float:
        return max(float(np.max(np.abs(self.S @ v))) for v in self.kernel_basis)


@dataclass(frozen=True)
class ObjectivityReport:
    max_deviation: float
    samples: int
    tol: float
    passed: bool


def _sample_points(samples: int, seed: int, scale: float):
    rng = np.random.default_rng(seed)
    z = rng.uniform(-scale, scale, size=(samples, 2))
    w = rng.uniform(-scale, scale, size=(samples, 2))
    xy = rng.uniform(-scale, scale, size=(samples, 2))
    return z, w, xy


def check_objectivity(
    f_sampler,
    frame: ShearFrame,
    samples: int = 256,
    tol: float = 1e-10,
    seed: int = 0,
    scale: float = 2.0,
) -> ObjectivityReport:
    """Test f(z + x alpha + y beta, w + mu y alpha) == f(z, w) at random points.

    ``f_sampler`` takes arrays z, w of shape (m, 2) and returns shape (m,).
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    z, w, xy = _sample_points(samples, seed, scale)
    x, y = xy[:, :1], xy[:, 1:]
    z2 = z + x * frame.a + y * frame.b
    w2 = w + frame.mu * y * frame.a
    dev = np.abs(np.asarray(f_sampler(z2, w2)) - np.asarray(f_sampler(z, w)))
    max_dev = float(np.max(dev))
    return ObjectivityReport(max_dev, samples, tol, max_dev <= tol)


def _fd_grad(f, z, w, wrt: str, h: float):
    g = np.empty_like(z)
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        if wrt == "z":
            g[:, k] = (f(z + e, w) - f(z - e, w)) / (2 * h)
        else:
            g[:, k] = (f(z, w + e) - f(z, w - e)) / (2 * h)
    return g


def symrel_residual(
    f_sampler,
    grad_z,
    grad_w,
    frame: ShearFrame,
    samples: int = 256,
    seed: int = 0,
    scale: float = 2.0,
    fd_step: float = 1e-5,
) -> float:
    """sup |grad_z f + mu (grad_w f . alpha) beta| over random sample points.

    Either gradient may be ``None``, in which case it is approximated by
    central differences of ``f_sampler`` with step ``fd_step``.
    """
    z, w, _ = _sample_points(samples, seed, scale)
    gz = _fd_grad(f_sampler, z, w, "z", fd_step) if grad_z is None else np.asarray(grad_z(z, w))
    gw = _fd_grad(f_sampler, z, w, "w", fd_step) if grad_w is None else np.asarray(grad_w(z, w))
    res = gz + frame.mu * (gw @ frame.a)[:, None] * frame.b
    return float(np.max(np.linalg.norm(res, axis=1)))
