"""Second-moment (stress) ODE, coefficient frames and the 4th/6th moment systems.

The stress ODE is integrated in physical time up to ``t = 1`` and then in
log-time s = log t on the rescaled moments (a, b, c), where the linear part is
the constant upper-triangular matrix from ``matrix_M`` and steps stay O(1)
all the way out to t ~ 1e5.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .fitting import InsufficientData, loglog_fit
from .tensor_core import (
    NotPositiveDefinite,
    ShearFrame,
    SymTensor2,
    sym_inv_sqrt,
    sym_sqrt,
    sym_sqrt_derivative,
)

SQRT3 = math.sqrt(3.0)
T_SWITCH = 1.0


class DegenerateStress(ValueError):
    """The stress tensor has non-positive trace or lost definiteness."""


class StepFailure(RuntimeError):
    """The ODE integrator could not advance the solution."""


# ---------------------------------------------------------------- stress ODE


def stress_rhs(T: SymTensor2, frame: ShearFrame) -> SymTensor2:
    """dT/dt = Id - mu (a(x)b T + T b(x)a) - 2 T / tr T."""
    theta = T.trace
    if not theta > 0.0:
        raise DegenerateStress(f"tr T = {theta!r} must be positive")
    NT = frame.shear_matrix @ T.as_matrix()
    shear = NT + NT.T
    Tm = T.as_matrix()
    rhs = np.eye(2) - frame.mu * shear - (2.0 / theta) * Tm
    return SymTensor2(rhs[0, 0], 0.5 * (rhs[0, 1] + rhs[1, 0]), rhs[1, 1])


def _rhs_frame_components(_t, y, mu):
    # y = (X, Y, Z) = stress components in the (alpha, beta) basis
    X, Y, Z = y
    theta = X + Z
    return [
        1.0 - 2.0 * mu * Y - 2.0 * X / theta,
        -mu * Z - 2.0 * Y / theta,
        1.0 - 2.0 * Z / theta,
    ]


def _rhs_abc(s, y, mu):
    a, b, c = y
    t = math.exp(s)
    inv = 1.0 / (t * t * a + c)  # t / theta
    return [
        math.exp(-2.0 * s) - 2.0 * mu * b - 2.0 * a * inv - 3.0 * a,
        -mu * c - 2.0 * b * inv - 2.0 * b,
        1.0 - 2.0 * c * inv - c,
    ]


def matrix_M(mu: float) -> np.ndarray:
    """Linear part of the (a, b, c) system in log-time."""
    return np.array([[-3.0, -2.0 * mu, 0.0], [0.0, -2.0, -mu], [0.0, 0.0, -1.0]])


def abc_limit(mu: float) -> tuple[float, float, float]:
    return (mu * mu / 3.0, -mu / 2.0, 1.0)


def abc_from_T(T: SymTensor2, t: float, frame: ShearFrame) -> tuple[float, float, float]:
    Tf = frame.to_frame(T)
    return (Tf.xx / t**3, Tf.xy / t**2, Tf.yy / t)


def T_from_abc(a: float, b: float, c: float, t: float, frame: ShearFrame) -> SymTensor2:
    return frame.from_frame(SymTensor2(t**3 * a, t**2 * b, t * c))


@dataclass
class StressTrajectory:
    """Dense stress solution on [t0, t_end].

    ``times``/``T`` hold the accepted integrator steps; ``T_at`` evaluates the
    continuous extension of whichever segment covers ``t``.
    """

    times: np.ndarray
    T: np.ndarray  # (k, 3) rows of (xx, xy, yy) in the lab basis
    frame: ShearFrame
    _segments: list
    tol: float = 1e-9

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def T_at(self, t: float) -> SymTensor2:
        if t < self.t0 * (1 - 1e-12) or t > self.t_end * (1 + 1e-12):
            raise ValueError(f"t = {t} outside trajectory range [{self.t0}, {self.t_end}]")
        seg = self._segments[0] if t <= self._segments[0][2] else self._segments[-1]
        kind, lo, hi, sol = seg
        tc = min(max(t, lo), hi)
        if kind == "t":
            X, Y, Z = sol(tc)
            return self.frame.from_frame(SymTensor2(X, Y, Z))
        a, b, c = sol(math.log(tc))
        return T_from_abc(a, b, c, tc, self.frame)

    def abc_at(self, t: float) -> tuple[float, float, float]:
        return abc_from_T(self.T_at(t), t, self.frame)

    def to_csv(self, path, times=None) -> None:
        """Export t, T, (a, b, c), theta, eta and F at ``times`` (default: steps)."""
        times = self.times if times is None else times
        cols = ["t", "T_xx", "T_xy", "T_yy", "a", "b", "c", "theta",
                "eta_xx", "eta_xy", "eta_yy", "F_11", "F_12", "F_21", "F_22"]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(cols)
            for t in times:
                t = float(t)
                if t <= 0.0:
                    continue
                cf = coefficient_frame(self, t)
                a, b, c = abc_from_T(cf.T, t, self.frame)
                wr.writerow([repr(v) for v in (
                    t, cf.T.xx, cf.T.xy, cf.T.yy, a, b, c, cf.theta,
                    cf.eta.xx, cf.eta.xy, cf.eta.yy,
                    cf.F[0, 0], cf.F[0, 1], cf.F[1, 0], cf.F[1, 1])])


def _check_pd_rows(Y, where):
    X, Yc, Z = Y
    if np.any(X + Z <= 0) or np.any(X * Z - Yc * Yc <= 0) or np.any(X <= 0):
        raise StepFailure(f"stress lost positive definiteness during {where}")


def integrate_stress(
    T0: SymTensor2,
    frame: ShearFrame,
    t_end: float,
    tol: float = 1e-9,
    method: str = "DOP853",
) -> StressTrajectory:
    """Integrate the stress ODE from T(0) = T0 to ``t_end``.

    ``tol`` is used as the relative tolerance; the absolute tolerance is
    scaled to the solution so the step control follows |dT|/|T|.
    """
    if not T0.is_positive_definite():
        raise NotPositiveDefinite("initial stress must be positive definite")
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    mu = frame.mu
    T0f = frame.to_frame(T0)
    y0 = [T0f.xx, T0f.xy, T0f.yy]
    t1 = min(t_end, T_SWITCH)
    atol = tol * max(T0.max_abs(), 1.0) * 1e-3
    sol1 = solve_ivp(_rhs_frame_components, (0.0, t1), y0, method=method, rtol=tol,
                     atol=atol, dense_output=True, args=(mu,))
    if not sol1.success:
        raise StepFailure(sol1.message)
    _check_pd_rows(sol1.y, "physical-time integration")
    segments = [("t", 0.0, t1, sol1.sol)]
    times = list(sol1.t)
    rows = [frame.from_frame(SymTensor2(*col)).as_tuple() for col in sol1.y.T]
    if t_end > T_SWITCH:
        X, Y, Z = sol1.y[:, -1]
        s0, s1 = math.log(T_SWITCH), math.log(t_end)
        z0 = [X / T_SWITCH**3, Y / T_SWITCH**2, Z / T_SWITCH]
        sol2 = solve_ivp(_rhs_abc, (s0, s1), z0, method=method, rtol=tol,
                         atol=tol * 1e-3, dense_output=True, args=(mu,))
        if not sol2.success:
            raise StepFailure(sol2.message)
        tt = np.exp(sol2.t)
        Xs = sol2.y[0] * tt**3
        Ys = sol2.y[1] * tt**2
        Zs = sol2.y[2] * tt
        _check_pd_rows((Xs, Ys, Zs), "log-time integration")
        segments.append(("s", T_SWITCH, t_end, sol2.sol))
        times.extend(tt[1:])
        rows.extend(frame.from_frame(SymTensor2(x, y, z)).as_tuple()
                    for x, y, z in zip(Xs[1:], Ys[1:], Zs[1:]))
    times = np.asarray(times)
    times[-1] = t_end
    return StressTrajectory(times=times, T=np.asarray(rows), frame=frame,
                            _segments=segments, tol=tol)


# ---------------------------------------------------------- coefficient frame


@dataclass(frozen=True)
class CoefficientFrame:
    t: float
    eta: SymTensor2
    eta_dot: SymTensor2
    F: np.ndarray
    theta: float
    T: SymTensor2

    @property
    def D(self) -> np.ndarray:
        """Diffusion matrix eta^2."""
        e = self.eta.as_matrix()
        return e @ e

    @property
    def drift_matrix(self) -> np.ndarray:
        """theta^-1 Id - F, the linear drift of the shape equation."""
        return np.eye(2) / self.theta - self.F

    def resmeq2_residual(self) -> float:
        R = self.F + self.F.T + self.D - (2.0 / self.theta) * np.eye(2)
        return float(np.max(np.abs(R)))


def frame_from_stress(T: SymTensor2, frame: ShearFrame, t: float = 0.0,
                      dT: SymTensor2 | None = None) -> CoefficientFrame:
    """Assemble (eta, eta_dot, F, theta) from a stress value on an exact trajectory."""
    theta = T.trace
    if not theta > 0:
        raise DegenerateStress(f"tr T = {theta!r} must be positive")
    try:
        eta = sym_inv_sqrt(T)
        dT = stress_rhs(T, frame) if dT is None else dT
        eta_dot = sym_sqrt_derivative(T, dT)
        eta_inv = sym_sqrt(T).as_matrix()
    except NotPositiveDefinite as exc:
        raise DegenerateStress(str(exc)) from exc
    F = (eta_dot.as_matrix() - frame.mu * eta.as_matrix() @ frame.shear_matrix) @ eta_inv
    return CoefficientFrame(t=t, eta=eta, eta_dot=eta_dot, F=F, theta=theta, T=T)


def coefficient_frame(traj: StressTrajectory, t: float) -> CoefficientFrame:
    return frame_from_stress(traj.T_at(t), traj.frame, t)


def equilibrium_frame(theta: float = 2.0) -> CoefficientFrame:
    """Frame with eta = Id, F = 0: a consistent frame for the plain OU operator."""
    T = SymTensor2.identity(1.0)
    return CoefficientFrame(t=0.0, eta=T, eta_dot=SymTensor2(0.0, 0.0, 0.0),
                            F=np.zeros((2, 2)), theta=theta, T=T)


# ------------------------------------------------------------ higher moments


def moment_indices(order: int) -> list[tuple[int, int]]:
    """(i, j) pairs with i + j = order, ordered by decreasing i."""
    return [(order - j, j) for j in range(order + 1)]


@dataclass
class MomentVector:
    order: int
    values: np.ndarray

    def __post_init__(self):
        if self.order not in (4, 6):
            raise ValueError("order must be 4 or 6")
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.order + 1,):
            raise ValueError(f"order {self.order} needs {self.order + 1} entries")

    def __getitem__(self, ij):
        i, j = ij
        if i + j != self.order or i < 0 or j < 0:
            raise IndexError(f"h_{i}{j} is not a moment of order {self.order}")
        return float(self.values[j])

    @property
    def indices(self):
        return moment_indices(self.order)

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


def matrix_N4() -> np.ndarray:
    """Leading-order log-time generator of the order-4 moments.

    Rows and columns follow the ordering (4,0), (3,1), (2,2), (1,3), (0,4).
    The limit of t times ``moment_generator`` (the log-time generator) is R N4 R with
    R = diag((-1)^j), i.e. this matrix written for the reflected axis
    p2 -> -p2.  Spectra coincide.
    """
    r = SQRT3
    return np.array([
        [0.0, 2 * r, 0.0, 0.0, 0.0],
        [-r / 2, -2.0, 3 * r / 2, 0.0, 0.0],
        [0.0, -r, -4.0, r, 0.0],
        [0.0, 0.0, -3 * r / 2, -6.0, r / 2],
        [0.0, 0.0, 0.0, -2 * r, -8.0],
    ])


def general_N_entry(i: int, j: int, k: int, l: int) -> float:
    """Entry of the leading-order generator, row (i, j), column (k, l)."""
    order = i + j
    if order != k + l or order not in (4, 6) or min(i, j, k, l) < 0:
        raise IndexError(f"({i},{j}) and ({k},{l}) must both have order 4 or 6")
    if (k, l) == (i, j):
        return -2.0 * j
    if (k, l) == (i + 1, j - 1):
        return -(SQRT3 / 2) * j
    if (k, l) == (i - 1, j + 1):
        return (SQRT3 / 2) * i
    return 0.0


def assemble_N(order: int) -> np.ndarray:
    idx = moment_indices(order)
    return np.array([[general_N_entry(i, j, k, l) for (k, l) in idx] for (i, j) in idx])


def moment_generator(cf: CoefficientFrame, order: int) -> tuple[np.ndarray, np.ndarray | None]:
    """Linear ODE coefficients d h/dt = A h + B h_lower for moments of ``order``.

    ``B`` couples to moments of order-2 through the diffusion eta^2 (None for
    order 4, whose lower neighbours vanish by the normalisation).
    """
    F = cf.F
    D = cf.D
    inv_theta = 1.0 / cf.theta
    idx = moment_indices(order)
    pos = {ij: n for n, ij in enumerate(idx)}
    A = np.zeros((order + 1, order + 1))
    for n, (i, j) in enumerate(idx):
        A[n, n] = -(i + j) * inv_theta + i * F[0, 0] + j * F[1, 1]
        if i >= 1:
            A[n, pos[(i - 1, j + 1)]] += i * F[0, 1]
        if j >= 1:
            A[n, pos[(i + 1, j - 1)]] += j * F[1, 0]
    if order == 4:
        return A, None
    low = moment_indices(order - 2)
    lpos = {ij: n for n, ij in enumerate(low)}
    B = np.zeros((order + 1, order - 1))
    for n, (i, j) in enumerate(idx):
        if i >= 2:
            B[n, lpos[(i - 2, j)]] += i * (i - 1) * D[0, 0]
        if i >= 1 and j >= 1:
            B[n, lpos[(i - 1, j - 1)]] += 2 * i * j * D[0, 1]
        if j >= 2:
            B[n, lpos[(i, j - 2)]] += j * (j - 1) * D[1, 1]
    return A, B


@dataclass
class MomentSeries:
    times: np.ndarray
    h4: np.ndarray  # (k, 5)
    h6: np.ndarray | None = None  # (k, 7)

    def norms(self, order: int = 4) -> np.ndarray:
        arr = self.h4 if order == 4 else self.h6
        return np.linalg.norm(arr, axis=1)

    def at(self, k: int, order: int = 4) -> MomentVector:
        arr = self.h4 if order == 4 else self.h6
        return MomentVector(order, arr[k])


def integrate_moments(
    h0: MomentVector,
    traj: StressTrajectory,
    t_end: float,
    tol: float = 1e-9,
    t0: float | None = None,
    h4_0: MomentVector | None = None,
    n_out: int = 200,
) -> MomentSeries:
    """Integrate the linear 4th (and optionally 6th) moment system in log-time.

    For ``h0.order == 6`` the 4th-order moments are co-integrated from ``h4_0``
    since the 6th-order system is forced by them through eta^2.
    """
    t0 = max(traj.t0, 1e-12) if t0 is None else t0
    if t0 <= 0:
        raise ValueError("moment integration needs t0 > 0 (log-time)")
    if t_end > traj.t_end * (1 + 1e-12) or t0 < traj.t0:
        raise ValueError("requested window is outside the stress trajectory")
    if h0.order == 6:
        if h4_0 is None:
            raise ValueError("order-6 integration needs the order-4 initial data h4_0")
        y0 = np.concatenate([h4_0.values, h0.values])
    else:
        y0 = h0.values.copy()

    def rhs(s, y):
        t = math.exp(s)
        cf = coefficient_frame(traj, min(t, traj.t_end))
        A4, _ = moment_generator(cf, 4)
        d4 = A4 @ y[:5]
        if h0.order == 4:
            return t * d4
        A6, B6 = moment_generator(cf, 6)
        d6 = A6 @ y[5:] + B6 @ y[:5]
        return t * np.concatenate([d4, d6])

    s_eval = np.linspace(math.log(t0), math.log(t_end), n_out)
    sol = solve_ivp(rhs, (s_eval[0], s_eval[-1]), y0, method="DOP853", rtol=tol,
                    atol=tol * 1e-6 * max(1.0, float(np.max(np.abs(y0)))), t_eval=s_eval)
    if not sol.success:
        raise StepFailure(sol.message)
    times = np.exp(sol.t)
    if h0.order == 4:
        return MomentSeries(times=times, h4=sol.y.T.copy())
    return MomentSeries(times=times, h4=sol.y[:5].T.copy(), h6=sol.y[5:].T.copy())


# ------------------------------------------------------------------ rates


@dataclass(frozen=True)
class RateBound:
    lambda_bar: float
    lambda_prime: float
    composite: float
    r2: float

    def R(self, t):
        """Ball radius schedule t^(lambda_bar + lambda_prime / 2)."""
        return np.asarray(t, dtype=float) ** (self.lambda_bar + self.lambda_prime / 2)


def rate_lower_bound(h4_series, h6_bound_exponent: float, min_points: int = 5):
    """Fit the h4 decay exponent over the last decade and combine it with the
    sixth-moment growth exponent: composite = 5 lambda_bar + 2 lambda'.

    ``h4_series`` is ``(times, norms)`` or a ``MomentSeries``.
    Returns ``(composite, R_schedule)``; the full fit is on ``R_schedule.__self__``.
    """
    if isinstance(h4_series, MomentSeries):
        t, v = h4_series.times, h4_series.norms(4)
    else:
        t, v = (np.asarray(a, dtype=float) for a in h4_series)
    mask = (t >= t[-1] / 10.0) & (v > 0) & np.isfinite(v)
    if mask.sum() < min_points:
        raise InsufficientData("h4 tail has too few positive samples for a fit")
    slope, _, r2 = loglog_fit(t[mask], v[mask])
    lam = -slope
    bound = RateBound(lam, h6_bound_exponent, 5 * lam + 2 * h6_bound_exponent, r2)
    return bound.composite, bound.R
