"""Particle solver for the spatially homogeneous shear-flow Boltzmann equation.

Velocities live in physical variables ``w``.  A step is an exact shear drift
``w <- (Id - mu dt alpha (x) beta) w`` followed by a hard-sphere collision
sweep (no-time-counter selection with a relative-speed majorant, scattering
direction ``nu`` uniform on the circle, acceptance ``[nu.(w - w')]_+ / g_max``).
Rescaled quantities ``p = eta w`` with ``eta = T^(-1/2)`` are diagnostics only.

Each unordered pair collides at rate ``2 m/N |w - w'|``; with uniform ``nu``
this needs ``(N - 1) pi m g_max dt`` candidates per step.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import _backend
from .kernels import dsmc_kernels as K
from .moment_dynamics import DegenerateStress
from .tensor_core import NotPositiveDefinite, ShearFrame, SymTensor2, sym_inv_sqrt

MIN_STATS_PARTICLES = 1000
SCHEMES = ("ntc",)


class MajorantExceeded(RuntimeError):
    """A candidate pair had [nu.(w - w')]_+ above the majorant; the step was rolled back."""

    def __init__(self, observed: float, majorant: float):
        super().__init__(f"relative speed {observed:.6g} exceeds majorant {majorant:.6g}")
        self.observed = observed
        self.majorant = majorant


def _philox(seed: int, *tag: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *tag])))


# ------------------------------------------------------------------ ensemble


@dataclass
class ParticleEnsemble:
    velocities: np.ndarray  # (N, 2)
    mass: float = 1.0
    seed: int = 0
    t: float = 0.0
    rng: np.random.Generator = field(default=None, repr=False)
    carry: float = 0.0  # fractional candidate count carried between steps
    max_momentum_error: float = 0.0
    max_energy_error: float = 0.0
    collisions: int = 0

    def __post_init__(self):
        v = np.ascontiguousarray(self.velocities, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 2:
            raise ValueError("velocities must have shape (N, 2)")
        if v.shape[0] < 2:
            raise ValueError("an ensemble needs at least two particles")
        self.velocities = v
        if self.rng is None:
            self.rng = _philox(self.seed)

    @property
    def n(self) -> int:
        return self.velocities.shape[0]

    @property
    def weight(self) -> float:
        return self.mass / self.n

    def copy(self) -> "ParticleEnsemble":
        rng = np.random.Generator(np.random.Philox())
        rng.bit_generator.state = self.rng.bit_generator.state
        return ParticleEnsemble(self.velocities.copy(), self.mass, self.seed, self.t, rng, self.carry,
                                self.max_momentum_error, self.max_energy_error, self.collisions)

    def momentum(self) -> np.ndarray:
        return self.weight * self.velocities.sum(axis=0)

    def theta(self) -> float:
        """Kinetic energy (1/2) int |w|^2 g."""
        return 0.5 * self.weight * float(np.sum(self.velocities**2))

    def theta_stderr(self) -> float:
        e = 0.5 * np.sum(self.velocities**2, axis=1)
        return self.mass * float(np.std(e, ddof=1)) / math.sqrt(self.n)

    @classmethod
    def maxwellian(cls, n: int, seed: int = 0, theta: float = 1.0, mass: float = 1.0,
                   mean=(0.0, 0.0)) -> "ParticleEnsemble":
        """Samples with density prop. to exp(-|w - mean|^2 / (2 theta)); mean removed exactly."""
        rng = _philox(seed)
        v = rng.standard_normal((n, 2)) * math.sqrt(theta)
        v -= v.mean(axis=0)
        v += np.asarray(mean, dtype=float)
        return cls(v, mass, seed, 0.0, rng)

    @classmethod
    def bimodal(cls, n: int, seed: int = 0, separation: float = 2.0, spread: float = 0.35,
                angle: float = 0.0, mass: float = 1.0) -> "ParticleEnsemble":
        """Two equal narrow bumps at +-separation/2 along direction ``angle``."""
        rng = _philox(seed)
        v = rng.standard_normal((n, 2)) * spread
        sign = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
        d = 0.5 * separation * np.array([math.cos(angle), math.sin(angle)])
        v += sign[:, None] * d[None, :]
        v -= v.mean(axis=0)
        return cls(v, mass, seed, 0.0, rng)


def _require_stats(ens: ParticleEnsemble):
    if ens.n < MIN_STATS_PARTICLES:
        raise ValueError(f"statistics need N >= {MIN_STATS_PARTICLES}, got {ens.n}")


# ------------------------------------------------------------------ drift


def drift_step(ens: ParticleEnsemble, shear: ShearFrame, dt: float,
               backend: str | None = None) -> ParticleEnsemble:
    """Exact characteristic map w <- (Id - mu dt alpha (x) beta) w, in place."""
    if shear.mu != 0.0 and dt != 0.0:
        f = _backend.pick(K.shear_drift_loops, K.shear_drift_numpy, backend)
        a, b = shear.alpha, shear.beta
        f(ens.velocities, a[0], a[1], b[0], b[1], shear.mu * dt)
    ens.t += dt
    return ens


# ------------------------------------------------------------------ collisions


@dataclass
class CollisionConfig:
    dt: float = 0.02
    majorant: float | None = None  # None: refreshed from the ensemble every step
    scheme: str = "ntc"
    safety: float = 1.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt!r}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown pair-selection scheme {self.scheme!r}; known: {SCHEMES}")
        if self.safety < 1.0:
            raise ValueError("majorant safety factor must be >= 1")


def relative_speed_bound(ens: ParticleEnsemble) -> float:
    """2 max |w - mean| >= max |w_i - w_j|."""
    c = ens.velocities.mean(axis=0)
    return 2.0 * float(np.sqrt(np.max(np.sum((ens.velocities - c) ** 2, axis=1))))


def _candidates(ens: ParticleEnsemble, count: int):
    n = ens.n
    half = n // 2
    rounds = -(-count // half) if count else 0
    ii = np.empty(rounds * half, dtype=np.int64)
    jj = np.empty(rounds * half, dtype=np.int64)
    for r in range(rounds):
        perm = ens.rng.permutation(n)
        ii[r * half:(r + 1) * half] = perm[0:2 * half:2]
        jj[r * half:(r + 1) * half] = perm[1:2 * half:2]
    phi = ens.rng.random(count) * (2.0 * math.pi)
    unif = ens.rng.random(count)
    return ii[:count], jj[:count], np.cos(phi), np.sin(phi), unif, half


def collide_step(ens: ParticleEnsemble, cfg: CollisionConfig,
                 backend: str | None = None) -> tuple[ParticleEnsemble, int]:
    """One collision sweep of length cfg.dt, in place.  Raises MajorantExceeded
    (with the velocities restored) if a candidate outruns the majorant."""
    gmax = cfg.majorant if cfg.majorant is not None else cfg.safety * relative_speed_bound(ens)
    expected = (ens.n - 1) * math.pi * ens.mass * gmax * cfg.dt + ens.carry
    count = int(math.floor(expected))
    ii, jj, cn, sn, un, half = _candidates(ens, count)
    saved = ens.velocities.copy()
    stats = np.array([ens.max_momentum_error, ens.max_energy_error])
    name = _backend.BACKEND if backend is None else backend
    if name == "numba":
        status = K.collide_loops(ens.velocities, ii, jj, cn, sn, un, gmax, stats)
    else:
        status = K.collide_numpy(ens.velocities, ii, jj, cn, sn, un, gmax, stats, half)
    if status < 0:
        c = -1 - status
        vr = cn[c] * (ens.velocities[ii[c], 0] - ens.velocities[jj[c], 0]) + \
            sn[c] * (ens.velocities[ii[c], 1] - ens.velocities[jj[c], 1])
        ens.velocities[...] = saved
        raise MajorantExceeded(float(vr), gmax)
    ens.carry = expected - count
    ens.max_momentum_error, ens.max_energy_error = float(stats[0]), float(stats[1])
    ens.collisions += int(status)
    return ens, int(status)


def _collide_with_retry(ens, cfg, backend, retries: int = 8):
    local = cfg
    for _ in range(retries):
        try:
            _, n = collide_step(ens, local, backend)
            return n, local
        except MajorantExceeded as exc:
            local = CollisionConfig(local.dt, None, local.scheme,
                                    max(local.safety, 1.0) * max(1.5, exc.observed / exc.majorant * 1.1))
    raise RuntimeError("majorant refresh did not converge")


# ------------------------------------------------------------------ rescaling


@dataclass(frozen=True)
class RescaledFrame:
    eta: SymTensor2
    stress: SymTensor2  # empirical T-hat it was built from

    def rescale(self, velocities: np.ndarray) -> np.ndarray:
        return velocities @ self.eta.as_matrix().T

    def renormalised_stress(self, ens: ParticleEnsemble) -> SymTensor2:
        p = self.rescale(ens.velocities)
        return SymTensor2.from_matrix(0.5 * ens.weight * (p.T @ p))


def empirical_stress(ens: ParticleEnsemble) -> SymTensor2:
    """T-hat = (weight / 2) sum w (x) w."""
    _require_stats(ens)
    v = ens.velocities
    return SymTensor2.from_matrix(0.5 * ens.weight * (v.T @ v))


def update_frame(ens: ParticleEnsemble) -> RescaledFrame:
    T = empirical_stress(ens)
    if T.trace <= 0 or T.det <= 1e-14 * T.trace ** 2:
        raise DegenerateStress(f"empirical stress is near-singular: {T}")
    try:
        return RescaledFrame(sym_inv_sqrt(T), T)
    except NotPositiveDefinite as exc:
        raise DegenerateStress(str(exc)) from exc


def energy_defect_tensor(eta: SymTensor2, nu) -> SymTensor2:
    """C_nu = [(nu . eta^2 nu) eta^-1 nu (x) nu eta^-1 - eta nu (x) nu eta^-1]_sym.

    With q = p - p' the rescaled collision map changes |p|^2 + |p'|^2 by
    2 q . C_nu q.
    """
    nu = np.asarray(nu, dtype=float)
    if abs(float(nu @ nu) - 1.0) > 1e-12:
        raise ValueError("nu must be a unit vector")
    E = eta.as_matrix()
    Ei = np.linalg.inv(E)
    a = Ei @ nu
    En = E @ nu
    # nu . eta^2 nu, divided by |nu|^2 (= 1) so that eta = Id gives exactly zero
    m = float(En @ En) / float(nu @ nu) * np.outer(a, a) - np.outer(En, a)
    return SymTensor2.from_matrix(0.5 * (m + m.T))


# ------------------------------------------------------------------ stress rates


def _pairs(ens: ParticleEnsemble, m: int, seed: int):
    rng = _philox(seed, 0x5EED)
    i = rng.integers(0, ens.n, size=m)
    j = (i + rng.integers(1, ens.n, size=m)) % ens.n
    phi = rng.random(m) * (2.0 * math.pi)
    return i, j, np.column_stack([np.cos(phi), np.sin(phi)])


@dataclass(frozen=True)
class StressRate:
    tensor: SymTensor2
    tensor_stderr: SymTensor2
    trace: float
    trace_stderr: float
    pairs: int


def stress_rate(ens: ParticleEnsemble, eta: SymTensor2, mc_pairs: int = 100_000,
                seed: int = 0) -> StressRate:
    """Monte Carlo estimate of P = (1/2) int p (x) p Q_eta[G] dp.

    Uses the weak form P = (pi/2) m^2 E[Delta(p (x) p) [nu . (w - w')]_+] over
    random particle pairs and nu uniform on the circle; Delta is the change of
    p (x) p + p' (x) p' under the rescaled collision map.
    """
    _require_stats(ens)
    if mc_pairs < 10_000:
        raise ValueError("mc_pairs must be >= 1e4")
    i, j, nu = _pairs(ens, mc_pairs, seed)
    E = eta.as_matrix()
    u = ens.velocities[i] - ens.velocities[j]
    q = u @ E.T
    nu_u = np.sum(nu * u, axis=1)
    k = np.maximum(nu_u, 0.0)
    d = (nu @ E.T) * nu_u[:, None]  # eta nu (nu . u)
    c = 0.5 * math.pi * ens.mass**2 * k
    xx = c * (-2 * q[:, 0] * d[:, 0] + 2 * d[:, 0] ** 2)
    xy = c * (-(q[:, 0] * d[:, 1] + d[:, 0] * q[:, 1]) + 2 * d[:, 0] * d[:, 1])
    yy = c * (-2 * q[:, 1] * d[:, 1] + 2 * d[:, 1] ** 2)
    tr = xx + yy
    se = lambda x: float(np.std(x, ddof=1)) / math.sqrt(mc_pairs)  # noqa: E731
    return StressRate(SymTensor2(float(xx.mean()), float(xy.mean()), float(yy.mean())),
                      SymTensor2(se(xx), se(xy), se(yy)), float(tr.mean()), se(tr), mc_pairs)


def stress_rate_trace(ens: ParticleEnsemble, eta: SymTensor2, mc_pairs: int = 100_000,
                      seed: int = 0) -> tuple[float, float]:
    """(estimate, stderr) of tr P."""
    r = stress_rate(ens, eta, mc_pairs, seed)
    return r.trace, r.trace_stderr


# ------------------------------------------------------------------ Maxwellian check


@dataclass
class MaxwellianResidualReport:
    mu: float
    collision_residual: float  # max |Q[G^M]| over the probe points
    quadrature_error: float
    drift_max: float  # max |div(G^M F p)| on the grid
    drift_sign_ok: bool
    drift_field: np.ndarray = field(repr=False)

    @property
    def stationary(self) -> bool:
        return self.drift_max <= self.quadrature_error

    @property
    def passed(self) -> bool:
        """Collision part within quadrature error and, for mu != 0, drift part 10x above it."""
        ok_q = self.collision_residual <= self.quadrature_error
        if self.mu == 0.0:
            return ok_q and self.stationary
        return ok_q and self.drift_max >= 10.0 * self.quadrature_error and self.drift_sign_ok


def _maxwellian_pdf(p1, p2):
    return np.exp(-(p1 * p1 + p2 * p2) / 4.0) / (4.0 * math.pi)


def _collision_terms(points, n, L, n_nu):
    """Gain and loss of Q[G^M] at ``points`` by midpoint quadrature in p' and nu."""
    h = 2 * L / n
    x = -L + h * (np.arange(n) + 0.5)
    P1, P2 = np.meshgrid(x, x, indexing="ij")
    q1, q2 = P1.ravel(), P2.ravel()
    Gq = _maxwellian_pdf(q1, q2)
    ang = 2 * math.pi * (np.arange(n_nu) + 0.5) / n_nu
    gains, losses = [], []
    for p in points:
        u1, u2 = p[0] - q1, p[1] - q2
        g = 0.0
        l_ = 0.0
        Gp = _maxwellian_pdf(p[0], p[1])
        for a in ang:
            c, s = math.cos(a), math.sin(a)
            vr = c * u1 + s * u2
            k = np.maximum(vr, 0.0)
            ps1, ps2 = p[0] - vr * c, p[1] - vr * s
            pp1, pp2 = q1 + vr * c, q2 + vr * s
            g += float(np.sum(_maxwellian_pdf(ps1, ps2) * _maxwellian_pdf(pp1, pp2) * k))
            l_ += float(np.sum(Gp * Gq * k))
        w = h * h * 2 * math.pi / n_nu
        gains.append(g * w)
        losses.append(l_ * w)
    return np.array(gains), np.array(losses)


def maxwellian_residual_check(grid_quadrature_n: int = 64, mu: float = 1.0,
                              shear: ShearFrame | None = None, L: float = 8.0,
                              n_nu: int = 64) -> MaxwellianResidualReport:
    """Is G^M = (4 pi)^-1 exp(-|p|^2/4) stationary for the rescaled equation with eta = Id?

    (i) Q[G^M] at probe points, with the quadrature error estimated by halving
    the p' resolution of the loss term; (ii) the drift part div(G^M F p) with
    F = -mu alpha (x) beta, evaluated by central differences on the grid.
    """
    shear = shear or ShearFrame(mu, (1.0, 0.0), (0.0, 1.0))
    mu = shear.mu
    pts = np.array([[0.0, 0.0], [1.0, 0.5], [-1.5, 1.0], [2.0, -2.0], [0.5, 3.0], [-3.0, -1.0]])
    gain, loss = _collision_terms(pts, grid_quadrature_n, L, n_nu)
    _, loss_c = _collision_terms(pts, grid_quadrature_n // 2, L, n_nu // 2)
    eps_floor = 64 * np.finfo(float).eps * float(np.max(loss))
    qerr = max(float(np.max(np.abs(loss - loss_c))), eps_floor)
    qres = float(np.max(np.abs(gain - loss)))

    n = grid_quadrature_n
    h = 2 * L / n
    x = -L + h * (np.arange(n) + 0.5)
    P1, P2 = np.meshgrid(x, x, indexing="ij")
    F = -mu * shear.shear_matrix
    G = _maxwellian_pdf(P1, P2)
    J1 = G * (F[0, 0] * P1 + F[0, 1] * P2)
    J2 = G * (F[1, 0] * P1 + F[1, 1] * P2)
    div = np.gradient(J1, h, axis=0) + np.gradient(J2, h, axis=1)
    # contribution to dG/dt is -div; compare its sign with -(alpha.p)(beta.p)
    field_ = -div
    a, b = shear.alpha, shear.beta
    pattern = -(a[0] * P1 + a[1] * P2) * (b[0] * P1 + b[1] * P2) * G
    big = np.abs(pattern) > 1e-3 * max(float(np.max(np.abs(pattern))), 1e-300)
    sign_ok = bool(mu == 0.0 or np.all(np.sign(field_[big]) == np.sign(mu * pattern[big])))
    return MaxwellianResidualReport(mu, qres, qerr, float(np.max(np.abs(div))), sign_ok, field_)


# ------------------------------------------------------------------ entropy production


@dataclass(frozen=True)
class EntropyProduction:
    quartic: float  # collision term of the bound (<= 0)
    stderr: float
    noise_floor: float  # expected |quartic| from histogram counting noise alone
    tr_F: float | None
    bound: float | None  # quartic - tr F when tr F is known


def _histogram_density(p: np.ndarray, mass: float, bins: int, width: float = 5.0):
    c = p.mean(axis=0)
    sd = p.std(axis=0)
    edges = [np.linspace(c[k] - width * sd[k], c[k] + width * sd[k], bins + 1) for k in range(2)]
    H, ex, ey = np.histogram2d(p[:, 0], p[:, 1], bins=edges)
    area = (ex[1] - ex[0]) * (ey[1] - ey[0])
    dens = H * (mass / (p.shape[0] * area))
    centres = (0.5 * (ex[1:] + ex[:-1]), 0.5 * (ey[1:] + ey[:-1]))
    interp = RegularGridInterpolator(centres, dens, method="linear", bounds_error=False, fill_value=0.0)
    count = RegularGridInterpolator(centres, H, method="linear", bounds_error=False, fill_value=0.0)
    return interp, count


def entropy_production_estimate(ens: ParticleEnsemble, eta: SymTensor2, bins: int = 32,
                                mc_pairs: int = 100_000, seed: int = 0,
                                tr_F: float | None = None) -> EntropyProduction:
    """Monte Carlo value of the collision term of the entropy-production bound,

        -(1/4) int int int min_s (GG' - G*G*')^2 / (s GG' + (1-s) G*G*') [nu . eta^-1 q]_+,

    with G a bilinear histogram density in p = eta w.  Sampling (p, p') from
    the ensemble absorbs GG'; with r = G*G*'/(GG') the minimum over s is
    attained at an endpoint and equals (1 - r)^2 / max(1, r).
    Pairs where the histogram density vanishes at p or p' carry no log term
    and are skipped.
    """
    _require_stats(ens)
    if bins < 32:
        raise ValueError("bins must be >= 32 per axis")
    E = eta.as_matrix()
    p_all = ens.velocities @ E.T
    dens, count = _histogram_density(p_all, ens.mass, bins)
    i, j, nu = _pairs(ens, mc_pairs, seed)
    p, pp = p_all[i], p_all[j]
    u = ens.velocities[i] - ens.velocities[j]
    nu_u = np.sum(nu * u, axis=1)
    k = np.maximum(nu_u, 0.0)
    d = (nu @ E.T) * nu_u[:, None]
    ps, pps = p - d, pp + d
    G, Gp, Gs, Gps = dens(p), dens(pp), dens(ps), dens(pps)
    ok = (G > 0) & (Gp > 0)
    r = np.where(ok, Gs * Gps / np.where(ok, G * Gp, 1.0), 1.0)
    val = np.where(ok, (1.0 - r) ** 2 / np.maximum(1.0, r), 0.0) * k
    # sum over pairs of GG' dp dp' -> mass^2; nu integral -> 2 pi
    scale = -0.25 * 2.0 * math.pi * ens.mass**2
    samples = scale * val
    # counting noise: relative variance of each interpolated density ~ 1/count
    cnt = [np.maximum(count(x), 1.0) for x in (p, pp, ps, pps)]
    noise = scale * (sum(1.0 / c for c in cnt) * k)
    quartic = float(samples.mean())
    se = float(samples.std(ddof=1)) / math.sqrt(mc_pairs)
    bound = None if tr_F is None else quartic - tr_F
    return EntropyProduction(quartic, se, abs(float(noise.mean())), tr_F, bound)


# ------------------------------------------------------------------ runs


HIST_RANGE = 6.0
HIST_BINS = 48


def renormalised_histogram(ens: ParticleEnsemble, frame: RescaledFrame) -> np.ndarray:
    p = frame.rescale(ens.velocities)
    edges = np.linspace(-HIST_RANGE, HIST_RANGE, HIST_BINS + 1)
    H, _, _ = np.histogram2d(p[:, 0], p[:, 1], bins=(edges, edges))
    area = (edges[1] - edges[0]) ** 2
    return H * (ens.mass / (ens.n * area))


@dataclass
class DSMCRun:
    times: np.ndarray
    theta: np.ndarray
    theta_stderr: np.ndarray
    mass: np.ndarray
    momentum: np.ndarray  # (k, 2)
    stress: np.ndarray  # (k, 3) T-hat
    eta: np.ndarray  # (k, 3)
    histograms: np.ndarray = field(repr=False)  # (k, bins, bins)
    hist_l1: np.ndarray = field(default=None)  # (k-1,)
    tr_F: np.ndarray = field(default=None)
    etaode_residual: np.ndarray = field(default=None)
    entropy_quartic: np.ndarray = field(default=None)
    collisions: int = 0
    steps: int = 0
    majorant_refreshes: int = 0
    max_momentum_error: float = 0.0
    max_energy_error: float = 0.0
    final: ParticleEnsemble = field(default=None, repr=False)

    def columns(self) -> dict:
        cols = {"t": self.times, "theta": self.theta, "theta_stderr": self.theta_stderr,
                "mass": self.mass, "momentum_1": self.momentum[:, 0], "momentum_2": self.momentum[:, 1],
                "T_xx": self.stress[:, 0], "T_xy": self.stress[:, 1], "T_yy": self.stress[:, 2],
                "eta_xx": self.eta[:, 0], "eta_xy": self.eta[:, 1], "eta_yy": self.eta[:, 2],
                "tr_F": self.tr_F}
        cols["hist_l1"] = np.concatenate([[np.nan], self.hist_l1])
        if self.etaode_residual is not None:
            cols["etaode_residual"] = self.etaode_residual
        if self.entropy_quartic is not None:
            cols["entropy_quartic"] = self.entropy_quartic
        return cols


def _tr_F_series(times, etas):
    """tr F = d/dt log det eta (alpha perpendicular to beta), by finite differences."""
    logdet = np.log([e[0] * e[2] - e[1] ** 2 for e in etas])
    if len(times) < 2:
        return np.full(len(times), np.nan)
    return np.gradient(logdet, times)


def _F_series(times, etas, shear: ShearFrame):
    E = np.array([[[e[0], e[1]], [e[1], e[2]]] for e in etas])
    Edot = np.gradient(E, times, axis=0)
    N = shear.shear_matrix
    return np.array([(Edot[k] - shear.mu * E[k] @ N) @ np.linalg.inv(E[k]) for k in range(len(times))])


def run(ens0: ParticleEnsemble, shear: ShearFrame, cfg: CollisionConfig, t_end: float,
        n_out: int = 26, backend: str | None = None, diag_pairs: int = 0,
        entropy_bins: int = 0) -> DSMCRun:
    """Alternate drift_step and collide_step up to t_end.

    ``diag_pairs`` > 0 adds a Monte Carlo stress-rate estimate at each output
    (for the P + F_sym residual); ``entropy_bins`` > 0 adds the entropy
    production estimate.
    """
    _require_stats(ens0)
    ens = ens0.copy()
    t0 = ens.t
    outs = np.linspace(t0, t_end, n_out)
    rec = {k: [] for k in ("t", "th", "ths", "m", "mom", "T", "eta", "hist", "P", "S")}
    refreshes = 0
    steps = 0

    def record():
        fr = update_frame(ens)
        rec["t"].append(ens.t)
        rec["th"].append(ens.theta())
        rec["ths"].append(ens.theta_stderr())
        rec["m"].append(ens.weight * ens.n)
        rec["mom"].append(ens.momentum())
        rec["T"].append(fr.stress.as_tuple())
        rec["eta"].append(fr.eta.as_tuple())
        rec["hist"].append(renormalised_histogram(ens, fr))
        if diag_pairs:
            rec["P"].append(stress_rate(ens, fr.eta, diag_pairs, seed=ens.seed + len(rec["t"])).tensor.as_tuple())
        if entropy_bins:
            rec["S"].append(entropy_production_estimate(ens, fr.eta, entropy_bins,
                                                        seed=ens.seed + len(rec["t"])).quartic)

    record()
    for target in outs[1:]:
        while ens.t < target - 1e-12 * max(1.0, abs(target)):
            dt = min(cfg.dt, target - ens.t)
            local = cfg if dt == cfg.dt else CollisionConfig(dt, cfg.majorant, cfg.scheme, cfg.safety)
            drift_step(ens, shear, dt, backend)
            _, used = _collide_with_retry(ens, local, backend)
            refreshes += used is not local
            steps += 1
        ens.t = float(target)
        record()

    times = np.array(rec["t"])
    etas = np.array(rec["eta"])
    hist = np.array(rec["hist"])
    area = (2 * HIST_RANGE / HIST_BINS) ** 2
    hl1 = np.array([np.sum(np.abs(hist[k] - hist[k - 1])) * area for k in range(1, len(hist))])
    res = None
    if diag_pairs:
        F = _F_series(times, etas, shear)
        P = np.array([[[p[0], p[1]], [p[1], p[2]]] for p in rec["P"]])
        res = np.array([np.linalg.norm(P[k] + 0.5 * (F[k] + F[k].T)) for k in range(len(times))])
    return DSMCRun(
        times=times, theta=np.array(rec["th"]), theta_stderr=np.array(rec["ths"]),
        mass=np.array(rec["m"]), momentum=np.array(rec["mom"]), stress=np.array(rec["T"]),
        eta=etas, histograms=hist, hist_l1=hl1, tr_F=_tr_F_series(times, etas),
        etaode_residual=res, entropy_quartic=np.array(rec["S"]) if entropy_bins else None,
        collisions=ens.collisions - ens0.collisions, steps=steps, majorant_refreshes=refreshes,
        max_momentum_error=ens.max_momentum_error, max_energy_error=ens.max_energy_error, final=ens)


def theta_bound_violations(r: DSMCRun, mu: float) -> np.ndarray:
    """theta(t) - e^{|mu| t} theta(0) (1 + 3 stderr/theta(0)); positive entries violate the bound."""
    th0 = r.theta[0]
    rel = 3.0 * r.theta_stderr[0] / th0
    return r.theta - np.exp(abs(mu) * (r.times - r.times[0])) * th0 * (1.0 + rel)


# ------------------------------------------------------------------ snapshots


def write_snapshot(path, ens: ParticleEnsemble) -> Path:
    """Little-endian: int64 N, float64 t, then N x 2 float64 velocities."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<qd", ens.n, ens.t))
        fh.write(np.ascontiguousarray(ens.velocities, dtype="<f8").tobytes())
    return path


def read_snapshot(path) -> tuple[np.ndarray, float]:
    raw = Path(path).read_bytes()
    n, t = struct.unpack_from("<qd", raw, 0)
    v = np.frombuffer(raw, dtype="<f8", offset=16)
    if v.size != 2 * n:
        raise ValueError(f"snapshot holds {v.size} values, expected {2 * n}")
    return v.reshape(n, 2).astype(np.float64), t
