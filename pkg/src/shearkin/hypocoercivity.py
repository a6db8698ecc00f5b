"""Discrete hypocoercivity structure of the limiting shape operator.

Coordinates are taken with e1 = alpha and e2 = beta.  In L^2(dG^M)

    A u  = 2 d2 u
    A* u = -2 d2 u + p2 u
    B u  = -(sqrt3/2) (p2 d1 u - p1 d2 u)      (antisymmetric)
    C    = [A, B] = -sqrt3 d1

and the autonomous limit equation is d_s u = -(A*A + B) u.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh, expm_multiply

from .fitting import semilog_fit
from .fp_shape_solver import VelocityGrid

SQRT3 = math.sqrt(3.0)

# polynomial test fields: (u, d1 u, d2 u) as callables of (p1, p2)
TEST_POLYNOMIALS = {
    "p1": (lambda a, b: a, lambda a, b: np.ones_like(a), lambda a, b: np.zeros_like(a)),
    "p1^3 p2": (lambda a, b: a**3 * b, lambda a, b: 3 * a**2 * b, lambda a, b: a**3),
    "p1^2 p2^2": (lambda a, b: a**2 * b**2, lambda a, b: 2 * a * b**2, lambda a, b: 2 * a**2 * b),
    "p1 p2^3": (lambda a, b: a * b**3, lambda a, b: b**3, lambda a, b: 3 * a * b**2),
}


def _diff1d(n: int, h: float) -> sp.csr_matrix:
    """Second-order first derivative: centred inside, one-sided at the ends."""
    d = sp.lil_matrix((n, n))
    for i in range(1, n - 1):
        d[i, i - 1] = -0.5 / h
        d[i, i + 1] = 0.5 / h
    d[0, 0:3] = np.array([-1.5, 2.0, -0.5]) / h
    d[n - 1, n - 3:] = np.array([0.5, -2.0, 1.5]) / h
    return d.tocsr()


@dataclass
class HypoOperators:
    """Sparse matrices acting on row-major flattened cell values (index = i*n + j)."""

    grid: VelocityGrid
    D1: sp.csr_matrix
    D2: sp.csr_matrix
    P1: sp.dia_matrix
    P2: sp.dia_matrix
    weight: np.ndarray  # G^M at cell centres times cell area, flattened

    @classmethod
    def build(cls, grid: VelocityGrid) -> "HypoOperators":
        n = grid.n
        d = _diff1d(n, grid.h)
        eye = sp.identity(n, format="csr")
        P1g, P2g = grid.mesh()
        gm = np.exp(-(P1g**2 + P2g**2) / 4.0) / (4.0 * math.pi)
        return cls(grid, sp.kron(d, eye, format="csr"), sp.kron(eye, d, format="csr"),
                   sp.diags(P1g.ravel()), sp.diags(P2g.ravel()), (gm * grid.h**2).ravel())

    @property
    def A(self):
        return 2.0 * self.D2

    @property
    def A_star(self):
        return -2.0 * self.D2 + self.P2

    @property
    def B(self):
        return -0.5 * SQRT3 * (self.P2 @ self.D1 - self.P1 @ self.D2)

    @property
    def C(self):
        return -SQRT3 * self.D1

    def inner(self, u, v) -> float:
        return float(np.sum(self.weight * u * v))


def _interior_mask(n: int, margin: int = 2) -> np.ndarray:
    m = np.zeros((n, n), dtype=bool)
    m[margin:n - margin, margin:n - margin] = True
    return m.ravel()


def commutator_errors(grid: VelocityGrid, radius: float = 3.0) -> dict[str, float]:
    """max |(AB - BA)u + sqrt3 d1 u| over cells with |p|_inf <= radius."""
    ops = HypoOperators.build(grid)
    P1g, P2g = (x.ravel() for x in grid.mesh())
    window = (np.abs(P1g) <= radius) & (np.abs(P2g) <= radius) & _interior_mask(grid.n)
    comm = ops.A @ ops.B - ops.B @ ops.A
    out = {}
    for name, (u, du1, _) in TEST_POLYNOMIALS.items():
        err = comm @ u(P1g, P2g) + SQRT3 * du1(P1g, P2g)
        out[name] = float(np.max(np.abs(err[window])))
    return out


def commutator_BC_error(grid: VelocityGrid, radius: float = 3.0) -> float:
    """max |[B, C]u - (3/2) d2 u| on the polynomial tests."""
    ops = HypoOperators.build(grid)
    P1g, P2g = (x.ravel() for x in grid.mesh())
    window = (np.abs(P1g) <= radius) & (np.abs(P2g) <= radius) & _interior_mask(grid.n)
    comm = ops.B @ ops.C - ops.C @ ops.B
    worst = 0.0
    for u, _, du2 in TEST_POLYNOMIALS.values():
        err = comm @ u(P1g, P2g) - 1.5 * du2(P1g, P2g)
        worst = max(worst, float(np.max(np.abs(err[window]))))
    return worst


def adjointness_error(grid: VelocityGrid, seed: int = 0) -> float:
    """|<Au, v> - <u, A*v>| / (|u| |v|) for smooth bumps supported well inside."""
    ops = HypoOperators.build(grid)
    P1g, P2g = (x.ravel() for x in grid.mesh())
    rng = np.random.default_rng(seed)
    c = rng.uniform(-1, 1, size=4)
    u = np.exp(-((P1g - c[0]) ** 2 + (P2g - c[1]) ** 2)) * (1 + P1g)
    v = np.exp(-((P1g - c[2]) ** 2 + (P2g - c[3]) ** 2) / 2) * P2g
    lhs = ops.inner(ops.A @ u, v)
    rhs = ops.inner(u, ops.A_star @ v)
    return abs(lhs - rhs) / math.sqrt(ops.inner(u, u) * ops.inner(v, v))


# ------------------------------------------------------------ weighted forms


def _face_weights(grid: VelocityGrid):
    """G^M at x-faces (n+1, n) and y-faces (n, n+1)."""
    pc, pf = grid.pc, grid.pf
    gx = np.exp(-(pf[:, None] ** 2 + pc[None, :] ** 2) / 4.0) / (4.0 * math.pi)
    gy = np.exp(-(pc[:, None] ** 2 + pf[None, :] ** 2) / 4.0) / (4.0 * math.pi)
    return gx, gy


def _face_laplacian(n: int, h: float, wface: np.ndarray, axis: int) -> sp.csr_matrix:
    """Stiffness matrix of sum_faces w_f (u_hi - u_lo)^2 along ``axis`` (interior faces)."""
    rows, cols, vals = [], [], []
    idx = np.arange(n * n).reshape(n, n)
    if axis == 0:
        lo, hi, w = idx[:-1, :], idx[1:, :], wface[1:-1, :]
    else:
        lo, hi, w = idx[:, :-1], idx[:, 1:], wface[:, 1:-1]
    lo, hi, w = lo.ravel(), hi.ravel(), w.ravel()
    for a, b, s in ((lo, lo, 1), (hi, hi, 1), (lo, hi, -1), (hi, lo, -1)):
        rows.append(a)
        cols.append(b)
        vals.append(s * w)
    K = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n * n, n * n))
    return K.tocsr()  # h^2 area / h^2 gradient cancel


def coercivity_constant(grid: VelocityGrid) -> float:
    """Smallest nonzero Rayleigh quotient of A*A + C*C, i.e. of (4|d2 u|^2 + 3|d1 u|^2)
    against |u|^2 in L^2(dG^M), via a shift-inverted generalised eigenproblem."""
    n, h = grid.n, grid.h
    gx, gy = _face_weights(grid)
    K = 3.0 * _face_laplacian(n, h, gx, 0) + 4.0 * _face_laplacian(n, h, gy, 1)
    P1g, P2g = grid.mesh()
    gm = np.exp(-(P1g**2 + P2g**2) / 4.0) / (4.0 * math.pi)
    M = sp.diags(gm.ravel() * h * h)
    vals = eigsh(K.tocsc(), k=3, M=M.tocsc(), sigma=-0.25, which="LM", return_eigenvectors=False)
    vals = np.sort(vals)
    # vals[0] is the constant mode (zero); the next one is the coercivity constant
    return float(vals[1])


def generator(grid: VelocityGrid) -> sp.csr_matrix:
    """Discrete -L: weighted diffusion 4 (1/G^M) d2 (G^M d2 u) plus a centred skew
    part built on a corner stream function so that it is exactly antisymmetric in
    the discrete weighted inner product."""
    n, h = grid.n, grid.h
    gx, gy = _face_weights(grid)
    P1g, P2g = grid.mesh()
    gm = (np.exp(-(P1g**2 + P2g**2) / 4.0) / (4.0 * math.pi)).ravel()
    inv_mass = sp.diags(1.0 / (gm * h * h))
    diff = -4.0 * _face_laplacian(n, h, gy, 1)
    # G^M (p2, -p1) = (d2 psi, -d1 psi) with psi = -2 G^M at corners
    pf = grid.pf
    psi = -2.0 * np.exp(-(pf[:, None] ** 2 + pf[None, :] ** 2) / 4.0) / (4.0 * math.pi)
    psi[0, :] = psi[-1, :] = psi[:, 0] = psi[:, -1] = 0.0
    fx = (psi[:, 1:] - psi[:, :-1])  # flux through x-faces (n+1, n), times h already
    fy = -(psi[1:, :] - psi[:-1, :])  # y-faces (n, n+1)
    idx = np.arange(n * n).reshape(n, n)
    rows, cols, vals = [], [], []

    def add_faces(lo, hi, f):
        # transport of u with face flux f (from lo to hi), centred face value:
        # cell lo loses f*(u_lo+u_hi)/2, cell hi gains it
        lo, hi, f = lo.ravel(), hi.ravel(), 0.5 * f.ravel()
        for r, c, s in ((lo, lo, -1), (lo, hi, -1), (hi, lo, 1), (hi, hi, 1)):
            rows.append(r)
            cols.append(c)
            vals.append(s * f)

    add_faces(idx[:-1, :], idx[1:, :], fx[1:-1, :])
    add_faces(idx[:, :-1], idx[:, 1:], fy[:, 1:-1])
    skew = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n * n, n * n)).tocsr()
    # d_s u = (sqrt3/2)(p2 d1 u - p1 d2 u) = (sqrt3/2) (1/G^M) div(G^M b u), b = (p2, -p1)
    return (inv_mass @ (diff - 0.5 * SQRT3 * skew)).tocsr()


def weighted_h1_norm(grid: VelocityGrid, u: np.ndarray) -> float:
    """(|u - <u>|^2 + |grad u|^2)^(1/2) in L^2(dG^M), gradient on faces."""
    n, h = grid.n, grid.h
    P1g, P2g = grid.mesh()
    gm = np.exp(-(P1g**2 + P2g**2) / 4.0) / (4.0 * math.pi)
    U = u.reshape(n, n)
    w = gm * h * h
    mean = float(np.sum(w * U) / np.sum(w))
    l2 = float(np.sum(w * (U - mean) ** 2))
    gx, gy = _face_weights(grid)
    gr = float(np.sum(gx[1:-1, :] * np.diff(U, axis=0) ** 2) + np.sum(gy[:, 1:-1] * np.diff(U, axis=1) ** 2))
    return math.sqrt(l2 + gr)


@dataclass
class DecayRun:
    s: np.ndarray
    norm: np.ndarray
    rate: float
    r2: float
    final: np.ndarray = field(repr=False)


def autonomous_decay_run(u0, s_span=(0.0, 8.0), grid: VelocityGrid | None = None,
                         num: int = 41, fit_from: float = 2.0) -> DecayRun:
    """Evolve d_s u = -L u with the exact matrix exponential and fit the
    exponential decay rate of the weighted H^1 norm on s >= fit_from.

    ``u0`` is an array of cell values or a callable of (p1, p2).
    """
    grid = grid or VelocityGrid(64, 8.0)
    if callable(u0):
        P1g, P2g = grid.mesh()
        u0 = u0(P1g, P2g)
    u0 = np.asarray(u0, dtype=float).ravel()
    Lh = generator(grid)
    s0, s1 = s_span
    traj = expm_multiply(Lh, u0, start=s0, stop=s1, num=num, endpoint=True)
    s = np.linspace(s0, s1, num)
    norms = np.array([weighted_h1_norm(grid, v) for v in traj])
    mask = s >= fit_from
    if np.all(norms[mask] > 0):
        slope, _, r2 = semilog_fit(s[mask], norms[mask])
    else:  # already in the kernel
        slope, r2 = 0.0, 1.0
    return DecayRun(s=s, norm=norms, rate=-slope, r2=r2, final=traj[-1])


@dataclass
class HypoReport:
    resolutions: tuple
    commutator_errors: dict  # polynomial -> list of errors per resolution
    commutator_order: dict  # polynomial -> observed order
    bc_error: float
    adjointness: list
    kappa: float
    decay_rate: float
    decay_r2: float

    @property
    def passed(self) -> bool:
        orders_ok = all(o >= 1.8 for o in self.commutator_order.values() if o == o)
        return orders_ok and self.kappa > 0 and self.decay_rate > 0


def hypoco_check(grid: VelocityGrid | None = None, resolutions=(64, 128, 256)) -> HypoReport:
    """Commutator order test, coercivity constant and autonomous decay rate."""
    L = grid.L if grid is not None else 8.0
    errs = {k: [] for k in TEST_POLYNOMIALS}
    adj = []
    for n in resolutions:
        g = VelocityGrid(n, L)
        for k, v in commutator_errors(g).items():
            errs[k].append(v)
        adj.append(adjointness_error(g))
    orders = {}
    for k, e in errs.items():
        e = np.asarray(e)
        if np.all(e < 1e-9):  # exact for this polynomial
            orders[k] = float("nan")
        else:
            orders[k] = float(np.log2(e[-2] / e[-1]))
    base = grid or VelocityGrid(64, L)
    kappa = coercivity_constant(base)
    run = autonomous_decay_run(lambda a, b: a, grid=base)
    return HypoReport(tuple(resolutions), errs, orders, commutator_BC_error(base), adj,
                      kappa, run.rate, run.r2)
