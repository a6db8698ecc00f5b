"""Finite-volume stencils for the shape equation dG/dt = div(G V p + D grad G).

Two flux discretisations are provided, each as an explicit loop kernel
(compiled by numba when available) and as a vectorised numpy kernel:

* ``central``: plain second-order divergence form on G.
* ``balanced``: weighted form on u = G / G^M.  Using F + F^T + D = 2/theta Id
  the flux splits into D G^M grad u (symmetric part), u times a discretely
  divergence-free field built from a corner stream function (skew part) and a
  small residual that vanishes on exact frames.  G^M is then an exact discrete
  equilibrium.

Grid layout: cell centres ``pc[k] = -L + (k + 1/2) h``, faces ``pf[k] = -L + k h``,
first array axis is p1.  Boundary faces carry zero flux.
"""

import numpy as np

from .._backend import njit


# --------------------------------------------------------------- central form


@njit
def central_rhs_loops(G, V11, V12, V21, V22, D11, D12, D22, pc, pf, h):
    n = G.shape[0]
    out = np.zeros((n, n))
    inv_h = 1.0 / h
    # x-faces
    for i in range(1, n):
        for j in range(n):
            jm = j - 1 if j > 0 else 0
            jp = j + 1 if j < n - 1 else n - 1
            gf = 0.5 * (G[i - 1, j] + G[i, j])
            vx = V11 * pf[i] + V12 * pc[j]
            dgx = (G[i, j] - G[i - 1, j]) * inv_h
            dgy = 0.25 * inv_h * (G[i - 1, jp] - G[i - 1, jm] + G[i, jp] - G[i, jm])
            J = gf * vx + D11 * dgx + D12 * dgy
            out[i - 1, j] += J * inv_h
            out[i, j] -= J * inv_h
    # y-faces
    for i in range(n):
        im = i - 1 if i > 0 else 0
        ip = i + 1 if i < n - 1 else n - 1
        for j in range(1, n):
            gf = 0.5 * (G[i, j - 1] + G[i, j])
            vy = V21 * pc[i] + V22 * pf[j]
            dgy = (G[i, j] - G[i, j - 1]) * inv_h
            dgx = 0.25 * inv_h * (G[ip, j - 1] - G[im, j - 1] + G[ip, j] - G[im, j])
            J = gf * vy + D22 * dgy + D12 * dgx
            out[i, j - 1] += J * inv_h
            out[i, j] -= J * inv_h
    return out


def _pad_edge(a):
    return np.pad(a, 1, mode="edge")


def _divergence(Jx, Jy, h):
    # Jx: (n+1, n) on x-faces, Jy: (n, n+1) on y-faces
    return (Jx[1:, :] - Jx[:-1, :] + Jy[:, 1:] - Jy[:, :-1]) / h


def central_rhs_numpy(G, V11, V12, V21, V22, D11, D12, D22, pc, pf, h):
    n = G.shape[0]
    Gp = _pad_edge(G)
    # central y-differences per cell, then averaged onto x-faces
    cy = Gp[1:-1, 2:] - Gp[1:-1, :-2]
    cx = Gp[2:, 1:-1] - Gp[:-2, 1:-1]
    Jx = np.zeros((n + 1, n))
    gf = 0.5 * (G[:-1, :] + G[1:, :])
    vx = V11 * pf[1:-1, None] + V12 * pc[None, :]
    Jx[1:-1, :] = (gf * vx + D11 * (G[1:, :] - G[:-1, :]) / h
                   + D12 * 0.25 / h * (cy[:-1, :] + cy[1:, :]))
    Jy = np.zeros((n, n + 1))
    gf = 0.5 * (G[:, :-1] + G[:, 1:])
    vy = V21 * pc[:, None] + V22 * pf[None, 1:-1]
    Jy[:, 1:-1] = (gf * vy + D22 * (G[:, 1:] - G[:, :-1]) / h
                   + D12 * 0.25 / h * (cx[:, :-1] + cx[:, 1:]))
    return _divergence(Jx, Jy, h)


# -------------------------------------------------------------- balanced form


@njit
def _limited_face(u_up, u_dn, u_upup, has_upup):
    # van Leer limited reconstruction of u at a face from the upwind side
    if not has_upup:
        return u_up
    num = u_up - u_upup
    den = u_dn - u_up
    prod = num * den
    if prod > 0.0:
        return u_up + prod / (num + den)
    return u_up


@njit
def balanced_rhs_loops(G, gm, gmx, gmy, psi, D11, D12, D22,
                       R11, R12, R21, R22, pc, pf, h, pe_max):
    n = G.shape[0]
    inv_h = 1.0 / h
    u = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            u[i, j] = G[i, j] / gm[i, j]
    out = np.zeros((n, n))
    # x-faces
    for i in range(1, n):
        for j in range(n):
            jm = j - 1 if j > 0 else 0
            jp = j + 1 if j < n - 1 else n - 1
            w = gmx[i, j]
            dux = (u[i, j] - u[i - 1, j]) * inv_h
            duy = 0.25 * inv_h * (u[i - 1, jp] - u[i - 1, jm] + u[i, jp] - u[i, jm])
            J = w * (D11 * dux + D12 * duy)
            a = (psi[i, j + 1] - psi[i, j]) * inv_h
            dw = D11 * w
            if abs(a) * h <= pe_max * dw:
                uf = 0.5 * (u[i - 1, j] + u[i, j])
            elif a > 0.0:
                # transport velocity is -a: upwind cell is i
                uf = _limited_face(u[i, j], u[i - 1, j],
                                   u[i + 1, j] if i + 1 < n else 0.0, i + 1 < n)
            else:
                uf = _limited_face(u[i - 1, j], u[i, j],
                                   u[i - 2, j] if i >= 2 else 0.0, i >= 2)
            J += a * uf
            J += 0.5 * (G[i - 1, j] + G[i, j]) * (R11 * pf[i] + R12 * pc[j])
            out[i - 1, j] += J * inv_h
            out[i, j] -= J * inv_h
    # y-faces
    for i in range(n):
        im = i - 1 if i > 0 else 0
        ip = i + 1 if i < n - 1 else n - 1
        for j in range(1, n):
            w = gmy[i, j]
            duy = (u[i, j] - u[i, j - 1]) * inv_h
            dux = 0.25 * inv_h * (u[ip, j - 1] - u[im, j - 1] + u[ip, j] - u[im, j])
            J = w * (D22 * duy + D12 * dux)
            a = -(psi[i + 1, j] - psi[i, j]) * inv_h
            dw = D22 * w
            if abs(a) * h <= pe_max * dw:
                uf = 0.5 * (u[i, j - 1] + u[i, j])
            elif a > 0.0:
                uf = _limited_face(u[i, j], u[i, j - 1],
                                   u[i, j + 1] if j + 1 < n else 0.0, j + 1 < n)
            else:
                uf = _limited_face(u[i, j - 1], u[i, j],
                                   u[i, j - 2] if j >= 2 else 0.0, j >= 2)
            J += a * uf
            J += 0.5 * (G[i, j - 1] + G[i, j]) * (R21 * pc[i] + R22 * pf[j])
            out[i, j - 1] += J * inv_h
            out[i, j] -= J * inv_h
    return out


def _limited_faces_numpy(u_lo, u_hi, u_lolo, u_hihi, a, has_lolo, has_hihi):
    # faces between lo and hi cells; a > 0 means transport towards lo (upwind hi)
    up = np.where(a > 0, u_hi, u_lo)
    dn = np.where(a > 0, u_lo, u_hi)
    upup = np.where(a > 0, u_hihi, u_lolo)
    has = np.where(a > 0, has_hihi, has_lolo)
    num = up - upup
    den = dn - up
    prod = num * den
    ok = (prod > 0.0) & has
    safe = np.where(ok, num + den, 1.0)
    return np.where(ok, up + prod / safe, up)


def balanced_rhs_numpy(G, gm, gmx, gmy, psi, D11, D12, D22,
                       R11, R12, R21, R22, pc, pf, h, pe_max):
    n = G.shape[0]
    u = G / gm
    up_ = _pad_edge(u)
    cy = up_[1:-1, 2:] - up_[1:-1, :-2]
    cx = up_[2:, 1:-1] - up_[:-2, 1:-1]

    # x-faces, interior i = 1..n-1
    w = gmx[1:-1, :]
    Jx = np.zeros((n + 1, n))
    diff = w * (D11 * (u[1:, :] - u[:-1, :]) / h + D12 * 0.25 / h * (cy[:-1, :] + cy[1:, :]))
    a = (psi[1:-1, 1:] - psi[1:-1, :-1]) / h
    zero_row = np.zeros((1, n))
    u_lolo = np.vstack([zero_row, u[:-2, :]])
    u_hihi = np.vstack([u[2:, :], zero_row])
    idx = np.arange(1, n)[:, None]
    has_lolo = np.broadcast_to(idx >= 2, a.shape)
    has_hihi = np.broadcast_to(idx + 1 < n, a.shape)
    lim = _limited_faces_numpy(u[:-1, :], u[1:, :], u_lolo, u_hihi, a, has_lolo, has_hihi)
    centred = np.abs(a) * h <= pe_max * (D11 * w)
    uf = np.where(centred, 0.5 * (u[:-1, :] + u[1:, :]), lim)
    res = 0.5 * (G[:-1, :] + G[1:, :]) * (R11 * pf[1:-1, None] + R12 * pc[None, :])
    Jx[1:-1, :] = diff + a * uf + res

    # y-faces, interior j = 1..n-1
    w = gmy[:, 1:-1]
    Jy = np.zeros((n, n + 1))
    diff = w * (D22 * (u[:, 1:] - u[:, :-1]) / h + D12 * 0.25 / h * (cx[:, :-1] + cx[:, 1:]))
    a = -(psi[1:, 1:-1] - psi[:-1, 1:-1]) / h
    zero_col = np.zeros((n, 1))
    u_lolo = np.hstack([zero_col, u[:, :-2]])
    u_hihi = np.hstack([u[:, 2:], zero_col])
    idx = np.arange(1, n)[None, :]
    has_lolo = np.broadcast_to(idx >= 2, a.shape)
    has_hihi = np.broadcast_to(idx + 1 < n, a.shape)
    lim = _limited_faces_numpy(u[:, :-1], u[:, 1:], u_lolo, u_hihi, a, has_lolo, has_hihi)
    centred = np.abs(a) * h <= pe_max * (D22 * w)
    uf = np.where(centred, 0.5 * (u[:, :-1] + u[:, 1:]), lim)
    res = 0.5 * (G[:, :-1] + G[:, 1:]) * (R21 * pc[:, None] + R22 * pf[None, 1:-1])
    Jy[:, 1:-1] = diff + a * uf + res

    return _divergence(Jx, Jy, h)


# ---------------------------------------------- Scharfetter-Gummel (mu = 0)


@njit
def _bernoulli(x):
    # B(x) = x / (e^x - 1), with the series near zero
    if abs(x) < 1e-6:
        return 1.0 - 0.5 * x + x * x / 12.0
    return x / np.expm1(x)


@njit
def sg_fluxes_loops(g, phi1, phi2, h):
    """Scharfetter-Gummel fluxes for div(grad g + g grad phi), phi = phi1(w1) + phi2(w2).

    Returns (Jx, Jy) on interior faces; boundary faces are zero.
    """
    n = g.shape[0]
    Jx = np.zeros((n + 1, n))
    Jy = np.zeros((n, n + 1))
    inv_h = 1.0 / h
    for i in range(1, n):
        d = phi1[i] - phi1[i - 1]
        bm = _bernoulli(-d)
        bp = _bernoulli(d)
        for j in range(n):
            Jx[i, j] = inv_h * (bm * g[i, j] - bp * g[i - 1, j])
    for j in range(1, n):
        d = phi2[j] - phi2[j - 1]
        bm = _bernoulli(-d)
        bp = _bernoulli(d)
        for i in range(n):
            Jy[i, j] = inv_h * (bm * g[i, j] - bp * g[i, j - 1])
    return Jx, Jy


def _bernoulli_numpy(x):
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-6
    safe = np.where(small, 1.0, x)
    return np.where(small, 1.0 - 0.5 * x + x * x / 12.0, safe / np.expm1(safe))


def sg_fluxes_numpy(g, phi1, phi2, h):
    n = g.shape[0]
    Jx = np.zeros((n + 1, n))
    Jy = np.zeros((n, n + 1))
    d1 = np.diff(phi1)
    d2 = np.diff(phi2)
    Jx[1:-1, :] = (_bernoulli_numpy(-d1)[:, None] * g[1:, :]
                   - _bernoulli_numpy(d1)[:, None] * g[:-1, :]) / h
    Jy[:, 1:-1] = (_bernoulli_numpy(-d2)[None, :] * g[:, 1:]
                   - _bernoulli_numpy(d2)[None, :] * g[:, :-1]) / h
    return Jx, Jy


def divergence(Jx, Jy, h):
    return _divergence(Jx, Jy, h)
