"""Hard-sphere collision sweeps for the particle solver.

Both variants consume the same pre-generated random arrays, so a run is a
pure function of the seed.  Candidate ``c`` pairs particles ``ii[c]`` and
``jj[c]``; within one permutation round the pairs are disjoint, which is what
lets the numpy variant update a whole round at once.

Return status: number of accepted collisions, or -1 - c if candidate ``c``
exceeded the majorant (velocities are then partially updated and must be
discarded by the caller).
"""

from __future__ import annotations

import numpy as np

from .._backend import njit


@njit
def collide_loops(w, ii, jj, cos_nu, sin_nu, unif, gmax, stats):
    """stats[0] <- max momentum error, stats[1] <- max relative energy error."""
    count = 0
    for c in range(ii.shape[0]):
        i = ii[c]
        j = jj[c]
        g0 = w[i, 0] - w[j, 0]
        g1 = w[i, 1] - w[j, 1]
        vr = cos_nu[c] * g0 + sin_nu[c] * g1
        if vr > gmax:
            return -1 - c
        if vr > 0.0 and unif[c] * gmax < vr:
            m0 = w[i, 0] + w[j, 0]
            m1 = w[i, 1] + w[j, 1]
            e = w[i, 0] ** 2 + w[i, 1] ** 2 + w[j, 0] ** 2 + w[j, 1] ** 2
            d0 = vr * cos_nu[c]
            d1 = vr * sin_nu[c]
            w[i, 0] -= d0
            w[i, 1] -= d1
            w[j, 0] += d0
            w[j, 1] += d1
            dm = max(abs(w[i, 0] + w[j, 0] - m0), abs(w[i, 1] + w[j, 1] - m1))
            e2 = w[i, 0] ** 2 + w[i, 1] ** 2 + w[j, 0] ** 2 + w[j, 1] ** 2
            de = abs(e2 - e) / e if e > 0.0 else 0.0
            if dm > stats[0]:
                stats[0] = dm
            if de > stats[1]:
                stats[1] = de
            count += 1
    return count


def collide_numpy(w, ii, jj, cos_nu, sin_nu, unif, gmax, stats, round_size):
    count = 0
    total = ii.shape[0]
    for start in range(0, total, round_size):
        sl = slice(start, min(start + round_size, total))
        i, j = ii[sl], jj[sl]
        cn, sn = cos_nu[sl], sin_nu[sl]
        wi, wj = w[i], w[j]
        g0 = wi[:, 0] - wj[:, 0]
        g1 = wi[:, 1] - wj[:, 1]
        vr = cn * g0 + sn * g1
        bad = np.nonzero(vr > gmax)[0]
        if bad.size:
            return -1 - (start + int(bad[0]))
        acc = (vr > 0.0) & (unif[sl] * gmax < vr)
        if not acc.any():
            continue
        i, j, vr, cn, sn = i[acc], j[acc], vr[acc], cn[acc], sn[acc]
        wi, wj = wi[acc], wj[acc]
        m0 = wi[:, 0] + wj[:, 0]
        m1 = wi[:, 1] + wj[:, 1]
        e = wi[:, 0] ** 2 + wi[:, 1] ** 2 + wj[:, 0] ** 2 + wj[:, 1] ** 2
        d0 = vr * cn
        d1 = vr * sn
        ni = np.empty_like(wi)
        nj = np.empty_like(wj)
        ni[:, 0] = wi[:, 0] - d0
        ni[:, 1] = wi[:, 1] - d1
        nj[:, 0] = wj[:, 0] + d0
        nj[:, 1] = wj[:, 1] + d1
        w[i] = ni
        w[j] = nj
        dm = np.maximum(np.abs(ni[:, 0] + nj[:, 0] - m0), np.abs(ni[:, 1] + nj[:, 1] - m1))
        e2 = ni[:, 0] ** 2 + ni[:, 1] ** 2 + nj[:, 0] ** 2 + nj[:, 1] ** 2
        de = np.where(e > 0, np.abs(e2 - e) / np.where(e > 0, e, 1.0), 0.0)
        stats[0] = max(stats[0], float(dm.max()))
        stats[1] = max(stats[1], float(de.max()))
        count += int(acc.sum())
    return count


@njit
def shear_drift_loops(w, a0, a1, b0, b1, k):
    """w <- w - k (beta . w) alpha, in place."""
    for n in range(w.shape[0]):
        s = k * (b0 * w[n, 0] + b1 * w[n, 1])
        w[n, 0] -= s * a0
        w[n, 1] -= s * a1


def shear_drift_numpy(w, a0, a1, b0, b1, k):
    s = k * (b0 * w[:, 0] + b1 * w[:, 1])
    w[:, 0] -= s * a0
    w[:, 1] -= s * a1
