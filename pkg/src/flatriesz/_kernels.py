"""Compiled kernels for exponential sums.

Phases ``tau * omega`` are formed exactly as a double-double product and
reduced modulo 1 before any trigonometric evaluation.  None of the kernels
are compiled with fastmath: the error-free transformations below rely on
strict IEEE evaluation order.
"""

import numba
import numpy as np
from numba import njit, prange

# the bundled TBB is too old for numba; prefer OpenMP and skip the warning
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

TWO_PI = 2.0 * np.pi
_SPLITTER = 134217729.0  # 2**27 + 1

# grid points sharing one exactly reduced anchor phase
BLOCK = 256


@njit(inline="always")
def two_sum(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


@njit(inline="always")
def two_prod(a, b):
    p = a * b
    c = _SPLITTER * a
    ah = c - (c - a)
    al = a - ah
    c = _SPLITTER * b
    bh = c - (c - b)
    bl = b - bh
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


@njit(inline="always")
def frac_dd(hi, lo):
    """Fractional part in [0, 1) of the double-double ``hi + lo``."""
    f = hi - np.floor(hi)
    r = f + lo
    return r - np.floor(r)


@njit(inline="always")
def phase(tau, w):
    h, l = two_prod(tau, w)
    return frac_dd(h, l)


@njit(cache=True)
def point_sum(w, tau):
    """Unnormalized sum over y of exp(2 pi i tau w[y]), strictly in order."""
    sr = 0.0
    si = 0.0
    for y in range(w.shape[0]):
        f = phase(tau, w[y])
        sr += np.cos(TWO_PI * f)
        si += np.sin(TWO_PI * f)
    return sr, si


@njit(cache=True)
def point_sums(w, taus):
    n = taus.shape[0]
    re = np.empty(n)
    im = np.empty(n)
    for k in range(n):
        re[k], im[k] = point_sum(w, taus[k])
    return re, im


@njit(cache=True)
def _block(w, rr, ri, t0, k0, k1, out):
    q = w.shape[0]
    zr = np.empty(q)
    zi = np.empty(q)
    for y in range(q):
        f = phase(t0, w[y])
        zr[y] = np.cos(TWO_PI * f)
        zi[y] = np.sin(TWO_PI * f)
    for k in range(k0, k1):
        # four interleaved partial sums, combined in a fixed order
        s0 = 0.0
        s1 = 0.0
        s2 = 0.0
        s3 = 0.0
        u0 = 0.0
        u1 = 0.0
        u2 = 0.0
        u3 = 0.0
        y = 0
        while y + 4 <= q:
            a = zr[y]
            b = zi[y]
            s0 += a
            u0 += b
            zr[y] = a * rr[y] - b * ri[y]
            zi[y] = a * ri[y] + b * rr[y]
            a = zr[y + 1]
            b = zi[y + 1]
            s1 += a
            u1 += b
            zr[y + 1] = a * rr[y + 1] - b * ri[y + 1]
            zi[y + 1] = a * ri[y + 1] + b * rr[y + 1]
            a = zr[y + 2]
            b = zi[y + 2]
            s2 += a
            u2 += b
            zr[y + 2] = a * rr[y + 2] - b * ri[y + 2]
            zi[y + 2] = a * ri[y + 2] + b * rr[y + 2]
            a = zr[y + 3]
            b = zi[y + 3]
            s3 += a
            u3 += b
            zr[y + 3] = a * rr[y + 3] - b * ri[y + 3]
            zi[y + 3] = a * ri[y + 3] + b * rr[y + 3]
            y += 4
        while y < q:
            a = zr[y]
            b = zi[y]
            s0 += a
            u0 += b
            zr[y] = a * rr[y] - b * ri[y]
            zi[y] = a * ri[y] + b * rr[y]
            y += 1
        sr = (s0 + s1) + (s2 + s3)
        si = (u0 + u1) + (u2 + u3)
        out[k] = (sr * sr + si * si) / q


@njit(cache=True, parallel=True)
def grid_abs2(w, origin, step, count):
    """|P|^2 on origin + k*step, k < count.

    Each block of BLOCK points starts from exactly reduced phases and then
    advances by a per-frequency rotation; blocks are independent, so the
    output does not depend on how blocks are spread over threads.
    """
    q = w.shape[0]
    out = np.empty(count)
    rr = np.empty(q)
    ri = np.empty(q)
    for y in range(q):
        f = phase(step, w[y])
        rr[y] = np.cos(TWO_PI * f)
        ri[y] = np.sin(TWO_PI * f)
    nblocks = (count + BLOCK - 1) // BLOCK
    for bi in prange(nblocks):
        k0 = bi * BLOCK
        k1 = min(count, k0 + BLOCK)
        _block(w, rr, ri, origin + k0 * step, k0, k1, out)
    return out


@njit(cache=True, parallel=True)
def grid_abs2_2d(wx, wy, frame, ox, oy, sx, sy, nx, ny):
    """|P_X(u1)|^2 |P_Y(u2)|^2 with u = frame^T tau, point by point."""
    out = np.empty((nx, ny))
    qx = wx.shape[0]
    qy = wy.shape[0]
    for i in prange(nx):
        t1 = ox + i * sx
        for j in range(ny):
            t2 = oy + j * sy
            u1 = frame[0, 0] * t1 + frame[1, 0] * t2
            u2 = frame[0, 1] * t1 + frame[1, 1] * t2
            ar, ai = point_sum(wx, u1)
            br, bi = point_sum(wy, u2)
            out[i, j] = ((ar * ar + ai * ai) / qx) * ((br * br + bi * bi) / qy)
    return out


@njit(cache=True)
def grid_abs2_direct(w, origin, step, count):
    """Reference path: every point reduced exactly, no rotation recurrence."""
    out = np.empty(count)
    q = w.shape[0]
    for k in range(count):
        sr, si = point_sum(w, origin + k * step)
        out[k] = (sr * sr + si * si) / q
    return out
