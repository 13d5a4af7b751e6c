"""Finite-depth simulation of the rank-one flow and its correlation functions.

Levels are indexed like the schedule: tower n has height ``schedule.heights[n]``
and stage n places ``q_n`` copies of tower n inside tower n + 1 at the shifted
frequencies.  A point is stored through its coordinates x_{n0}, ..., x_N and
the lowest level ``base`` whose tower contains it; below ``base`` the
projections collapse to 0, the atom of mu_n.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .construction import TowerSchedule
from .expsum import SampledDensity

DEFAULT_SAMPLES = 1 << 14


class Escaped(Exception):
    """The time-t map left the stored towers (finite-depth truncation)."""


class TooManyEscapes(RuntimeError):
    pass


class ResolutionError(ValueError):
    pass


# -- level functions -------------------------------------------------------

@dataclass(frozen=True)
class LevelFunction:
    """f_(n0): piecewise constant on ``len(samples)`` cells of [0, h]."""

    baseDepth: int
    h: float
    samples: np.ndarray
    gamma: float = 0.0

    def __post_init__(self):
        c = np.array(self.samples, dtype=complex)
        c.setflags(write=False)
        object.__setattr__(self, "samples", c)
        if not (self.h > 0 and 0.0 <= self.gamma < 1.0):
            raise ValueError("need h > 0 and gamma in [0, 1)")

    @classmethod
    def from_profile(cls, schedule: TowerSchedule, kind: str = "indicator",
                     baseDepth: int = 0, n: int = DEFAULT_SAMPLES) -> "LevelFunction":
        """Normalized profile on the base level: indicator, bump (sin^2) or haar."""
        h = float(schedule.heights[baseDepth])
        gamma = float(schedule.gammas[baseDepth])
        x = (np.arange(n) + 0.5) / n
        if kind == "indicator":
            c = np.ones(n)
        elif kind == "bump":
            c = np.sin(np.pi * x) ** 2
        elif kind == "haar":
            c = np.where(x < 0.5, 1.0, -1.0)
        else:
            raise ValueError(f"unknown level function {kind!r}")
        return cls(baseDepth, h, c, gamma).normalized()

    @property
    def cell(self) -> float:
        return self.h / len(self.samples)

    def norm(self) -> float:
        """Norm weighted by (1 - gamma)/h, the density of mu on the base tower."""
        w = (1.0 - self.gamma) / self.h
        return math.sqrt(w * self.cell * float(np.sum(np.abs(self.samples) ** 2)))

    def normalized(self) -> "LevelFunction":
        return LevelFunction(self.baseDepth, self.h, self.samples / self.norm(), self.gamma)

    @property
    def sup(self) -> float:
        return float(np.max(np.abs(self.samples)))

    def __call__(self, x) -> np.ndarray:
        """Values at base coordinates x (NaN marks points outside the tower)."""
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape, dtype=complex)
        ok = np.isfinite(x) & (x >= 0) & (x <= self.h)
        k = np.minimum((x[ok] / self.cell).astype(np.int64), len(self.samples) - 1)
        out[ok] = self.samples[k]
        return out

    def autocorrelation_table(self) -> np.ndarray:
        """rho(k cell) = int f(x + k cell) conj f(x) dx for k = -(N-1)..N-1.

        rho is exactly linear between these nodes since f is piecewise constant.
        """
        c = self.samples
        n = len(c)
        L = 1 << (2 * n - 1).bit_length()
        F = np.fft.fft(c, L)
        r = np.fft.ifft(F * np.conj(F))
        # r[k] = sum_j c[j + k] conj c[j]
        table = np.concatenate([r[L - n + 1:], r[:n]])
        return self.cell * table

    def fourier(self, taus) -> np.ndarray:
        """Exact transform int f(x) exp(-2 pi i tau x) dx of the step profile."""
        taus = np.ascontiguousarray(taus, dtype=float)
        re, im = _weighted_exp_sums(self.samples.real.copy(), self.samples.imag.copy(),
                                    self.cell, taus)
        d = self.cell
        env = d * np.sinc(d * taus) * np.exp(-1j * np.pi * taus * d)
        return env * (re + 1j * im)

    def spectral_seed(self, taus) -> np.ndarray:
        """(1 - gamma)/h |f^|^2: the Fourier transform of R_{n0}."""
        return (1.0 - self.gamma) / self.h * np.abs(self.fourier(taus)) ** 2


@njit(cache=True, parallel=True)
def _weighted_exp_sums(cr, ci, d, taus):
    """sum_k c_k exp(-2 pi i tau k d), rotating between anchors every 256 terms."""
    m = taus.shape[0]
    n = cr.shape[0]
    re = np.empty(m)
    im = np.empty(m)
    for j in prange(m):
        ph = taus[j] * d
        ph = ph - np.floor(ph)
        rr = np.cos(2.0 * np.pi * ph)
        ri = -np.sin(2.0 * np.pi * ph)
        sr = 0.0
        si = 0.0
        zr = 1.0
        zi = 0.0
        for k in range(n):
            if k % 256 == 0:
                ph = taus[j] * (k * d)
                ph = ph - np.floor(ph)
                zr = np.cos(2.0 * np.pi * ph)
                zi = -np.sin(2.0 * np.pi * ph)
            sr += cr[k] * zr - ci[k] * zi
            si += cr[k] * zi + ci[k] * zr
            t = zr * rr - zi * ri
            zi = zr * ri + zi * rr
            zr = t
        re[j] = sr
        im[j] = si
    return re, im


# -- points and the time-t map ---------------------------------------------

@dataclass(frozen=True)
class FlowPoint:
    coords: np.ndarray
    base: int
    n0: int = 0

    def level(self, n: int) -> float:
        return float(self.coords[n - self.n0])


def copy_offsets(schedule: TowerSchedule, n0: int, n: int) -> np.ndarray:
    """Positions of the copies of tower n0 inside tower n, ascending."""
    d = np.zeros(1)
    for k in range(n0, n):
        pos = schedule.geometries[k].positions
        d = (pos[:, None] + d[None, :]).ravel()
    return np.sort(d)


def _project(schedule: TowerSchedule, k: int, x: np.ndarray):
    """phi_k on an array of level-(k+1) coordinates: (x_k, inside tower k)."""
    g = schedule.geometries[k]
    pos = g.positions
    j = np.searchsorted(pos, x, side="right") - 1
    j = np.clip(j, 0, len(pos) - 1)
    y = x - pos[j]
    inside = (y >= 0) & (y < g.h)
    return np.where(inside, y, 0.0), inside


def _down(schedule: TowerSchedule, coords: np.ndarray, base: np.ndarray,
          n0: int, top: int) -> None:
    """Recompute levels below ``top`` in place, updating ``base``."""
    alive = np.ones(coords.shape[0], dtype=bool)
    for lev in range(top, n0, -1):
        x, inside = _project(schedule, lev - 1, coords[:, lev - n0])
        alive &= inside
        coords[:, lev - 1 - n0] = np.where(alive, x, 0.0)
        base[alive] = lev - 1


def sample_points(schedule: TowerSchedule, depth: int, count: int, seed=None,
                  n0: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """``count`` points of mu at finite depth: (coords[count, levels], base).

    x_depth is 0 (the atom) with probability gamma_depth, else uniform on
    [0, h_depth]; lower coordinates follow by projection.
    """
    rng = np.random.default_rng(seed)
    h = float(schedule.heights[depth])
    gamma = float(schedule.gammas[depth])
    atom = rng.random(count) < gamma
    top = rng.random(count) * h
    coords = np.zeros((count, depth - n0 + 1))
    coords[:, -1] = np.where(atom, 0.0, top)
    base = np.where(atom, depth + 1, depth)
    _down(schedule, coords, base, n0, depth)
    base[atom] = depth + 1
    return coords, base


def sample_point(schedule: TowerSchedule, depth: int, seed=None, n0: int = 0) -> FlowPoint:
    coords, base = sample_points(schedule, depth, 1, seed, n0)
    return FlowPoint(coords[0], int(base[0]), n0)


def apply_time_batch(schedule: TowerSchedule, coords: np.ndarray, base: np.ndarray,
                     t: float, n0: int = 0):
    """Vectorized time-t map: (coords, base, escaped mask)."""
    coords = np.array(coords, dtype=float)
    base = np.array(base)
    if t == 0:
        return coords, base, np.zeros(len(base), dtype=bool)
    depth = n0 + coords.shape[1] - 1
    if abs(t) >= schedule.heights[depth]:
        raise ValueError("|t| must be below the top tower height")
    heights = schedule.heights[n0:depth + 1]
    at = abs(t)
    ok = (coords > at) & (coords < heights[None, :] - at)
    levels = np.arange(n0, depth + 1)
    ok &= levels[None, :] >= base[:, None]
    escaped = ~ok.any(axis=1)
    first = np.argmax(ok, axis=1)
    cols = np.arange(coords.shape[1])
    shift = (cols[None, :] >= first[:, None]) & ~escaped[:, None]
    coords[shift] += t
    # levels below the first admissible one are recomputed from above
    new_base = base.copy()
    for i in np.unique(first[~escaped]):
        rows = np.flatnonzero((first == i) & ~escaped)
        sub = coords[rows]
        b = np.full(len(rows), n0 + i)
        _down(schedule, sub, b, n0, n0 + i)
        coords[rows] = sub
        new_base[rows] = b
    return coords, new_base, escaped


def apply_time(schedule: TowerSchedule, p: FlowPoint, t: float) -> FlowPoint:
    c, b, esc = apply_time_batch(schedule, p.coords[None, :], np.array([p.base]), t, p.n0)
    if esc[0]:
        raise Escaped(f"no stored level admits t={t}")
    return FlowPoint(c[0], int(b[0]), p.n0)


def level_values(f: LevelFunction, coords: np.ndarray, base: np.ndarray, n0: int = 0):
    """f(x) = f_(n0)(x_{n0}) for points inside tower n0, else 0."""
    x = coords[:, f.baseDepth - n0]
    inside = base <= f.baseDepth
    return np.where(inside, f(x), 0.0)


# -- correlations ------------------------------------------------------------

@njit(cache=True, parallel=True)
def _lifted_autocorr(deltas, table_re, table_im, cell, nhalf, ts):
    """sum over sorted deltas of rho(t - delta), rho linear between nodes."""
    m = ts.shape[0]
    out_re = np.empty(m)
    out_im = np.empty(m)
    span = nhalf * cell
    for j in prange(m):
        t = ts[j]
        lo = np.searchsorted(deltas, t - span)
        hi = np.searchsorted(deltas, t + span)
        sr = 0.0
        si = 0.0
        for i in range(lo, hi):
            u = (t - deltas[i]) / cell + nhalf
            k = int(np.floor(u))
            if k < 0 or k >= 2 * nhalf:
                continue
            w = u - k
            sr += (1.0 - w) * table_re[k] + w * table_re[k + 1]
            si += (1.0 - w) * table_im[k] + w * table_im[k + 1]
        out_re[j] = sr
        out_im[j] = si
    return out_re, out_im


MAX_DIFFERENCES = 50_000_000


def difference_multiset(schedule: TowerSchedule, n0: int, n: int) -> np.ndarray:
    d = copy_offsets(schedule, n0, n)
    if d.size**2 > MAX_DIFFERENCES:
        raise MemoryError(f"{d.size}^2 copy differences exceed {MAX_DIFFERENCES}")
    return np.sort((d[:, None] - d[None, :]).ravel())


def correlation_analytic(f: LevelFunction, schedule: TowerSchedule, n: int, tGrid) -> np.ndarray:
    """R_n(t) = (1 - gamma_n)/h_n int f_(n)(t + x) conj f_(n)(x) dx on ``tGrid``.

    f_(n) is f lifted to tower n, a sum of copies of f at the offsets of
    tower n0 inside tower n, so R_n is a weighted sum of shifted copies of
    the base autocorrelation.
    """
    if n < f.baseDepth:
        raise ValueError("n must be >= the base depth of f")
    ts = np.ascontiguousarray(tGrid, dtype=float)
    if ts.size > 1:
        st = np.min(np.abs(np.diff(np.sort(ts))))
        if st < f.cell * (1 - 1e-12):
            raise ResolutionError(
                f"tGrid step {st:.3g} is below the level-function cell {f.cell:.3g}")
    deltas = difference_multiset(schedule, f.baseDepth, n)
    table = np.concatenate([f.autocorrelation_table(), [0.0]])
    nhalf = len(f.samples)
    table = np.concatenate([[0.0], table])
    re, im = _lifted_autocorr(deltas, table.real.copy(), table.imag.copy(),
                              f.cell, nhalf, ts)
    w = (1.0 - schedule.gammas[n]) / schedule.heights[n]
    return w * (re + 1j * im)


def spectral_density(f: LevelFunction, schedule: TowerSchedule, n: int, dt: float,
                     tau_range: tuple[float, float] | None = None,
                     min_length: int = 0) -> tuple[SampledDensity, np.ndarray]:
    """Riemann-sum Fourier transform of R_n sampled at t = k dt.

    Returns the density (round-off negatives clipped to 0) and the raw real
    parts on the same grid.

    The transform is taken by FFT, so it lands on tau_j = j / (L dt) with L
    the padded length (a power of two, at least 4 h_n / dt).  The Poisson
    summation formula makes the result exact up to aliasing from tau + m/dt.
    """
    hn = float(schedule.heights[n])
    K = int(math.ceil(hn / dt))
    L = 1 << max(int(math.ceil(4 * hn / dt)), 2 * K + 1, min_length).bit_length()
    ks = np.arange(-K, K + 1)
    r = correlation_analytic(f, schedule, n, ks * dt)
    buf = np.zeros(L, dtype=complex)
    buf[ks % L] = r
    spec = dt * np.fft.fft(buf)
    dtau = 1.0 / (L * dt)
    j0, j1 = 0, L // 2
    if tau_range is not None:
        j0 = max(0, int(math.ceil(tau_range[0] / dtau)))
        j1 = min(L // 2, int(math.floor(tau_range[1] / dtau)))
    vals = spec[j0:j1 + 1].real
    return SampledDensity(j0 * dtau, dtau, np.maximum(vals, 0.0)), vals


def correlation_monte_carlo(f: LevelFunction, schedule: TowerSchedule, depth: int, t: float,
                            samples: int, seed=None, max_escape: float = 0.10,
                            chunk: int = 1 << 16) -> tuple[complex, float, int]:
    """(mean of f(T^t x) conj f(x), its standard error, escaped count).

    Samples are drawn in chunks from independent child seeds, so the result
    does not depend on how the chunks would be distributed over workers.
    """
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    nchunks = (samples + chunk - 1) // chunk
    vals = []
    escaped = 0
    for i, child in enumerate(ss.spawn(nchunks)):
        m = min(chunk, samples - i * chunk)
        coords, base = sample_points(schedule, depth, m, child, f.baseDepth)
        f0 = level_values(f, coords, base, f.baseDepth)
        c2, b2, esc = apply_time_batch(schedule, coords, base, t, f.baseDepth)
        ft = level_values(f, c2, b2, f.baseDepth)
        escaped += int(esc.sum())
        vals.append((ft * np.conj(f0))[~esc])
    if escaped > max_escape * samples:
        raise TooManyEscapes(f"{escaped} of {samples} samples escaped at t={t}")
    v = np.concatenate(vals)
    mean = complex(np.mean(v))
    stderr = float(np.std(v, ddof=1) / math.sqrt(len(v))) if len(v) > 1 else math.inf
    return mean, stderr, escaped


def write_trace(path, ts, values, stderr=None) -> None:
    """Correlation trace CSV with columns t, Re, Im, stderr."""
    ts = np.asarray(ts, float)
    values = np.asarray(values, complex)
    se = np.zeros(len(ts)) if stderr is None else np.broadcast_to(stderr, ts.shape)
    with open(path, "w") as fh:
        fh.write("t,Re,Im,stderr\n")
        for t, v, e in zip(ts, values, se):
            fh.write(f"{float(t)!r},{float(v.real)!r},{float(v.imag)!r},{float(e)!r}\n")
