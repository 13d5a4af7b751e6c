"""Exponential sums P(tau) = q^{-1/2} sum_y exp(2 pi i tau w(y)) on points and grids."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .construction import FrequencyParams


class NyquistViolation(ValueError):
    """Grid step too coarse for the spread of difference frequencies."""


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=dtype)
    if a.flags.writeable:
        a = a.copy()
        a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ExpSum1D:
    frequencies: np.ndarray

    def __post_init__(self):
        w = _frozen(self.frequencies)
        if w.ndim != 1 or len(w) < 1:
            raise ValueError("need at least one frequency")
        if not np.all(np.isfinite(w)):
            raise ValueError("frequencies must be finite")
        if np.any(np.diff(w) <= 0):
            raise ValueError("frequencies must be strictly increasing")
        object.__setattr__(self, "frequencies", w)

    @classmethod
    def from_params(cls, p: FrequencyParams) -> "ExpSum1D":
        return cls(p.shifted_omega(np.arange(p.q)))

    @property
    def q(self) -> int:
        return len(self.frequencies)

    @property
    def normalization(self) -> float:
        return 1.0 / np.sqrt(self.q)

    @property
    def spread(self) -> float:
        return float(self.frequencies[-1] - self.frequencies[0])

    def max_step(self) -> float:
        """Largest grid step passing the Nyquist guard (inf for q = 1)."""
        return np.inf if self.spread == 0 else 1.0 / (4.0 * self.spread)


@dataclass(frozen=True)
class ExpSum2D:
    xFrequencies: np.ndarray
    yFrequencies: np.ndarray
    frame: np.ndarray = None

    def __post_init__(self):
        object.__setattr__(self, "xFrequencies", ExpSum1D(self.xFrequencies).frequencies)
        object.__setattr__(self, "yFrequencies", ExpSum1D(self.yFrequencies).frequencies)
        frame = np.eye(2) if self.frame is None else self.frame
        frame = _frozen(frame)
        if frame.shape != (2, 2):
            raise ValueError("frame must be 2x2")
        d = np.linalg.det(frame)
        if not (np.isfinite(d) and d != 0):
            raise ValueError("frame must be invertible")
        object.__setattr__(self, "frame", frame)

    @classmethod
    def tensor(cls, p: FrequencyParams, frame=None) -> "ExpSum2D":
        w = p.shifted_omega(np.arange(p.q))
        return cls(w, w, frame)

    @property
    def x(self) -> ExpSum1D:
        return ExpSum1D(self.xFrequencies)

    @property
    def y(self) -> ExpSum1D:
        return ExpSum1D(self.yFrequencies)

    @property
    def is_identity(self) -> bool:
        return bool(np.array_equal(self.frame, np.eye(2)))


@dataclass(frozen=True)
class SampledDensity:
    """Uniform grid samples; 1D when ``values.ndim == 1``, 2D otherwise."""

    origin: object
    step: object
    values: np.ndarray

    def __post_init__(self):
        v = _frozen(self.values)
        if not np.all(np.isfinite(v)):
            raise ValueError("density values must be finite")
        if np.any(v < 0):
            raise ValueError("density values must be nonnegative")
        object.__setattr__(self, "values", v)
        if v.ndim == 1:
            object.__setattr__(self, "origin", float(self.origin))
            object.__setattr__(self, "step", float(self.step))
            steps = (self.step,)
        else:
            o = np.broadcast_to(np.asarray(self.origin, float), (2,))
            s = np.broadcast_to(np.asarray(self.step, float), (2,))
            object.__setattr__(self, "origin", (float(o[0]), float(o[1])))
            object.__setattr__(self, "step", (float(s[0]), float(s[1])))
            steps = self.step
        if not all(st > 0 for st in steps):
            raise ValueError("grid step must be positive")

    @property
    def ndim(self) -> int:
        return self.values.ndim

    def taus(self, axis: int = 0) -> np.ndarray:
        n = self.values.shape[axis]
        if self.ndim == 1:
            return self.origin + np.arange(n) * self.step
        return self.origin[axis] + np.arange(n) * self.step[axis]

    def same_grid(self, other: "SampledDensity") -> bool:
        return (
            self.values.shape == other.values.shape
            and self.origin == other.origin
            and self.step == other.step
        )

    def replace_values(self, values) -> "SampledDensity":
        return SampledDensity(self.origin, self.step, values)

    def cell_area(self) -> float:
        return self.step if self.ndim == 1 else self.step[0] * self.step[1]

    def integral(self) -> float:
        """Riemann sum of the samples, read as cell midpoints."""
        return float(np.sum(self.values) * self.cell_area())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            if self.ndim == 1:
                w.writerow(["tau", "value"])
                for t, v in zip(self.taus(), self.values):
                    w.writerow([repr(float(t)), repr(float(v))])
            else:
                w.writerow(["tau", "tau2", "value"])
                t1 = self.taus(0)
                t2 = self.taus(1)
                for i in range(len(t1)):
                    for j in range(len(t2)):
                        w.writerow([repr(float(t1[i])), repr(float(t2[j])),
                                    repr(float(self.values[i, j]))])

    @classmethod
    def from_csv(cls, path) -> "SampledDensity":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        data = np.array([[float(x) for x in r] for r in body])
        if header == ["tau", "value"]:
            t = data[:, 0]
            step = (t[-1] - t[0]) / (len(t) - 1) if len(t) > 1 else 1.0
            return cls(t[0], step, data[:, 1])
        t1 = np.unique(data[:, 0])
        t2 = np.unique(data[:, 1])
        s1 = (t1[-1] - t1[0]) / (len(t1) - 1) if len(t1) > 1 else 1.0
        s2 = (t2[-1] - t2[0]) / (len(t2) - 1) if len(t2) > 1 else 1.0
        return cls((t1[0], t2[0]), (s1, s2), data[:, 2].reshape(len(t1), len(t2)))

    def to_pgm(self, path, log_scale: bool = False) -> dict:
        return write_pgm(self.values, path, log_scale=log_scale)


def write_pgm(values, path, log_scale: bool = False) -> dict:
    """16-bit big-endian P5 image of a 2D array plus a {"min", "max"} sidecar.

    Rows of the image run over the second axis (tau2) from top (largest) to
    bottom so that the picture has the usual orientation.  A constant array
    maps to mid-gray.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 2 or v.size == 0:
        raise ValueError("need a nonempty 2D array")
    if log_scale:
        pos = v[v > 0]
        floor = pos.min() if pos.size else 1.0
        v = np.log(np.maximum(v, floor))
    lo = float(v.min())
    hi = float(v.max())
    if hi > lo:
        g = np.rint((v - lo) / (hi - lo) * 65535.0)
    else:
        g = np.full(v.shape, 32768.0)
    img = g.T[::-1].astype(">u2")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n65535\n" % (img.shape[1], img.shape[0]))
        fh.write(img.tobytes())
    meta = {"min": lo, "max": hi, "log_scale": log_scale}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=2))
    return meta


def read_pgm(path) -> np.ndarray:
    """Inverse of write_pgm's pixel layout: returns the (nx, ny) gray levels."""
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    width, height = int(parts[1]), int(parts[2])
    data = np.frombuffer(parts[4][: 2 * width * height], dtype=">u2")
    return data.reshape(height, width)[::-1].T.astype(np.int64)


def eval_point(s: ExpSum1D, tau: float) -> complex:
    sr, si = _kernels.point_sum(s.frequencies, float(tau))
    return complex(sr, si) * s.normalization


def eval_points(s: ExpSum1D, taus) -> np.ndarray:
    taus = np.ascontiguousarray(taus, dtype=float)
    re, im = _kernels.point_sums(s.frequencies, taus)
    return (re + 1j * im) * s.normalization


def _check_step(step: float, spread: float, override: bool, label: str = "") -> None:
    if not step > 0:
        raise ValueError("grid step must be positive")
    if override or spread == 0:
        return
    limit = 1.0 / (4.0 * spread)
    if step > limit:
        raise NyquistViolation(
            f"step {step:.6g}{label} exceeds 1/(4*spread) = {limit:.6g}"
        )


def eval_grid(s: ExpSum1D, origin: float, step: float, count: int,
              override: bool = False) -> SampledDensity:
    """|P|^2 at origin + k*step for k < count."""
    _check_step(step, s.spread, override)
    if count < 0:
        raise ValueError("count must be nonnegative")
    if s.q == 1:
        # a single unimodular term; skip the cos^2 + sin^2 rounding
        return SampledDensity(origin, step, np.ones(count))
    vals = _kernels.grid_abs2(s.frequencies, float(origin), float(step), int(count))
    return SampledDensity(origin, step, vals)


def eval_grid_2d(s: ExpSum2D, origin, step, countX: int, countY: int,
                 override: bool = False) -> SampledDensity:
    """|P_X(u1)|^2 |P_Y(u2)|^2 with u = frame^T tau on a rectangular grid."""
    ox, oy = np.broadcast_to(np.asarray(origin, float), (2,))
    sx, sy = np.broadcast_to(np.asarray(step, float), (2,))
    F = s.frame
    if s.is_identity:
        gx = eval_grid(s.x, ox, sx, countX, override).values
        gy = eval_grid(s.y, oy, sy, countY, override).values
        return SampledDensity((ox, oy), (sx, sy), np.outer(gx, gy))
    # per output axis, the fastest phase change along a grid direction
    sx_eff = max(abs(F[0, 0]) * sx, abs(F[1, 0]) * sy)
    sy_eff = max(abs(F[0, 1]) * sx, abs(F[1, 1]) * sy)
    _check_step(sx_eff, s.x.spread, override, " (x factor after frame)")
    _check_step(sy_eff, s.y.spread, override, " (y factor after frame)")
    vals = _kernels.grid_abs2_2d(
        s.xFrequencies, s.yFrequencies, np.ascontiguousarray(F),
        ox, oy, sx, sy, int(countX), int(countY),
    )
    return SampledDensity((ox, oy), (sx, sy), vals)
