"""Scan for flat stages and first-return times of the log-rotation on the torus."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .construction import FrequencyParams
from .expsum import ExpSum1D
from .flatness import FlatnessReport, Window, measure_flatness


class NoneFound(LookupError):
    """No q in the scanned range met the flatness target."""


@dataclass(frozen=True)
class SearchSpec:
    window: Window
    eps: float
    m: float
    beta: float
    qMin: int
    qMax: int
    qStride: int = 1

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        # q = 1 is admitted so the degenerate one-term sum can be scanned
        if self.qMin < 1 or self.qMax < self.qMin:
            raise ValueError(f"need 1 <= qMin <= qMax, got {self.qMin}, {self.qMax}")
        if self.qStride < 1:
            raise ValueError("qStride must be >= 1")
        FrequencyParams(self.m, self.beta, self.qMin)

    def candidates(self) -> range:
        return range(self.qMin, self.qMax + 1, self.qStride)


def stage_sum(m: float, beta: float, q: int) -> ExpSum1D:
    return ExpSum1D.from_params(FrequencyParams(m, beta, q))


def scan_flatness(spec: SearchSpec, eps_quadrature: float = 1e-3,
                  progress=None) -> list[tuple[int, FlatnessReport]]:
    """FlatnessReport for every candidate q, in scan order."""
    out = []
    for q in spec.candidates():
        rep = measure_flatness(stage_sum(spec.m, spec.beta, q), spec.window, eps_quadrature)
        out.append((q, rep))
        if progress is not None:
            progress(q, rep)
    return out


def find_flat_q(spec: SearchSpec, eps_quadrature: float = 1e-3,
                scanned=None) -> list[tuple[int, FlatnessReport]]:
    """All scanned q with l1Defect < eps, ascending; the first is the selection.

    ``scanned`` may hold the output of scan_flatness for the same spec, so one
    scan can be filtered at several eps values.
    """
    reports = scan_flatness(spec, eps_quadrature) if scanned is None else scanned
    hits = sorted((q, r) for q, r in reports if r.l1Defect < spec.eps)
    if not hits:
        best = min(reports, key=lambda qr: (qr[1].l1Defect, qr[0]))
        raise NoneFound(
            f"no q in [{spec.qMin}, {spec.qMax}] step {spec.qStride} has l1 defect "
            f"< {spec.eps}; best q={best[0]} with {best[1].l1Defect:.4f}"
        )
    return hits


def best_q(reports) -> tuple[int, FlatnessReport]:
    """Smallest defect, ties broken by the smaller q."""
    return min(reports, key=lambda qr: (qr[1].l1Defect, qr[0]))


@dataclass(frozen=True)
class TorusProbe:
    K: int
    eps: float
    tMax: float
    dt: float

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not 0 < self.eps < 0.5:
            raise ValueError("eps must lie in (0, 1/2)")
        if not (self.tMax > 0 and self.dt > 0):
            raise ValueError("tMax and dt must be positive")
        if not self.dt < self.eps:
            raise ValueError("dt must be smaller than eps")

    @property
    def v(self) -> np.ndarray:
        return np.log(np.arange(2, self.K + 2, dtype=float))


def torus_distance(t, v) -> np.ndarray:
    """Max-metric distance of t*v mod 1 from 0 on the torus."""
    y = np.multiply.outer(np.asarray(t, dtype=float), v)
    f = y - np.floor(y)
    return np.max(np.minimum(f, 1.0 - f), axis=-1)


def torus_return_time(probe: TorusProbe, chunk: int = 1 << 16) -> float | None:
    """First t = k*dt back inside the eps-ball after having left it, else None."""
    v = probe.v
    kmax = int(math.floor(probe.tMax / probe.dt))
    left = False
    k0 = 1
    while k0 <= kmax:
        k1 = min(kmax, k0 + chunk - 1)
        t = np.arange(k0, k1 + 1) * probe.dt
        inside = torus_distance(t, v) < probe.eps
        if not left:
            out = np.flatnonzero(~inside)
            if out.size == 0:
                k0 = k1 + 1
                continue
            left = True
            inside[: out[0]] = False
        hit = np.flatnonzero(inside)
        if hit.size:
            return float(t[hit[0]])
        k0 = k1 + 1
    return None
