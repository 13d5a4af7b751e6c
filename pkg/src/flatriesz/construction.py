"""Stage-by-stage schedule of the rank-one cutting-and-stacking construction.

A stage is described by ``FrequencyParams`` (m, beta, q).  The copy positions
of the level-n tower inside the level-(n+1) tower are the exponential
frequencies ``omega(y) = m q / beta**2 * exp(beta y / q)`` shifted so that the
first copy sits at 0.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# default upper bound for beta; 1/beta must be a positive integer
BETA0 = 1.0
# default cap on sum(log(hNext / (q h))) for a schedule to count as convergent
LOG_RATIO_BOUND = 10.0


class ScheduleError(ValueError):
    """Inconsistent or invalid construction parameters."""


class DivergentSchedule(ScheduleError):
    """The correctness product prod hNext/(q h) exceeds the configured bound."""


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FrequencyParams:
    m: float
    beta: float
    q: int

    def __post_init__(self):
        if not (self.m > 0 and math.isfinite(self.m)):
            raise ScheduleError(f"m must be a positive real, got {self.m!r}")
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise ScheduleError(f"beta must be a positive real, got {self.beta!r}")
        if isinstance(self.q, bool) or int(self.q) != self.q or self.q < 1:
            raise ScheduleError(f"q must be an integer >= 1, got {self.q!r}")
        object.__setattr__(self, "q", int(self.q))
        inv = round(1.0 / self.beta)
        if inv < 1 or 1.0 / inv != self.beta:
            raise ScheduleError(f"1/beta must be a positive integer, got beta={self.beta!r}")

    @property
    def inverse_beta(self) -> int:
        return round(1.0 / self.beta)

    def check_beta(self, beta0: float = BETA0) -> None:
        if self.beta > beta0:
            raise ScheduleError(f"beta={self.beta} exceeds beta0={beta0}")

    def omega(self, y) -> np.ndarray:
        """Unshifted frequencies m q/beta^2 exp(beta y/q)."""
        y = np.asarray(y, dtype=float)
        return self.m * self.q / self.beta**2 * np.exp(self.beta * y / self.q)

    def shifted_omega(self, y) -> np.ndarray:
        """omega(y) - omega(0), evaluated with expm1 to avoid cancellation."""
        y = np.asarray(y, dtype=float)
        return self.m * self.q / self.beta**2 * np.expm1(self.beta * y / self.q)

    def to_dict(self) -> dict:
        return {"m": self.m, "beta": self.beta, "q": self.q}


@dataclass(frozen=True)
class StageGeometry:
    h: float
    positions: np.ndarray
    spacers: np.ndarray
    hNext: float

    def __post_init__(self):
        object.__setattr__(self, "positions", _frozen(self.positions))
        object.__setattr__(self, "spacers", _frozen(self.spacers))

    @property
    def q(self) -> int:
        return len(self.positions)

    @property
    def ratio(self) -> float:
        """hNext / (q h), the per-stage factor of the correctness product."""
        return self.hNext / (self.q * self.h)


def derive_stage_geometry(p: FrequencyParams, h: float | None = None) -> StageGeometry:
    """Tower height, copy positions and spacers of one stage.

    ``h`` defaults to the smallest gap omega(1) - omega(0), so the first spacer
    is zero.  Passing ``h`` (the height inherited from the previous stage)
    requires it not to exceed the smallest gap, otherwise copies overlap.
    """
    positions = p.shifted_omega(np.arange(p.q))
    if p.q > 1 and not np.all(np.diff(positions) > 0):
        raise ScheduleError(f"frequencies lose monotonicity in floating point for {p}")
    gaps = np.diff(positions)
    if h is None:
        # a single copy has no gap; use the m/beta (e^beta - 1) convention
        h = float(positions[1]) if p.q > 1 else p.m / p.beta * math.expm1(p.beta)
    elif not h > 0:
        raise ScheduleError(f"tower height must be positive, got {h!r}")
    spacers = gaps - h
    if p.q > 1 and positions[1] == h:
        spacers[0] = 0.0
    if np.any(spacers < 0):
        raise ScheduleError(
            f"tower height {h} exceeds the smallest gap {gaps.min()}: copies overlap"
        )
    hNext = float(positions[-1]) + h
    return StageGeometry(h=float(h), positions=positions, spacers=spacers, hNext=hNext)


def gammas_from_ratios(ratios) -> np.ndarray:
    """gamma_n for tower levels 0..len(ratios), with tail factor 1.

    1 - gamma_n = prod_{k >= n} 1/ratio_k, so that
    (1 - gamma_{n+1}) / (1 - gamma_n) = ratio_n and the top level has gamma 0.
    """
    ratios = np.asarray(ratios, dtype=float)
    one_minus = np.ones(len(ratios) + 1)
    for k in range(len(ratios) - 1, -1, -1):
        one_minus[k] = one_minus[k + 1] / ratios[k]
    return 1.0 - one_minus


@dataclass(frozen=True)
class TowerSchedule:
    """Chained stages: stage n+1 inherits the height hNext of stage n."""

    params: tuple
    geometries: tuple
    xis: np.ndarray = field(default=None)
    depth: int | None = None
    log_bound: float = LOG_RATIO_BOUND

    def __post_init__(self):
        if len(self.params) != len(self.geometries):
            raise ScheduleError("params and geometries differ in length")
        xis = np.zeros(len(self.params)) if self.xis is None else np.asarray(self.xis, float)
        if len(xis) != len(self.params):
            raise ScheduleError(f"expected {len(self.params)} xis, got {len(xis)}")
        if np.any(xis < 0):
            raise ScheduleError("xis must be nonnegative")
        object.__setattr__(self, "xis", _frozen(xis))
        if self.log_sum() > self.log_bound:
            raise DivergentSchedule(
                f"sum log(hNext/(q h)) = {self.log_sum():.6g} exceeds bound {self.log_bound}"
            )

    @classmethod
    def from_params(cls, params, xis=None, depth=None, log_bound=LOG_RATIO_BOUND):
        params = tuple(params)
        geoms = []
        h = None
        for p in params:
            g = derive_stage_geometry(p, h)
            geoms.append(g)
            h = g.hNext
        return cls(tuple(params), tuple(geoms), xis, depth, log_bound)

    def __len__(self):
        return len(self.params)

    @property
    def stages(self):
        return list(zip(self.params, self.geometries))

    @property
    def heights(self) -> np.ndarray:
        """Tower heights of levels 0..len(self); the last is hNext of the last stage."""
        hs = [g.h for g in self.geometries] + [self.geometries[-1].hNext]
        return np.array(hs)

    @property
    def ratios(self) -> np.ndarray:
        return np.array([g.ratio for g in self.geometries])

    def log_sum(self) -> float:
        return float(np.sum(np.log(self.ratios))) if len(self) else 0.0

    @property
    def gammas(self) -> np.ndarray:
        return derive_gammas(self, len(self))

    @property
    def psis(self) -> tuple:
        return derive_planar_frames(self.xis).psis

    def to_json(self) -> str:
        doc = {
            "stages": [p.to_dict() for p in self.params],
            "xis": [float(x) for x in self.xis],
            "depth": self.depth if self.depth is not None else len(self),
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str, log_bound=LOG_RATIO_BOUND) -> "TowerSchedule":
        doc = json.loads(text)
        unknown = set(doc) - {"stages", "xis", "depth"}
        if unknown:
            raise ScheduleError(f"unknown schedule keys: {sorted(unknown)}")
        params = []
        for i, st in enumerate(doc["stages"]):
            extra = set(st) - {"m", "beta", "q"}
            if extra:
                raise ScheduleError(f"stage {i}: unknown keys {sorted(extra)}")
            params.append(FrequencyParams(float(st["m"]), float(st["beta"]), st["q"]))
        xis = doc.get("xis") or None
        return cls.from_params(params, xis, doc.get("depth"), log_bound)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "TowerSchedule":
        return cls.from_json(Path(path).read_text())


def chained_params(m1: float, betas, qs) -> list[FrequencyParams]:
    """Stage parameters whose smallest gap equals the inherited tower height.

    m_{n+1} is solved from m q/beta^2 * expm1(beta/q) = hNext_n, which keeps
    every first spacer at zero (up to rounding).
    """
    betas = list(betas)
    qs = list(qs)
    if len(betas) != len(qs):
        raise ScheduleError("betas and qs differ in length")
    params = [FrequencyParams(m1, betas[0], qs[0])]
    h = derive_stage_geometry(params[0]).hNext
    for beta, q in zip(betas[1:], qs[1:]):
        gap_per_m = q / beta**2 * math.expm1(beta / q)
        m = h / gap_per_m
        # nudge up until the smallest gap is not below h after rounding
        while FrequencyParams(m, beta, q).shifted_omega(1.0) < h:
            m = math.nextafter(m, math.inf)
        p = FrequencyParams(m, beta, q)
        params.append(p)
        h = derive_stage_geometry(p, h).hNext
    return params


def derive_gammas(schedule: TowerSchedule, depth: int | None = None) -> np.ndarray:
    """gamma_n for levels 0..depth from the stage ratios, tail factor 1."""
    depth = len(schedule) if depth is None else depth
    if depth > len(schedule) or depth < 0:
        raise ScheduleError(f"depth {depth} outside 0..{len(schedule)}")
    ratios = schedule.ratios[:depth]
    total = float(np.sum(np.log(ratios))) if depth else 0.0
    if total > schedule.log_bound:
        raise DivergentSchedule(f"log-sum {total:.6g} exceeds bound {schedule.log_bound}")
    return gammas_from_ratios(ratios)


def truncation_bound(schedule: TowerSchedule, depth: int) -> float:
    """sum_{k >= depth} log ratio_k: the log error of replacing the tail by 1."""
    r = schedule.ratios[depth:]
    return float(np.sum(np.log(r))) if len(r) else 0.0


@dataclass(frozen=True)
class PlanarFrames:
    psis: tuple
    ells: np.ndarray
    angles: np.ndarray

    def angle_between(self, n: int, m: int) -> float:
        """Rotation angle between frames n and m (indices into psis)."""
        return abs(float(self.angles[m] - self.angles[n]))


def rotation_step(xi: float) -> np.ndarray:
    return np.array([[1.0, -xi], [xi, 1.0]])


def derive_planar_frames(xis, schedule: TowerSchedule | None = None) -> PlanarFrames:
    """Frames Psi_1 = I, Psi_{n+1} = V_n Psi_n with V_n = [[1, -xi], [xi, 1]].

    ``angles[n]`` is the cumulative rotation sum_{k<n} arctan xi_k of frame n.
    ``ells`` holds q_n h_n e^{beta_n} per stage when a schedule is given.
    """
    xis = np.asarray(xis, dtype=float)
    if xis.ndim != 1:
        raise ScheduleError("xis must be a flat sequence")
    if np.any(xis < 0):
        raise ScheduleError("xis must be nonnegative")
    psi = np.eye(2)
    psis = [psi]
    for xi in xis:
        psi = rotation_step(xi) @ psi
        psis.append(psi)
    angles = np.concatenate([[0.0], np.cumsum(np.arctan(xis))])
    ells = np.array([])
    if schedule is not None:
        if len(schedule) != len(xis):
            raise ScheduleError(f"{len(xis)} xis for a {len(schedule)}-stage schedule")
        ells = np.array(
            [p.q * g.h * math.exp(p.beta) for p, g in schedule.stages]
        )
    return PlanarFrames(tuple(psis), ells, angles)
