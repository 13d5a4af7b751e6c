"""Planar layer: rotated frames, bad strips, 2D Riesz accumulation and rendering.

Every 2D sum is evaluated at u = Psi^T tau, and a strip set is the set of tau
with Psi^T tau in the cross F = ([-b,b] x [-a,a]) U ([-a,a] x [-b,b]).  For
the frames used here Psi is a rotation times a scale, so the strips point
along the angle theta = sum arctan xi_k and its perpendicular.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from shapely.geometry import Polygon, box
from shapely.affinity import affine_transform

from .construction import TowerSchedule, derive_planar_frames
from .expsum import ExpSum2D, SampledDensity, eval_grid, eval_grid_2d, write_pgm
from .flatness import integrate_abs, measure_near_zero
from .riesz import GridMismatch, stage_diagnostics


@dataclass(frozen=True)
class StripSet:
    a: float
    b: float
    frame: np.ndarray = None

    def __post_init__(self):
        if not 0 < self.a < self.b:
            raise ValueError(f"strip needs 0 < a < b, got a={self.a}, b={self.b}")
        F = np.eye(2) if self.frame is None else np.array(self.frame, dtype=float)
        if F.shape != (2, 2) or np.linalg.det(F) == 0:
            raise ValueError("frame must be an invertible 2x2 matrix")
        F.setflags(write=False)
        object.__setattr__(self, "frame", F)

    @property
    def angle(self) -> float:
        """Direction of the first arm in tau coordinates."""
        # Psi^T tau on the u1 axis means tau along the first column of Psi^-T
        v = np.linalg.solve(self.frame.T, [1.0, 0.0])
        return math.atan2(v[1], v[0])

    def contains(self, t1, t2) -> np.ndarray:
        F = self.frame
        u1 = F[0, 0] * t1 + F[1, 0] * t2
        u2 = F[0, 1] * t1 + F[1, 1] * t2
        au1 = np.abs(u1)
        au2 = np.abs(u2)
        return ((au1 <= self.b) & (au2 <= self.a)) | ((au1 <= self.a) & (au2 <= self.b))

    def arms(self) -> list[Polygon]:
        """The two rectangles of the cross, mapped to tau coordinates."""
        M = np.linalg.inv(self.frame.T)
        coeffs = [M[0, 0], M[0, 1], M[1, 0], M[1, 1], 0.0, 0.0]
        rects = [box(-self.b, -self.a, self.b, self.a), box(-self.a, -self.b, self.a, self.b)]
        return [affine_transform(r, coeffs) for r in rects]


def _parallel_mod_right_angle(s1: StripSet, s2: StripSet, tol: float = 1e-12) -> bool:
    d = (s1.angle - s2.angle) % (math.pi / 2)
    return min(d, math.pi / 2 - d) < tol


def _radius(geom) -> float:
    if geom.is_empty:
        return 0.0
    pts = []
    for g in getattr(geom, "geoms", [geom]):
        if hasattr(g, "exterior"):
            pts.append(np.asarray(g.exterior.coords))
        else:
            pts.append(np.asarray(g.coords))
    pts = np.concatenate(pts)
    return float(np.max(np.hypot(pts[:, 0], pts[:, 1])))


def polygon_intersection_radius(p1: Polygon, p2: Polygon) -> float:
    """Radius about 0 of the smallest centred disc containing p1 ∩ p2."""
    return _radius(p1.intersection(p2))


def arm_pair_radius(a1: float, angle1: float, a2: float, angle2: float,
                    length: float = 1e6) -> float:
    """Radius of the intersection of two long strips through 0 of half-widths a1, a2."""
    strips = []
    for a, th in ((a1, angle1), (a2, angle2)):
        c, s = math.cos(th), math.sin(th)
        r = box(-length, -a, length, a)
        strips.append(affine_transform(r, [c, -s, s, c, 0.0, 0.0]))
    return polygon_intersection_radius(*strips)


def strip_intersection_radius(s1: StripSet, s2: StripSet) -> float:
    """Circumscribed radius about 0 of the intersection of two strip crosses.

    Frames whose strips are parallel modulo a right angle give +inf.
    """
    if _parallel_mod_right_angle(s1, s2):
        return math.inf
    r = 0.0
    for p in s1.arms():
        for q in s2.arms():
            r = max(r, polygon_intersection_radius(p, q))
    return r


def radius_bound(s1: StripSet, s2: StripSet, C: float = 3.0) -> float:
    """C (a_1 + a_2) / sin(phi) with phi the angle between the frames."""
    phi = abs(s1.angle - s2.angle) % (math.pi / 2)
    phi = min(phi, math.pi / 2 - phi)
    s = math.sin(phi)
    return math.inf if s == 0 else C * (s1.a + s2.a) / s


def default_strip_params(n_stages: int, a0: float = 0.25, b0: float = 1.0):
    """a_n = a0 4^-n and b_n = b0 2^n for n = 1..n_stages."""
    n = np.arange(1, n_stages + 1, dtype=float)
    return a0 * 4.0**-n, b0 * 2.0**n


def limit_angle(xis, xi_tail_angle: float = 0.0) -> float:
    return float(np.sum(np.arctan(np.asarray(xis, float)))) + xi_tail_angle


@dataclass
class CollapseReport:
    ratios: list
    decreasing: bool
    belowThreshold: bool
    flagged: bool
    tailRadii: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def validate_collapse_condition(schedule, windows, threshold: float = 0.5,
                                xi_tail: float = 0.0) -> CollapseReport:
    """Ratios a_n / sum_{k>=n} xi_k and the strip-intersection radii per tail.

    ``schedule`` is a TowerSchedule or a plain sequence of xi_n; ``windows``
    supply a_n (inner radius) and b_n (outer radius).  ``xi_tail`` is the sum
    of the xi beyond the listed ones.  The schedule is flagged unless the
    ratios strictly decrease and end below ``threshold``.
    """
    xis = np.asarray(schedule.xis if isinstance(schedule, TowerSchedule) else schedule, float)
    if len(windows) != len(xis):
        raise ValueError(f"{len(windows)} windows for {len(xis)} stages")
    a = np.array([w.a for w in windows])
    b = np.array([w.b for w in windows])
    tails = np.cumsum(xis[::-1])[::-1] + xi_tail
    with np.errstate(divide="ignore"):
        ratios = np.where(tails > 0, a / tails, np.inf)
    dec = bool(np.all(np.diff(ratios) < 0))
    below = bool(ratios[-1] < threshold)
    psis = derive_planar_frames(xis).psis
    strips = [StripSet(a[i], b[i], psis[i]) for i in range(len(xis))]
    radii = []
    for n in range(len(strips)):
        rs = [strip_intersection_radius(strips[n], strips[m]) for m in range(n + 1, len(strips))]
        radii.append(max(rs) if rs else 0.0)
    return CollapseReport(ratios.tolist(), dec, below, not (dec and below), radii)


# -- 2D accumulation ---------------------------------------------------------

@dataclass(frozen=True)
class PlanarRieszState:
    """2D partial product; kept as an outer product of two factors while every
    stage so far had the identity frame."""

    origin: tuple
    step: tuple
    shape: tuple
    factors: tuple = None
    values: np.ndarray = None
    stageStrips: tuple = ()
    stages: tuple = ()

    @property
    def factorized(self) -> bool:
        return self.factors is not None

    @property
    def grid(self) -> SampledDensity:
        v = np.outer(*self.factors) if self.factorized else self.values
        return SampledDensity(self.origin, self.step, v)

    def taus(self, axis: int) -> np.ndarray:
        return self.origin[axis] + np.arange(self.shape[axis]) * self.step[axis]

    def mesh(self):
        return np.meshgrid(self.taus(0), self.taus(1), indexing="ij")


def new_planar_state(B: float, count: int, seed="indicator", h: float = 1.0) -> PlanarRieszState:
    """Square grid of count x count cell midpoints on [-B, B]^2.

    The seed is the tensor square of the 1D seed profile.
    """
    step = 2.0 * B / count
    origin = -B + 0.5 * step
    t = origin + np.arange(count) * step
    if seed == "indicator":
        s = h * np.sinc(h * t) ** 2
    elif seed == "constant":
        s = np.ones(count)
    elif callable(seed):
        s = np.asarray(seed(t), float)
    else:
        raise ValueError(f"unknown seed {seed!r}")
    return PlanarRieszState((origin, origin), (step, step), (count, count), (s, s.copy()))


def accumulate_2d(state: PlanarRieszState, stage: ExpSum2D, strip: StripSet | None = None,
                  override: bool = False) -> PlanarRieszState:
    """Multiply by |P(Psi^T tau)|^2 of the stage and record its strip set."""
    nx, ny = state.shape
    if stage.is_identity and state.factorized:
        qx = eval_grid(stage.x, state.origin[0], state.step[0], nx, override).values
        qy = eval_grid(stage.y, state.origin[1], state.step[1], ny, override).values
        factors = (state.factors[0] * qx, state.factors[1] * qy)
        q = np.outer(qx, qy)
        values = None
    else:
        qd = eval_grid_2d(stage, state.origin, state.step, nx, ny, override)
        q = qd.values
        if q.shape != state.shape:
            raise GridMismatch("stage grid does not match the state")
        base = np.outer(*state.factors) if state.factorized else state.values
        factors = None
        values = base * q
    cell = state.step[0] * state.step[1]
    Mn = max(1.0, float(q.max()))
    if strip is not None:
        t1, t2 = state.mesh()
        free = ~strip.contains(t1, t2)
        eps = cell * float(np.sum(np.abs(q[free] - 1.0)))
    else:
        eps = cell * float(np.sum(np.abs(q - 1.0)))
    prev = state.stages[-1].prodM if state.stages else 1.0
    diag = stage_diagnostics(Mn, eps, prev)
    strips = state.stageStrips + ((strip,) if strip is not None else ())
    return PlanarRieszState(state.origin, state.step, state.shape, factors, values,
                            strips, state.stages + (diag,))


def run_planar(schedule: TowerSchedule, B: float, count: int, a0: float = 0.25,
               b0: float = 1.0, seed="indicator", stages: int | None = None,
               override: bool = False) -> list[PlanarRieszState]:
    """States after each stage of a planar schedule (the seed state first)."""
    n = len(schedule) if stages is None else stages
    frames = derive_planar_frames(schedule.xis)
    a, b = default_strip_params(n, a0, b0)
    st = new_planar_state(B, count, seed, schedule.heights[0])
    out = [st]
    for k in range(n):
        w = schedule.geometries[k].positions
        psi = frames.psis[k]
        stage = ExpSum2D(w, w, psi)
        st = accumulate_2d(st, stage, StripSet(a[k], b[k], psi), override)
        out.append(st)
    return out


# -- regions -------------------------------------------------------------------

def _line_distance(t1, t2, theta):
    return np.abs(-math.sin(theta) * t1 + math.cos(theta) * t2)


@dataclass
class RegionMap:
    labels: np.ndarray
    masses: dict
    limitAngle: float

    def table(self) -> list[tuple[str, float]]:
        return [(k, self.masses[k]) for k in ("a", "b", "c")]


def classify_regions(state: PlanarRieszState, line_width: float | None = None,
                     xi_tail_angle: float = 0.0) -> RegionMap:
    """Label cells (a) in two or more stage strips, (b) near a limit line,
    (c) elsewhere; masses are bincounts of the accumulated density.

    The limit lines cross at 0 along the limit angle of the frames and its
    perpendicular.  ``line_width`` defaults to the thinnest strip half-width.
    """
    if len(state.stageStrips) < 2:
        raise ValueError("classification needs at least two stages with strips")
    t1, t2 = state.mesh()
    count = np.zeros(state.shape, dtype=np.int64)
    for s in state.stageStrips:
        count += s.contains(t1, t2)
    theta = state.stageStrips[-1].angle + xi_tail_angle
    w = min(s.a for s in state.stageStrips) if line_width is None else line_width
    near = (_line_distance(t1, t2, theta) < w) | (_line_distance(t1, t2, theta + math.pi / 2) < w)
    labels = np.full(state.shape, 2, dtype=np.int64)
    labels[near] = 1
    labels[count >= 2] = 0
    cell = state.step[0] * state.step[1]
    m = np.bincount(labels.ravel(), weights=state.grid.values.ravel(), minlength=3) * cell
    return RegionMap(labels, {"a": float(m[0]), "b": float(m[1]), "c": float(m[2])}, theta)


def axis_strip_mass_ratio(state: PlanarRieszState, half_width: float) -> float:
    """Share of grid mass within ``half_width`` of the coordinate axes."""
    t1, t2 = state.mesh()
    v = state.grid.values
    near = (np.abs(t1) < half_width) | (np.abs(t2) < half_width)
    return float(np.sum(v[near]) / np.sum(v))


def strip_mass_bound(stage: ExpSum2D, strip: StripSet, length: float | None = None,
                     eps_quadrature: float = 1e-6) -> float:
    """Integral of |P(Psi^T tau)| over the strip cross (arms cut at ``length``).

    In u = Psi^T tau coordinates the integrand factorizes, the thin direction
    is handled by measure_near_zero, and the centre square counted by both
    arms is subtracted once.  The Jacobian is 1/|det Psi|.
    """
    L = strip.b if length is None else min(length, strip.b)
    if not strip.a < L:
        raise ValueError("strip length must exceed its thickness")
    x, y = stage.x, stage.y
    x_long = 2.0 * integrate_abs(x, 0.0, L, eps_quadrature)[0]
    y_long = 2.0 * integrate_abs(y, 0.0, L, eps_quadrature)[0]
    x_thin = measure_near_zero(x, strip.a, eps_quadrature)
    y_thin = measure_near_zero(y, strip.a, eps_quadrature)
    total = x_long * y_thin + x_thin * y_long - x_thin * y_thin
    return total / abs(np.linalg.det(strip.frame))


def render_density(state: PlanarRieszState, path) -> dict:
    """16-bit P5 image of the log density plus a {"min", "max"} sidecar."""
    return write_pgm(state.grid.values, path, log_scale=True)
