"""Windows and flatness defects of exponential sums by midpoint quadrature."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import _kernels
from .expsum import ExpSum1D, ExpSum2D, eval_grid

# fewest midpoint cells per interval, whatever the Nyquist step allows
MIN_CELLS = 64
MAX_REFINEMENTS = 4


class QuadratureNotConverged(RuntimeError):
    pass


@dataclass(frozen=True)
class Window:
    """The symmetric set (-b, -a) U (a, b)."""

    a: float
    b: float

    def __post_init__(self):
        if not (0 < self.a < self.b and math.isfinite(self.b)):
            raise ValueError(f"window needs 0 < a < b, got a={self.a}, b={self.b}")

    @property
    def measure(self) -> float:
        return 2.0 * (self.b - self.a)

    def contains(self, tau) -> np.ndarray:
        t = np.abs(np.asarray(tau, dtype=float))
        return (t > self.a) & (t < self.b)


@dataclass(frozen=True)
class FlatnessReport:
    l1Defect: float
    l1SquareDefect: float
    l2Defect: float
    supBound: float
    gridStep: float
    refinementError: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "FlatnessReport":
        return cls(**{k: float(d[k]) for k in cls.__dataclass_fields__})


def _cells(lo: float, hi: float, max_step: float, step: float | None) -> int:
    if step is None:
        n = max(MIN_CELLS, math.ceil((hi - lo) / max_step))
    else:
        n = max(1, math.ceil((hi - lo) / step))
    return n


def _defects(abs2: np.ndarray, cell: float, scale: float) -> np.ndarray:
    """[l1, l1 of squares, l2, sup] from |P|^2 samples on midpoint cells."""
    mod = np.sqrt(abs2)
    l1 = scale * cell * np.sum(np.abs(mod - 1.0))
    l1sq = scale * cell * np.sum(np.abs(abs2 - 1.0))
    l2 = math.sqrt(scale * cell * np.sum((mod - 1.0) ** 2))
    sup = float(mod.max()) if mod.size else 0.0
    return np.array([l1, l1sq, l2, sup])


def _abs2_midpoints(s: ExpSum1D, lo: float, hi: float, n: int) -> np.ndarray:
    h = (hi - lo) / n
    return eval_grid(s, lo + 0.5 * h, h, n, override=True).values


def measure_flatness(s: ExpSum1D, g: Window, eps_quadrature: float = 1e-3,
                     step: float | None = None,
                     max_refinements: int = MAX_REFINEMENTS) -> FlatnessReport:
    """Defects of |P| on the window, positive half integrated and doubled.

    The midpoint rule is applied with ``n`` and ``2n`` cells; reported values
    come from the finer grid and ``refinementError`` is the largest change of
    l1Defect, l1SquareDefect and l2Defect between the two.  The cell count is
    doubled until that change is at most ``eps_quadrature``.
    """
    n = _cells(g.a, g.b, s.max_step(), step)
    coarse = _defects(_abs2_midpoints(s, g.a, g.b, n), (g.b - g.a) / n, 2.0)
    for _ in range(max_refinements + 1):
        fine = _defects(_abs2_midpoints(s, g.a, g.b, 2 * n), (g.b - g.a) / (2 * n), 2.0)
        err = float(np.max(np.abs(fine[:3] - coarse[:3])))
        if err <= eps_quadrature:
            return FlatnessReport(*map(float, fine), gridStep=(g.b - g.a) / (2 * n),
                                  refinementError=err)
        n *= 2
        coarse = fine
    raise QuadratureNotConverged(
        f"refinement error {err:.3g} > {eps_quadrature:.3g} at step {(g.b - g.a) / n:.3g}"
    )


def integrate_abs(s: ExpSum1D, lo: float, hi: float, eps_quadrature: float = 1e-6,
                  step: float | None = None,
                  max_refinements: int = MAX_REFINEMENTS) -> tuple[float, float]:
    """(integral of |P| over (lo, hi), refinement error) by the midpoint rule."""
    if not hi > lo:
        raise ValueError("need lo < hi")
    n = _cells(lo, hi, s.max_step(), step)
    prev = (hi - lo) / n * np.sum(np.sqrt(_abs2_midpoints(s, lo, hi, n)))
    for _ in range(max_refinements + 1):
        n *= 2
        cur = (hi - lo) / n * np.sum(np.sqrt(_abs2_midpoints(s, lo, hi, n)))
        err = abs(cur - prev)
        if err <= eps_quadrature * max(1.0, abs(cur)):
            return float(cur), float(err)
        prev = cur
    raise QuadratureNotConverged(f"|P| integral over ({lo}, {hi}) moved by {err:.3g}")


def measure_near_zero(s: ExpSum1D, a: float, eps_quadrature: float = 1e-6,
                      step: float | None = None) -> float:
    """L1 norm of P on (-a, a), using |P(-t)| = |P(t)|."""
    if not 0 < a < 1:
        raise ValueError(f"a must lie in (0, 1), got {a}")
    return 2.0 * integrate_abs(s, 0.0, a, eps_quadrature, step)[0]


def _square_2d_values(s: ExpSum2D, g: Window, n: int, window_map) -> tuple:
    """|P|^2 on midpoint grids of the quadrants u1 > 0 (u2 of either sign).

    Points are u on the window grid, mapped to tau = A u; by P(-tau) =
    conj P(tau) the two remaining quadrants mirror these.
    """
    h = (g.b - g.a) / n
    if window_map is None and s.is_identity:
        x = eval_grid(s.x, g.a + 0.5 * h, h, n, override=True).values
        y = eval_grid(s.y, g.a + 0.5 * h, h, n, override=True).values
        # |P_Y| is even, so the lower quadrant repeats the upper one
        q = np.outer(x, y)
        return (q, q), h * h
    A = np.eye(2) if window_map is None else np.asarray(window_map, float)
    F = np.ascontiguousarray(A.T @ s.frame)
    out = []
    for sign in (1.0, -1.0):
        vals = _kernels.grid_abs2_2d(
            s.xFrequencies, s.yFrequencies, F,
            g.a + 0.5 * h, sign * (g.a + 0.5 * h), h, sign * h, n, n,
        )
        out.append(vals)
    return tuple(out), h * h * abs(np.linalg.det(A))


def measure_flatness_2d(s: ExpSum2D, g: Window, eps_quadrature: float = 1e-3,
                        step: float | None = None, window_map=None,
                        max_refinements: int = MAX_REFINEMENTS) -> FlatnessReport:
    """Defects over the four-rectangle window G x G, or its image A(G x G).

    With ``window_map`` A the integration runs over tau = A u for u in G x G,
    with the Jacobian |det A|.
    """
    if step is None:
        F = s.frame if window_map is None else np.asarray(window_map, float).T @ s.frame
        lim = min(
            s.x.max_step() / max(abs(F[0, 0]), abs(F[1, 0])),
            s.y.max_step() / max(abs(F[0, 1]), abs(F[1, 1])),
        )
        n = _cells(g.a, g.b, lim, None)
    else:
        n = _cells(g.a, g.b, np.inf, step)

    def level(n):
        (upper, lower), area = _square_2d_values(s, g, n, window_map)
        d_up = _defects(upper, area, 2.0)
        d_lo = _defects(lower, area, 2.0)
        out = d_up + d_lo
        out[2] = math.sqrt(d_up[2] ** 2 + d_lo[2] ** 2)
        out[3] = max(d_up[3], d_lo[3])
        return out

    coarse = level(n)
    for _ in range(max_refinements + 1):
        fine = level(2 * n)
        err = float(np.max(np.abs(fine[:3] - coarse[:3])))
        if err <= eps_quadrature:
            return FlatnessReport(*map(float, fine), gridStep=(g.b - g.a) / (2 * n),
                                  refinementError=err)
        n *= 2
        coarse = fine
    raise QuadratureNotConverged(f"2D refinement error {err:.3g} > {eps_quadrature:.3g}")
