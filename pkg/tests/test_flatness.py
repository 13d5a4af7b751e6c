import math

import numpy as np
import pytest
from hypothesis import example, given, settings, strategies as st

from flatriesz.construction import FrequencyParams
from flatriesz.expsum import ExpSum1D, ExpSum2D, eval_points
from flatriesz.flatness import (
    FlatnessReport,
    Window,
    integrate_abs,
    measure_flatness,
    measure_flatness_2d,
    measure_near_zero,
)


def test_window_validation_and_measure():
    with pytest.raises(ValueError):
        Window(0.0, 1.0)
    with pytest.raises(ValueError):
        Window(2.0, 1.0)
    g = Window(0.5, 2.0)
    assert g.measure == 3.0
    assert list(g.contains([-1.0, 0.1, 2.5, 0.75])) == [True, False, False, True]


def test_single_term_is_flat():
    r = measure_flatness(ExpSum1D([0.0]), Window(0.5, 2.0))
    assert r.l1Defect == r.l1SquareDefect == r.l2Defect == 0.0
    assert r.supBound == 1.0


def test_two_term_square_defect_closed_form():
    r = measure_flatness(ExpSum1D([0.0, 1.0]), Window(1.0, 2.0), eps_quadrature=1e-4)
    assert r.l1SquareDefect == pytest.approx(4 / math.pi, abs=2e-4)
    assert r.refinementError <= 1e-4


def test_report_roundtrip():
    r = measure_flatness(ExpSum1D([0.0, 1.0, 2.5]), Window(0.5, 2.0))
    assert FlatnessReport.from_dict(r.to_dict()) == r


def test_refined_quadrature_oracle():
    s = ExpSum1D.from_params(FrequencyParams(0.7, 1.0, 64))
    g = Window(0.5, 2.0)
    r = measure_flatness(s, g, 1e-3)
    fine = measure_flatness(s, g, 1e-3, step=r.gridStep / 4)
    assert abs(fine.l1Defect - r.l1Defect) <= max(r.refinementError, 1e-6)


def test_near_zero_single_term():
    assert measure_near_zero(ExpSum1D([2.0]), 0.3) == pytest.approx(0.6, rel=1e-14)


def test_integrate_abs_two_terms():
    # |1 + e^{2 pi i t}| / sqrt 2 = sqrt 2 |cos(pi t)|; over (0, 1/2) integral sqrt2/pi
    v, err = integrate_abs(ExpSum1D([0.0, 1.0]), 0.0, 0.5, 1e-7)
    assert v == pytest.approx(math.sqrt(2) / math.pi, abs=1e-6)
    assert err <= 1e-7


def test_2d_trivial_factors():
    r = measure_flatness_2d(ExpSum2D([0.0], [0.0]), Window(0.5, 1.0))
    assert r.l1Defect == 0.0 and r.l1SquareDefect == 0.0


def _direct_2d_square_defect(s, g, n):
    h = (g.b - g.a) / n
    u = np.concatenate([-(g.a + (np.arange(n) + 0.5) * h), g.a + (np.arange(n) + 0.5) * h])
    t1, t2 = np.meshgrid(u, u, indexing="ij")
    F = s.frame
    u1 = F[0, 0] * t1 + F[1, 0] * t2
    u2 = F[0, 1] * t1 + F[1, 1] * t2
    px = np.abs(eval_points(s.x, u1.ravel())) ** 2
    py = np.abs(eval_points(s.y, u2.ravel())) ** 2
    return h * h * float(np.sum(np.abs(px * py - 1.0)))


def test_2d_identity_against_direct_and_product_bound():
    p = FrequencyParams(1.0, 1.0, 6)
    s = ExpSum2D.tensor(p)
    g = Window(0.5, 1.5)
    r = measure_flatness_2d(s, g, 1e-4)
    n = round((g.b - g.a) / r.gridStep)
    assert r.l1SquareDefect == pytest.approx(_direct_2d_square_defect(s, g, n), rel=1e-9)
    dx = measure_flatness(s.x, g, 1e-4).l1SquareDefect
    dy = measure_flatness(s.y, g, 1e-4).l1SquareDefect
    assert r.l1SquareDefect <= dx * g.measure + dy * g.measure + dx * dy + 1e-3


def test_2d_rotated_against_direct():
    s = ExpSum2D([0.0, 0.9, 2.0], [0.0, 1.3], [[1.0, -0.1], [0.1, 1.0]])
    g = Window(0.5, 1.5)
    r = measure_flatness_2d(s, g, 1e-4)
    n = round((g.b - g.a) / r.gridStep)
    assert r.l1SquareDefect == pytest.approx(_direct_2d_square_defect(s, g, n), rel=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0.0, 20.0), min_size=2, max_size=10, unique=True).map(sorted),
       st.floats(-50.0, 50.0))
def test_defect_relations_and_shift_invariance(freqs, shift):
    w = np.array(freqs)
    if np.min(np.diff(w)) < 1e-6:
        return
    g = Window(0.5, 2.0)
    step = 1.0 / (8.0 * (w[-1] - w[0]) + 8.0)
    r = measure_flatness(ExpSum1D(w), g, 1.0, step=step)
    assert r.l1SquareDefect <= (r.supBound + 1.0) * r.l1Defect * (1 + 1e-12) + 1e-12
    r2 = measure_flatness(ExpSum1D(w + shift), g, 1.0, step=step)
    for k in ("l1Defect", "l1SquareDefect", "l2Defect", "supBound"):
        assert getattr(r2, k) == pytest.approx(getattr(r, k), rel=1e-9, abs=1e-12)


@settings(max_examples=10, deadline=None)
@given(st.integers(2, 40), st.sampled_from([0.5, 1.0]))
@example(3, 0.5)
def test_monotone_refinement(q, beta):
    s = ExpSum1D.from_params(FrequencyParams(0.5, beta, q))
    g = Window(0.5, 2.0)
    r = measure_flatness(s, g, 1e-3)
    # one more halving: coarse grid = r's fine grid, no further refinement
    r1 = measure_flatness(s, g, math.inf, step=r.gridStep * (1 + 1e-9))
    assert r1.gridStep == pytest.approx(r.gridStep / 2, rel=1e-12)
    for k in ("l1Defect", "l1SquareDefect", "l2Defect"):
        assert abs(getattr(r1, k) - getattr(r, k)) < r.refinementError
