import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flatriesz.construction import TowerSchedule, chained_params, derive_planar_frames
from flatriesz.expsum import ExpSum1D, ExpSum2D, eval_grid, eval_points, read_pgm
from flatriesz.flatness import Window
from flatriesz.planar import (
    StripSet,
    accumulate_2d,
    arm_pair_radius,
    axis_strip_mass_ratio,
    classify_regions,
    default_strip_params,
    new_planar_state,
    radius_bound,
    render_density,
    run_planar,
    strip_intersection_radius,
    strip_mass_bound,
    validate_collapse_condition,
)


def rot(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def brute_radius(a1, th1, a2, th2, L=1.0, res=1e-3):
    g = np.arange(-L, L + res / 2, res)
    x, y = np.meshgrid(g, g, indexing="ij")
    m = np.ones(x.shape, bool)
    for a, th in ((a1, th1), (a2, th2)):
        m &= np.abs(-math.sin(th) * x + math.cos(th) * y) <= a
    return float(np.max(np.hypot(x[m], y[m])))


@pytest.fixture(scope="module")
def sched3():
    return TowerSchedule.from_params(chained_params(1.0, [1.0] * 3, [3] * 3))


def test_identical_frames_give_inf():
    s = StripSet(0.1, 1.0, rot(0.3))
    assert strip_intersection_radius(s, StripSet(0.2, 2.0, rot(0.3))) == math.inf
    assert strip_intersection_radius(s, StripSet(0.2, 2.0, rot(0.3 + math.pi / 2))) == math.inf


def test_perpendicular_unit_strips():
    assert arm_pair_radius(1.0, 0.0, 1.0, math.pi / 2) == pytest.approx(math.sqrt(2), rel=1e-12)


def test_thin_strips_against_membership_grid():
    a, phi = 0.05, 0.2
    r = arm_pair_radius(a, 0.0, a, phi)
    assert abs(r - brute_radius(a, 0.0, a, phi)) <= 2e-3
    model = 2 * a / math.sin(phi)
    assert model / 3 <= r <= 3 * model
    # the same pair inside two crosses with rotation frames
    s1, s2 = StripSet(a, 1.0, np.eye(2)), StripSet(a, 1.0, rot(phi))
    assert strip_intersection_radius(s1, s2) == pytest.approx(r, rel=1e-9)
    assert strip_intersection_radius(s1, s2) <= radius_bound(s1, s2)


def test_collapse_condition_passes_and_flags():
    N = 8
    xis = [2.0**-n for n in range(1, N + 1)]
    a = [4.0**-n for n in range(1, N + 1)]
    wins = [Window(x, 2.0**n) for n, x in enumerate(a, 1)]
    rep = validate_collapse_condition(xis, wins, xi_tail=2.0**-N)
    np.testing.assert_allclose(rep.ratios, [2.0 ** (-n - 1) for n in range(1, N + 1)], rtol=1e-14)
    assert rep.decreasing and not rep.flagged
    assert all(x >= y for x, y in zip(rep.tailRadii[:-2], rep.tailRadii[1:-1]))
    bad = validate_collapse_condition(xis, [Window(x, 4.0) for x in xis], xi_tail=2.0**-N)
    assert bad.flagged


def test_unit_stage_leaves_state_unchanged():
    st0 = new_planar_state(1.0, 32, "indicator", 1.0)
    st1 = accumulate_2d(st0, ExpSum2D([0.0], [0.0], rot(0.4)))
    assert st1.grid.values.tobytes() == st0.grid.values.tobytes()


def test_tensor_is_outer_product_bitwise(sched3):
    states = run_planar(sched3, 1.5, 96, a0=0.5, override=True)
    st = states[-1]
    assert st.factorized
    h = sched3.heights[0]
    t = st.taus(0)
    f = h * np.sinc(h * t) ** 2
    for g in sched3.geometries:
        f = f * eval_grid(ExpSum1D(g.positions), t[0], st.step[0], len(t), override=True).values
    assert st.grid.values.tobytes() == np.outer(f, f).tobytes()


def test_rotated_against_direct_products():
    sch = TowerSchedule.from_params(chained_params(1.0, [1.0] * 3, [3] * 3), xis=[0.5, 0.25, 0.125])
    st = run_planar(sch, 1.0, 24, a0=0.5, override=True)[-1]
    t1, t2 = st.mesh()
    h = sch.heights[0]
    ref = (h * np.sinc(h * t1) ** 2) * (h * np.sinc(h * t2) ** 2)
    for psi, g in zip(derive_planar_frames(sch.xis).psis, sch.geometries):
        s = ExpSum1D(g.positions)
        u1 = psi[0, 0] * t1 + psi[1, 0] * t2
        u2 = psi[0, 1] * t1 + psi[1, 1] * t2
        ref = ref * np.abs(eval_points(s, u1.ravel()).reshape(u1.shape)) ** 2
        ref = ref * np.abs(eval_points(s, u2.ravel()).reshape(u2.shape)) ** 2
    np.testing.assert_allclose(st.grid.values, ref, rtol=1e-9, atol=1e-300)


def test_regions_unrotated(sched3):
    st = run_planar(sched3, 1.5, 120, a0=1.0, override=True)[-1]
    rm = classify_regions(st)
    t1, t2 = st.mesh()
    strips = st.stageStrips
    inside_all = np.logical_and.reduce([s.contains(t1, t2) for s in strips])
    assert np.all(rm.labels[inside_all] == 0)
    # class (b) lies along the coordinate axes
    w = min(s.a for s in strips)
    b_cells = rm.labels == 1
    assert np.all((np.abs(t1[b_cells]) < w) | (np.abs(t2[b_cells]) < w))
    total = st.grid.values.sum() * st.step[0] * st.step[1]
    assert sum(rm.masses.values()) == pytest.approx(total, rel=1e-12)


def test_regions_rotated_confined_to_radius():
    sch = TowerSchedule.from_params(chained_params(1.0, [1.0] * 4, [3] * 4),
                                    xis=[2.0**-n for n in range(1, 5)])
    st = run_planar(sch, 2.0, 200, a0=1.0, override=True)[-1]
    rm = classify_regions(st)
    strips = st.stageStrips
    R = max(strip_intersection_radius(strips[n], strips[m])
            for n in range(len(strips)) for m in range(n + 1, len(strips)))
    t1, t2 = st.mesh()
    diag = math.hypot(*st.step)
    assert np.all(np.hypot(t1, t2)[rm.labels == 0] <= R + diag)
    total = st.grid.values.sum() * st.step[0] * st.step[1]
    assert sum(rm.masses.values()) == pytest.approx(total, rel=1e-12)


def test_strip_mass_single_term_is_area():
    F = rot(0.3) * 1.2
    s = StripSet(0.1, 2.0, F)
    v = strip_mass_bound(ExpSum2D([0.0], [0.0], F), s)
    area = (2 * 2 * 2.0 * 2 * 0.1 - (2 * 0.1) ** 2) / abs(np.linalg.det(F))
    assert v == pytest.approx(area, rel=1e-12)


def test_strip_mass_decay_fit():
    from flatriesz.construction import FrequencyParams

    a = 0.5
    qs = [2**k for k in range(6, 11)]
    vals = []
    for q in qs:
        p = FrequencyParams(0.7, 1.0, q)
        vals.append(strip_mass_bound(ExpSum2D.tensor(p), StripSet(a, 0.9), eps_quadrature=1e-5))
    vals = np.array(vals)
    model = np.log(a * np.array(qs)) / np.sqrt(qs)
    r = vals / model
    C = math.exp(np.mean(np.log(r)))
    assert np.all((r >= C / 3) & (r <= 3 * C))


def test_render_constant_is_midgray(tmp_path):
    st = new_planar_state(1.0, 16, "constant")
    render_density(st, tmp_path / "c.pgm")
    assert np.all(read_pgm(tmp_path / "c.pgm") == 32768)


def test_tensor_cross_brighter_than_rotated(tmp_path):
    base = chained_params(1.0, [1.0] * 3, [3] * 3)
    tensor = run_planar(TowerSchedule.from_params(base), 2.0, 400, a0=1.0, override=True)
    rotated = run_planar(TowerSchedule.from_params(base, xis=[0.5, 0.25, 0.125]), 2.0, 400,
                         a0=1.0, override=True)
    w = default_strip_params(3, 1.0)[0][-1]
    rt = [axis_strip_mass_ratio(s, w) for s in tensor[1:]]
    rr = [axis_strip_mass_ratio(s, w) for s in rotated[1:]]
    assert rt[0] == pytest.approx(rr[0], rel=1e-12)
    assert all(x < y for x, y in zip(rr[1:], rt[1:]))
    meta = render_density(tensor[-1], tmp_path / "t.pgm")
    img = read_pgm(tmp_path / "t.pgm")
    assert img.shape == (400, 400) and meta["log_scale"]
    # the axis rows/columns carry the brightest mean gray
    mid = img.shape[0] // 2
    assert img[mid - 1:mid + 1].mean() > img.mean()


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 2.0))
def test_rotation_step_determinant(xi):
    psi = derive_planar_frames([xi]).psis[1]
    assert np.linalg.det(psi) == pytest.approx(1 + xi * xi, rel=1e-14)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.01, 0.2), st.floats(0.01, 0.2), st.floats(0.05, 1.4))
def test_radius_bound_holds(a1, a2, phi):
    s1 = StripSet(a1, 50.0, np.eye(2))
    s2 = StripSet(a2, 50.0, rot(phi))
    assert strip_intersection_radius(s1, s2) <= radius_bound(s1, s2) * (1 + 1e-12)
