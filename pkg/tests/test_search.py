import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flatriesz.flatness import Window, measure_flatness
from flatriesz.search import (
    NoneFound,
    SearchSpec,
    TorusProbe,
    best_q,
    find_flat_q,
    scan_flatness,
    stage_sum,
    torus_distance,
    torus_return_time,
)


def brute_return_time(K, eps, tMax, dt):
    v = np.log(np.arange(2, K + 2))
    t = np.arange(1, int(tMax / dt) + 1) * dt
    d = torus_distance(t, v)
    out = np.flatnonzero(d >= eps)
    if out.size == 0:
        return None
    back = np.flatnonzero(d[out[0]:] < eps)
    return None if back.size == 0 else float(t[out[0] + back[0]])


def test_spec_validation():
    with pytest.raises(ValueError):
        SearchSpec(Window(0.5, 2.0), 0.0, 1.0, 1.0, 2, 8)
    with pytest.raises(ValueError):
        SearchSpec(Window(0.5, 2.0), 0.1, 1.0, 1.0, 9, 8)
    assert list(SearchSpec(Window(0.5, 2.0), 0.1, 1.0, 1.0, 2, 9, 3).candidates()) == [2, 5, 8]


def test_single_term_is_trivial_hit():
    spec = SearchSpec(Window(0.5, 2.0), 0.01, 1.0, 1.0, 1, 3)
    hits = find_flat_q(spec)
    assert hits[0][0] == 1
    assert hits[0][1].l1Defect == 0.0


def test_none_found_names_best():
    spec = SearchSpec(Window(0.5, 2.0), 1e-3, 0.7, 1.0, 2, 6)
    with pytest.raises(NoneFound, match="best q="):
        find_flat_q(spec)


def test_hit_reverified_at_finer_resolution():
    spec = SearchSpec(Window(0.5, 2.0), 0.8, 0.7, 1.0, 2, 64)
    scanned = scan_flatness(spec)
    hits = find_flat_q(spec, scanned=scanned)
    q, rep = hits[0]
    assert all(r.l1Defect < 0.8 for _, r in hits)
    fine = measure_flatness(stage_sum(0.7, 1.0, q), spec.window, step=rep.gridStep / 4)
    assert abs(fine.l1Defect - rep.l1Defect) <= rep.refinementError
    for q2, r2 in hits:
        half = measure_flatness(stage_sum(0.7, 1.0, q2), spec.window, step=r2.gridStep / 2)
        assert (half.l1Defect < 0.8) or (half.l1Defect - 0.8 <= r2.refinementError)


def test_smallest_flat_q_grows_as_eps_shrinks():
    spec = SearchSpec(Window(0.5, 2.0), 1.0, 0.7, 1.0, 2, 48)
    scanned = scan_flatness(spec)
    prev = 0
    for eps in (1.0, 0.9, 0.85, 0.8, 0.78):
        s = SearchSpec(spec.window, eps, 0.7, 1.0, 2, 48)
        try:
            q = find_flat_q(s, scanned=scanned)[0][0]
        except NoneFound:
            break
        assert q >= prev
        prev = q


def test_best_q_ties_to_smaller():
    from flatriesz.flatness import FlatnessReport

    r = FlatnessReport(0.5, 0.5, 0.5, 1.0, 0.01, 0.0)
    assert best_q([(7, r), (3, r), (5, r)])[0] == 3


def test_torus_one_dim_closed_form():
    p = TorusProbe(1, 0.45, 10.0, 1e-4)
    t = torus_return_time(p)
    exact = (1 - 0.45) / math.log(2)
    assert exact < t <= exact + p.dt * (1 + 1e-9)


@pytest.mark.parametrize("K,eps,tMax,dt", [(1, 0.05, 50.0, 1e-3), (2, 0.1, 200.0, 1e-3)])
def test_torus_against_finer_scan(K, eps, tMax, dt):
    t = torus_return_time(TorusProbe(K, eps, tMax, dt))
    assert t is not None
    v = np.log(np.arange(2, K + 2))
    assert torus_distance(t, v) < eps
    fine = brute_return_time(K, eps, tMax, dt / 10)
    assert abs(t - fine) <= dt


def test_torus_not_found():
    assert torus_return_time(TorusProbe(3, 0.01, 5.0, 1e-3)) is None


@settings(max_examples=15, deadline=None)
@given(st.floats(0.02, 0.3), st.floats(0.5, 0.95))
def test_return_time_antitone_in_eps(eps, shrink):
    dt = 1e-3
    big = torus_return_time(TorusProbe(1, eps, 200.0, dt))
    small = torus_return_time(TorusProbe(1, eps * shrink, 200.0, dt))
    if small is not None and big is not None:
        assert small >= big - dt
