import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from merodyn.bowen import default_base
from merodyn.errors import AsymptoticValue, BelowBorelThreshold
from merodyn.family import TruncationPolicy
from merodyn.family import point_at_chordal_distance
from merodyn.sphere import sphere_grid
from merodyn.transfer import (TreeConfig, backward_tree, check_threshold, distortion_probe,
                              extrapolate, pressure_curve, pressure_estimate, tail_bracket,
                              transfer_one, uniform_bound_scan)

from conftest import HALF, MISI, TAN1

COTH1 = 1 / math.tanh(1.0)


def test_coth_closed_form():
    # sum over k of 1 / (1 + k^2 pi^2) = coth 1
    r = transfer_one(TAN1, 1.0, 0j, TruncationPolicy(k_max=100_000))
    assert r.low <= COTH1 <= r.high
    assert r.high - r.low <= 1e-6
    assert r.value == pytest.approx(1.3130352855, abs=1e-9)


def test_brackets_tighten_with_k():
    prev = None
    for k in (10, 100, 1000, 10_000):
        r = transfer_one(TAN1, 1.0, 0j, TruncationPolicy(k_max=k))
        assert r.low <= COTH1 <= r.high
        assert 0 <= r.tail_low <= r.tail_high
        if prev is not None:
            assert r.high - r.low < prev.high - prev.low
            assert r.partial >= prev.partial
        prev = r


@settings(max_examples=100, deadline=None)
@given(st.floats(0.52, 3.0), st.floats(-10, 10), st.floats(-10, 10))
def test_bracket_contains_refined_value(t, x, y):
    w = complex(x, y)
    if min(abs(w - a) for a in MISI.asymptotic_values) < 1e-3:
        return
    coarse = transfer_one(MISI, t, w, TruncationPolicy(k_max=200))
    fine = transfer_one(MISI, t, w, TruncationPolicy(k_max=400))
    slack = 1e-12 * fine.value
    assert coarse.low - slack <= fine.low and fine.high <= coarse.high + slack


def test_borel_threshold():
    # rho = 1: the tail diverges exactly when 2 t <= 1
    for t in (0.40, 0.50):
        with pytest.raises(BelowBorelThreshold):
            transfer_one(TAN1, t, 0j)
    for t in (0.51, 0.6, 1.0):
        r = transfer_one(TAN1, t, 0j, TruncationPolicy(k_max=10_000), margin=0.0)
        assert math.isfinite(r.high) and r.low <= r.high
    assert check_threshold(TAN1, 0.505, margin=0.01)          # flagged as near
    assert not check_threshold(TAN1, 0.6, margin=0.01)


def test_tail_diverges_only_below_threshold():
    z0 = np.array([0.3 + 0.1j])
    A = np.array([1.0])
    lo, hi = tail_bracket(TAN1, z0, A, 100, 0.5)
    assert np.isinf(hi).all()
    lo, hi = tail_bracket(TAN1, z0, A, 100, 0.5001)
    assert np.isfinite(hi).all()


def test_large_t_single_branch():
    r = transfer_one(TAN1, 40.0, 0.3 + 0j)
    top = TAN1.sph_deriv(math.atan(0.3)) ** -40.0
    assert r.value == pytest.approx(top, rel=1e-6)
    assert r.max_branch == pytest.approx(top, rel=1e-12)


def test_strict_mode_near_asymptotic_value():
    w = point_at_chordal_distance(-math.pi + 0j, 1e-14)
    with pytest.raises(AsymptoticValue):
        transfer_one(MISI, 1.0, w, asym_tol=1e-12)
    # opting out reports the growth instead: at t = 1 the branches over the
    # tract sit at height ~ log(1/d) / 2, so L 1(w) ~ d^-1 / log(1/d)
    for d in (1e-3, 1e-5):
        a = transfer_one(MISI, 1.0, point_at_chordal_distance(-math.pi + 0j, d), strict=False)
        b = transfer_one(MISI, 1.0, point_at_chordal_distance(-math.pi + 0j, d / 10), strict=False)
        want = 10 * math.log(1 / d) / math.log(10 / d)
        assert b.value / a.value == pytest.approx(want, rel=0.02)


def test_uniform_bound_scan():
    grid = sphere_grid(200)
    rep = uniform_bound_scan(MISI, 0.75, grid)
    assert math.isfinite(rep.sup) and rep.ratio <= 3 and not rep.unbounded_flag
    # the bare sum stays bounded next to an asymptotic value
    near = np.append(grid, point_at_chordal_distance(math.pi + 0j, 1e-3))
    rep2 = uniform_bound_scan(MISI, 0.75, near)
    assert math.isfinite(rep2.sup) and not rep2.unbounded_flag
    with pytest.raises(BelowBorelThreshold):
        uniform_bound_scan(MISI, 0.4, grid)


def test_extrapolate_geometric_oracle():
    # r_n = L + c q^n has the exact Aitken limit L
    L, c, q = -0.7, 0.3, 0.6
    r = [L + c * q ** n for n in range(1, 9)]
    v, e = extrapolate(r)
    assert v == pytest.approx(L, abs=1e-12)
    assert e >= abs(r[-1] - r[-2])
    # slowly converging: keep the last value with a widened bar
    r = [1 / n for n in range(1, 40)]
    v, e = extrapolate(r, q_max=0.9)
    assert v == r[-1] and e == pytest.approx(abs(r[-1] - r[-2]) / 0.1)


def test_pressure_first_term_is_log_operator():
    cfg = TreeConfig()
    r = pressure_estimate(HALF, 1.0, 1 + 0.5j, depth=3, cfg=cfg)
    want = math.log(transfer_one(HALF, 1.0, 1 + 0.5j, TruncationPolicy(k_max=cfg.K)).value)
    assert r.P_n[0] == pytest.approx(want, abs=1e-9)


def test_pressure_decreasing_half():
    curve = pressure_curve(HALF, [0.6, 0.9, 1.2], depth=6)
    assert curve.strictly_decreasing()
    for (v1, e1), (v2, e2) in zip(curve.extrapolated, curve.extrapolated[1:]):
        assert v1 - e1 > v2 + e2


def test_pressure_at_two_vanishes_for_sphere_instance():
    base = default_base(MISI)
    r = pressure_estimate(MISI, 2.0, base, depth=8)
    assert abs(r.value) <= r.error + 0.02
    assert r.discarded < 0.1


def test_pressure_base_point_robustness():
    vals = []
    for base in (1 + 0.5j, -0.7 + 1.3j, 2.2 - 0.4j):
        r = pressure_estimate(HALF, 1.0, base, depth=8)
        vals.append((r.value, r.error))
    for v1, e1 in vals:
        for v2, e2 in vals:
            assert abs(v1 - v2) <= e1 + e2 + 1e-3


def test_level_sums_are_order_independent():
    rng = np.random.default_rng(0)
    pts = rng.normal(size=40) + 1j * rng.normal(size=40)
    w = rng.random(40)
    perm = rng.permutation(40)
    a = list(backward_tree(HALF, 1.0, pts, 3, base_weights=w))
    b = list(backward_tree(HALF, 1.0, pts[perm], 3, base_weights=w[perm]))
    for la, lb in zip(a, b):
        assert lb.log_total == pytest.approx(la.log_total, rel=1e-12, abs=1e-12)


def test_tree_levels_are_normalised():
    for lev in backward_tree(MISI, 2.0, 1 + 0.5j, 5):
        assert math.fsum(lev.weights.tolist()) == pytest.approx(1.0, abs=1e-12)
        assert 0 <= lev.lump < 1 and lev.discarded >= 0


def test_distortion_probe():
    assert distortion_probe(MISI, 1 + 0.5j, 0.05, 0, 10) == 1.0
    assert distortion_probe(MISI, 1 + 0.5j, 1e-7, 3, 20, seed=1) == pytest.approx(1.0, abs=1e-4)
    K = distortion_probe(MISI, 1 + 0.5j, 0.05, 10, 500, seed=2)
    assert 1.0 <= K <= 4.0


def test_distortion_shrinks_with_delta():
    Ks = [distortion_probe(MISI, 1 + 0.5j, d, 4, 100, seed=3) for d in (0.05, 0.01, 0.002)]
    assert Ks[0] >= Ks[1] >= Ks[2] >= 1
