import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from merodyn.errors import (AsymptoticValue, BranchPointConflict, EssentialSingularity,
                            NotAsymptoticValue)
from merodyn.family import (HYPERBOLIC, SUB_EXPANDING, UNSUPPORTED, MapSpec, TruncationPolicy,
                            classify_regime, expansion_check, point_at_chordal_distance,
                            preimages, tract_cells, tract_regression)
from merodyn.sphere import INF, chordal_dist, is_inf

from conftest import HALF, MISI, TAN1

MEXP = MapSpec.mobius_exp(1, 2, 1, -1)
coords = st.floats(-20, 20, allow_nan=False)


def test_evaluation_examples():
    assert complex(TAN1(math.pi / 4)) == pytest.approx(1.0, abs=1e-15)
    for lam in (0.5, 1j * math.pi, 2 - 1j):
        assert is_inf(MapSpec.tangent(lam)(math.pi / 2))
        assert is_inf(MapSpec.tangent(lam)(-7 * math.pi / 2))
        assert MapSpec.tangent(lam)(3 * math.pi) == 0
    with pytest.raises(EssentialSingularity):
        TAN1(INF)


def test_evaluation_agrees_with_cmath():
    rng = np.random.default_rng(0)
    z = rng.uniform(-5, 5, 200) + 1j * rng.uniform(-6, 6, 200)
    lam = 0.7 - 0.2j
    want = np.array([lam * cmath.tan(x) for x in z])
    assert np.allclose(MapSpec.tangent(lam)(z), want, rtol=1e-13, atol=1e-15)


def test_zero_keeps_relative_precision():
    # near 0 the map is evaluated without snapping: f(x) ~ lambda x
    assert complex(MISI(1e-20 + 0j)) == pytest.approx(1j * math.pi * 1e-20, rel=1e-12)


def test_mobius_exp_matches_formula():
    rng = np.random.default_rng(1)
    z = rng.uniform(-2, 2, 50) + 1j * rng.uniform(-3, 3, 50)
    u = np.exp(2 * z)
    assert np.allclose(MEXP(z), (u + 2) / (u - 1), rtol=1e-12)
    assert MEXP.asymptotic_values == (1, -2)


def test_construction_errors():
    with pytest.raises(ValueError):
        MapSpec.tangent(0)
    with pytest.raises(ValueError):
        MapSpec.mobius_exp(1, 2, 2, 4)
    with pytest.raises(ValueError):
        MapSpec.mobius_exp(1, 2, 0, 1)
    with pytest.raises(ValueError):
        MapSpec("airy")


def test_closed_form_derivatives():
    rng = np.random.default_rng(2)
    z = rng.uniform(-1.3, 1.3, 50) + 1j * rng.uniform(-2, 2, 50)
    lam = 0.5 + 0.3j
    f0, f1, f2, f3 = MapSpec.tangent(lam).derivatives(z)
    sec2 = 1 / np.cos(z) ** 2
    assert np.allclose(f1, lam * sec2, rtol=1e-12)
    assert np.allclose(f2, 2 * lam * sec2 * np.tan(z), rtol=1e-11)
    assert np.allclose(f3, lam * (2 * sec2 ** 2 + 4 * sec2 * np.tan(z) ** 2), rtol=1e-11)


def test_preimage_examples():
    ps = preimages(TAN1, 0j, TruncationPolicy(k_max=10))
    assert len(ps.z) == 21
    assert np.allclose(np.sort(ps.z.real), np.arange(-10, 11) * math.pi, atol=1e-12)
    ps = preimages(TAN1, 1 + 0j, TruncationPolicy(k_max=10))
    r = (ps.z - math.pi / 4) / math.pi
    assert np.allclose(r, np.rint(r), atol=1e-12)
    ps = preimages(TAN1, INF, TruncationPolicy(k_max=10))
    r = (ps.z - math.pi / 2) / math.pi
    assert np.allclose(r, np.rint(r), atol=1e-12)
    # sorted by modulus
    assert np.all(np.diff(np.abs(ps.z)) >= 0)


def test_asymptotic_values_have_no_preimages():
    for a in HALF.asymptotic_values:
        with pytest.raises(AsymptoticValue):
            preimages(HALF, a, TruncationPolicy(k_max=5))
        with pytest.raises(BranchPointConflict):
            HALF.preimage_base(a)


def test_radius_cut_limits_branches():
    pol = TruncationPolicy(k_max=1000, radius_cut=30.0)
    ps = preimages(HALF, 0.3 + 0.1j, pol)
    assert ps.k_max == int(30 / math.pi)
    with pytest.raises(ValueError):
        TruncationPolicy(k_max=0)


@settings(max_examples=60)
@given(coords, coords, st.sampled_from([HALF, MISI, MEXP, MapSpec.tangent(2 - 1j)]))
def test_preimage_round_trip(x, y, f):
    w = complex(x, y)
    if min(chordal_dist(w, a) for a in f.asymptotic_values) < 1e-6:
        return
    ps = preimages(f, w, TruncationPolicy(k_max=25))
    assert np.max(chordal_dist(f(ps.z), w)) <= 1e-10


def _winding(f, w, x0, x1, y0, y1, n=4000):
    """Zeros minus poles of f - w inside the box, by the argument principle."""
    t = np.linspace(0, 1, n, endpoint=False)
    path = np.concatenate([x0 + (x1 - x0) * t + 1j * y0, x1 + 1j * (y0 + (y1 - y0) * t),
                           x1 - (x1 - x0) * t + 1j * y1, x0 + 1j * (y1 - (y1 - y0) * t)])
    v = f(path) - w
    d = np.angle(np.roll(v, -1) / v)
    return int(round(d.sum() / (2 * math.pi)))


@pytest.mark.parametrize("w", [0.3 + 0.2j, -2 + 5j, 40 - 1j])
def test_preimage_completeness(w):
    # boxes straddling several periods; edges avoid poles and preimages
    f = HALF
    ps = preimages(f, w, TruncationPolicy(k_max=50))
    poles = preimages(f, INF, TruncationPolicy(k_max=50)).z
    for x0 in np.arange(-12.0, 12.0, 3.0) + 0.123:
        box = (x0, x0 + 3.0, -2.7, 2.9)
        inside = lambda z: (box[0] < z.real < box[1]) and (box[2] < z.imag < box[3])
        n_zero = sum(inside(z) for z in ps.z)
        n_pole = sum(inside(z) for z in poles)
        assert _winding(f, w, *box) == n_zero - n_pole


def test_spherical_derivative_growth():
    # |f'|_sigma grows like |z|^(rho + 1) over the preimages of a fixed point
    for f in (HALF, MISI):
        ps = preimages(f, 0.4 + 0.3j, TruncationPolicy(k_max=500))
        z, d = ps.z[2:], ps.sph_deriv[2:]
        assert len(z) >= 999
        slope = np.polyfit(np.log(np.abs(z)), np.log(d), 1)[0]
        assert slope == pytest.approx(2.0, abs=0.05)


def test_tract_ratio_band():
    # |f'|_sigma / ((1 + |z|^2) |f(z) - a|) stays in a fixed band deep in a tract
    rng = np.random.default_rng(3)
    for f in (HALF, MISI):
        a = 1j * complex(f.lam)
        z = rng.uniform(-200, 200, 1000) + 1j * rng.uniform(2, 40, 1000)
        ratios = []
        for x in z:
            a_, d = f.asymptotic_offset(x)
            assert a_ == pytest.approx(a)
            ratios.append(float(f.sph_deriv(x)) / ((1 + abs(x) ** 2) * abs(d)))
        ratios = np.array(ratios)
        C = math.sqrt(ratios.max() / ratios.min())
        assert C <= 4


def test_asymptotic_offset_oracle():
    # tan z = i (1 - q) / (1 + q) with q = exp(2iz): f - lambda i = -2 i lambda q / (1 + q)
    for lam in (0.5, 1j * math.pi, 1 - 2j):
        f = MapSpec.tangent(lam)
        for z in (0.3 + 30j, -7 + 12j, 2 + 3j):
            q = cmath.exp(2j * z)
            a, d = f.asymptotic_offset(z)
            assert a == pytest.approx(1j * lam)
            assert d == pytest.approx(-2j * lam * q / (1 + q), rel=1e-12)


def test_asymptotic_values_along_rays():
    for f in (HALF, MISI, MapSpec.tangent(1 + 1j)):
        up, down = 1j * complex(f.lam), -1j * complex(f.lam)
        d_up = [chordal_dist(f(0.7 + 1j * y), up) for y in (2, 5, 10, 20)]
        d_dn = [chordal_dist(f(0.7 - 1j * y), down) for y in (2, 5, 10, 20)]
        assert all(b < a for a, b in zip(d_up, d_up[1:])) and d_up[-1] < 1e-10
        assert all(b < a for a, b in zip(d_dn, d_dn[1:])) and d_dn[-1] < 1e-10


def test_regime_classification(half_regime, misi_regime):
    assert half_regime.regime == HYPERBOLIC
    assert half_regime.fatou_nonempty
    assert sorted(abs(m) for _, m in half_regime.cycles) == pytest.approx([0.5, 0.5])
    assert misi_regime.regime == SUB_EXPANDING
    assert not misi_regime.fatou_nonempty
    assert misi_regime.expansion_check[0] == 1
    assert misi_regime.expansion_check[1] > 1
    assert 0 < misi_regime.safety_radius < 0.25
    # the asymptotic values land on the repelling fixed point 0
    assert np.min(np.abs(misi_regime.postsingular)) == 0
    assert classify_regime(TAN1).regime == UNSUPPORTED
    # eight digits of pi is not the Misiurewicz parameter
    assert classify_regime(MapSpec.tangent(3.14159265j)).regime == UNSUPPORTED


def test_expansion_check_on_fixed_point():
    p, val = expansion_check(MISI, np.array([0j]), 0.01, 3)
    assert p == 1
    assert val == pytest.approx(math.pi, rel=0.05)


def test_tract_cells():
    a = 1j * complex(MISI.lam)
    cells = tract_cells(MISI, a, 0, 0)
    assert len(cells) == 1 and complex(cells[0].z).imag > 0
    cells = tract_cells(MISI, a, 6, 8, T=0.03)
    assert len(cells) == 7 * 17
    for c in cells[::10]:
        assert chordal_dist(MISI(c.z), a) == pytest.approx(0.03 * 2.0 ** -c.n, rel=1e-6)
        assert c.weight_scale == pytest.approx(1 / MISI.sph_deriv(c.z))
    with pytest.raises(NotAsymptoticValue):
        tract_cells(MISI, 1 + 0j, 1, 1)


def test_point_at_chordal_distance():
    for a in (0j, -math.pi + 0j, 5 + 5j):
        for r in (0.1, 0.01, 1e-5):
            assert chordal_dist(point_at_chordal_distance(a, r, 1j), a) == pytest.approx(r, rel=1e-12)


def test_tract_regression_grid():
    cells = tract_cells(MISI, 1j * complex(MISI.lam), 10, 40, T=0.03)
    slope, _, C = tract_regression(cells)
    assert 0 < slope < 1.5
    assert np.isfinite(C) and C >= 1
