import math

import numpy as np
import pytest

from merodyn.bowen import pressure_root
from merodyn.errors import (BelowBorelThreshold, CellTooThin, InconclusiveRatio,
                            NotInjectiveOnCell, SubcriticalExponent)
from merodyn.family import TruncationPolicy, tract_cells
from merodyn.poincare import (AtomicMeasure, build_ps_measure, conformality_cells,
                              conformality_check, dyadic_block_terms, estimate_h,
                              exponent_from_log_ratios, log_ratio_of_terms, poincare_partial,
                              tightness_profile)
from merodyn.sphere import INF, chordal_dist
from merodyn.transfer import TreeConfig, pressure_estimate, transfer_one

from conftest import HALF, MISI

T_GRID = [0.6, 0.8, 1.0, 1.2, 1.4, 1.6, 1.8, 1.91, 2.0]


def test_first_term_sums_over_poles():
    cfg = TreeConfig()
    s = poincare_partial(HALF, 1.0, 1, cfg)
    want = transfer_one(HALF, 1.0, INF, TruncationPolicy(k_max=cfg.K)).value
    assert s.terms[0] == pytest.approx(want, rel=1e-9)


def test_partial_sums_accumulate():
    s = poincare_partial(HALF, 1.2, 5)
    assert s.partial_sums == pytest.approx(list(np.cumsum(s.terms)))


def test_series_below_threshold():
    with pytest.raises(BelowBorelThreshold):
        poincare_partial(HALF, 0.45, 2)


@pytest.mark.parametrize("t", [1.9, 2.2])
def test_per_n_ratio_tracks_pressure(t):
    # the fitted per-n ratio is e^P(t); with h = 2 it sits above 1 below 2
    s = poincare_partial(MISI, t, 10)
    p = pressure_estimate(MISI, t, 1 + 0.5j, depth=10)
    assert s.log_ratio == pytest.approx(p.value, abs=p.error + s.log_ratio_err + 0.02)
    assert (s.ratio < 1) == (t > 2)


@pytest.mark.parametrize("rho", [1.0, 1.5])
def test_synthetic_exponent_recovery(rho):
    # dyadic blocks of k^-(rho+1)t: the series converges iff t > 1 / (rho + 1)
    grid = np.round(np.arange(0.25, 1.0, 0.1), 2)
    lr = [log_ratio_of_terms(dyadic_block_terms(t, 18, rho))[0] for t in grid]
    e = exponent_from_log_ratios(grid, lr, sigma=0.05, lower=0.0)
    assert e.h == pytest.approx(1 / (rho + 1), abs=0.02)
    assert e.bracket[0] <= 1 / (rho + 1) <= e.bracket[1]


def test_inconclusive_adjacent_points():
    with pytest.raises(InconclusiveRatio):
        exponent_from_log_ratios([0.9, 1.0, 1.1], [0.2, 0.01, -0.01])


def test_exponent_sphere_instance(misi_regime):
    e = estimate_h(MISI, T_GRID, n_max=12, cfg=TreeConfig(), regime=misi_regime)
    lo, hi = e.bracket
    assert lo <= 2.0 <= hi and hi - lo <= 0.1
    assert not e.diagnostics["inconsistent_regime"]


def test_exponent_hyperbolic_gating(half_regime):
    e = estimate_h(HALF, [0.6, 0.7, 0.8, 0.9, 1.0, 1.2], n_max=8, regime=half_regime)
    assert 0.5 < e.bracket[0] and e.bracket[1] <= 2
    assert "inconsistent_regime" not in e.diagnostics
    with pytest.raises(ValueError):
        estimate_h(HALF, [0.4, 1.0], n_max=4)


def test_exponent_bracket_holds_pressure_root(half_regime):
    e = estimate_h(HALF, [0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 1.0], n_max=10, regime=half_regime)
    r = pressure_root(HALF, 0.01, depth=8)
    assert e.bracket[0] - 0.05 <= r.h <= e.bracket[1] + 0.05


def test_depth_one_measure_sits_on_poles():
    s = 1.5
    m = build_ps_measure(HALF, s, depth_max=1)
    poles = math.pi / 2 + np.arange(-3, 4) * math.pi
    w = HALF.sph_deriv(poles) ** -s
    got = np.array([m.weights[np.argmin(np.abs(m.points - p))] for p in poles])
    assert np.allclose(got / got[3], w / w[3], rtol=1e-12)
    assert np.max(np.min(np.abs(m.points[:, None] - poles[None, :]), axis=0)) <= 1e-12


def test_measure_invariants(misi_measure):
    m = misi_measure
    assert math.fsum(m.weights.tolist()) == pytest.approx(1.0, abs=1e-9)
    assert np.all(m.weights > 0)
    assert m.discarded_mass_bound < 1e-3
    d = chordal_dist(m.points[:, None], m.points[None, :])
    np.fill_diagonal(d, 1.0)
    assert d.min() > 1e-9
    # canonical order: by depth
    assert np.all(np.diff(m.depths) >= 0)


def test_measure_is_bit_reproducible(misi_measure):
    again = build_ps_measure(MISI, 2.05, 8, TreeConfig(res=0.02))
    assert again.dumps() == misi_measure.dumps()


def test_measure_serialization_round_trip(misi_measure):
    back = AtomicMeasure.loads(misi_measure.dumps())
    assert np.array_equal(back.points, misi_measure.points)
    assert np.array_equal(back.weights, misi_measure.weights)
    assert np.array_equal(back.depths, misi_measure.depths)
    assert back.s == misi_measure.s and back.log_Z == misi_measure.log_Z
    with pytest.raises(ValueError):
        AtomicMeasure.loads("not a measure\n")


def test_subcritical_exponent():
    with pytest.raises(SubcriticalExponent):
        build_ps_measure(MISI, 2.0, 4, h_bracket=(1.91, 2.0))
    m = build_ps_measure(MISI, 2.05, 3, h_bracket=(1.91, 2.0))
    assert m.offset == pytest.approx(0.05)


def test_tightness_slope(misi_measure):
    prof = tightness_profile(misi_measure, [1, 1.5, 2, 3, 4])
    assert all(b <= a for a, b in zip(prof.mass, prof.mass[1:]))
    assert prof.slope == pytest.approx(-2.1, abs=0.3)


def test_no_heavy_far_atom(misi_measure):
    m = misi_measure
    far = np.abs(m.points) > 10
    assert m.mass_beyond(10) > 0
    assert m.weights[far].max() <= 0.05 * m.mass_beyond(10)


def test_tightness_extremes():
    rng = np.random.default_rng(0)
    pts = (1 + rng.random(100)) * np.exp(2j * math.pi * rng.random(100))
    m = AtomicMeasure(pts, np.full(100, 0.01), np.ones(100, dtype=int), 2.0, 0.0, 1)
    prof = tightness_profile(m, [0.5, 3.0])
    assert prof.mass[0] == pytest.approx(1.0) and prof.mass[1] == 0.0


def test_heavier_exponent_is_tighter(misi_measure):
    m2 = build_ps_measure(MISI, 2.3, 8, TreeConfig(res=0.02))
    for R in (2, 4, 8, 16):
        assert m2.mass_beyond(R) <= misi_measure.mass_beyond(R)


def test_postsingular_set_carries_little_mass(misi_measure, misi_regime):
    P = np.concatenate([np.array(MISI.asymptotic_values), misi_regime.postsingular])
    near = np.min(chordal_dist(misi_measure.points[:, None], P[None, :]), axis=1) < 0.01
    assert misi_measure.weights[near].sum() < 0.01


def test_conformality(misi_measure, misi_regime):
    m = misi_measure
    avoid = list(MISI.asymptotic_values) + list(misi_regime.postsingular)
    cells = conformality_cells(MISI, m, 20, 0.05, avoid, misi_regime.safety_radius)
    assert len(cells) == 20
    good = conformality_check(MISI, m, cells, 2.0)
    assert good.C <= 2 and not good.nonconformal
    bad = conformality_check(MISI, m, cells, 1.2)
    assert bad.nonconformal


def test_conformality_cell_errors(misi_measure):
    with pytest.raises(NotInjectiveOnCell):
        conformality_check(MISI, misi_measure, [(math.pi / 2 + 0.01, 0.05)], 2.0)
    with pytest.raises(CellTooThin):
        conformality_check(MISI, misi_measure, [(40 + 40j, 1e-4)], 2.0)


def test_tract_mass_matches_lattice(misi_measure, misi_regime):
    # within each dyadic shell n around a, the share of mass off the main
    # cell follows the lattice weights (n^2 + k^2)^-s read in tract
    # coordinates, i.e. (1 + |z_nk|^2)^-((rho + 1) h / 2) at h = 2
    m, T = misi_measure, misi_regime.safety_radius
    e = 2.0
    for a in MISI.asymptotic_values:
        cells = tract_cells(MISI, a, 7, 40, T)
        fz = MISI(m.points)
        d = chordal_dist(fz, a)
        inn = d < T
        n = np.floor(np.log2(T / d[inn])).astype(int)
        axis = min((c for c in cells if c.n == 0), key=lambda c: abs(c.z)).z
        k = np.rint(((m.points[inn] - axis) / MISI.period).real).astype(int)
        w = m.weights[inn]
        meas = pred = 0.0
        for nn in range(8):
            sel = n == nn
            row = w[sel].sum()
            if row == 0:
                continue
            zs = np.array([c.z for c in cells if c.n == nn])
            ks = np.rint(((zs - axis) / MISI.period).real).astype(int)
            lat = (1 + np.abs(zs) ** 2) ** -e
            meas += w[sel][k[sel] != 0].sum()
            pred += row * lat[ks != 0].sum() / lat.sum()
        assert 1 / 3 <= meas / pred <= 3
