"""The fifteen acceptance criteria, one test each, at their stated tolerances and time budgets.

Every test records a PASS/FAIL line; the lines are printed together at the
end of the session (see conftest.py).
"""
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from merodyn.bowen import (JULIA_LIKELY_SPHERE, bounds_check, pressure_root, ulam_root)
from merodyn.errors import BelowBorelThreshold, NoSignChange
from merodyn.family import MapSpec, TruncationPolicy, preimages
from merodyn.invariant import (CONVERGES, FINITE, INFINITE, criterion_exponent,
                               finiteness_criterion, gamma_decay_probe, lattice_sum_2d,
                               lattice_sum_triple, lyapunov_control, lyapunov_induced,
                               schwarzian_degree_criterion)
from merodyn.poincare import build_ps_measure, conformality_cells, conformality_check, estimate_h
from merodyn.raster import box_count, cantor_middle_thirds, refine_real_julia
from merodyn.sphere import schwarzian, sphere_grid
from merodyn.transfer import (TreeConfig, pressure_curve, tail_bracket, transfer_one,
                              uniform_bound_scan)

from conftest import ACCEPTANCE, HALF, MISI, TAN1
from test_invariant import RHO_H, _integral_test

pytestmark = pytest.mark.slow


@contextmanager
def criterion(n, title, budget):
    """Time the body, record one PASS/FAIL line, and hold the runtime to ``budget`` seconds."""
    note = {}
    t0 = time.perf_counter()
    ok = False
    try:
        yield note
        ok = True
    finally:
        dt = time.perf_counter() - t0
        ok = ok and dt < budget
        extra = "  " + note["msg"] if "msg" in note else ""
        ACCEPTANCE.append((n, f"{'PASS' if ok else 'FAIL'}  {n:2d}  {title}  "
                              f"[{dt:.1f}s of {budget:g}s]{extra}"))
    assert dt < budget, f"criterion {n} took {dt:.1f}s, budget {budget}s"


def test_c01_schwarzian_constancy():
    with criterion(1, "Schwarzian of lambda tan is 2", 1) as note:
        rng = np.random.default_rng(2024)
        worst = 0.0
        for lam in rng.normal(size=5) + 1j * rng.normal(size=5):
            z = rng.uniform(-1.3, 1.3, 100) + 1j * rng.uniform(-2, 2, 100)
            worst = max(worst, float(np.max(np.abs(schwarzian(MapSpec.tangent(lam), z) - 2))))
        note["msg"] = f"max |S - 2| = {worst:.2e}"
        assert worst <= 1e-8


def test_c02_closed_form_operator_sum():
    with criterion(2, "transfer sum at w = 0 brackets coth 1", 1) as note:
        r = transfer_one(TAN1, 1.0, 0j, TruncationPolicy(k_max=100_000))
        note["msg"] = f"[{r.low:.12f}, {r.high:.12f}]"
        assert r.low <= 1 / math.tanh(1.0) <= r.high
        assert r.high - r.low <= 1e-6


def test_c03_borel_threshold():
    with criterion(3, "divergence exactly at (rho + 1) t <= 1", 1) as note:
        for t in (0.40, 0.50):
            with pytest.raises(BelowBorelThreshold):
                transfer_one(TAN1, t, 0j)
            assert np.isinf(tail_bracket(TAN1, np.array([0j]), np.array([1.0]), 100, t)[1]).all()
        for t in (0.51, 0.6, 1.0):
            r = transfer_one(TAN1, t, 0j, TruncationPolicy(k_max=10_000), margin=0.0)
            assert math.isfinite(r.high) and r.low <= r.high
        note["msg"] = "diverges at 0.40, 0.50; finite at 0.51, 0.6, 1.0"


def test_c04_uniform_bound():
    with criterion(4, "bare operator sum bounded on the sphere", 30) as note:
        rep = uniform_bound_scan(MISI, 0.75, sphere_grid(200))
        note["msg"] = f"sup = {rep.sup:.4g}, sup/median = {rep.ratio:.3f}"
        assert math.isfinite(rep.sup) and rep.ratio <= 3


def test_c05_order_recovery():
    with criterion(5, "derivative growth order and tract band", 5) as note:
        ps = preimages(MISI, 0.4 + 0.3j, TruncationPolicy(k_max=501))
        z, d = ps.z[2:1002], ps.sph_deriv[2:1002]
        assert z.size == 1000
        slope = np.polyfit(np.log(np.abs(z)), np.log(d), 1)[0]
        rng = np.random.default_rng(5)
        w = rng.uniform(-200, 200, 1000) + 1j * rng.uniform(2, 40, 1000)
        ratios = []
        for x in w:
            _, off = MISI.asymptotic_offset(x)
            ratios.append(float(MISI.sph_deriv(x)) / ((1 + abs(x) ** 2) * abs(off)))
        C = math.sqrt(max(ratios) / min(ratios))
        note["msg"] = f"slope = {slope:.4f}, C = {C:.3f}"
        assert abs(slope - 2.0) <= 0.05 and C <= 4


def test_c06_pressure_monotone_and_stable():
    with criterion(6, "pressure decreasing and stable under truncation", 300) as note:
        grid = [0.6, 0.8, 1.0, 1.2, 1.5, 1.8, 2.0]
        worst = 0.0
        for f in (HALF, MISI):
            a = pressure_curve(f, grid, depth=8).extrapolated
            b = pressure_curve(f, grid, depth=10).extrapolated
            c = pressure_curve(f, grid, depth=8, cfg=TreeConfig(k_branch=2 * TreeConfig().K)).extrapolated
            vals = [v for v, _ in a]
            assert all(y < x for x, y in zip(vals, vals[1:]))
            for (v, e), (v2, e2), (v3, e3) in zip(a, b, c):
                assert abs(v - v2) <= e + e2 and abs(v - v3) <= e + e3
                worst = max(worst, abs(v - v2) / (e + e2), abs(v - v3) / (e + e3))
        note["msg"] = f"largest shift / combined bar = {worst:.2f}"


def test_c07_bowen_triangle():
    with criterion(7, "pressure root, Ulam and box dimension agree", 300) as note:
        pr = pressure_root(HALF, 0.01, depth=8)
        ul = ulam_root(HALF)
        levels = refine_real_julia(HALF, 12, 1e-7)
        bc = box_count(levels[12], [2 * math.pi / 2 ** j for j in range(6, 17)])
        note["msg"] = f"root {pr.h:.4f}, Ulam {ul.h:.4f}, box {bc.slope:.4f}"
        assert abs(pr.h - ul.h) <= 0.05
        assert abs(pr.h - bc.slope) <= 0.07


def test_c08_sphere_instance(misi_regime):
    with criterion(8, "Julia set is the sphere: h = 2", 600) as note:
        try:
            r = pressure_root(MISI, 0.01, depth=8)
            h, root = r.h, f"{r.h:.4f}"
            assert abs(r.h - 2.0) <= 0.05
        except NoSignChange as e:
            assert e.flag == JULIA_LIKELY_SPHERE
            h, root = e.estimate, e.flag
        grid = [0.6, 0.8, 1.0, 1.2, 1.4, 1.6, 1.8, 1.91, 2.0]
        e = estimate_h(MISI, grid, n_max=12, cfg=TreeConfig(), regime=misi_regime)
        lo, hi = e.bracket
        rep = bounds_check(h, misi_regime, rho=1)
        note["msg"] = f"root {root}, series bracket [{lo}, {hi}], chain {'ok' if rep.passed else 'broken'}"
        assert lo <= 2.0 <= hi and hi - lo <= 0.1
        assert rep.passed and rep.checks[-1]["name"] == "sub_expanding" and rep.checks[-1]["lhs"] == 1.0


def test_c09_conformality(misi_regime):
    with criterion(9, "Patterson-Sullivan measure is 2-conformal", 300) as note:
        m = build_ps_measure(MISI, 2.05, 8, TreeConfig(res=0.02))
        avoid = list(MISI.asymptotic_values) + list(misi_regime.postsingular)
        cells = conformality_cells(MISI, m, 20, 0.05, avoid, misi_regime.safety_radius)
        good = conformality_check(MISI, m, cells, 2.0)
        bad = conformality_check(MISI, m, cells, 1.2)
        note["msg"] = f"{len(cells)} cells, C(2.0) = {good.C:.3f}, C(1.2) = {bad.C:.3f}"
        assert len(cells) == 20
        assert good.C <= 2 and not good.nonconformal
        assert bad.nonconformal


def test_c10_finiteness_lattice_consistency():
    with criterion(10, "finiteness criterion agrees with the lattice sums", 60) as note:
        for r, h in RHO_H:
            lat = lattice_sum_triple(criterion_exponent(r, h), n_cap=64)
            assert (finiteness_criterion(r, h) == FINITE) == (lat.classification == CONVERGES)
        for s in (0.9, 1.0, 1.1, 1.4, 1.5, 1.6):
            assert lattice_sum_2d(s, n_cap=100).classification == _integral_test(s, 0)
            assert lattice_sum_triple(s, n_cap=100).classification == _integral_test(s, 1)
        note["msg"] = f"{len(RHO_H)} (rho, h) points, 6 exponents x 2 sums"


def test_c11_degree_table():
    with criterion(11, "Schwarzian degree table", 1) as note:
        got = [schwarzian_degree_criterion(d) for d in range(5)]
        note["msg"] = ", ".join(f"{d}:{v}" for d, v in enumerate(got))
        assert got == [FINITE, FINITE, INFINITE, INFINITE, INFINITE]


def test_c12_lyapunov_positive():
    with criterion(12, "Lyapunov exponent of the induced map is positive", 120) as note:
        m = build_ps_measure(MISI, 2.05, 8, TreeConfig(res=0.02))
        L = lyapunov_induced(MISI, m, 200, 100, seed=0)
        ctl = lyapunov_control(MISI, 0j, 100)
        note["msg"] = (f"chi = {L.chi:.4f} +- {L.std_err:.4f} ({L.n_samples} orbits), "
                       f"control - log pi = {ctl.chi - math.log(math.pi):.1e}")
        assert L.chi > 0 and L.rel_err <= 0.10
        assert abs(ctl.chi - math.log(math.pi)) <= 1e-9


def test_c13_decay_probe(misi_measure, misi_regime):
    with criterion(13, "measure of the nested annuli decays geometrically", 120) as note:
        d = gamma_decay_probe(MISI, misi_measure, n_max=8, regime=misi_regime)
        note["msg"] = f"gamma = {d.gamma:.4f}, r2 = {d.r2:.4f}"
        assert d.gamma <= 0.9 and d.r2 >= 0.8


def test_c14_box_count_fixtures():
    with criterion(14, "box counting on segment, square, Cantor set", 30) as note:
        e = np.linspace(0, 1, 5001)
        seg = box_count(np.stack([e[:-1], e[1:]], -1), 1 / np.array([8, 16, 32, 64, 128, 256, 512, 1000]),
                        kind="intervals").slope
        g = (np.arange(500) + 0.5) / 500
        sq = box_count((g[:, None] + 1j * g[None, :]).ravel(),
                       1 / np.array([4, 8, 16, 32, 64, 128, 250, 500])).slope
        ca = box_count(cantor_middle_thirds(12), [3.0 ** -k for k in range(2, 11)],
                       kind="intervals").slope
        note["msg"] = f"{seg:.4f} / {sq:.4f} / {ca:.4f}"
        assert abs(seg - 1) <= 0.02 and abs(sq - 2) <= 0.02
        assert abs(ca - math.log(2) / math.log(3)) <= 0.02


def test_c15_selftest_determinism(capsys):
    from merodyn.cli import main
    with criterion(15, "selftest output byte-identical across worker counts", 600) as note:
        outs = []
        for workers in ("1", "2"):
            code = main(["selftest", "--seed", "17", "--workers", workers])
            outs.append(capsys.readouterr().out)
            assert code == 0
        note["msg"] = f"{len(outs[0].splitlines())} records each"
        assert outs[0] == outs[1]
