"""Fast built-in checks, one per elementary example of each module.

Every check takes a numpy Generator (seeded per check from the master seed
and the check index) and returns ``(passed, value, expected)``.  Values are
plain floats, strings or lists so the records serialize identically in any
process.
"""
from __future__ import annotations

import math

import numpy as np

from .bowen import bounds_check, pressure_root, ulam_pressure
from .errors import BelowBorelThreshold
from .family import SUB_EXPANDING, MapSpec, TruncationPolicy, classify_regime, preimages, tract_cells
from .invariant import (FINITE, INFINITE, InducedDomain, finiteness_criterion, gamma_decay_probe,
                        induced_return, lyapunov_induced, martens_ratio,
                        schwarzian_degree_criterion)
from .poincare import (AtomicMeasure, build_ps_measure, conformality_check, estimate_h,
                       poincare_partial, tightness_profile)
from .raster import box_count, refine_real_julia, fundamental_intervals, classify_point
from .sphere import (INF, MobiusMap, chordal_dist, is_inf, orbit_spherical_derivative, schwarzian,
                     spherical_derivative)
from .transfer import TreeConfig, distortion_probe, pressure_estimate, transfer_one

TAN1 = MapSpec.tangent(1.0)
HALF = MapSpec.tangent(0.5)
MISI = MapSpec.tangent(1j * math.pi)


def _close(a, b, tol):
    return bool(abs(a - b) <= tol)


# ------------------------------------------------------------ sphere-geom
def chordal_zero_inf(rng):
    v = float(chordal_dist(0j, INF))
    return v == 1.0, v, 1.0


def chordal_self(rng):
    z = complex(*rng.normal(size=2))
    v = float(chordal_dist(z, z))
    return v == 0.0, v, 0.0


def chordal_zero_one(rng):
    v = float(chordal_dist(0j, 1 + 0j))
    return _close(v, 1 / math.sqrt(2), 1e-15), v, 1 / math.sqrt(2)


def sph_deriv_identity(rng):
    z = complex(*rng.normal(size=2)) * 3
    v = spherical_derivative(MobiusMap(1, 0, 0, 1), z)
    return _close(v, 1.0, 1e-14), v, 1.0


def sph_deriv_tan_zero(rng):
    v = spherical_derivative(TAN1, 0j)
    return _close(v, 1.0, 1e-15), v, 1.0


def orbit_base_case(rng):
    z = complex(*rng.normal(size=2)) * 0.5
    a, b = orbit_spherical_derivative(TAN1, z, 1), spherical_derivative(TAN1, z)
    return _close(a, b, 1e-14 * b), a, b


def orbit_fixed_point(rng):
    v = orbit_spherical_derivative(TAN1, 0j, 5)
    return _close(v, 1.0, 1e-14), v, 1.0


def schwarzian_mobius(rng):
    c = rng.normal(size=4) + 1j * rng.normal(size=4)
    M = MobiusMap(*c)
    z = complex(*rng.normal(size=2))
    while M.pole_distance(z) < 0.1:
        z += 0.5
    v = abs(complex(schwarzian(M, z)))
    return v <= 1e-8, v, 0.0


def schwarzian_mobius_invariance(rng):
    c = rng.normal(size=4) + 1j * rng.normal(size=4)
    M = MobiusMap(*c)
    g = _PostCompose(M, HALF)
    z = complex(rng.uniform(-1, 1), rng.uniform(-1, 1)) * 0.5
    a, b = complex(schwarzian(g, z)), complex(schwarzian(HALF, z))
    return abs(a - b) <= 1e-8, abs(a - b), 0.0


class _PostCompose:
    """M o f with the derivative tuple of the composition (exact chain rule)."""

    def __init__(self, M, f):
        self.M, self.f = M, f

    def derivatives(self, z):
        f0, f1, f2, f3 = self.f.derivatives(z)
        m0, m1, m2, m3 = self.M.derivatives(f0)
        return (m0, m1 * f1, m2 * f1 ** 2 + m1 * f2, m3 * f1 ** 3 + 3 * m2 * f1 * f2 + m1 * f3)

    def pole_distance(self, z):
        return min(self.f.pole_distance(z), float(self.M.pole_distance(self.f(z))))


# ------------------------------------------------------------ map-family
def eval_tan_quarter(rng):
    v = complex(TAN1(math.pi / 4))
    return _close(v, 1.0, 1e-15), [v.real, v.imag], 1.0


def eval_pole(rng):
    lam = complex(*rng.normal(size=2))
    v = MapSpec.tangent(lam)(math.pi / 2)
    return bool(is_inf(v)), "inf" if is_inf(v) else repr(v), "inf"


def preimages_zero(rng):
    ps = preimages(TAN1, 0j, TruncationPolicy(k_max=10))
    want = np.sort(np.abs(np.arange(-10, 11) * math.pi))
    got = np.sort(np.abs(ps.z))
    err = float(np.max(np.abs(got - want)))
    return err <= 1e-12 and len(ps.z) == 21, err, 0.0


def preimages_one(rng):
    ps = preimages(TAN1, 1 + 0j, TruncationPolicy(k_max=10))
    r = (ps.z - math.pi / 4) / math.pi
    err = float(np.max(np.abs(r - np.rint(r))) + np.max(np.abs(ps.z.imag)))
    return err <= 1e-12, err, 0.0


def preimages_inf(rng):
    ps = preimages(TAN1, INF, TruncationPolicy(k_max=10))
    r = (ps.z - math.pi / 2) / math.pi
    err = float(np.max(np.abs(r - np.rint(r))) + np.max(np.abs(ps.z.imag)))
    return err <= 1e-12, err, 0.0


def regime_lambda_one(rng):
    v = classify_regime(TAN1).regime
    return v == "Unsupported", v, "Unsupported"


def tract_orientation(rng):
    a = 1j * complex(MISI.lam)       # lambda i
    c = tract_cells(MISI, a, 0, 0)[0]
    v = float(complex(c.z).imag)
    return v > 0, v, "> 0"


# ------------------------------------------------------------ transfer-op
def large_t_domination(rng):
    t = 40.0
    r = transfer_one(TAN1, t, 0.3 + 0j)
    z0 = math.atan(0.3)
    top = spherical_derivative(TAN1, z0) ** -t
    rel = abs(r.value / top - 1)
    return rel <= 1e-6, rel, 0.0


def scan_below_threshold(rng):
    try:
        transfer_one(MISI, 0.4, 0.5 + 0j)
    except BelowBorelThreshold:
        return True, "BelowBorelThreshold", "BelowBorelThreshold"
    return False, "no error", "BelowBorelThreshold"


def pressure_depth_one(rng):
    base = 1 + 0.5j
    cfg = TreeConfig()
    r = pressure_estimate(HALF, 1.0, base, depth=3, cfg=cfg)
    # same branch count as the tree, so both close the same tail
    want = math.log(transfer_one(HALF, 1.0, base, TruncationPolicy(k_max=cfg.K)).value)
    return _close(r.P_n[0], want, 1e-9), r.P_n[0], want


def distortion_depth_zero(rng):
    v = distortion_probe(MISI, 1 + 0.5j, 0.05, 0, 20, seed=int(rng.integers(2 ** 31)))
    return v == 1.0, v, 1.0


def distortion_small_delta(rng):
    v = distortion_probe(MISI, 1 + 0.5j, 1e-7, 3, 20, seed=int(rng.integers(2 ** 31)))
    return _close(v, 1.0, 1e-4), v, 1.0


# ------------------------------------------------------------ poincare-measure
def poincare_base_case(rng):
    cfg = TreeConfig()
    s = poincare_partial(HALF, 1.0, 1, cfg)
    want = transfer_one(HALF, 1.0, INF, TruncationPolicy(k_max=cfg.K)).value
    return _close(s.terms[0], want, 1e-9 * want), s.terms[0], want


def poincare_below_threshold(rng):
    try:
        poincare_partial(HALF, 0.45, 2)
    except BelowBorelThreshold:
        return True, "BelowBorelThreshold", "BelowBorelThreshold"
    return False, "no error", "BelowBorelThreshold"


def estimate_h_gating(rng):
    e = estimate_h(HALF, [0.6, 0.7, 0.8, 0.9, 1.0, 1.2], n_max=8, regime=classify_regime(HALF))
    lo, hi = e.bracket
    return bool(0.5 < lo and hi <= 2 and not e.diagnostics.get("inconsistent_regime")), [lo, hi], "(0.5, 2]"


def ps_depth_one(rng):
    s = 1.5
    m = build_ps_measure(HALF, s, depth_max=1)
    poles = math.pi / 2 + np.arange(-3, 4) * math.pi
    w = HALF.sph_deriv(poles) ** -s
    got = np.array([m.weights[np.argmin(np.abs(m.points - p))] for p in poles])
    err = float(np.max(np.abs(got / got[3] - w / w[3])))
    at_poles = float(np.max(np.min(np.abs(m.points[:, None] - poles[None, :]), axis=0)))
    return err <= 1e-12 and at_poles <= 1e-12, err, 0.0


def ps_total_mass(rng):
    m = build_ps_measure(HALF, 1.5, depth_max=3)
    v = math.fsum(m.weights.tolist())
    return _close(v, 1.0, 1e-12), v, 1.0


class _Identity:
    """The identity map dressed as a family, for conformality plumbing checks."""
    asymptotic_values = ()
    period = 1e6 + 0j

    def sph_deriv(self, z):
        return np.ones(np.shape(z))

    def preimage_base(self, w):
        return np.asarray(w, dtype=complex)

    def pole_distance(self, z):
        return 1.0


def conformality_identity(rng):
    pts = 0.05 * (rng.normal(size=400) + 1j * rng.normal(size=400))
    w = rng.random(400)
    m = AtomicMeasure(pts, w / w.sum(), np.zeros(400, dtype=int), 2.0, 0.0, 1)
    r = conformality_check(_Identity(), m, [(0j, 0.05)], 2.0, min_atoms=50)
    return r.ratios[0] == 1.0, r.ratios[0], 1.0


def tightness_extremes(rng):
    pts = (1 + rng.random(100)) * np.exp(2j * math.pi * rng.random(100))
    m = AtomicMeasure(pts, np.full(100, 0.01), np.ones(100, dtype=int), 2.0, 0.0, 1)
    lo, hi = float(np.min(np.abs(pts))), float(np.max(np.abs(pts)))
    prof = tightness_profile(m, [0.5 * lo, 2 * hi])
    return _close(prof.mass[0], 1.0, 1e-12) and prof.mass[1] == 0.0, prof.mass, [1.0, 0.0]


# ------------------------------------------------------------ bowen-dim
def root_degenerate_tol(rng):
    e = pressure_root(HALF, bisect_tol=1.0, depth=4, lo=0.6, hi=1.6)
    return bool(len(e.evaluations) == 1 and tuple(e.bracket) == (0.6, 1.6)), list(e.bracket), [0.6, 1.6]


def ulam_one_bin(rng):
    t = 1.0
    v = ulam_pressure(HALF, t, bins=1, interval=(0.0, 2 * math.pi))
    # the single bin has midpoint phi = pi, i.e. x = infinity
    want = math.log(transfer_one(HALF, t, INF).value)
    return _close(v, want, 1e-6), v, want


def bounds_hyperbolic(rng):
    r = bounds_check(0.8, classify_regime(HALF), rho=1)
    return r.passed and len(r.checks) == 2, r.passed, True


def bounds_below_borel(rng):
    r = bounds_check(0.4, None, rho=1)
    return not r.passed, r.passed, False


# ------------------------------------------------------------ invariant-lab
def criterion_boundary(rng):
    v = finiteness_criterion(1, 1.5)
    return v == INFINITE, v, INFINITE


def criterion_tangent(rng):
    v = finiteness_criterion(1, 2)
    return v == FINITE, v, FINITE


def degree_table(rng):
    v = [schwarzian_degree_criterion(d) for d in range(5)]
    want = [FINITE, FINITE, INFINITE, INFINITE, INFINITE]
    return v == want, v, want


def _misi_measure():
    return build_ps_measure(MISI, 2.05, 6, TreeConfig(res=0.02))


def martens_identity(rng):
    m = _misi_measure()
    A = (1 + 1j, 0.08)
    r = martens_ratio(MISI, m, A, A, n_max=4)
    return all(x == 1.0 for x in r.ratios), r.ratios, 1.0


def martens_swap(rng):
    m = _misi_measure()
    A, A0 = (1 + 1j, 0.08), (-0.8 + 0.5j, 0.08)
    a = martens_ratio(MISI, m, A, A0, n_max=4)
    b = martens_ratio(MISI, m, A0, A, n_max=4)
    err = a.error + b.error / b.limit ** 2
    return abs(a.limit - 1 / b.limit) <= err + 1e-12, [a.limit, 1 / b.limit], "equal within errors"


def decay_protocol(rng):
    m = build_ps_measure(MISI, 2.05, 8, TreeConfig(res=0.02))
    d = gamma_decay_probe(MISI, m, n_max=4)
    ok = d.masses[0] <= 1 and min(d.masses) >= 0 and min(d.counts) >= 30
    return bool(ok), d.masses[0], "<= 1"


def induced_one_step(rng):
    dom = InducedDomain.from_regime(MISI)
    for _ in range(1000):
        z = complex(rng.uniform(-1.5, 1.5), rng.uniform(-1, 1))
        if dom.contains(z)[0] and dom.contains(complex(MISI(z)))[0]:
            break
    tau, _, _ = induced_return(MISI, z, 10, dom)
    return tau == 1, tau, 1


def induced_chain_rule(rng):
    dom = InducedDomain.from_regime(MISI)
    while True:
        z = complex(rng.uniform(-1.5, 1.5), rng.uniform(-1, 1))
        if dom.contains(z)[0]:
            break
    t1, w, l1 = induced_return(MISI, z, 1000, dom)
    t2, y, l2 = induced_return(MISI, w, 1000, dom)
    # the same orbit walked in one go: tau1 + tau2 steps of f
    acc, x = 0.0, z
    for _ in range(t1 + t2):
        acc += float(MISI.log_sph_deriv(x))
        x = complex(MISI(x))
    return _close(l1 + l2, acc, 1e-9 * max(1.0, abs(acc))), l1 + l2, acc


def lyapunov_two_seeds(rng):
    m = _misi_measure()
    dom = InducedDomain.from_regime(MISI)
    s1, s2 = (int(x) for x in rng.integers(2 ** 31, size=2))
    a = lyapunov_induced(MISI, m, 60, 40, seed=s1, domain=dom)
    b = lyapunov_induced(MISI, m, 60, 40, seed=s2, domain=dom)
    tol = 2 * math.hypot(a.std_err, b.std_err)
    return abs(a.chi - b.chi) <= tol, [a.chi, b.chi], f"within {tol!r}"


# ------------------------------------------------------------ julia-raster
def raster_pole(rng):
    c = classify_point(HALF, math.pi / 2, 200, classify_regime(HALF))
    return c.kind == "Julia", c.kind, "Julia"


def refine_depth_zero(rng):
    levels = refine_real_julia(HALF, 0, min_len=1e-4)
    lo, hi, _, _ = fundamental_intervals(HALF, 1e-4)
    same = np.array_equal(levels[0].lo, lo) and np.array_equal(levels[0].hi, hi)
    return bool(same), len(levels[0]), len(lo)


def refine_length_decreasing(rng):
    levels = refine_real_julia(HALF, 6, min_len=1e-7)
    L = [lv.total_length for lv in levels]
    return bool(all(b < a for a, b in zip(L, L[1:]))), L, "strictly decreasing"


def box_segment(rng):
    e = np.linspace(0.0, 1.0, 2001)
    r = box_count(np.stack([e[:-1], e[1:]], -1), 1 / np.array([8, 16, 32, 64, 128, 256, 512, 1000]))
    return _close(r.slope, 1.0, 0.02), r.slope, 1.0


def box_square(rng):
    g = (np.arange(1000) + 0.5) / 1000
    P = np.stack(np.meshgrid(g, g), -1).reshape(-1, 2)
    r = box_count(P, 1 / np.array([4, 8, 16, 32, 64, 128, 250, 500]))
    return _close(r.slope, 2.0, 0.02), r.slope, 2.0


CHECKS = [
    ("sphere-geom", "chordal (0, inf) = 1", chordal_zero_inf),
    ("sphere-geom", "chordal (z, z) = 0", chordal_self),
    ("sphere-geom", "chordal (0, 1) = 1/sqrt 2", chordal_zero_one),
    ("sphere-geom", "identity has spherical derivative 1", sph_deriv_identity),
    ("sphere-geom", "tan at 0 has spherical derivative 1", sph_deriv_tan_zero),
    ("sphere-geom", "orbit derivative n=1", orbit_base_case),
    ("sphere-geom", "orbit derivative at neutral fixed point", orbit_fixed_point),
    ("sphere-geom", "Schwarzian of a Mobius map vanishes", schwarzian_mobius),
    ("sphere-geom", "Schwarzian is Mobius invariant", schwarzian_mobius_invariance),
    ("map-family", "tan(pi/4) = 1", eval_tan_quarter),
    ("map-family", "pi/2 is a pole", eval_pole),
    ("map-family", "preimages of 0", preimages_zero),
    ("map-family", "preimages of 1", preimages_one),
    ("map-family", "preimages of infinity", preimages_inf),
    ("map-family", "lambda = 1 is unsupported", regime_lambda_one),
    ("map-family", "tract cell orientation", tract_orientation),
    ("transfer-op", "large t: one branch dominates", large_t_domination),
    ("transfer-op", "t = 0.4 below threshold", scan_below_threshold),
    ("transfer-op", "first pressure term is log L1", pressure_depth_one),
    ("transfer-op", "distortion at depth 0", distortion_depth_zero),
    ("transfer-op", "distortion for tiny disks", distortion_small_delta),
    ("poincare-measure", "first Poincare term sums over poles", poincare_base_case),
    ("poincare-measure", "Poincare series below threshold", poincare_below_threshold),
    ("poincare-measure", "hyperbolic exponent bracket gating", estimate_h_gating),
    ("poincare-measure", "depth-1 atoms at the poles", ps_depth_one),
    ("poincare-measure", "unit total mass", ps_total_mass),
    ("poincare-measure", "identity cell ratio", conformality_identity),
    ("poincare-measure", "tightness extremes", tightness_extremes),
    ("bowen-dim", "degenerate bisection tolerance", root_degenerate_tol),
    ("bowen-dim", "one-bin Ulam matrix", ulam_one_bin),
    ("bowen-dim", "hyperbolic bounds chain", bounds_hyperbolic),
    ("bowen-dim", "h below the Borel threshold fails", bounds_below_borel),
    ("invariant-lab", "strict boundary h = 3/2", criterion_boundary),
    ("invariant-lab", "tangent family at h = 2", criterion_tangent),
    ("invariant-lab", "Schwarzian degree table", degree_table),
    ("invariant-lab", "Martens ratio of a cell with itself", martens_identity),
    ("invariant-lab", "Martens reciprocal symmetry", martens_swap),
    ("invariant-lab", "decay probe protocol", decay_protocol),
    ("invariant-lab", "single-step return", induced_one_step),
    ("invariant-lab", "returns compose", induced_chain_rule),
    ("invariant-lab", "Lyapunov seeds agree", lyapunov_two_seeds),
    ("julia-raster", "pole is in the Julia set", raster_pole),
    ("julia-raster", "depth 0 is the fundamental set", refine_depth_zero),
    ("julia-raster", "refined length decreases", refine_length_decreasing),
    ("julia-raster", "segment box dimension", box_segment),
    ("julia-raster", "square box dimension", box_square),
]
