"""Hausdorff dimension through Bowen's formula: the zero of t -> P(t)."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq

from .errors import ComplexParameter, NoSignChange, PowerIterationStall
from .family import HYPERBOLIC, SUB_EXPANDING, MapSpec, RegimeReport
from .sphere import chordal_dist
from .transfer import TreeConfig, check_threshold, pressure_estimate, singular_centers, tail_bracket

PRESSURE_ROOT, ULAM, BOX_COUNT, POINCARE_CUTOFF = "PressureRoot", "Ulam", "BoxCount", "PoincareCutoff"
JULIA_LIKELY_SPHERE = "JuliaLikelySphere"
INCONSISTENT_TRUNCATION = "InconsistentTruncation"


@dataclass
class DimensionEstimate:
    h: float
    bracket: tuple
    method: str
    residual: float
    rho: float = 1.0
    flag: str | None = None
    evaluations: list = field(default_factory=list)

    def __post_init__(self):
        lo, hi = self.bracket
        thr = self.rho / (self.rho + 1)
        # every emitted estimate must respect rho/(rho+1) < h <= 2
        if not (thr < lo <= self.h <= hi <= 2 and lo < hi):
            raise AssertionError(f"dimension estimate {self.h} {self.bracket} violates "
                                 f"{thr:.4g} < low <= h <= high <= 2")

    def as_record(self) -> dict:
        return {"h": self.h, "bracket": list(self.bracket), "method": self.method,
                "residual": self.residual, "flag": self.flag,
                "evaluations": [list(e) for e in self.evaluations]}


def default_base(f: MapSpec, min_dist: float = 0.1) -> complex:
    """A deterministic base point well away from the asymptotic values and their orbits."""
    cen = np.array(singular_centers(f))
    for z in (1 + 0.5j, -0.7 + 1.3j, 2.2 - 0.4j, 0.3 - 2.1j, 5 + 5j):
        if np.min(chordal_dist(cen, z)) > min_dist:
            return z
    raise ValueError("no admissible base point")


def pressure_root(f: MapSpec, bisect_tol: float = 0.01, depth: int = 10,
                  cfg: TreeConfig = TreeConfig(), base=None, lo: float | None = None,
                  hi: float = 2.0) -> DimensionEstimate:
    """Bisection for P(t) = 0 on [rho/(rho+1) + 0.02, 2].

    Signs are only trusted outside the error bars; when a midpoint's bar
    straddles zero the bracket becomes mid +- err / |slope| and the search
    stops.
    """
    base = default_base(f) if base is None else base
    rho = float(f.rho)
    lo = f.borel_threshold + 0.02 if lo is None else lo
    evals = []

    def P(t):
        r = pressure_estimate(f, t, base, depth, cfg)
        evals.append((t, r.value, r.error))
        return r.value, r.error

    if hi - lo <= bisect_tol:
        mid = 0.5 * (lo + hi)
        v, e = P(mid)
        return DimensionEstimate(mid, (lo, hi), PRESSURE_ROOT, abs(v), rho, None, evals)
    p_lo, e_lo = P(lo)
    p_hi, e_hi = P(hi)
    if p_hi - e_hi > 0:
        raise NoSignChange("P > 0 on the whole interval", flag=JULIA_LIKELY_SPHERE, estimate=hi)
    if p_lo + e_lo < 0:
        raise NoSignChange("P < 0 on the whole interval", flag=INCONSISTENT_TRUNCATION, estimate=lo)
    slope = (p_hi - p_lo) / (hi - lo)
    if abs(p_hi) <= e_hi:
        # zero inside the error bar at the right end
        low = max(lo, hi - e_hi / abs(slope))
        return DimensionEstimate(hi, (low, hi), PRESSURE_ROOT, abs(p_hi), rho, None, evals)
    a, b, pa, pb = lo, hi, p_lo, p_hi
    while b - a > bisect_tol:
        m = 0.5 * (a + b)
        pm, em = P(m)
        if abs(pm) <= em:
            w = em / abs(slope)
            low, high = max(a, m - w), min(b, m + w)
            return DimensionEstimate(m, (low, high), PRESSURE_ROOT, abs(pm), rho, None, evals)
        if pm > 0:
            a, pa = m, pm
        else:
            b, pb = m, pm
    h = a + pa / (pa - pb) * (b - a)
    return DimensionEstimate(h, (a, b), PRESSURE_ROOT, min(abs(pa), abs(pb)), rho, None, evals)


# ------------------------------------------------------------------ Ulam
def _require_real(f: MapSpec):
    if not f.is_real or not 0 < complex(f.lam).real < 1:
        raise ComplexParameter("Ulam estimator needs the tangent family with real lambda in (0, 1)")


def real_basin_edge(f: MapSpec) -> float:
    """x1 > 0 with lambda tan x1 = x1: the immediate basin of 0 is (-x1, x1)."""
    _require_real(f)
    lam = complex(f.lam).real
    return brentq(lambda x: math.tan(x) - x / lam, 1e-9, math.pi / 2 - 1e-12, xtol=1e-15)


def phi_of(x):
    """Angle coordinate 2 arctan x taken mod 2 pi: cut at x = 0, infinity at pi."""
    p = 2 * np.arctan(x)
    return np.where(p < 0, p + 2 * math.pi, p)


def ulam_matrix(f: MapSpec, t: float, bins: int, k_branch: int = 200, interval=None):
    """Backward Ulam matrix on the survival arc from x1 through infinity to -x1.

    Bins are equal-width in phi = 2 arctan x (mod 2 pi).  Row i sums
    |f'(z_k)|_sigma^-t over the real preimages z_k of the bin midpoint into
    the bins of z_k; the tail |k| > k_branch goes to the bin holding infinity.
    The arc is forward invariant under the inverse branches, so no mass
    leaves it.
    """
    _require_real(f)
    if interval is None:
        x1 = real_basin_edge(f)
        interval = (float(phi_of(x1)), float(phi_of(-x1)))
    pa, pb = interval
    width = pb - pa
    mid = pa + (np.arange(bins) + 0.5) * width / bins
    w = np.tan(mid / 2).astype(complex)
    k = np.arange(-k_branch, k_branch + 1)
    z0 = np.atleast_1d(f.preimage_base(w)).real
    A = np.atleast_1d(f.lattice_factor(w))
    Z = z0[:, None] + k[None, :] * math.pi
    val = (A[:, None] * (1 + Z ** 2)) ** -t
    col = np.clip(np.floor((phi_of(Z) - pa) / width * bins).astype(int), 0, bins - 1)
    lo, hi = tail_bracket(f, z0.astype(complex), A, k_branch, t)
    inf_bin = min(bins - 1, int((math.pi - pa) / width * bins))
    rows = np.concatenate([np.repeat(np.arange(bins), k.size), np.arange(bins)])
    cols = np.concatenate([col.ravel(), np.full(bins, inf_bin)])
    vals = np.concatenate([val.ravel(), 0.5 * (lo + hi)])
    return sp.csr_matrix((vals, (rows, cols)), shape=(bins, bins))


def power_log_eigenvalue(M, tol: float = 1e-10, max_iter: int = 20000) -> float:
    v = np.ones(M.shape[0])
    lam = 0.0
    for _ in range(max_iter):
        u = M @ v
        new = float(np.abs(u).sum() / np.abs(v).sum())
        u /= np.abs(u).sum()
        if lam > 0 and abs(new - lam) <= tol * new:
            return math.log(new)
        v, lam = u, new
    raise PowerIterationStall(f"no convergence to {tol} in {max_iter} iterations")


def ulam_pressure(f: MapSpec, t: float, bins: int = 4000, k_branch: int = 200,
                  interval=None) -> float:
    """log of the leading eigenvalue of the Ulam matrix."""
    check_threshold(f, t, margin=0.0)
    return power_log_eigenvalue(ulam_matrix(f, t, bins, k_branch, interval))


def ulam_root(f: MapSpec, bins: int = 4000, k_branch: int = 200, lo: float | None = None,
              hi: float = 2.0, xtol: float = 1e-6) -> DimensionEstimate:
    _require_real(f)
    lo = f.borel_threshold + 0.02 if lo is None else lo
    g = lambda t: ulam_pressure(f, t, bins, k_branch)
    h = brentq(g, lo, hi, xtol=xtol)
    # bracket from the resolution change bins -> bins / 2
    h2 = brentq(lambda t: ulam_pressure(f, t, bins // 2, k_branch), lo, hi, xtol=xtol)
    w = max(abs(h - h2), 2 * xtol)
    return DimensionEstimate(h, (max(lo, h - w), min(hi, h + w)), ULAM, abs(g(h)), float(f.rho))


# ------------------------------------------------------------------ bounds
@dataclass
class BoundsReport:
    passed: bool
    checks: list

    def as_record(self) -> dict:
        return {"passed": self.passed, "checks": self.checks}


def bounds_check(est, regime: RegimeReport | None = None,
                 rho: float | None = None) -> BoundsReport:
    """rho/(rho+1) < h <= 2 always; 2 rho/(rho+1) < h for sub-expanding maps.

    ``est`` is a DimensionEstimate or a bare value of h (which may violate
    the bounds; that is what the report is for).
    """
    h = float(est.h if isinstance(est, DimensionEstimate) else est)
    if rho is None:
        rho = est.rho if isinstance(est, DimensionEstimate) else 1.0
    rho = float(rho)
    checks = [{"name": "borel", "lhs": rho / (rho + 1), "rhs": h, "ok": rho / (rho + 1) < h},
              {"name": "sphere", "lhs": h, "rhs": 2.0, "ok": h <= 2.0}]
    if regime is not None and regime.regime == SUB_EXPANDING:
        thr = 2 * rho / (rho + 1)
        checks.append({"name": "sub_expanding", "lhs": thr, "rhs": h, "ok": thr < h})
    return BoundsReport(all(c["ok"] for c in checks), checks)


def regime_label(regime: RegimeReport) -> str:
    """Which theory covers a Bowen-formula run for this regime."""
    return {SUB_EXPANDING: "sub-expanding", HYPERBOLIC: "hyperbolic"}.get(regime.regime, "unsupported")
