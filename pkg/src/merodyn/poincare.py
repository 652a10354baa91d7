"""Poincare series at infinity, the convergence exponent h, and
Patterson-Sullivan type atomic measures built on the backward orbit of infinity.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CellTooThin, InconclusiveRatio, NotInjectiveOnCell, SubcriticalExponent
from .family import SUB_EXPANDING, MapSpec, RegimeReport
from .sphere import INF, chordal_dist, chordal_disk_to_euclid, is_inf, to_sphere
from .transfer import DEFAULT_MARGIN, TreeConfig, backward_tree, extrapolate

DEFAULT_SIGMA = 0.03
CONVERGENT, DIVERGENT, INCONCLUSIVE = "Convergent", "Divergent", "Inconclusive"


@dataclass
class PoincareSeries:
    t: float
    terms: list                 # L_t^n 1(inf), n = 1..n_max
    partial_sums: list
    log_ratio: float            # fitted log of the per-n ratio
    log_ratio_err: float

    @property
    def ratio(self) -> float:
        return math.exp(self.log_ratio)

    def as_record(self) -> dict:
        return {"t": self.t, "terms": self.terms, "partial_sums": self.partial_sums,
                "ratio": self.ratio, "log_ratio": self.log_ratio, "error": self.log_ratio_err}


def poincare_partial(f: MapSpec, t: float, n_max: int, cfg: TreeConfig = TreeConfig(),
                     margin: float = DEFAULT_MARGIN) -> PoincareSeries:
    """Per-n terms L_t^n 1(inf) from the tree rooted at infinity (level 1 = the poles)."""
    logs = [lev.log_total for lev in backward_tree(f, t, INF, n_max, cfg, margin)][1:]
    terms = [math.exp(x) for x in logs]
    partial = list(np.cumsum(terms))
    r = [logs[0]] + [b - a for a, b in zip(logs, logs[1:])]
    # the first increment compares with the single root and carries no ratio information
    lr, err = extrapolate(r[1:]) if len(r) > 1 else (r[0], abs(r[0]))
    return PoincareSeries(t, terms, [float(x) for x in partial], float(lr), float(err))


@dataclass
class ExponentEstimate:
    h: float
    bracket: tuple
    method: str
    diagnostics: dict = field(default_factory=dict)

    def as_record(self) -> dict:
        return {"h": self.h, "bracket": list(self.bracket), "method": self.method,
                "diagnostics": self.diagnostics}


def exponent_from_log_ratios(t_grid, log_ratios, sigma: float = DEFAULT_SIGMA,
                             lower: float = 0.0, upper: float = 2.0) -> ExponentEstimate:
    """Convergence exponent from fitted per-n log ratios on a t grid.

    Each t is Divergent (ratio > 1 + sigma), Convergent (ratio < 1 - sigma)
    or Inconclusive.  The bracket runs from the last divergent t to the first
    convergent t (``lower`` / ``upper`` when absent); h is the zero crossing
    of the linearly interpolated log ratio, clamped to the bracket.
    """
    t = np.asarray(t_grid, float)
    lr = np.asarray(log_ratios, float)
    order = np.argsort(t)
    t, lr = t[order], lr[order]
    ratio = np.exp(lr)
    cls = np.where(ratio > 1 + sigma, DIVERGENT, np.where(ratio < 1 - sigma, CONVERGENT, INCONCLUSIVE))
    for i in range(len(t) - 1):
        if cls[i] == INCONCLUSIVE and cls[i + 1] == INCONCLUSIVE:
            raise InconclusiveRatio(
                f"ratios within 1 +- {sigma} at t = {t[i]:.4g} and {t[i + 1]:.4g}; "
                f"refine the grid outside [{t[i]:.4g}, {t[i + 1]:.4g}] or deepen the series")
    div = np.nonzero(cls == DIVERGENT)[0]
    low = float(t[div[-1]]) if div.size else lower
    conv = np.nonzero((cls == CONVERGENT) & (t > low))[0]
    high = float(t[conv[0]]) if conv.size else upper
    h = None
    for i in range(len(t) - 1):
        if lr[i] > 0 >= lr[i + 1]:
            h = float(t[i] + lr[i] / (lr[i] - lr[i + 1]) * (t[i + 1] - t[i]))
            break
    if h is None:
        h = high if np.all(lr > 0) else low
    h = min(max(h, low), high)
    diag = {"t": t.tolist(), "log_ratio": lr.tolist(), "class": cls.tolist(), "sigma": sigma}
    return ExponentEstimate(h, (low, high), "PoincareCutoff", diag)


def estimate_h(f: MapSpec, t_grid, n_max: int = 12, cfg: TreeConfig = TreeConfig(),
               regime: RegimeReport | None = None, sigma: float = DEFAULT_SIGMA) -> ExponentEstimate:
    """Poincare exponent h by classifying the series at infinity on ``t_grid``."""
    thr = f.borel_threshold
    if any(not (thr < t <= 2) for t in t_grid):
        raise ValueError("t_grid must lie in (rho/(rho+1), 2]")
    series = [poincare_partial(f, t, n_max, cfg) for t in t_grid]
    est = exponent_from_log_ratios(t_grid, [s.log_ratio for s in series], sigma,
                                   lower=thr, upper=2.0)
    est.diagnostics["log_ratio_err"] = [s.log_ratio_err for s in series]
    est.diagnostics["n_max"] = n_max
    rho = float(f.rho)
    if regime is not None and regime.regime == SUB_EXPANDING:
        # h > 2 rho / (rho + 1) for sub-expanding maps
        est.diagnostics["inconsistent_regime"] = bool(est.bracket[1] <= 2 * rho / (rho + 1))
    return est


def dyadic_block_terms(t: float, n_max: int, rho: float = 1.0):
    """Synthetic Poincare terms: sums of k^-(rho+1)t over dyadic blocks [2^n, 2^(n+1))."""
    out = []
    for n in range(n_max):
        k = np.arange(2 ** n, 2 ** (n + 1), dtype=float)
        out.append(math.fsum((k ** (-(rho + 1) * t)).tolist()))
    return out


def log_ratio_of_terms(terms):
    lt = np.log(np.asarray(terms, float))
    return extrapolate(list(np.diff(lt)))


# ------------------------------------------------------------------ measures
MEASURE_FORMAT = "merodyn-atomic-measure 1"


@dataclass
class AtomicMeasure:
    points: np.ndarray
    weights: np.ndarray
    depths: np.ndarray
    s: float
    log_Z: float
    depth_max: int
    discarded_mass_bound: float = 0.0
    offset: float | None = None        # s - h_hat when built from an exponent estimate

    def __len__(self):
        return self.points.size

    def in_disk(self, center, radius):
        return chordal_dist(self.points, center) < radius

    def mass_in_disk(self, center, radius) -> float:
        return float(self.weights[self.in_disk(center, radius)].sum())

    def mass_beyond(self, R: float) -> float:
        return float(self.weights[np.abs(self.points) > R].sum())

    def dumps(self) -> str:
        buf = io.StringIO()
        buf.write(f"# {MEASURE_FORMAT}\n")
        buf.write(f"# s={float(self.s)!r} log_Z={float(self.log_Z)!r} depth_max={self.depth_max} "
                  f"discarded={float(self.discarded_mass_bound)!r}\n")
        buf.write("re im weight depth\n")
        for z, w, d in zip(self.points, self.weights, self.depths):
            buf.write(f"{float(z.real)!r} {float(z.imag)!r} {float(w)!r} {int(d)}\n")
        return buf.getvalue()

    @classmethod
    def loads(cls, text: str) -> "AtomicMeasure":
        lines = text.splitlines()
        if not lines or lines[0] != f"# {MEASURE_FORMAT}":
            raise ValueError("not an atomic measure file")
        meta = dict(kv.split("=") for kv in lines[1][2:].split())
        rows = np.array([ln.split() for ln in lines[3:] if ln.strip()], dtype=float).reshape(-1, 4)
        return cls(rows[:, 0] + 1j * rows[:, 1], rows[:, 2], rows[:, 3].astype(int),
                   float(meta["s"]), float(meta["log_Z"]), int(meta["depth_max"]),
                   float(meta["discarded"]))


def _dedupe_atoms(pts, w, depth, tol=1e-9):
    """Merge atoms closer than ``tol``, keeping the first in canonical order."""
    key = np.round(to_sphere(pts) / tol).astype(np.int64)
    _, first, inv = np.unique(key, axis=0, return_index=True, return_inverse=True)
    inv = inv.ravel()
    W = np.bincount(inv, weights=w)
    keep = np.sort(first)
    return pts[keep], W[inv[keep]], depth[keep]


def build_ps_measure(f: MapSpec, s: float, depth_max: int = 8, cfg: TreeConfig = TreeConfig(),
                     h_bracket: tuple | None = None, margin: float = DEFAULT_MARGIN) -> AtomicMeasure:
    """Atoms on the backward orbit of infinity weighted by |(f^n)'|_sigma^-s.

    Atoms of depth n are the merged nodes of level n of the tree rooted at
    infinity, in canonical (depth, cell) order.  The lumped far tails are not
    atoms; their mass goes into ``discarded_mass_bound`` together with the
    pruning bound.
    """
    if h_bracket is not None and s < h_bracket[1] + 0.02:
        raise SubcriticalExponent(f"s = {s} is not above the h bracket {h_bracket} + 0.02")
    pts, w, dep = [], [], []
    lost = 0.0
    for lev in backward_tree(f, s, INF, depth_max, cfg, margin):
        if lev.depth == 0:
            continue
        scale = math.exp(lev.log_total)
        fin = ~is_inf(lev.points)
        pts.append(lev.points[fin])
        w.append(lev.weights[fin] * scale)
        dep.append(np.full(int(fin.sum()), lev.depth))
        lost += (float(lev.weights[~fin].sum()) + lev.discard_bound) * scale
    pts, w, dep = np.concatenate(pts), np.concatenate(w), np.concatenate(dep)
    pts, w, dep = _dedupe_atoms(pts, w, dep)
    Z = math.fsum(w.tolist())
    return AtomicMeasure(pts, w / Z, dep, float(s), math.log(Z), depth_max, lost / Z,
                         None if h_bracket is None else s - h_bracket[1])


@dataclass
class ConformalityReport:
    h_test: float
    ratios: list
    C: float
    atoms_per_cell: list
    nonconformal: bool

    def as_record(self) -> dict:
        return {"h_test": self.h_test, "C": self.C, "ratios": self.ratios,
                "atoms_per_cell": self.atoms_per_cell, "NonConformal": self.nonconformal}


def _preimage_in_cell(f: MapSpec, y, center, radius):
    """Boolean mask: y has a preimage in the chordal disk D(center, radius)."""
    z0 = np.atleast_1d(f.preimage_base(y))
    om = f.period
    k = np.rint(((center - z0) / om).real)
    hit = np.zeros(z0.shape, dtype=bool)
    for dk in (-1, 0, 1):
        hit |= chordal_dist(z0 + (k + dk) * om, center) < radius
    return hit


def check_cell(f: MapSpec, center, radius):
    """Raise NotInjectiveOnCell unless f is injective on D(center, radius)."""
    try:
        c, r = chordal_disk_to_euclid(complex(center), radius)
    except ValueError:
        raise NotInjectiveOnCell("cell contains infinity")
    if 2 * r >= abs(f.period) or f.pole_distance(center) <= radius:
        raise NotInjectiveOnCell(f"cell at {center} wraps a period or holds a pole")


def conformality_check(f: MapSpec, m: AtomicMeasure, cells, h_test: float,
                       min_atoms: int = 50, C_max: float = 2.0) -> ConformalityReport:
    """Ratios m(f(E)) / sum_{x in E} w_x |f'(x)|_sigma^h_test over chordal disks E.

    Atoms of depth n in E have their parents (depth n - 1) in f(E), so f(E)
    is measured over atoms of depth < depth_max to compare like with like.
    """
    # preimages of asymptotic values do not exist; those atoms never lie in f(E)
    asym = np.array(f.asymptotic_values, dtype=complex)
    ok = np.ones(len(m), dtype=bool)
    if asym.size:
        ok = np.min(chordal_dist(m.points[:, None], asym[None, :]), axis=1) > 1e-12
    y_mask = ok & (m.depths < m.depth_max)
    ys, yw = m.points[y_mask], m.weights[y_mask]
    ratios, counts = [], []
    for center, radius in cells:
        check_cell(f, center, radius)
        inE = m.in_disk(center, radius)
        n = int(inE.sum())
        if n < min_atoms:
            raise CellTooThin(f"{n} atoms in cell at {center}")
        den = math.fsum((m.weights[inE] * f.sph_deriv(m.points[inE]) ** h_test).tolist())
        num = math.fsum(yw[_preimage_in_cell(f, ys, center, radius)].tolist())
        ratios.append(num / den)
        counts.append(n)
    C = max(max(r, 1 / r) for r in ratios)
    return ConformalityReport(h_test, ratios, C, counts, bool(C > C_max))


def conformality_cells(f: MapSpec, m: AtomicMeasure, n_cells: int = 20, radius: float = 0.05,
                       avoid=(), avoid_radius: float = 0.0, min_atoms: int = 50):
    """Disjoint injective cells centred at atoms of median depth, heaviest first."""
    med = int(np.median(m.depths))
    idx = np.nonzero(m.depths == med)[0]
    idx = idx[np.argsort(-m.weights[idx], kind="stable")]
    avoid = np.asarray(list(avoid), dtype=complex)
    chosen = []
    for i in idx:
        c = complex(m.points[i])
        if avoid.size and np.min(chordal_dist(avoid, c)) < avoid_radius + radius:
            continue
        if chosen and np.min(chordal_dist(np.array(chosen), c)) < 2 * radius:
            continue
        try:
            check_cell(f, c, radius)
        except NotInjectiveOnCell:
            continue
        if int(m.in_disk(c, radius).sum()) < min_atoms:
            continue
        chosen.append(c)
        if len(chosen) == n_cells:
            break
    return [(c, radius) for c in chosen]


@dataclass
class TightnessProfile:
    radii: list
    mass: list
    slope: float | None

    def as_record(self) -> dict:
        return {"radii": self.radii, "mass": self.mass, "slope": self.slope}


def tightness_profile(m: AtomicMeasure, radii) -> TightnessProfile:
    """Mass of W_R = {|z| > R} per R, with the log-log decay slope."""
    radii = sorted(float(r) for r in radii)
    mass = [m.mass_beyond(R) for R in radii]
    # cumulative sums can wobble at the last ulp; enforce the monotone profile
    mass = list(np.minimum.accumulate(mass))
    pos = [(R, x) for R, x in zip(radii, mass) if x > 0]
    slope = None
    if len(pos) >= 2:
        slope = float(np.polyfit(np.log([p[0] for p in pos]), np.log([p[1] for p in pos]), 1)[0])
    return TightnessProfile(radii, [float(x) for x in mass], slope)
