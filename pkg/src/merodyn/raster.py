"""Julia-set geometry independent of the transfer operator.

Point classification by attraction, a Cantor-type refinement of the real
Julia set of lambda tan z for 0 < lambda < 1, and box counting.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bowen import _require_real, phi_of, real_basin_edge
from .errors import DegenerateScales
from .family import HYPERBOLIC, MapSpec, RegimeReport
from .sphere import chordal_dist, is_inf

FATOU, JULIA, UNDECIDED = "Fatou", "Julia", "Undecided"
TWO_PI = 2 * math.pi


@dataclass(frozen=True)
class PointClass:
    kind: str
    attractor: int | None = None


def _attractors(regime: RegimeReport):
    out = []
    for cyc, mult in regime.cycles:
        if cyc is not None and abs(mult) < 1:
            out.append(np.asarray(cyc))
    return out


def classify_point(f: MapSpec, z, max_iter: int, regime: RegimeReport, trap: float = 1e-6,
                   pole_zone: float = 0.05) -> PointClass:
    """Fatou(attractor id) / Julia / Undecided by iteration.

    Fatou once the orbit enters the chordal ``trap`` disk of an attracting
    cycle point; Julia when it lands on a pole (a prepole of infinity) or
    survives ``max_iter`` steps while still visiting the pole zone, i.e.
    chordal ``pole_zone`` around infinity; Undecided otherwise.
    """
    if regime.regime != HYPERBOLIC:
        raise ValueError("attraction-based classification needs a hyperbolic map")
    att = _attractors(regime)
    z = complex(z)
    late_pole_visit = False
    for n in range(max_iter):
        if is_inf(z):
            return PointClass(JULIA)
        for i, cyc in enumerate(att):
            if np.min(chordal_dist(cyc, z)) < trap:
                return PointClass(FATOU, i)
        if n >= max_iter // 2 and chordal_dist(z, complex("inf")) < pole_zone:
            late_pole_visit = True
        z = complex(f(z))
    if is_inf(z):
        return PointClass(JULIA)
    return PointClass(JULIA if late_pole_visit else UNDECIDED)


def classify_grid(f: MapSpec, xs, ys, max_iter: int, regime: RegimeReport, trap: float = 1e-6,
                  pole_zone: float = 0.05):
    """Vectorised classification of the grid xs x ys; returns codes 0 Julia, 255 Fatou, 128 Undecided."""
    if regime.regime != HYPERBOLIC:
        raise ValueError("attraction-based classification needs a hyperbolic map")
    att = np.concatenate(_attractors(regime))
    Z = (np.asarray(xs)[None, :] + 1j * np.asarray(ys)[:, None]).ravel()
    code = np.full(Z.shape, 128, dtype=np.uint8)
    active = np.ones(Z.shape, dtype=bool)
    late = np.zeros(Z.shape, dtype=bool)
    for n in range(max_iter):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        z = Z[idx]
        inf = is_inf(z)
        code[idx[inf]] = 0
        active[idx[inf]] = False
        zi, zf = idx[~inf], z[~inf]
        trapped = np.min(chordal_dist(zf[:, None], att[None, :]), axis=1) < trap
        code[zi[trapped]] = 255
        active[zi[trapped]] = False
        zi, zf = zi[~trapped], zf[~trapped]
        if n >= max_iter // 2:
            late[zi] |= chordal_dist(zf, complex("inf")) < pole_zone
        Z[zi] = f(zf)
    rest = active & ~is_inf(Z)
    code[rest & late] = 0
    code[active & is_inf(Z)] = 0
    return code.reshape(len(ys), len(xs))


# ------------------------------------------------------------------ real Cantor set
def _branch(x, k: int, lam: float):
    """Inverse branch of lambda tan onto (k pi, (k+1) pi), continuous through infinity."""
    a = np.arctan(x / lam)
    return np.where(x >= 0, a + k * math.pi, a + (k + 1) * math.pi)


def _x_of(phi):
    return np.tan(np.asarray(phi) / 2)


def merge_intervals(lo, hi, gap: float = 0.0):
    """Union of intervals, also bridging gaps <= ``gap``; sorted output."""
    if len(lo) == 0:
        return np.empty(0), np.empty(0)
    o = np.argsort(lo, kind="stable")
    lo, hi = np.asarray(lo)[o], np.asarray(hi)[o]
    run = np.maximum.accumulate(hi)
    start = np.ones(lo.size, dtype=bool)
    start[1:] = lo[1:] > run[:-1] + gap
    s = np.nonzero(start)[0]
    e = np.r_[s[1:], lo.size] - 1
    return lo[s], run[e]


@dataclass
class IntervalSet:
    """Disjoint arcs of the extended real line in the angle coordinate phi = 2 arctan x mod 2 pi."""

    lo: np.ndarray
    hi: np.ndarray
    depth: int

    @property
    def total_length(self) -> float:
        return float(np.sum(self.hi - self.lo))

    def __len__(self):
        return self.lo.size

    def contains(self, phi, tol: float = 0.0):
        i = np.searchsorted(self.lo, phi, side="right") - 1
        ok = i >= 0
        ic = np.clip(i, 0, None)
        return ok & (phi <= self.hi[ic] + tol) & (phi >= self.lo[ic] - tol)

    def x_bounds(self):
        return _x_of(self.lo), _x_of(self.hi)


def fundamental_intervals(f: MapSpec, min_len: float):
    """I_k = [k pi + x1, (k+1) pi - x1] for the k whose gaps exceed ``min_len``; the rest as one arc."""
    lam = complex(f.lam).real
    x1 = real_basin_edge(f)
    # gap (k pi - x1, k pi + x1) in phi has length ~ 4 x1 / (1 + k^2 pi^2)
    K = max(2, int(math.sqrt(max(4 * x1 / min_len - 1, 1)) / math.pi))
    k = np.arange(-K, K)
    lo = phi_of(k * math.pi + x1)
    hi = phi_of((k + 1) * math.pi - x1)
    # remaining I_k, |k| large, lumped into one arc through infinity
    lo = np.r_[lo, phi_of(K * math.pi + x1)]
    hi = np.r_[hi, phi_of(-K * math.pi - x1)]
    lo, hi = merge_intervals(lo, hi, min_len)
    return lo, hi, K, lam


def refine_real_julia(f: MapSpec, depth: int, min_len: float = 1e-6) -> list:
    """Nested covers of the real Julia set, depth 0..depth.

    Depth 0 is the list of fundamental intervals I_k; depth d+1 is the union
    of the inverse-branch images of depth d.  Gaps below ``min_len`` (in phi)
    are bridged, so every level is a cover accurate at scales above min_len.
    Far branches whose images I_k are shorter than min_len are replaced by
    I_k itself.
    """
    _require_real(f)
    lo, hi, K, lam = fundamental_intervals(f, min_len)
    x1 = real_basin_edge(f)
    levels = [IntervalSet(lo, hi, 0)]
    ks = np.arange(-K, K)
    # phi-length of I_k and the branch contraction at I_k
    Ilo, Ihi = phi_of(ks * math.pi + x1), phi_of((ks + 1) * math.pi - x1)
    Ilen = Ihi - Ilo
    for d in range(1, depth + 1):
        plo, phi_ = levels[-1].lo, levels[-1].hi
        out_lo, out_hi = [Ilo[Ilen <= 4 * min_len]], [Ihi[Ilen <= 4 * min_len]]
        # coarsen the parent set per branch: only structure above min_len / contraction survives
        coarse = {}
        for k, L in zip(ks[Ilen > 4 * min_len], Ilen[Ilen > 4 * min_len]):
            contraction = L / (TWO_PI - 2 * phi_of(x1))       # image/source length ratio
            key = int(math.floor(math.log2(min_len / contraction)))
            if key not in coarse:
                coarse[key] = merge_intervals(plo, phi_, 2.0 ** key)
            clo, chi = coarse[key]
            out_lo.append(phi_of(_branch(_x_of(clo), int(k), lam)))
            out_hi.append(phi_of(_branch(_x_of(chi), int(k), lam)))
        # lumped far branches: the arc through infinity
        out_lo.append(np.array([phi_of(K * math.pi + x1)]))
        out_hi.append(np.array([phi_of(-K * math.pi - x1)]))
        lo, hi = merge_intervals(np.concatenate(out_lo), np.concatenate(out_hi), min_len)
        levels.append(IntervalSet(lo, hi, d))
    return levels


# ------------------------------------------------------------------ box counting
@dataclass
class BoxCountResult:
    scales: list
    counts: list
    slope: float
    r2: float
    region: tuple

    def as_record(self) -> dict:
        return {"slope": self.slope, "r2": self.r2, "scales": self.scales, "counts": self.counts,
                "region": list(self.region)}


SNAP = 1e-6     # box-edge tolerance in units of eps: rounding in a shifted copy must not move a count


def _count_intervals(lo, hi, eps, origin):
    # half-open boxes [j eps, (j+1) eps); an interval ending on a box edge does not enter the next box
    a = np.floor((lo - origin) / eps + SNAP).astype(np.int64)
    b = np.maximum(a, np.ceil((hi - origin) / eps - SNAP).astype(np.int64) - 1)
    o = np.argsort(a, kind="stable")
    a, b = a[o], b[o]
    run = np.maximum.accumulate(b)
    prev = np.r_[np.iinfo(np.int64).min // 2, run[:-1]]
    # boxes newly covered by each range beyond the running maximum
    new = np.maximum(0, b - np.maximum(a - 1, prev))
    return int(new.sum())


def box_count(primitives, scales, kind: str = "auto", min_primitives: int = 1000) -> BoxCountResult:
    """Least-squares slope of log N(eps) against log(1/eps).

    ``primitives`` is either an (n, 2) array of intervals ``[lo, hi]``
    (``kind="intervals"``), an IntervalSet, or an (n, d) / complex array of
    points (``kind="points"``).
    """
    scales = sorted(float(s) for s in scales)
    if len(scales) < 5 or scales[-1] / scales[0] < 100:
        raise DegenerateScales("need >= 5 scales spanning >= 2 decades")
    if isinstance(primitives, IntervalSet):
        lo, hi, kind = primitives.lo, primitives.hi, "intervals"
        n = len(primitives)
    else:
        arr = np.asarray(primitives)
        if np.iscomplexobj(arr):
            arr = np.stack([arr.real, arr.imag], -1)
            kind = "points"
        if kind == "auto":
            kind = "points"
        if kind == "intervals":
            lo, hi = arr[:, 0], arr[:, 1]
        n = arr.shape[0]
    if n < min_primitives:
        raise DegenerateScales(f"{n} primitives, need >= {min_primitives}")
    counts = []
    if kind == "intervals":
        origin = float(np.min(lo))
        region = (origin, float(np.max(hi)))
        for eps in scales:
            counts.append(_count_intervals(lo, hi, eps, origin))
    else:
        pts = arr if arr.ndim == 2 else arr[:, None]
        origin = pts.min(axis=0)
        region = (tuple(origin.tolist()), tuple(pts.max(axis=0).tolist()))
        for eps in scales:
            idx = np.floor((pts - origin) / eps + SNAP).astype(np.int64)
            counts.append(int(np.unique(idx, axis=0).shape[0]))
    x = np.log(1 / np.array(scales))
    y = np.log(np.array(counts, float))
    slope, icpt = np.polyfit(x, y, 1)
    pred = slope * x + icpt
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum((y - pred) ** 2)) / ss if ss > 0 else 1.0
    return BoxCountResult(scales, counts, float(slope), float(min(max(r2, 0.0), 1.0)), region)


def cantor_middle_thirds(depth: int):
    """Intervals of the depth-``depth`` middle-thirds construction on [0, 1]."""
    lo = np.array([0.0])
    w = 1.0
    for _ in range(depth):
        w /= 3
        lo = np.concatenate([lo, lo + 2 * w])
    lo.sort()
    return np.stack([lo, lo + w], -1)


# ------------------------------------------------------------------ writers
def write_pgm(path, codes) -> None:
    """Plain PGM (P2): 0 Julia, 255 Fatou, 128 Undecided."""
    codes = np.asarray(codes, dtype=int)
    h, w = codes.shape
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"P2\n{w} {h}\n255\n")
        for row in codes:
            fh.write(" ".join(str(v) for v in row) + "\n")


def write_intervals_csv(path, iset: IntervalSet) -> None:
    """Intervals as x-coordinates (lo, hi); arcs through infinity have lo > hi."""
    xl, xh = iset.x_bounds()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("lo,hi\n")
        for a, b in zip(xl, xh):
            fh.write(f"{float(a)!r},{float(b)!r}\n")
