"""Spherical transfer operator L_t and its iterates.

One application sums |f'(z)|_sigma^-t over the preimage lattice of w.  The
omitted lattice tail is bracketed in closed form: along the lattice
z_k = z0 + k*omega the weights are (A (c0 + y_k^2))^-t with y_k affine in k,
so integral comparison gives two-sided bounds which are finite exactly when
2t > 1, i.e. above the Borel threshold rho/(rho+1) for rho = 1.

Iterates are computed on an aggregated backward-orbit tree: every node
expands ``k_branch`` lattice branches, the remaining tail is lumped into a
single node at infinity, and children landing in the same cell of the sphere
are merged at their weighted centroid.  Cells are chordal cubes of side
``res`` away from the singular points and log-polar around them: the
weights of L_t 1 blow up near the asymptotic values, and those of L_t^n 1
near the first n points of their orbits.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AsymptoticValue, BelowBorelThreshold, BranchLost, PruningOverflow
from .family import MapSpec, TruncationPolicy, preimages
from .sphere import INF, chordal_dist, from_sphere, is_inf, random_in_chordal_disk, to_sphere

DEFAULT_MARGIN = 0.01


def check_threshold(f: MapSpec, t: float, margin: float = DEFAULT_MARGIN) -> bool:
    """Raise below the Borel threshold; return True when within ``margin`` of it."""
    thr = f.borel_threshold
    if not t > thr:
        raise BelowBorelThreshold(t)
    return t <= thr + margin


def tail_bracket(f: MapSpec, z0, A, K: int, t: float, bare: bool = False):
    """Lower/upper bounds for sum_{|k|>K} (A (1 + |z0 + k omega|^2))^-t.

    Vectorised over z0 and A.  With ``bare`` the weights are
    (1 + |z|^2)^-t (A = 1).  Infinite when 2t <= 1.
    """
    z0 = np.asarray(z0, dtype=complex)
    A = np.ones(z0.shape) if bare else np.asarray(A, dtype=float)
    if 2 * t <= 1:
        inf = np.full(z0.shape, np.inf)
        return inf, inf
    om = f.period
    L = abs(om)
    proj = z0 * np.conj(om) / L
    s, q = proj.real, proj.imag
    c0 = 1 + q * q
    e = 2 * t - 1
    lo = np.zeros(z0.shape)
    hi = np.zeros(z0.shape)
    for sgn in (1.0, -1.0):
        y0 = K * L + sgn * s           # last included branch on this side
        y1 = y0 + L                    # first omitted branch
        hi += y0 ** -e / (L * e)
        lo += (1 + c0 / y1 ** 2) ** -t * y1 ** -e / (L * e)
    scale = A ** -t
    return lo * scale, hi * scale


@dataclass
class OperatorEval:
    t: float
    w: complex
    partial: float
    tail_low: float
    tail_high: float
    branches_used: int
    near_threshold: bool = False
    max_branch: float = 0.0

    @property
    def low(self) -> float:
        return self.partial + self.tail_low

    @property
    def high(self) -> float:
        return self.partial + self.tail_high

    @property
    def value(self) -> float:
        return self.partial + 0.5 * (self.tail_low + self.tail_high)

    def as_record(self) -> dict:
        return {"t": self.t, "w": [self.w.real, self.w.imag], "value": self.value,
                "bracket": [self.low, self.high], "partial": self.partial,
                "branches_used": self.branches_used, "near_threshold": self.near_threshold}


def _descending_fsum(x):
    return math.fsum(np.sort(x)[::-1].tolist())


def transfer_one(f: MapSpec, t: float, w, policy: TruncationPolicy | None = None,
                 margin: float = DEFAULT_MARGIN, strict: bool = True,
                 asym_tol: float = 1e-12, bare: bool = False) -> OperatorEval:
    """L_t 1(w) as a partial sum plus a tail bracket.

    ``strict=False`` lets ``w`` approach an asymptotic value (the sum then
    grows like dist(w, A_f)^-t); ``bare`` drops the dist factor altogether
    and sums (1 + |z_k|^2)^-t.
    """
    policy = policy or TruncationPolicy()
    near = check_threshold(f, t, margin)
    w = complex(w)
    P = preimages(f, w, policy, asym_tol=asym_tol if strict else 0.0)
    if bare:
        terms = (1 + np.abs(P.z) ** 2) ** -t
    else:
        terms = np.exp(-t * np.log(P.sph_deriv))
    lo, hi = tail_bracket(f, P.base, P.lattice_factor, P.k_max, t, bare=bare)
    return OperatorEval(t, w, _descending_fsum(terms), float(lo), float(hi), len(terms), near,
                        float(terms.max()))


@dataclass
class ScanReport:
    t: float
    sup: float
    median: float
    argmax: complex
    values: np.ndarray
    unbounded_flag: bool

    @property
    def ratio(self) -> float:
        return self.sup / self.median


def uniform_bound_scan(f: MapSpec, t: float, w_grid, policy: TruncationPolicy | None = None,
                       margin: float = DEFAULT_MARGIN) -> ScanReport:
    """sup over ``w_grid`` of the bare sum sum_k (1 + |z_k|^2)^-t (partial + upper tail)."""
    check_threshold(f, t, margin)
    policy = policy or TruncationPolicy()
    vals = []
    for w in w_grid:
        if any(chordal_dist(w, a) == 0 for a in f.asymptotic_values):
            continue                   # no preimages at all
        ev = transfer_one(f, t, w, policy, margin, strict=False, bare=True)
        vals.append(ev.high)
    vals = np.array(vals)
    i = int(np.argmax(vals))
    med = float(np.median(vals))
    return ScanReport(t, float(vals[i]), med, complex(np.asarray(w_grid)[i]), vals,
                      bool(vals[i] > 10 * med or not np.isfinite(vals[i])))


# ------------------------------------------------------------------ tree kernel
@dataclass(frozen=True)
class TreeConfig:
    """Resolution and pruning of the aggregated backward-orbit tree."""

    res: float = 0.02
    k_branch: int | None = None     # default ~ 1 / (pi res): the lumped tail sits within res of infinity
    rel_tol: float = 1e-6
    zoom: float = 0.1               # log-polar cells within this chordal radius of singular centers
    chunk: int = 4096
    max_discard: float = 0.1

    @property
    def K(self) -> int:
        return self.k_branch if self.k_branch else max(4, int(round(1 / (math.pi * self.res))))


@dataclass
class Level:
    depth: int
    points: np.ndarray          # complex; INF for the lumped tail node
    weights: np.ndarray         # normalised to sum 1
    log_total: float            # log L_t^n 1(base), up to the root weights
    discarded: float = 0.0      # fraction of this level's mass removed by pruning
    tail_err: float = 0.0       # relative half-width of the lumped tail brackets
    lump: float = 0.0           # fraction of mass in the infinity node
    spread: float = 1.0         # max per-parent branching sum / mean
    discard_bound: float = 0.0  # optimistic bound on the pruned subtrees' relative contribution


_OFF = 1 << 19


def singular_centers(f: MapSpec, n_orbit: int = 24, tol: float = 1e-9):
    """Asymptotic values followed by the distinct points of their forward orbits."""
    out = list(f.asymptotic_values)
    for a in f.asymptotic_values:
        z = complex(a)
        for _ in range(n_orbit):
            z = complex(f(z))
            if is_inf(z):
                break
            if min(chordal_dist(z, c) for c in out) > tol:
                out.append(z)
    return tuple(out)


def _cell_keys(f: MapSpec, pts, cfg: TreeConfig, centers):
    """int64 cell labels: chordal cubes, log-polar near the singular centers."""
    xyz = to_sphere(pts)
    ix = np.floor(xyz / cfg.res).astype(np.int64) + _OFF
    key = (ix[:, 0] << 40) | (ix[:, 1] << 20) | ix[:, 2]
    polar = np.zeros(pts.shape, dtype=bool)
    dstep = cfg.res / cfg.zoom
    ntheta = int(math.ceil(2 * math.pi / dstep))
    for i, a in enumerate(centers):
        d = chordal_dist(pts, a)
        m = (d < cfg.zoom) & ~polar
        if not np.any(m):
            continue
        r = np.floor(np.log(np.maximum(d[m], 1e-300)) / dstep).astype(np.int64) + _OFF
        th = np.floor((np.angle(pts[m] - a) + math.pi) / (2 * math.pi) * ntheta).astype(np.int64)
        key[m] = (np.int64(1) << 62) | (np.int64(i) << 40) | (r << 20) | th
        polar |= m
    return key, polar, xyz


def _merge(f: MapSpec, pts, w, cfg: TreeConfig, centers):
    key, polar, xyz = _cell_keys(f, pts, cfg, centers)
    uk, inv = np.unique(key, return_inverse=True)
    W = np.bincount(inv, weights=w, minlength=uk.size)
    safe = np.where(W > 0, W, 1)
    c = np.stack([np.bincount(inv, weights=w * xyz[:, j], minlength=uk.size) for j in range(3)], -1)
    out = from_sphere(c / safe[:, None])
    out = np.atleast_1d(out)
    if np.any(polar):
        pf = np.where(polar, pts, 0)
        pc = np.bincount(inv, weights=w * pf.real, minlength=uk.size) + \
            1j * np.bincount(inv, weights=w * pf.imag, minlength=uk.size)
        cell_polar = np.zeros(uk.size, dtype=bool)
        cell_polar[inv[polar]] = True
        out = np.where(cell_polar, pc / safe, out)
    return out, W, uk


def expand_level(f: MapSpec, t: float, pts, w, cfg: TreeConfig):
    """Children of weighted nodes: (child points, child weights in log, lump log-weight, tail err, spread)."""
    K = cfg.K
    k = np.arange(-K, K + 1)
    om = f.period
    logs, pts_out = [], []
    lump, terr = [], []
    spreads = []
    for s in range(0, pts.size, cfg.chunk):
        P, Wp = pts[s:s + cfg.chunk], w[s:s + cfg.chunk]
        z0 = np.atleast_1d(f.preimage_base(P))
        A = np.atleast_1d(f.lattice_factor(P))
        Z = z0[:, None] + k[None, :] * om
        lw = -t * (np.log(A)[:, None] + np.log1p(np.abs(Z) ** 2))
        lo, hi = tail_bracket(f, z0, A, K, t)
        mid = 0.5 * (lo + hi)
        # per-unit-mass branching, partial plus tail
        per = np.exp(lw).sum(axis=1) + mid
        spreads.append(per)
        logs.append((lw + np.log(Wp)[:, None]).ravel())
        pts_out.append(Z.ravel())
        lump.append(Wp * mid)
        terr.append(Wp * 0.5 * (hi - lo))
    per = np.concatenate(spreads)
    return (np.concatenate(pts_out), np.concatenate(logs), float(np.sum(np.concatenate(lump))),
            float(np.sum(np.concatenate(terr))), per)


def backward_tree(f: MapSpec, t: float, base, depth: int, cfg: TreeConfig = TreeConfig(),
                  margin: float = DEFAULT_MARGIN, base_weights=None):
    """Yield the aggregated levels 0..depth of the backward-orbit tree of ``base``."""
    check_threshold(f, t, margin)
    pts = np.atleast_1d(np.asarray(base, dtype=complex))
    w = np.ones(pts.size) if base_weights is None else np.asarray(base_weights, float)
    log_total = math.log(math.fsum(w.tolist()))
    w = w / w.sum()
    level = Level(0, pts, w, log_total)
    yield level
    asym = np.array(f.asymptotic_values)
    centers = singular_centers(f)
    cen_arr = np.array(centers)
    cum_discard = 0.0
    for n in range(1, depth + 1):
        # nodes sitting on an asymptotic value have no preimages
        dead = np.min(chordal_dist(pts[:, None], asym[None, :]), axis=1) < 1e-13
        dead_mass = float(w[dead].sum())
        pts, w = pts[~dead], w[~dead]
        Z, logw, lump, terr, per = expand_level(f, t, pts, w, cfg)
        top = max(float(logw.max()), math.log(lump) if lump > 0 else -np.inf)
        cw = np.exp(logw - top)
        lump_s = lump * math.exp(-top)
        cells, W, _ = _merge(f, Z, cw, cfg, centers)
        total = math.fsum(W.tolist()) + lump_s
        W = W / total
        lump_frac = lump_s / total
        spread = float(per.max() / per.mean()) if per.size else 1.0
        # optimistic bound on a subtree's future share: near a singular center
        # the next levels grow like dist^-t
        dc = np.min(chordal_dist(cells[:, None], cen_arr[None, :]), axis=1)
        amp = np.maximum(1.0, (cfg.zoom / np.maximum(dc, 1e-300)) ** t)
        bound = W * spread * amp
        keep = bound >= cfg.rel_tol
        disc = float(W[~keep].sum()) + dead_mass
        disc_bound = float(bound[~keep].sum()) + dead_mass
        cum_discard += disc_bound
        if cum_discard > cfg.max_discard:
            raise PruningOverflow(f"discarded mass {cum_discard:.3g} at depth {n}")
        pts = np.concatenate([cells[keep], [INF]]) if lump_frac > 0 else cells[keep]
        w = np.concatenate([W[keep], [lump_frac]]) if lump_frac > 0 else W[keep]
        w = w / w.sum()
        log_total += top + math.log(total)
        level = Level(n, pts, w, log_total, disc, terr * math.exp(-top) / total, lump_frac, spread,
                      disc_bound)
        yield level


# ------------------------------------------------------------------ pressure
def extrapolate(r, q_max: float = 0.95):
    """Geometric (Aitken) limit of a sequence and an error bar.

    With successive-difference ratio q < q_max the tail is summed as a
    geometric series; otherwise the last value is kept and the error bar is
    |last difference| / (1 - q_max).
    """
    if len(r) == 1:
        return r[0], abs(r[0])
    d1 = r[-1] - r[-2]
    if len(r) == 2:
        return r[-1], abs(d1)
    d0 = r[-2] - r[-3]
    q = d1 / d0 if d0 != 0 else 0.0
    if q < q_max:
        acc = r[-1] + d1 * q / (1 - q)
        return acc, max(abs(acc - r[-1]), abs(d1))
    return r[-1], abs(d1) / (1 - q_max)


@dataclass
class PressureResult:
    t: float
    base: complex
    P_n: list                 # (1/n) log L_t^n 1(base)
    r_n: list                 # log L^n 1 - log L^{n-1} 1
    value: float
    error: float
    discarded: float
    lump: float
    config: dict = field(default_factory=dict)

    @property
    def bracket(self):
        return (self.value - self.error, self.value + self.error)

    def as_record(self) -> dict:
        return {"t": self.t, "value": self.value, "error": self.error,
                "bracket": list(self.bracket), "P_n": self.P_n, "r_n": self.r_n,
                "discarded_mass": self.discarded, "truncation": self.config}


def pressure_estimate(f: MapSpec, t: float, base=1.0 + 0.5j, depth: int = 8,
                      cfg: TreeConfig = TreeConfig(), margin: float = DEFAULT_MARGIN) -> PressureResult:
    """Topological pressure from the growth of L_t^n 1(base).

    The increments r_n converge geometrically; their Aitken limit is the
    estimate (see :func:`extrapolate`), with the pruning and tail
    contributions of the deepest levels added to the error bar.
    """
    if depth < 1:
        raise ValueError("depth >= 1 required")
    logs, r, extra = [], [], []
    disc_total = 0.0
    lump = 0.0
    prev = None
    for lev in backward_tree(f, t, base, depth, cfg, margin):
        if prev is not None:
            r.append(lev.log_total - prev)
            extra.append(lev.discard_bound + lev.tail_err)
            disc_total += lev.discard_bound
            lump = lev.lump
        prev = lev.log_total
        logs.append(lev.log_total)
    P_n = [(logs[n] - logs[0]) / n for n in range(1, len(logs))]
    value, err = extrapolate(r)
    err += max(extra[-2:])
    return PressureResult(t, complex(base), P_n, r, float(value), float(err), disc_total, lump,
                          {"res": cfg.res, "k_branch": cfg.K, "rel_tol": cfg.rel_tol, "depth": depth})


@dataclass
class PressureCurve:
    t_grid: list
    results: list
    base_points: list

    @property
    def extrapolated(self):
        return [(r.value, r.error) for r in self.results]

    def strictly_decreasing(self) -> bool:
        v = [r.value for r in self.results]
        return all(b < a for a, b in zip(v, v[1:]))


def pressure_curve(f: MapSpec, t_grid, base=1.0 + 0.5j, depth: int = 8,
                   cfg: TreeConfig = TreeConfig()) -> PressureCurve:
    return PressureCurve(list(t_grid), [pressure_estimate(f, t, base, depth, cfg) for t in t_grid],
                         [complex(base)])


# ------------------------------------------------------------------ distortion
def _inverse_branch(f: MapSpec, target, seed, tol=1e-13, max_iter=40):
    """Newton solve f(z) = target from ``seed``."""
    z = complex(seed)
    for _ in range(max_iter):
        fz, d1 = (complex(v) for v in f.derivatives(z)[:2])
        if not np.isfinite(fz) or d1 == 0:
            return None
        step = (fz - target) / d1
        z -= step
        if abs(step) <= tol * max(1.0, abs(z)):
            return z
    return None


def distortion_probe(f: MapSpec, w, delta: float, depth: int, samples: int, seed=0,
                     k_range: int = 3) -> float:
    """Empirical Koebe constant of inverse branches on the chordal disk D(w, delta).

    Each sample picks a random branch word of length <= depth (lattice
    indices |k| <= k_range), continues it from w to two random points x, y
    of the disk by Newton refinement along the straight segment, and records
    |(f^-n)'(y)|_sigma / |(f^-n)'(x)|_sigma.
    """
    if depth == 0:
        return 1.0
    rng = np.random.default_rng(seed)
    w = complex(w)
    K = 1.0
    for _ in range(samples):
        n = int(rng.integers(1, depth + 1))
        ks = rng.integers(-k_range, k_range + 1, size=n)
        x, y = random_in_chordal_disk(rng, w, delta, 2)
        vals = []
        for end in (x, y):
            logd = 0.0
            cur_w, cur_end = w, complex(end)
            for k in ks:
                z_center = complex(f.preimage_base(cur_w)) + int(k) * f.period
                z = z_center
                # continue the branch along the segment cur_w -> cur_end
                for s in np.linspace(0, 1, 9)[1:]:
                    z = _inverse_branch(f, cur_w + s * (cur_end - cur_w), z)
                    if z is None:
                        raise BranchLost(f"Newton continuation failed near {cur_end}")
                if chordal_dist(z, z_center) > 0.25:
                    raise BranchLost("continuation left the branch domain")
                logd -= math.log(float(f.sph_deriv(z)))
                cur_w, cur_end = z_center, z
            vals.append(logd)
        K = max(K, math.exp(abs(vals[1] - vals[0])))
    return K
