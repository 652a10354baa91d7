"""The sigma-finite invariant measure, observed through ratios and induced maps.

The invariant measure mu = phi m is never built.  What is computed:

* Martens ratios  sum_{k<=n} m(f^-k A) / sum_{k<=n} m(f^-k A0)  from forward
  transport of the atoms of m,
* the finiteness criterion h > 3 rho / (rho + 1) and the lattice sums it
  comes from,
* the decay of m on the nested annuli Gamma_n around the postsingular set,
* the first-return map to the good set X and its Lyapunov exponent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.special import beta as beta_fn
from scipy.special import betainc

from .errors import (CellTooCloseToSingular, EmptyCell, InsufficientAtoms, LeftDomain,
                     NoReturnWithin, OutOfRange, TooFewSurvivingOrbits)
from .family import SUB_EXPANDING, MapSpec, RegimeReport, classify_regime
from .poincare import AtomicMeasure
from .sphere import INF, chordal_dist, is_inf, random_in_chordal_disk

FINITE, INFINITE = "Finite", "Infinite"
CONVERGES, DIVERGES = "Converges", "Diverges"


# ------------------------------------------------------------ criteria
def _exact(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x)


def finiteness_criterion(rho, h) -> str:
    """Finite iff h > 3 rho / (rho + 1); exact rational comparison."""
    r, hh = _exact(rho), _exact(h)
    if r <= 0:
        raise OutOfRange(f"order rho = {rho} must be positive")
    if not (r / (r + 1) < hh <= 2):
        raise OutOfRange(f"h = {h} outside (rho/(rho+1), 2]")
    return FINITE if hh > 3 * r / (r + 1) else INFINITE


def schwarzian_degree_criterion(degP: int, h_assumed_2: bool = True) -> str:
    """Finiteness for J = sphere (h = 2) when S(f) is a polynomial of degree degP.

    The order is (degP + 2) / 2, so this is finiteness_criterion at h = 2,
    which reduces to degP in {0, 1}.
    """
    if int(degP) != degP or degP < 0:
        raise ValueError(f"degree must be a nonnegative integer, got {degP}")
    if not h_assumed_2:
        raise ValueError("only the h = 2 case is tabulated; call finiteness_criterion with h")
    return finiteness_criterion(Fraction(int(degP) + 2, 2), 2)


# ------------------------------------------------------------ lattice sums
@dataclass
class LatticeSum:
    s: float
    n_cap: int
    classification: str
    partial: float
    bracket: tuple               # (low, high); high is inf when divergent

    @property
    def value(self) -> float | None:
        if self.classification != CONVERGES:
            return None
        return 0.5 * (self.bracket[0] + self.bracket[1])

    def as_record(self) -> dict:
        return {"s": self.s, "n_cap": self.n_cap, "classification": self.classification,
                "value": self.value, "partial": self.partial, "bracket": list(self.bracket)}


def _row_sums(s: float, n_cap: int, p: int, k_exact: int, chunk: int = 2048):
    """sum_{n<=n_cap} n^p sum_{k<=k_exact} (n^2+k^2)^-s and the per-row k-tail bracket."""
    k = np.arange(1, k_exact + 1, dtype=float) ** 2
    parts, t_lo, t_hi = [], [], []
    c = 0.5 * beta_fn(s - 0.5, 0.5) if s > 0.5 else math.inf
    for start in range(1, n_cap + 1, chunk):
        n = np.arange(start, min(start + chunk, n_cap + 1), dtype=float)
        rows = np.sum((n[:, None] ** 2 + k[None, :]) ** -s, axis=1)
        parts.append(float(np.sum(n ** p * rows)))
        if math.isfinite(c):
            # sum_{k>K} g(k) lies between the integrals from K+1 and from K
            base = c * n ** (p + 1 - 2 * s)
            t_lo.append(float(np.sum(base * betainc(s - 0.5, 0.5, n * n / (n * n + (k_exact + 1) ** 2)))))
            t_hi.append(float(np.sum(base * betainc(s - 0.5, 0.5, n * n / (n * n + k_exact ** 2)))))
    return math.fsum(parts), math.fsum(t_lo), math.fsum(t_hi), c


def _lattice(s, n_cap: int, p: int, k_exact: int | None) -> LatticeSum:
    """sum_{n,k>=1} n^p (n^2 + k^2)^-s with integral-test brackets.

    Rows n <= n_cap are summed exactly up to k_exact and closed in k with
    incomplete-beta integrals.  For the rows n > n_cap each full row sum
    S_n satisfies c n^(1-2s) - n^-2s <= S_n <= c n^(1-2s), c = B(s-1/2, 1/2)/2,
    which leaves a power sum in n closed by one more integral test.  The sum
    is finite iff s > (p + 2) / 2.
    """
    if not s > 0:
        raise ValueError("s > 0 required")
    if n_cap < 1:
        raise ValueError("n_cap >= 1 required")
    sf = float(s)
    k_exact = min(n_cap, 256) if k_exact is None else k_exact
    partial, tl, th, c = _row_sums(sf, n_cap, p, k_exact)
    if not _exact(s) > Fraction(p + 2, 2):
        return LatticeSum(sf, n_cap, DIVERGES, partial, (partial + tl, math.inf))
    N = n_cap
    e = p + 1 - 2 * sf                                  # exponent of n in c n^p n^(1-2s); e < -1
    hi = c * N ** (e + 1) / (-e - 1)
    lo = max(0.0, c * (N + 1) ** (e + 1) / (-e - 1) - N ** e / (-e))
    return LatticeSum(sf, n_cap, CONVERGES, partial, (partial + tl + lo, partial + th + hi))


def lattice_sum_2d(s, n_cap: int = 10_000, k_exact: int | None = None) -> LatticeSum:
    """sum_{n,k>=1} (n^2 + k^2)^-s; converges iff s > 1."""
    return _lattice(s, n_cap, 0, k_exact)


def lattice_sum_triple(s, n_cap: int = 10_000, k_exact: int | None = None) -> LatticeSum:
    """sum_{n>=1} sum_{N>=n} sum_{k>=1} (N^2 + k^2)^-s = sum_{N,k} N (N^2 + k^2)^-s.

    Converges iff s > 3/2.  With s = (rho + 1) h / (2 rho) this is the
    finiteness condition h > 3 rho / (rho + 1).
    """
    return _lattice(s, n_cap, 1, k_exact)


def criterion_exponent(rho, h) -> Fraction:
    """s = (rho + 1) h / (2 rho), exact."""
    r = _exact(rho)
    return (r + 1) * _exact(h) / (2 * r)


# ------------------------------------------------------------ singular geometry
def _singular_set(f: MapSpec, regime: RegimeReport):
    post = np.asarray(regime.postsingular if regime.postsingular is not None else [], dtype=complex)
    return np.concatenate([np.array(f.asymptotic_values, dtype=complex), post]), post


def _iterate(f: MapSpec, z):
    """One step of f on an array; points at or beyond poles become INF."""
    z = np.asarray(z, dtype=complex)
    bad = is_inf(z) | ~np.isfinite(z)
    out = np.full(z.shape, INF, dtype=complex)
    if np.any(~bad):
        out[~bad] = f(z[~bad])
    return out


def _local_preimage(f: MapSpec, w, near):
    """The preimage of w in the lattice coset that lies closest to ``near``."""
    z0 = np.asarray(f.preimage_base(w))
    om = f.period
    k = np.rint(((np.asarray(near) - z0) / om).real)
    return z0 + k * om


# ------------------------------------------------------------ Martens ratios
@dataclass
class MartensEstimate:
    A: tuple
    A0: tuple
    ratios: list
    smoothed: list
    limit: float
    error: float
    counts: list = field(default_factory=list)       # atoms landing in (A, A0) per k

    def as_record(self) -> dict:
        return {"A": [complex(self.A[0]), self.A[1]], "A0": [complex(self.A0[0]), self.A0[1]],
                "ratios": self.ratios, "smoothed": self.smoothed, "limit": self.limit,
                "error": self.error}


def _check_cell_clear(f: MapSpec, cell, regime: RegimeReport):
    sing, _ = _singular_set(f, regime)
    c, r = cell
    d = float(np.min(chordal_dist(sing, complex(c))))
    if d - r < regime.safety_radius:
        raise CellTooCloseToSingular(f"cell at {c} comes within T of the singular set")


def martens_ratio(f: MapSpec, m: AtomicMeasure, A, A0, n_max: int | None = None,
                  regime: RegimeReport | None = None) -> MartensEstimate:
    """Ratios sum_{k<=n} m(f^-k A) / sum_{k<=n} m(f^-k A0), n = 0..n_max.

    m(f^-k A) is the weight of atoms z with f^k(z) in A.  Cells are
    (center, chordal radius).  ``smoothed`` is the running Cesaro mean of
    the ratios; the limit is the mean of its second half and the error is
    the spread there.
    """
    regime = classify_regime(f) if regime is None else regime
    for cell in (A, A0):
        _check_cell_clear(f, cell, regime)
    n_max = m.depth_max - 1 if n_max is None else n_max
    z = m.points.copy()
    num = den = 0.0
    ratios, counts = [], []
    for k in range(n_max + 1):
        fin = ~is_inf(z) & np.isfinite(z)
        inA = fin & (chordal_dist(np.where(fin, z, 0), A[0]) < A[1])
        in0 = fin & (chordal_dist(np.where(fin, z, 0), A0[0]) < A0[1])
        if k == 0 and (not inA.any() or not in0.any()):
            raise EmptyCell("a cell holds no atoms of m")
        num += float(m.weights[inA].sum())
        den += float(m.weights[in0].sum())
        ratios.append(num / den)
        counts.append((int(inA.sum()), int(in0.sum())))
        if k < n_max:
            z = _iterate(f, z)
    smoothed = list(np.cumsum(ratios) / np.arange(1, len(ratios) + 1))
    tail = np.array(smoothed[len(smoothed) // 2:])
    limit = float(tail.mean())
    err = float(max(np.max(np.abs(tail - limit)), np.std(ratios[len(ratios) // 2:])))
    return MartensEstimate(A, A0, ratios, [float(x) for x in smoothed], limit, err, counts)


# ------------------------------------------------------------ nested domains
@dataclass
class NestedDomainSpec:
    centers: np.ndarray          # postsingular prefix P
    radius: float                # Omega_0 = union of chordal disks D(x, radius), x in P
    p: int                       # g = f^p
    gamma_fit: float | None = None

    def omega0(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        return np.min(chordal_dist(z[..., None], self.centers), axis=-1) < self.radius


def nested_domain(f: MapSpec, regime: RegimeReport | None = None) -> NestedDomainSpec:
    regime = classify_regime(f) if regime is None else regime
    if regime.regime != SUB_EXPANDING:
        raise ValueError("nested domains need a sub-expanding map")
    p = regime.expansion_check[0] if regime.expansion_check else 1
    return NestedDomainSpec(np.asarray(regime.postsingular, dtype=complex), regime.safety_radius, p)


def _g(f: MapSpec, z, p: int):
    for _ in range(p):
        z = _iterate(f, z)
    return z


def _nearest_center(spec: NestedDomainSpec, z):
    return np.argmin(chordal_dist(np.asarray(z)[..., None], spec.centers), axis=-1)


def nesting_depth(f: MapSpec, spec: NestedDomainSpec, z, cap: int):
    """n with z in Gamma_n = Omega_n minus Omega_{n+1} (capped); -1 outside Omega_0.

    z is in Omega_1 when it lies within the radius of its nearest centre x and
    g(z) lies within the radius of g(x): the component of g^-1(Omega_0) at x.
    """
    z = np.asarray(z, dtype=complex)
    depth = np.where(spec.omega0(z), 0, -1)
    g_centers = _g(f, spec.centers, spec.p)
    alive = depth == 0
    cur = z.copy()
    for n in range(1, cap + 1):
        if not alive.any():
            break
        j = _nearest_center(spec, np.where(alive, cur, 0))
        nxt = _g(f, np.where(alive, cur, 0), spec.p)
        fin = ~is_inf(nxt)
        ok = alive & fin & (chordal_dist(np.where(fin, nxt, 0), g_centers[j]) < spec.radius)
        depth = np.where(ok, n, depth)
        alive = ok
        cur = np.where(ok, nxt, cur)
    return depth


@dataclass
class DecayProbe:
    spec: NestedDomainSpec
    masses: list                 # m(Gamma_n), n = 0..n_max
    counts: list                 # atoms per Gamma_n
    direct_masses: list          # from the original atoms only
    direct_counts: list
    gamma: float
    r2: float
    passed: bool

    def as_record(self) -> dict:
        return {"gamma": self.gamma, "r2": self.r2, "passed": self.passed, "masses": self.masses,
                "counts": self.counts, "direct_masses": self.direct_masses,
                "direct_counts": self.direct_counts, "p": self.spec.p, "T": self.spec.radius}


def _pull_back(f: MapSpec, spec: NestedDomainSpec, z, w, s: float):
    """All local g-pullbacks of atoms (z, w) in Omega_0, with conformal weights."""
    gc = _g(f, spec.centers, spec.p)
    j = _nearest_center(spec, z)
    out_z, out_w = [], []
    for i, x in enumerate(spec.centers):
        # branches at x serve the atoms around g(x)
        sel = chordal_dist(spec.centers[j], gc[i]) < 1e-9
        if not sel.any():
            continue
        y, wy = z[sel], w[sel]
        orbit = [x]
        for _ in range(spec.p - 1):
            orbit.append(complex(f(orbit[-1])))
        for near in reversed(orbit):
            y = _local_preimage(f, y, near)
            wy = wy * f.sph_deriv(y) ** -s
        out_z.append(y)
        out_w.append(wy)
    if not out_z:
        return np.empty(0, complex), np.empty(0)
    return np.concatenate(out_z), np.concatenate(out_w)


def gamma_decay_probe(f: MapSpec, m: AtomicMeasure, spec: NestedDomainSpec | None = None,
                      n_max: int = 8, min_atoms: int = 30, regime: RegimeReport | None = None,
                      r2_min: float = 0.8) -> DecayProbe:
    """Decay of m(Gamma_n) on the nested annuli around the postsingular set.

    The original atoms thin out quickly inside Omega_1, so the atoms of m in
    Gamma_0 are carried down the local inverse branches of g, each step
    weighted by |g'|_sigma^-s (the conformality of m).  These pulled atoms
    replace the original atoms inside Omega_1; every atom is then placed in
    its Gamma_n by the forward nesting test.  gamma is exp of the
    least-squares slope of log m(Gamma_n) against n.
    """
    regime = classify_regime(f) if regime is None else regime
    if regime.regime != SUB_EXPANDING:
        raise ValueError("the decay probe needs a sub-expanding map")
    spec = nested_domain(f, regime) if spec is None else spec
    d0 = nesting_depth(f, spec, m.points, n_max + 1)
    direct_m = [float(m.weights[d0 == n].sum()) for n in range(n_max + 1)]
    direct_c = [int((d0 == n).sum()) for n in range(n_max + 1)]
    z, w = m.points[d0 == 0], m.weights[d0 == 0]
    pts, wts = [z], [w]
    for _ in range(n_max):
        z, w = _pull_back(f, spec, z, w, m.s)
        pts.append(z)
        wts.append(w)
    pts, wts = np.concatenate(pts), np.concatenate(wts)
    depth = nesting_depth(f, spec, pts, n_max + 1)
    masses = [float(wts[depth == n].sum()) for n in range(n_max + 1)]
    counts = [int((depth == n).sum()) for n in range(n_max + 1)]
    thin = [n for n, c in enumerate(counts) if c < min_atoms]
    if thin:
        raise InsufficientAtoms(f"Gamma_n holds fewer than {min_atoms} atoms for n = {thin}")
    n = np.arange(n_max + 1, dtype=float)
    y = np.log(masses)
    slope, icpt = np.polyfit(n, y, 1)
    resid = y - (slope * n + icpt)
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss if ss > 0 else 1.0
    gamma = math.exp(slope)
    spec.gamma_fit = gamma
    return DecayProbe(spec, masses, counts, direct_m, direct_c, gamma, r2,
                      bool(gamma < 1 and r2 >= r2_min))


# ------------------------------------------------------------ induced map
@dataclass
class InducedDomain:
    """X = sphere minus B(P, T) minus the components W_a of f^-1(D(f(a), T)) at each a.

    With ``whole=True`` X is the whole plane and f_* = f.
    """
    f: MapSpec
    post: np.ndarray
    T: float
    whole: bool = False

    @classmethod
    def from_regime(cls, f: MapSpec, regime: RegimeReport | None = None) -> "InducedDomain":
        regime = classify_regime(f) if regime is None else regime
        return cls(f, np.asarray(regime.postsingular, dtype=complex), regime.safety_radius)

    @classmethod
    def whole_sphere(cls, f: MapSpec) -> "InducedDomain":
        return cls(f, np.empty(0, complex), 0.0, True)

    def contains(self, z) -> np.ndarray:
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        fin = ~is_inf(z) & np.isfinite(z)
        if self.whole:
            return fin
        zf = np.where(fin, z, 0)
        ok = fin.copy()
        if self.post.size:
            ok &= np.min(chordal_dist(zf[:, None], self.post[None, :]), axis=1) > self.T
        fz = _iterate(self.f, zf)
        for a in self.f.asymptotic_values:
            fa = complex(self.f(a))
            near = ~is_inf(fz) & (chordal_dist(np.where(is_inf(fz), 0, fz), fa) < self.T)
            if not near.any():
                continue
            # inside W_a exactly when z is the branch of f^-1 through a
            br = _local_preimage(self.f, fz[near], a)
            same = np.abs(br - zf[near]) <= 1e-9 * (1 + np.abs(zf[near]))
            idx = np.nonzero(near)[0]
            ok[idx[same]] = False
        return ok


TRACT_DEPTH = 1e-6      # |exp(+-kappa z)| below this: f(z) is within ~1e-6 of an asymptotic value


def _tract_step(f: MapSpec, z: complex):
    """f(z) = a + delta deep in a tract, and f(a + delta) by a Taylor step at a.

    Plain evaluation rounds f(z) to a, after which the orbit follows the
    exact singular orbit forever; the Taylor step keeps the offset.
    """
    a, d = f.asymptotic_offset(z)
    _, f1, f2, f3 = (complex(v) for v in f.derivatives(a))
    return a + d, complex(f(a)) + d * (f1 + d * (f2 / 2 + d * f3 / 6))


def induced_return(f: MapSpec, z, max_steps: int = 1000, domain: InducedDomain | None = None):
    """(tau, f_*(z), log |f_*'(z)|_sigma) for the first return to X."""
    domain = InducedDomain.from_regime(f) if domain is None else domain
    z = complex(z)
    if not domain.contains(z)[0]:
        raise ValueError(f"{z} is not in the induced domain X")
    logd = 0.0
    tau = 0
    while tau < max_steps:
        logd += float(f.log_sph_deriv(z))
        tau += 1
        if abs(complex(f._u(np.asarray(z))[0])) < TRACT_DEPTH:
            w, nxt = _tract_step(f, z)
            if domain.contains(w)[0]:
                return tau, w, logd
            if tau == max_steps:
                break
            logd += float(f.log_sph_deriv(w))
            tau += 1
            z = nxt
        else:
            z = complex(f(z))
        if is_inf(z) or not np.isfinite(z):
            raise LeftDomain("orbit hit a pole")
        if domain.contains(z)[0]:
            return tau, z, logd
    raise NoReturnWithin(f"no return to X within {max_steps} steps")


def induced_orbit(f: MapSpec, z, n_returns: int, domain: InducedDomain, max_steps: int = 1000):
    """Log-derivatives and return times along n_returns consecutive returns."""
    logs, taus = [], []
    for _ in range(n_returns):
        tau, z, ld = induced_return(f, z, max_steps, domain)
        logs.append(ld)
        taus.append(tau)
    return logs, taus


@dataclass
class LyapunovEstimate:
    chi: float
    n_samples: int
    std_err: float
    tau_histogram: dict
    survived: int = 0
    attempted: int = 0

    @property
    def rel_err(self) -> float:
        return self.std_err / abs(self.chi) if self.chi else math.inf

    def as_record(self) -> dict:
        return {"chi": self.chi, "std_err": self.std_err, "n_samples": self.n_samples,
                "survived": self.survived, "attempted": self.attempted,
                "tau_histogram": {str(k): v for k, v in sorted(self.tau_histogram.items())}}


def orbit_seed(master: int, index: int) -> np.random.Generator:
    """Counter-based stream for orbit ``index``; independent of scheduling."""
    return np.random.default_rng(np.random.SeedSequence(entropy=int(master), spawn_key=(int(index),)))


def lyapunov_control(f: MapSpec, z, length: int) -> LyapunovEstimate:
    """Single orbit with X = whole plane, so every step is a return."""
    logs, taus = induced_orbit(f, z, length, InducedDomain.whole_sphere(f))
    chi = math.fsum(logs) / length
    return LyapunovEstimate(chi, 1, 0.0, {1: length}, 1, 1)


def lyapunov_induced(f: MapSpec, m: AtomicMeasure, n_orbits: int = 200, length: int = 100,
                     seed: int = 0, jitter: float = 0.01, max_steps: int = 1000,
                     domain: InducedDomain | None = None) -> LyapunovEstimate:
    """chi = mean over orbits of (1/N) sum log |f_*'|_sigma along N returns.

    Starts are drawn from m conditioned on X, each atom moved uniformly
    within a chordal disk of radius ``jitter`` (atoms themselves are exact
    preimages of infinity and would land on a pole).
    """
    domain = InducedDomain.from_regime(f) if domain is None else domain
    p = m.weights / m.weights.sum()
    chis, hist = [], {}
    for i in range(n_orbits):
        rng = orbit_seed(seed, i)
        z = None
        for _ in range(1000):
            a = m.points[rng.choice(p.size, p=p)]
            cand = complex(random_in_chordal_disk(rng, complex(a), jitter, 1)[0])
            if domain.contains(cand)[0]:
                z = cand
                break
        if z is None:
            continue
        try:
            logs, taus = induced_orbit(f, z, length, domain, max_steps)
        except (NoReturnWithin, LeftDomain):
            continue
        chis.append(math.fsum(logs) / length)
        for t in taus:
            hist[t] = hist.get(t, 0) + 1
    if len(chis) < 0.5 * n_orbits:
        raise TooFewSurvivingOrbits(f"{len(chis)} of {n_orbits} orbits completed {length} returns")
    c = np.array(chis)
    se = float(c.std(ddof=1) / math.sqrt(c.size)) if c.size > 1 else math.inf
    return LyapunovEstimate(float(c.mean()), int(c.size), se, hist, int(c.size), n_orbits)
