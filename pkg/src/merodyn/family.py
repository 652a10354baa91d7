"""Explicit meromorphic families with constant Schwarzian derivative.

Both built-in families are a Mobius map of an exponential,

    f(z) = M(exp(kappa z)),

``tangent``:    lambda tan z           with kappa = 2i, M(u) = i lambda (1 - u) / (1 + u)
``mobius_exp``: (a e^z + b e^-z) / (c e^z + d e^-z)   with kappa = 2, M(u) = (a u + b) / (c u + d)

so f has period ``omega = 2 pi i / kappa`` and the preimages of any w form one
lattice coset ``z0 + k omega``.  Since |f'| is constant on that coset, the
spherical derivative along it is exactly ``A(w) (1 + |z_k|^2)``.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import (AsymptoticValue, BranchPointConflict, EssentialSingularity, NotAsymptoticValue,
                     OrbitHitPole)
from .sphere import INF, MobiusMap, chordal_dist, is_inf

TANGENT = "tangent"
MOBIUS_EXP = "mobius_exp"
FAMILIES = (TANGENT, MOBIUS_EXP)

# distance to the pole/zero lattice below which tan is snapped to 0 or infinity
LATTICE_SNAP = 1e-14


@dataclass(frozen=True)
class MapSpec:
    """One member of a built-in family; build with :meth:`tangent` or :meth:`mobius_exp`."""

    family: str
    lam: complex = 1.0
    coeffs: tuple = (1.0, 0.0, 1.0, 1.0)
    schwarzian_degree: int = 0
    mobius: MobiusMap = field(init=False, repr=False, compare=False)
    kappa: complex = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.schwarzian_degree != 0:
            raise ValueError("built-in families have constant Schwarzian (degree 0)")
        if self.family == TANGENT:
            lam = complex(self.lam)
            if lam == 0:
                raise ValueError("tangent family needs lambda != 0")
            mob = MobiusMap(-1j * lam, 1j * lam, 1.0, 1.0)
            kappa = 2j
        else:
            a, b, c, d = (complex(x) for x in self.coeffs)
            if a * d - b * c == 0:
                raise ValueError("mobius_exp needs ad - bc != 0")
            if c == 0 or d == 0:
                raise ValueError("mobius_exp needs c, d != 0 (finite asymptotic values)")
            mob = MobiusMap(a, b, c, d)
            kappa = 2.0 + 0j
        object.__setattr__(self, "mobius", mob)
        object.__setattr__(self, "kappa", kappa)

    @classmethod
    def tangent(cls, lam) -> "MapSpec":
        return cls(TANGENT, lam=complex(lam))

    @classmethod
    def mobius_exp(cls, a, b, c, d) -> "MapSpec":
        return cls(MOBIUS_EXP, coeffs=tuple(complex(x) for x in (a, b, c, d)))

    @property
    def rho(self) -> Fraction:
        return Fraction(self.schwarzian_degree + 2, 2)

    @property
    def borel_threshold(self) -> float:
        r = self.rho
        return float(r / (r + 1))

    @property
    def period(self) -> complex:
        return 2j * math.pi / self.kappa

    @property
    def asymptotic_values(self) -> tuple:
        m = self.mobius
        # u -> 0 and u -> infinity along the tracts
        return (complex(m.a / m.c), complex(m.b / m.d)) if self.family == MOBIUS_EXP \
            else (1j * complex(self.lam), -1j * complex(self.lam))

    @property
    def is_real(self) -> bool:
        return self.family == TANGENT and complex(self.lam).imag == 0

    def label(self) -> str:
        if self.family == TANGENT:
            lam = complex(self.lam)
            return f"tan[{lam.real:.17g}{lam.imag:+.17g}i]"
        return "mexp[" + ",".join(f"{complex(c).real:.17g}{complex(c).imag:+.17g}i"
                                  for c in self.coeffs) + "]"

    # ----------------------------------------------------------------- evaluation
    def _u(self, z):
        """(u, flip) with u = exp(kappa z) if |.| <= 1 else exp(-kappa z); flip marks the second chart."""
        e = self.kappa * z
        flip = e.real > 0
        return np.exp(np.where(flip, -e, e)), flip

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        if np.any(is_inf(z)):
            raise EssentialSingularity("f is not defined at infinity")
        u, flip = self._u(z)
        m = self.mobius
        num = np.where(flip, m.a + m.b * u, m.a * u + m.b)
        den = np.where(flip, m.c + m.d * u, m.c * u + m.d)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(den == 0, INF, num / np.where(den == 0, 1, den))
        if self.family == TANGENT:
            # the exponential chart cancels near the zeros; tan is accurate off the tracts
            mid = np.abs(z.imag) < 8
            with np.errstate(all="ignore"):
                out = np.where(mid, complex(self.lam) * np.tan(np.where(mid, z, 0)), out)
            out = self._snap(z, out)
        return out if out.ndim else complex(out)

    def asymptotic_offset(self, z: complex):
        """(a, f(z) - a) for the asymptotic value a nearest f(z), without cancellation.

        Deep in a tract f(z) rounds to a exactly; the offset is kept from
        u = exp(+-kappa z).
        """
        u, flip = self._u(np.asarray(z, dtype=complex))
        u, flip = complex(u), bool(flip)
        m = self.mobius
        if flip:
            # f = (a + b u) / (c + d u) near a / c
            return complex(m.a / m.c), u * (m.b * m.c - m.a * m.d) / (m.c * (m.c + m.d * u))
        return complex(m.b / m.d), u * (m.a * m.d - m.b * m.c) / (m.d * (m.c * u + m.d))

    def _snap(self, z, out):
        # tan(k pi) = 0 and tan(pi/2 + k pi) = inf exactly on the real lattice;
        # not at 0 itself, where tan is computed to full relative precision
        x = z.real / (math.pi / 2)
        j = np.rint(x)
        tol = LATTICE_SNAP * np.maximum(1.0, np.abs(j))
        near = (np.abs(z.imag) <= tol) & (np.abs(z.real - j * (math.pi / 2)) <= tol) & (j != 0)
        even = (j % 2) == 0
        out = np.where(near & even, 0j, out)
        return np.where(near & ~even, INF, out)

    def derivatives(self, z):
        """(f, f', f'', f''') from the Mobius/exponential factorisation."""
        z = np.asarray(z, dtype=complex)
        k = self.kappa
        u = np.exp(k * z)
        m0, m1, m2, m3 = self.mobius.derivatives(u)
        g1, g2, g3 = k * u, k * k * u, k ** 3 * u
        return (m0, m1 * g1, m2 * g1 ** 2 + m1 * g2,
                m3 * g1 ** 3 + 3 * m2 * g1 * g2 + m1 * g3)

    def log_sph_deriv(self, z):
        """log |f'(z)|_sigma, finite at poles (chart 1/w) and for huge |Im z|."""
        z = np.asarray(z, dtype=complex)
        e = self.kappa * z
        u, flip = self._u(z)
        m = self.mobius
        den = np.where(flip,
                       np.abs(m.a + m.b * u) ** 2 + np.abs(m.c + m.d * u) ** 2,
                       np.abs(m.a * u + m.b) ** 2 + np.abs(m.c * u + m.d) ** 2)
        # |u| / den is the same in both charts
        return (math.log(abs(self.kappa) * abs(m.det)) - np.abs(e.real)
                + np.log1p(np.abs(z) ** 2) - np.log(den))

    def sph_deriv(self, z):
        out = np.exp(self.log_sph_deriv(z))
        return out if np.ndim(out) else float(out)

    def pole_distance(self, z):
        """Chordal distance from z to the nearest pole (float, or array for array z)."""
        base = self.preimage_base(INF)
        w = self.period
        z = np.asarray(z, dtype=complex)
        k = np.rint(((z - base) / w).real)
        cand = base + (k[..., None] + np.array([-1, 0, 1])) * w
        out = np.min(chordal_dist(cand, z[..., None]), axis=-1)
        return out if out.ndim else float(out)

    # ----------------------------------------------------------------- inverse
    def preimage_base(self, w):
        """Principal preimage z0 of w; all preimages are z0 + k * period.

        For the tangent family this is the principal complex arctangent of
        w / lambda (cuts on ±i[1, inf)).  Raises BranchPointConflict at the
        asymptotic values, which have no preimages.
        """
        w = np.asarray(w, dtype=complex)
        u = np.asarray(self.mobius.inverse()(w))
        bad = (u == 0) | is_inf(u)
        if np.any(bad):
            raise BranchPointConflict(f"{w[bad].ravel()[0]} is an asymptotic value")
        z0 = np.log(u) / self.kappa
        return z0 if z0.ndim else complex(z0)

    def lattice_factor(self, w):
        """A(w) with |f'(z_k)|_sigma = A(w) (1 + |z_k|^2) for every preimage z_k of w."""
        w = np.asarray(w, dtype=complex)
        m = self.mobius
        u = np.asarray(m.inverse()(w))
        small = np.abs(u) <= 1
        v = np.where(small, u, 1 / np.where(u == 0, 1, u))
        den = np.where(small,
                       np.abs(m.a * v + m.b) ** 2 + np.abs(m.c * v + m.d) ** 2,
                       np.abs(m.a + m.b * v) ** 2 + np.abs(m.c + m.d * v) ** 2)
        out = abs(self.kappa) * abs(m.det) * np.abs(v) / den
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class TruncationPolicy:
    """Cutoffs for the infinite preimage sums.

    ``k_max`` bounds the lattice index |k|, ``radius_cut`` the modulus |z_k|;
    the omitted tail is always bracketed analytically.  ``rel_tail_tol`` is
    the tail-to-partial ratio above which results are flagged.
    """

    k_max: int = 1000
    radius_cut: float = math.inf
    rel_tail_tol: float = 1e-6

    def __post_init__(self):
        if self.k_max < 1 or not self.radius_cut > 0 or not self.rel_tail_tol > 0:
            raise ValueError("invalid truncation policy")

    def effective_k(self, f: MapSpec) -> int:
        if math.isinf(self.radius_cut):
            return self.k_max
        return max(1, min(self.k_max, int(self.radius_cut / abs(f.period))))


@dataclass
class PreimageSet:
    """Enumerated preimages of one point, sorted by modulus."""

    w: complex
    z: np.ndarray
    k: np.ndarray
    abs_deriv: np.ndarray
    sph_deriv: np.ndarray
    base: complex              # lattice coset representative z0
    lattice_factor: float      # A(w)
    k_max: int
    tail_min_modulus: float    # smallest |z_k| among omitted branches
    tail_exponent: float       # rho + 1: omitted |f'|_sigma grow like |z|^(rho+1)


def _check_asymptotic(f: MapSpec, w, tol):
    for a in f.asymptotic_values:
        if tol > 0 and np.any(chordal_dist(w, a) < tol):
            raise AsymptoticValue(w)


def preimages(f: MapSpec, w, policy: TruncationPolicy, asym_tol: float = 1e-12) -> PreimageSet:
    """All preimages z_k = z0 + k omega of ``w`` with |k| <= k_max."""
    w = complex(w)
    _check_asymptotic(f, w, asym_tol)
    z0 = f.preimage_base(w)
    K = policy.effective_k(f)
    k = np.arange(-K, K + 1)
    z = z0 + k * f.period
    order = np.lexsort((k, np.abs(z)))
    z, k = z[order], k[order]
    A = f.lattice_factor(w)
    sph = A * (1 + np.abs(z) ** 2)
    if is_inf(w):
        absd = np.full(z.shape, np.inf)
    else:
        absd = sph * (1 + abs(w) ** 2) / (1 + np.abs(z) ** 2)
    tail_mod = float(min(abs(z0 + (K + 1) * f.period), abs(z0 - (K + 1) * f.period)))
    return PreimageSet(w, z, k, absd, sph, complex(z0), float(A), K, tail_mod,
                       float(f.rho + 1))


# --------------------------------------------------------------------- regimes
HYPERBOLIC = "Hyperbolic"
SUB_EXPANDING = "SubExpanding"
UNSUPPORTED = "Unsupported"


@dataclass
class RegimeReport:
    regime: str
    singular_orbits: list
    safety_radius: float
    expansion_check: tuple | None = None     # (p, min |(f^p)'|_sigma on the grid)
    cycles: list = field(default_factory=list)   # (cycle points, multiplier) per asymptotic value
    postsingular: np.ndarray | None = None       # distinct computed points f^n(a), n >= 1
    verified_radius: float = 0.0                 # (T3) checked among preimages up to this modulus
    fatou_nonempty: bool = False
    notes: list = field(default_factory=list)

    def summary(self) -> dict:
        return {"regime": self.regime, "T": self.safety_radius,
                "expansion_check": list(self.expansion_check) if self.expansion_check else None,
                "fatou_nonempty": self.fatou_nonempty,
                "multipliers": [abs(m) for _, m in self.cycles if m is not None]}


def _orbit(f: MapSpec, a: complex, n: int):
    pts = [complex(a)]
    z = complex(a)
    for _ in range(n):
        z = complex(f(z))
        if is_inf(z):
            raise OrbitHitPole(f"orbit of asymptotic value {a} lands on a pole")
        pts.append(z)
    return np.array(pts)


def _find_cycle(f: MapSpec, orbit, qmax=20, tol=1e-9, window=20):
    """Detect a cycle at the end of the orbit; returns (points, multiplier) or None."""
    z = orbit[-1]
    pts = [z]
    w = z
    for q in range(1, qmax + 1):
        w = complex(f(w))
        if is_inf(w):
            return None
        if chordal_dist(w, z) < tol:
            cyc = np.array(pts)
            mult = complex(np.prod(f.derivatives(cyc)[1]))
            # orbit differences must not grow over the trailing window
            tail = orbit[-(window + q):]
            diffs = np.abs(tail[q:] - tail[:-q])
            if diffs.size > 2 and diffs[-1] > 10 * diffs[0] + tol:
                return None
            return cyc, mult
        pts.append(w)
    return None


def _dedupe(points, tol=1e-9):
    out = []
    for p in points:
        if not out or np.min(chordal_dist(np.array(out), p)) > tol:
            out.append(complex(p))
    return np.array(out, dtype=complex)


def _safety_radius(f: MapSpec, post, k_check=50):
    """Largest T with (T1)-(T3) on the computed postsingular points."""
    A = np.array(f.asymptotic_values)
    S = _dedupe(np.concatenate([A, post]))
    cands = []
    for i in range(len(A)):
        for j in range(i + 1, len(A)):
            cands.append(chordal_dist(A[i], A[j]))                      # (T1)
    if post.size:
        cands.append(float(np.min(chordal_dist(post[:, None], A[None, :]))))   # (T2)
    pre = []
    for s in S:
        try:
            z0 = f.preimage_base(s)
        except BranchPointConflict:
            continue                         # asymptotic values have no preimages
        pre.append(z0 + np.arange(-k_check, k_check + 1) * f.period)
    if pre:
        pre = np.concatenate(pre)
        d = np.min(chordal_dist(pre[:, None], S[None, :]), axis=1)
        d = d[d > 1e-9]                      # points of S itself are excluded in (T3)
        if d.size:
            cands.append(float(np.min(d)))
    return 0.25 * min(cands), k_check * abs(f.period)


def _ring(center: complex, radius: float, n: int = 16):
    """Center plus two rings of points at chordal radius <= ``radius``."""
    from .sphere import chordal_disk_to_euclid
    c, r = chordal_disk_to_euclid(center, radius)
    th = 2 * math.pi * np.arange(n) / n
    return np.concatenate([[center], c + 0.5 * r * np.exp(1j * th), c + 0.999 * r * np.exp(1j * th)])


def expansion_check(f: MapSpec, points, radius: float, p_max: int):
    """Smallest p <= p_max with min |(f^p)'|_sigma > 2 on disks around ``points``."""
    grid = np.concatenate([_ring(z, radius) for z in points])
    logd = np.zeros(grid.shape)
    z = grid.copy()
    for p in range(1, p_max + 1):
        ok = ~is_inf(z)
        logd = np.where(ok, logd + f.log_sph_deriv(np.where(ok, z, 0)), np.inf)
        m = float(np.exp(np.min(logd)))
        if m > 2:
            return p, m
        z = np.where(ok, f(np.where(ok, z, 0)), INF)
    return None


def classify_regime(f: MapSpec, orbit_len: int = 200, escape_box: float = 1e6,
                    mult_tol: float = 1e-6) -> RegimeReport:
    """Hyperbolic / SubExpanding / Unsupported from the asymptotic-value orbits."""
    if orbit_len < 10:
        raise ValueError("orbit_len >= 10 required")
    A = f.asymptotic_values
    orbits = [_orbit(f, a, orbit_len) for a in A]
    cycles = [_find_cycle(f, o) for o in orbits]
    attracted = [c is not None and abs(c[1]) < 1 - mult_tol for c in cycles]
    post = _dedupe(np.concatenate([o[1:] for o in orbits]))
    notes = []
    T, verified = _safety_radius(f, post)
    report = RegimeReport(UNSUPPORTED, orbits, T, None,
                          [(c[0], c[1]) if c else (None, None) for c in cycles],
                          post, verified, any(attracted), notes)
    if all(attracted):
        report.regime = HYPERBOLIC
        return report
    rest = [o for o, att in zip(orbits, attracted) if not att]
    for o in rest:
        if np.max(np.abs(o)) > escape_box:
            notes.append("singular orbit leaves the escape box")
            return report
        if np.min(chordal_dist(o[1:, None], np.array(A)[None, :])) < T:
            notes.append("singular orbit returns near an asymptotic value")
            return report
    for c, att in zip(cycles, attracted):
        if not att and c is not None and abs(abs(c[1]) - 1) <= mult_tol:
            notes.append("indifferent cycle")
            return report
    pts = _dedupe(np.concatenate([o[1:] for o in rest]))
    chk = None
    radius = T
    for _ in range(4):
        chk = expansion_check(f, pts, radius, min(orbit_len, 8))
        if chk:
            break
        radius /= 2
    if chk is None:
        notes.append("no expansion on the postsingular neighbourhood")
        return report
    report.regime = SUB_EXPANDING
    report.safety_radius = radius
    report.expansion_check = chk
    return report


# --------------------------------------------------------------------- tracts
@dataclass(frozen=True)
class TractCell:
    asym_value: complex
    n: int
    k: int
    z: complex
    weight_scale: float       # 1 / |f'(z)|_sigma


def point_at_chordal_distance(a: complex, r: float, direction: complex = 1.0) -> complex:
    """a + s * direction with chordal distance exactly r from a.

    With A = 1 + |a|^2 and b = Re(conj(a) d) the condition is the quadratic
    s^2 (1 - r^2 A) - 2 r^2 A b s - r^2 A^2 = 0.
    """
    d = direction / abs(direction)
    A = 1 + abs(a) ** 2
    q = 1 - r * r * A
    if q <= 0:
        raise ValueError("no point at that chordal distance along the ray")
    b = (a.conjugate() * d).real
    s = (r * r * A * b + math.sqrt((r * r * A * b) ** 2 + q * r * r * A * A)) / q
    return a + s * d


def tract_cells(f: MapSpec, a: complex, n_max: int, k_max: int, T: float | None = None):
    """Representatives z_{n,k} of the tract cells over the asymptotic value ``a``.

    z_{n,0} is the principal preimage of the point at chordal distance
    T 2^-n from ``a``; z_{n,k} = z_{n,0} + k * period.
    """
    if not any(abs(a - v) <= 1e-12 * max(1, abs(v)) for v in f.asymptotic_values):
        raise NotAsymptoticValue(a)
    if T is None:
        T = classify_regime(f, 20).safety_radius
    cells = []
    for n in range(n_max + 1):
        p = point_at_chordal_distance(complex(a), T * 2.0 ** -n)
        z0 = f.preimage_base(p)
        for k in range(-k_max, k_max + 1):
            z = z0 + k * f.period
            cells.append(TractCell(complex(a), n, k, complex(z), 1 / float(f.sph_deriv(z))))
    return cells


def tract_regression(cells, rho=1):
    """Least-squares slope of log|z_nk| against log sqrt(n^2 + k^2), and band constant C.

    C is fitted over the whole grid: every |z_nk| / (n^2 + k^2)^(1/(2 rho))
    lies in [g / C, g C] with g the geometric mean of the ratios.
    """
    n = np.array([c.n for c in cells], float)
    k = np.array([c.k for c in cells], float)
    z = np.array([c.z for c in cells])
    m = (n ** 2 + k ** 2) > 0
    x = 0.5 * np.log(n[m] ** 2 + k[m] ** 2)
    y = np.log(np.abs(z[m]))
    slope, icpt = np.polyfit(x, y, 1)
    r = y - x / float(rho)
    C = float(np.exp(0.5 * (r.max() - r.min())))
    return float(slope), float(icpt), C
