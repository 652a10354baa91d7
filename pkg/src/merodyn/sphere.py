"""Riemann-sphere primitives.

Points of the extended plane are plain Python/numpy complex numbers; every
non-finite value stands for the point at infinity (canonical marker ``INF``).
Distances use the chordal metric of the sphere of diameter one,

    [p, q] = |p - q| / sqrt((1 + |p|^2)(1 + |q|^2)),

whose infinitesimal form is |dz| / (1 + |z|^2), so spherical derivatives are
|f'(z)| (1 + |z|^2) / (1 + |f(z)|^2) with no factor-two convention.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NearPole, NumericallyUnstable, OrbitEscaped, PoleAt

INF = complex(math.inf, 0.0)

# |f'| below this makes f''/f' meaningless in double precision
DERIV_FLOOR = 1e-12


def is_inf(z):
    """True where ``z`` is the point at infinity (any non-finite value)."""
    return ~np.isfinite(z)


def chordal_dist(p, q):
    """Chordal distance on the sphere of diameter one (values in [0, 1])."""
    p = np.asarray(p, dtype=complex)
    q = np.asarray(q, dtype=complex)
    p_inf, q_inf = is_inf(p), is_inf(q)
    pf = np.where(p_inf, 0, p)
    qf = np.where(q_inf, 0, q)
    ap, aq = np.abs(pf), np.abs(qf)
    # large moduli: work with 1/p to keep the products in range
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        d = np.abs(pf - qf) / np.sqrt((1 + ap * ap) * (1 + aq * aq))
        d_big = np.abs(1 / np.where(pf == 0, 1, pf) - 1 / np.where(qf == 0, 1, qf)) / np.sqrt(
            (1 + 1 / np.where(ap == 0, 1, ap) ** 2) * (1 + 1 / np.where(aq == 0, 1, aq) ** 2))
    big = (ap > 1e100) | (aq > 1e100)
    d = np.where(big & (ap > 0) & (aq > 0), d_big, d)
    d = np.where(p_inf & ~q_inf, 1 / np.hypot(1, aq), d)
    d = np.where(q_inf & ~p_inf, 1 / np.hypot(1, ap), d)
    d = np.where(p_inf & q_inf, 0.0, d)
    d = np.minimum(d, 1.0)
    return d if d.ndim else float(d)


def to_sphere(z):
    """Embed into R^3 on the sphere of diameter one touching the plane at 0.

    Euclidean distance between embedded points equals :func:`chordal_dist`.
    Infinity maps to the north pole (0, 0, 1).
    """
    z = np.asarray(z, dtype=complex)
    inf = is_inf(z)
    zf = np.where(inf, 0, z)
    r2 = np.abs(zf) ** 2
    with np.errstate(over="ignore", invalid="ignore"):
        x = zf.real / (1 + r2)
        y = zf.imag / (1 + r2)
        h = r2 / (1 + r2)
    big = r2 > 1e200
    if np.any(big):
        w = 1 / np.where(big, zf, 1)
        s2 = np.abs(w) ** 2
        x = np.where(big, w.real / (1 + s2), x)
        y = np.where(big, -w.imag / (1 + s2), y)
        h = np.where(big, 1 / (1 + s2), h)
    x = np.where(inf, 0.0, x)
    y = np.where(inf, 0.0, y)
    h = np.where(inf, 1.0, h)
    return np.stack([x, y, h], axis=-1)


def from_sphere(xyz):
    """Inverse of :func:`to_sphere`; points are first projected onto the sphere."""
    xyz = np.asarray(xyz, dtype=float)
    c = xyz - np.array([0.0, 0.0, 0.5])
    nrm = np.linalg.norm(c, axis=-1, keepdims=True)
    c = 0.5 * c / np.where(nrm == 0, 1, nrm)
    x, y, h = c[..., 0], c[..., 1], c[..., 2] + 0.5
    denom = 1 - h
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (x + 1j * y) / denom
    z = np.where(denom < 1e-300, INF, z)
    return z if np.ndim(z) else complex(z)


def chordal_disk_to_euclid(center: complex, radius: float):
    """Euclidean (center, radius) of the chordal disk D(center, radius).

    Requires the disk to omit infinity, i.e. radius < chordal distance to INF.
    """
    k = radius * radius * (1 + abs(center) ** 2)
    if k >= 1:
        raise ValueError("chordal disk contains infinity")
    c = center / (1 - k)
    r2 = abs(c) ** 2 - (abs(center) ** 2 - k) / (1 - k)
    return c, math.sqrt(max(r2, 0.0))


def sphere_grid(n: int):
    """``n`` nearly uniform points on the sphere (Fibonacci lattice), as complex."""
    i = np.arange(n) + 0.5
    h = i / n                      # height in (0, 1): uniform in area
    phi = i * math.pi * (3 - math.sqrt(5))
    rho = np.sqrt(h * (1 - h))     # distance from the axis on the diameter-1 sphere
    xyz = np.stack([rho * np.cos(phi), rho * np.sin(phi), h], axis=-1)
    return from_sphere(xyz)


def random_in_chordal_disk(rng, center: complex, radius: float, size: int):
    """Uniform-in-area samples from a chordal disk (rejection in the plane)."""
    c, r = chordal_disk_to_euclid(center, radius)
    out = np.empty(0, dtype=complex)
    while out.size < size:
        m = 2 * (size - out.size) + 16
        rr = r * np.sqrt(rng.random(m))
        th = 2 * math.pi * rng.random(m)
        pts = c + rr * np.exp(1j * th)
        out = np.concatenate([out, pts[chordal_dist(pts, center) < radius]])
    return out[:size]


@dataclass(frozen=True)
class MobiusMap:
    """z -> (a z + b) / (c z + d) with ad - bc != 0."""

    a: complex
    b: complex
    c: complex
    d: complex

    def __post_init__(self):
        if self.det == 0:
            raise ValueError("Mobius map needs ad - bc != 0")

    @property
    def det(self) -> complex:
        return self.a * self.d - self.b * self.c

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        inf = is_inf(z)
        zf = np.where(inf, 0, z)
        big = np.abs(zf) > 1
        with np.errstate(divide="ignore", invalid="ignore"):
            w = 1 / np.where(big, zf, 1)
            num = np.where(big, self.a + self.b * w, self.a * zf + self.b)
            den = np.where(big, self.c + self.d * w, self.c * zf + self.d)
            num = np.where(inf, self.a, num)
            den = np.where(inf, self.c, den)
            out = np.where(den == 0, INF, num / np.where(den == 0, 1, den))
        return out if out.ndim else complex(out)

    def compose(self, other: "MobiusMap") -> "MobiusMap":
        """self o other."""
        return MobiusMap(self.a * other.a + self.b * other.c,
                         self.a * other.b + self.b * other.d,
                         self.c * other.a + self.d * other.c,
                         self.c * other.b + self.d * other.d)

    def inverse(self) -> "MobiusMap":
        return MobiusMap(self.d, -self.b, -self.c, self.a)

    def derivatives(self, z):
        """(M, M', M'', M''') at finite non-pole z."""
        z = np.asarray(z, dtype=complex)
        q = self.c * z + self.d
        d1 = self.det / q ** 2
        d2 = -2 * self.c * self.det / q ** 3
        d3 = 6 * self.c ** 2 * self.det / q ** 4
        return (self.a * z + self.b) / q, d1, d2, d3

    def sph_deriv(self, z):
        """|M'|_sigma, finite on the whole sphere including poles and INF."""
        z = np.asarray(z, dtype=complex)
        inf = is_inf(z)
        zf = np.where(inf, 0, z)
        big = np.abs(zf) > 1
        w = 1 / np.where(big, zf, 1)
        # divide numerator and denominator by |z|^2 in the large chart
        num = np.where(big, 1 + np.abs(w) ** 2, 1 + np.abs(zf) ** 2)
        den = np.where(big,
                       np.abs(self.a + self.b * w) ** 2 + np.abs(self.c + self.d * w) ** 2,
                       np.abs(self.a * zf + self.b) ** 2 + np.abs(self.c * zf + self.d) ** 2)
        num = np.where(inf, 1.0, num)
        den = np.where(inf, abs(self.a) ** 2 + abs(self.c) ** 2, den)
        out = abs(self.det) * num / den
        return out if out.ndim else float(out)

    def pole_distance(self, z) -> float:
        return chordal_dist(z, INF if self.c == 0 else -self.d / self.c)


@dataclass(frozen=True)
class Composed:
    """outer o inner for a Mobius ``outer`` and any map with ``derivatives``."""

    outer: MobiusMap
    inner: object

    def __call__(self, z):
        return self.outer(self.inner(z))

    def derivatives(self, z):
        g0, g1, g2, g3 = self.inner.derivatives(z)
        m0, m1, m2, m3 = self.outer.derivatives(g0)
        return (m0, m1 * g1, m2 * g1 ** 2 + m1 * g2,
                m3 * g1 ** 3 + 3 * m2 * g1 * g2 + m1 * g3)

    def sph_deriv(self, z):
        # chain rule in the spherical metric
        return self.outer.sph_deriv(self.inner(z)) * self.inner.sph_deriv(z)

    def pole_distance(self, z) -> float:
        d = self.inner.pole_distance(z) if hasattr(self.inner, "pole_distance") else 1.0
        # zeros of the outer denominator are poles of the composition as well
        if self.outer.c != 0:
            d = np.minimum(d, chordal_dist(self.inner(z), -self.outer.d / self.outer.c))
        return d if np.ndim(d) else float(d)


def spherical_derivative(f, z, allow_pole: bool = False):
    """|f'(z)| (1 + |z|^2) / (1 + |f(z)|^2).

    At a pole the value is only available in the chart w -> 1/w; pass
    ``allow_pole=True`` to get it, otherwise :class:`PoleAt` is raised.
    """
    if not allow_pole and np.any(is_inf(f(z))):
        raise PoleAt(z)
    return f.sph_deriv(z)


def log_orbit_spherical_derivative(f, z, n: int) -> float:
    """log |(f^n)'(z)|_sigma, summed with math.fsum along the orbit."""
    terms = []
    w = complex(z)
    for _ in range(n):
        if is_inf(w):
            raise OrbitEscaped(f"orbit reached infinity before {n} steps")
        terms.append(math.log(float(f.sph_deriv(w))))
        w = complex(f(w))
    return math.fsum(terms)


def orbit_spherical_derivative(f, z, n: int) -> float:
    """Product of spherical derivatives along z, f(z), ..., f^{n-1}(z).

    A pole may occur as the last orbit point before the n-th image (the
    chart w -> 1/w handles it); reaching infinity earlier raises
    :class:`OrbitEscaped`.
    """
    return math.exp(log_orbit_spherical_derivative(f, z, n))


def fd_derivatives(g, z, step: float):
    """g, g', g'', g''' by central differences of order four."""
    h = step
    v = {j: complex(g(z + j * h)) for j in (-3, -2, -1, 0, 1, 2, 3)}
    d1 = (-v[2] + 8 * v[1] - 8 * v[-1] + v[-2]) / (12 * h)
    d2 = (-v[2] + 16 * v[1] - 30 * v[0] + 16 * v[-1] - v[-2]) / (12 * h * h)
    d3 = (-v[3] + 8 * v[2] - 13 * v[1] + 13 * v[-1] - 8 * v[-2] + v[-3]) / (8 * h ** 3)
    return v[0], d1, d2, d3


def schwarzian(f, z, step: float = 1e-3):
    """(f''/f')' - (f''/f')^2 / 2 at ``z``.

    Uses closed-form derivatives when ``f`` provides ``derivatives``; plain
    callables fall back to fourth-order finite differences with spacing
    ``step``.
    """
    if hasattr(f, "pole_distance") and np.any(f.pole_distance(z) <= 2 * step):
        raise NearPole(z)
    if hasattr(f, "derivatives"):
        g0, d1, d2, d3 = f.derivatives(z)
    else:
        g0, d1, d2, d3 = fd_derivatives(f, z, step)
    if not np.all(np.isfinite(g0)):
        raise NearPole(z)
    if np.any(np.abs(d1) < DERIV_FLOOR):
        raise NumericallyUnstable(f"|f'| below {DERIV_FLOOR} at {z}")
    r = d2 / d1
    return d3 / d1 - 1.5 * r * r
