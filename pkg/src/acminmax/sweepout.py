"""Odd multiparameter families of phase fields.

``TorusBendCancel``
    Slices ``{<x, v> = s}`` of the flat 2-torus are pushed into a cubical
    grid: inside each shrunken core cube the slice is rescaled to fill the
    cell, outside the cores everything collapses onto the grid skeleton.  For
    a coefficient vector ``a`` the real polynomial ``P_a`` selects slices at
    its roots; the signed modified distance to those slices, fed through the
    heteroclinic profile, gives the field.
``SphereLinear``
    Fields ``psi(d_a / eps)`` with ``d_a`` the signed distance to the circle
    ``{a0 + <a', x> = 0}`` on the round sphere.
``PathSymmetrized``
    A path from -1 to +1 closed up into an odd loop ``h  U  -h``.

All families satisfy ``field(-a) = -field(a)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .energy import ScalarField
from .errors import ContractError, DomainError
from .manifold import (SPHERE2, TORUS2, DiscreteManifold, analytic_facts, segment_distance,
                       skeleton_distance)
from .potential import Potential, heteroclinic

GOLDEN = (1 + math.sqrt(5)) / 2
DEFAULT_DIRECTION = (1.0, 1.0 / GOLDEN)


# -- cubulation ----------------------------------------------------------------

def subdivision_level(p: int, n: int = 2) -> int:
    """Largest ``k`` with ``3^k <= p^(1/n)``."""
    if p < 1:
        raise DomainError("p must be a positive integer")
    k = 0
    while 3 ** ((k + 1) * n) <= p:
        k += 1
    return k


@dataclass(frozen=True)
class CubulationParams:
    """Subdivision level, core ratio and slicing direction on a square torus.

    The slicing function is ``f(x) = <x - o, v>`` with ``o`` the centre of the
    fundamental square, i.e. the square is taken as ``[-L/2, L/2]^2``.
    """

    k: int
    rho: float
    direction: tuple = DEFAULT_DIRECTION
    side: float = 1.0

    @property
    def v(self):
        v = np.asarray(self.direction, float)
        return v / np.linalg.norm(v)

    @property
    def cells(self):
        return 3 ** self.k

    @property
    def cell(self):
        return self.side / self.cells

    def centres(self):
        c = (np.arange(self.cells) + 0.5) * self.cell
        a, b = np.meshgrid(c, c, indexing="ij")
        return np.stack([a.ravel(), b.ravel()], axis=1)

    @property
    def core_half_width(self):
        """Half-length of ``f(core)`` for the slicing function ``f = <x, v>``."""
        return self.rho * 0.5 * self.cell * float(np.sum(np.abs(self.v)))

    def f(self, x):
        return (np.asarray(x, float) - 0.5 * self.side) @ self.v

    def f_range(self):
        corners = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], float) * self.side
        vals = self.f(corners)
        return float(vals.min()), float(vals.max())


def max_core_ratio(k: int, direction=DEFAULT_DIRECTION, side=1.0) -> float:
    """Supremum of core ratios for which every slice meets at most one core."""
    prm = CubulationParams(k, 0.5, direction, side)
    f = np.sort(prm.f(prm.centres()))
    if len(f) == 1:
        return 1.0
    gap = float(np.min(np.diff(f)))
    return min(1.0, gap / (prm.cell * float(np.sum(np.abs(prm.v)))))


def check_directions(params: CubulationParams):
    """Verify the slicing direction against the cubulation, exhaustively.

    Raises :class:`ContractError` naming the offending cell pair.
    """
    v = params.v
    if np.any(np.abs(v) < 1e-14):
        raise ContractError("slicing direction is orthogonal to a cell face")
    if not 0 < params.rho < 1:
        raise ContractError("core ratio must lie in (0, 1)")
    c = params.centres()
    f = params.f(c)
    order = np.argsort(f)
    w = params.core_half_width
    for i, j in zip(order[:-1], order[1:]):
        if abs(f[j] - f[i]) < 1e-12:
            raise ContractError(f"cells {tuple(c[i])} and {tuple(c[j])} have equal slice value")
        if f[j] - f[i] <= 2 * w:
            raise ContractError(f"a slice meets the cores of cells {tuple(c[i])} and "
                                f"{tuple(c[j])}; reduce rho below "
                                f"{max_core_ratio(params.k, params.direction, params.side):.4g}")


def default_cubulation(k: int, direction=DEFAULT_DIRECTION, side=1.0) -> CubulationParams:
    rho = 0.9 * max_core_ratio(k, direction, side)
    prm = CubulationParams(k, rho, tuple(direction), side)
    check_directions(prm)
    return prm


def cube_projection(y, rho):
    """Bend map on the reference cube ``[-1, 1]^n``.

    Points of the core ``|y|_inf <= rho`` are scaled by ``1/rho``; the rest is
    projected radially onto the boundary.
    """
    y = np.asarray(y, float)
    norm = np.max(np.abs(y), axis=-1, keepdims=True)
    inside = norm <= rho
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(inside, y / rho, y / np.where(norm > 0, norm, 1.0))
    return out


def _cell_of(params, x):
    idx = np.clip(np.floor(np.asarray(x, float) / params.cell).astype(int), 0, params.cells - 1)
    return (idx + 0.5) * params.cell


def bend_and_cancel(params: CubulationParams, x):
    """Apply the bend map cell by cell to points of the torus fundamental square."""
    x = np.asarray(x, float)
    centre = _cell_of(params, x)
    local = (x - centre) / (0.5 * params.cell)
    return centre + 0.5 * params.cell * cube_projection(local, params.rho)


def core_preimage(params: CubulationParams, x):
    """A point of the core mapped to ``x`` by the bend map."""
    x = np.asarray(x, float)
    centre = _cell_of(params, x)
    return centre + params.rho * (x - centre)


def slice_segment(params: CubulationParams, s: float):
    """The part of the bent slice at level ``s`` off the skeleton, or ``None``.

    At most one core meets the hyperplane ``{<x, v> = s}``; its slice is
    rescaled to a chord of the surrounding cell.
    """
    v = params.v
    centres = params.centres()
    f = params.f(centres)
    w = params.core_half_width
    hit = np.flatnonzero(np.abs(s - f) < w)
    if hit.size == 0:
        return None
    c = centres[hit[0]]
    t = (s - f[hit[0]]) / params.rho
    half = 0.5 * params.cell
    # line {<y, v> = t} in the cell [-half, half]^2, parametrized along d
    d = np.array([-v[1], v[0]])
    y0 = t * v
    lo, hi = -np.inf, np.inf
    for ax in range(2):
        if abs(d[ax]) < 1e-15:
            if abs(y0[ax]) > half:
                return None
            continue
        a, b = (-half - y0[ax]) / d[ax], (half - y0[ax]) / d[ax]
        lo, hi = max(lo, min(a, b)), min(hi, max(a, b))
    if hi <= lo:
        return None
    return np.array([c + y0 + lo * d, c + y0 + hi * d])


def slice_set(params: CubulationParams, s: float):
    """The bent slice at level ``s``: the skeleton plus at most one chord.

    Returns ``(segments, skeleton_level)``; ``segments`` may be empty.
    """
    seg = slice_segment(params, s)
    return (np.zeros((0, 2, 2)) if seg is None else seg[None]), params.k


def modified_distance(params: CubulationParams, z: complex, m: DiscreteManifold):
    """``dist(x, bent slice at Re z) + dist(z, f(K))`` at every node."""
    fmin, fmax = params.f_range()
    off = math.hypot(z.real - min(max(z.real, fmin), fmax), z.imag)
    d = skeleton_distance(m.points, m.size, params.k)
    seg = slice_segment(params, z.real)
    if seg is not None:
        d = np.minimum(d, segment_distance(m.points, seg, m.size))
    return d + off


# -- roots ---------------------------------------------------------------------

@dataclass
class RootSet:
    """Roots of ``P_a`` inside a disk; ``empty`` marks a constant polynomial or no roots."""

    roots: np.ndarray
    degree: int

    @property
    def empty(self):
        return self.roots.size == 0


def polynomial_roots(a, centre=0.0, radius=np.inf) -> RootSet:
    """Roots of ``sum_i a_i z^i`` by companion-matrix eigenvalues, restricted to a disk."""
    a = np.asarray(a, float)
    nz = np.flatnonzero(a)
    if nz.size == 0:
        raise DomainError("coefficient vector is zero")
    deg = int(nz[-1])
    if deg == 0:
        return RootSet(np.zeros(0, complex), 0)
    r = np.roots(a[: deg + 1][::-1]).astype(complex)
    r = r[np.abs(r - centre) < radius]
    return RootSet(np.sort_complex(r), deg)


def polynomial_sign(a, y):
    """Sign of ``P_a(y)`` from the leading coefficient and the real roots.

    Direct evaluation loses the sign near clusters of roots; conjugate pairs
    contribute a positive factor and are skipped.
    """
    a = np.asarray(a, float)
    nz = np.flatnonzero(a)
    deg = int(nz[-1])
    sign = np.full(np.shape(y), np.sign(a[deg]))
    if deg == 0:
        return sign
    r = np.roots(a[: deg + 1][::-1])
    real = r[np.abs(np.imag(r)) <= 1e-12 * (1.0 + np.abs(r))].real
    for root in real:
        sign = sign * np.sign(y - root)
    return sign


def match_roots(prev, new):
    """Assignment of ``new`` roots to ``prev`` minimizing total displacement."""
    prev, new = np.asarray(prev), np.asarray(new)
    if prev.size == 0 or new.size == 0:
        return new
    cost = np.abs(prev[:, None] - new[None, :])
    ri, ci = linear_sum_assignment(cost)
    out = np.full(len(prev), np.nan + 0j)
    out[ri] = new[ci]
    extra = np.setdiff1d(np.arange(len(new)), ci)
    return np.concatenate([out, new[extra]])


def track_roots(a0, a1, steps=50, centre=0.0, radius=np.inf):
    """Follow the roots along the great circle from ``a0`` to ``a1``.

    Returns the list of matched root arrays (unmatched slots are NaN).
    """
    a0 = np.asarray(a0, float) / np.linalg.norm(a0)
    a1 = np.asarray(a1, float) / np.linalg.norm(a1)
    ang = math.acos(min(1.0, max(-1.0, float(a0 @ a1))))
    perp = a1 - (a0 @ a1) * a0
    nrm = np.linalg.norm(perp)
    perp = perp / nrm if nrm > 0 else perp
    out, prev = [], None
    for t in np.linspace(0.0, 1.0, steps + 1):
        a = math.cos(t * ang) * a0 + math.sin(t * ang) * perp
        r = polynomial_roots(a, centre, radius).roots
        prev = r if prev is None else match_roots(prev, r)
        out.append(prev)
    return out


# -- families ------------------------------------------------------------------

def _normalize(a):
    a = np.asarray(a, float)
    n = np.linalg.norm(a)
    if n == 0:
        raise DomainError("parameter must be nonzero")
    return a / n


class SweepoutFamily:
    """Base class: an odd map from ``S^p`` to fields on a manifold."""

    kind = "abstract"
    nested = True

    def __init__(self, manifold: DiscreteManifold):
        self.manifold = manifold

    def field(self, a, potential: Potential, eps: float) -> ScalarField:
        raise NotImplementedError

    def structured_starts(self, p: int):
        return []

    def certified_mass_bound(self, p: int):
        return None

    def max_parameters(self):
        return None


def _profile_values(potential, eps, signed_distance):
    prof = heteroclinic(potential, eps)
    out = np.empty_like(signed_distance)
    fin = np.isfinite(signed_distance)
    out[fin] = prof(signed_distance[fin])
    out[~fin] = np.sign(signed_distance[~fin])
    return out


class TorusBendCancel(SweepoutFamily):
    """Bend-and-cancel family on the flat square 2-torus.

    Parameters
    ----------
    manifold : DiscreteManifold
        A ``torus2`` with equal sides.
    k : int, optional
        Fixed subdivision level; by default ``subdivision_level(p)``.
    rho : float, optional
        Core ratio; by default 0.9 times the largest admissible value.
    direction : tuple
        Slicing direction ``v``.
    """

    kind = "torus-bend-cancel"
    nested = False

    def __init__(self, manifold, k=None, rho=None, direction=DEFAULT_DIRECTION):
        if manifold.kind != TORUS2 or abs(manifold.size[0] - manifold.size[1]) > 1e-12:
            raise DomainError("bend-and-cancel family needs a square torus2")
        super().__init__(manifold)
        self.k, self.rho, self.direction = k, rho, tuple(direction)
        self.nested = k is not None
        self._skel = {}

    def params(self, p: int) -> CubulationParams:
        k = self.k if self.k is not None else subdivision_level(p, 2)
        side = self.manifold.size[0]
        if self.rho is None:
            return default_cubulation(k, self.direction, side)
        prm = CubulationParams(k, float(self.rho), self.direction, side)
        check_directions(prm)
        return prm

    def root_disk(self, prm):
        fmin, fmax = prm.f_range()
        diam = analytic_facts(self.manifold).diameter
        return 0.5 * (fmin + fmax), (fmax - fmin) + diam + 1.0

    def signed_distance(self, a, p=None):
        """``sgn_a * d_a`` at every node (``+-inf`` when no root lies in the disk)."""
        a = _normalize(a)
        p = len(a) - 1 if p is None else p
        prm = self.params(p)
        m = self.manifold
        centre, radius = self.root_disk(prm)
        roots = polynomial_roots(a, centre, radius)
        y = prm.f(core_preimage(prm, m.points))
        sign = polynomial_sign(a, y)
        if roots.empty:
            return sign * np.inf
        if prm.k not in self._skel:
            self._skel[prm.k] = skeleton_distance(m.points, m.size, prm.k)
        skel = self._skel[prm.k]
        fmin, fmax = prm.f_range()
        d = np.full(m.n_nodes, np.inf)
        for z in roots.roots:
            off = math.hypot(z.real - min(max(z.real, fmin), fmax), z.imag)
            dz = skel
            seg = slice_segment(prm, z.real)
            if seg is not None:
                dz = np.minimum(dz, segment_distance(m.points, seg, m.size))
            d = np.minimum(d, dz + off)
        return np.where(d > 0, sign * d, 0.0)

    def field(self, a, potential, eps, p=None):
        h = self.signed_distance(a, p)
        return ScalarField(self.manifold, _profile_values(potential, eps, h))

    def certified_mass_bound(self, p):
        """``2 p C1 3^{-k} L + |skeleton|`` with ``C1 = sqrt(2)`` the longest chord of the unit square."""
        prm = self.params(p)
        L = self.manifold.size[0]
        skeleton = 2.0 * prm.cells * L
        return 2.0 * p * math.sqrt(2.0) * prm.cell + skeleton

    def structured_starts(self, p):
        """Polynomials whose real roots sit in the core intervals, spread over the cells."""
        prm = self.params(p)
        f = np.sort(prm.f(prm.centres()))
        w = prm.core_half_width
        starts = []
        for r in range(p, max(0, p - 4), -1):
            per = np.full(len(f), r // len(f))
            per[: r % len(f)] += 1
            roots = []
            for fc, cnt in zip(f, per):
                if cnt:
                    roots += list(fc + 0.9 * w * (2 * (np.arange(cnt) + 1) / (cnt + 1) - 1))
            coef = np.poly(roots)[::-1] if roots else np.array([1.0])
            a = np.zeros(p + 1)
            a[: len(coef)] = coef
            starts.append(_normalize(a))
        return starts


class SphereLinear(SweepoutFamily):
    """Circle family on the round 2-sphere, ``p <= 3``."""

    kind = "sphere-linear"

    def __init__(self, manifold):
        if manifold.kind != SPHERE2:
            raise DomainError("sphere-linear family needs sphere2")
        super().__init__(manifold)

    def max_parameters(self):
        return 3

    def signed_distance(self, a):
        a = _normalize(a)
        if len(a) > 4:
            raise DomainError("sphere family has at most 3 parameters")
        a = np.concatenate([a, np.zeros(4 - len(a))])
        R = self.manifold.size[0]
        x = self.manifold.points / R
        b = a[1:]
        beta = float(np.linalg.norm(b))
        if beta <= abs(a[0]):
            return np.full(self.manifold.n_nodes, np.sign(a[0]) * np.inf)
        n = b / beta
        theta0 = math.acos(-a[0] / beta)
        cross = np.linalg.norm(np.cross(x, n), axis=1)
        ang = np.arctan2(cross, x @ n)
        return R * (theta0 - ang)

    def field(self, a, potential, eps, p=None):
        return ScalarField(self.manifold, _profile_values(potential, eps, self.signed_distance(a)))

    def certified_mass_bound(self, p):
        # every level set of a distance to a circle is a circle of length <= 2 pi R
        return 2 * math.pi * self.manifold.size[0]

    def structured_starts(self, p):
        out = []
        for i in range(1, p + 1):
            a = np.zeros(p + 1)
            a[i] = 1.0
            out.append(a)
        return out


class PathSymmetrized(SweepoutFamily):
    """One-parameter odd family built from a path ``h`` with ``h(0) = -1``, ``h(1) = +1``.

    ``a = (cos t, sin t)``: ``h(t/pi)`` for ``t in [0, pi]`` and ``-h(t/pi - 1)`` otherwise.
    """

    kind = "path-symmetrized"

    def __init__(self, manifold, samples):
        super().__init__(manifold)
        self.samples = [np.asarray(s, float) for s in samples]
        if len(self.samples) < 2:
            raise DomainError("path needs at least two samples")

    def max_parameters(self):
        return 1

    def _path(self, t):
        n = len(self.samples) - 1
        x = min(max(t, 0.0), 1.0) * n
        i = min(int(x), n - 1)
        s = x - i
        return (1 - s) * self.samples[i] + s * self.samples[i + 1]

    def field(self, a, potential, eps, p=None):
        a = _normalize(a)
        if len(a) != 2:
            raise DomainError("path family has one parameter")
        t = math.atan2(a[1], a[0]) % (2 * math.pi)
        if t <= math.pi:
            vals = self._path(t / math.pi)
        else:
            vals = -self._path(t / math.pi - 1.0)
        return ScalarField(self.manifold, vals)

    def structured_starts(self, p):
        out = []
        for i in range(1, len(self.samples) - 1):
            t = math.pi * i / (len(self.samples) - 1)
            out.append(np.array([math.cos(t), math.sin(t)]))
        return out


def family_field(family: SweepoutFamily, a, potential: Potential, eps: float,
                 p=None) -> ScalarField:
    """Evaluate a family member; ``p`` defaults to ``len(a) - 1``."""
    return family.field(a, potential, eps, p)


def check_oddness(family, potential, eps, p, rng, trials=3, tol=1e-12):
    for _ in range(trials):
        a = _normalize(rng.standard_normal(p + 1))
        u = family.field(a, potential, eps, p).values
        v = family.field(-a, potential, eps, p).values
        if np.max(np.abs(u + v)) > tol:
            raise ContractError("family is not odd: field(-a) != -field(a)")
