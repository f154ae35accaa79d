"""Zero-level interfaces of phase fields and energy-density diagnostics.

The zero set is extracted by marching squares on the torus grid (periodic),
on the latitude-longitude sphere grid (with triangle fans at the poles) and
by sign changes on the circle.  Ambiguous saddle cells are resolved with the
cell-centre average.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .energy import ScalarField, energy, energy_density
from .errors import DomainError
from .manifold import SPHERE2, TORUS1, TORUS2, geodesic_distance
from .potential import Potential, sigma_constant


@dataclass
class InterfaceComponent:
    length: float
    segments: np.ndarray
    straightness: float
    """RMS distance of the (unwrapped) points to their best-fit line or
    great circle, relative to the component length."""


@dataclass
class InterfaceReport:
    segments: np.ndarray
    length: float
    energy_over_2sigma: float
    multiplicity: float | None
    components: list = field(default_factory=list)

    @property
    def empty(self):
        return self.length == 0.0


@dataclass
class _Crossings:
    segs: list = field(default_factory=list)
    keys: list = field(default_factory=list)


def _cross(a, b):
    return a / (a - b)


def _march_cell(vals, corners, edge_keys, out, centre=None):
    """Marching squares on one quadrilateral.

    ``vals``/``corners`` are ordered counter-clockwise; edge ``k`` joins corner
    ``k`` and ``k + 1``.
    """
    pos = [v >= 0 for v in vals]
    pts = {}
    for k in range(4):
        a, b = k, (k + 1) % 4
        if pos[a] != pos[b]:
            t = _cross(vals[a], vals[b])
            pts[k] = corners[a] + t * (corners[b] - corners[a])
    if not pts:
        return
    ks = sorted(pts)
    if len(ks) == 2:
        pairs = [(ks[0], ks[1])]
    else:
        c = np.mean(vals) if centre is None else centre
        pairs = _saddle_pairs(pos, c >= 0)
    for i, j in pairs:
        out.segs.append((pts[i], pts[j]))
        out.keys.append((edge_keys[i], edge_keys[j]))


def _saddle_pairs(pos, centre_pos):
    # corners 0 and 2 share a sign, 1 and 3 the other; the curves cut off the
    # two corners whose sign differs from the centre
    if centre_pos == pos[0]:
        return [(0, 1), (2, 3)]
    return [(3, 0), (1, 2)]


def _components(keys):
    parent = {}

    def find(x):
        while parent.setdefault(x, x) != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in keys:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
    groups = {}
    for s, (a, _) in enumerate(keys):
        groups.setdefault(find(a), []).append(s)
    return list(groups.values())


def _unwrap(segs, keys, idx, period):
    """Place the segments of one component in a common unwrapped frame."""
    segs = {s: np.array(segs[s], float) for s in idx}
    by_key = {}
    for s in idx:
        for end, k in enumerate(keys[s]):
            by_key.setdefault(k, []).append((s, end))
    placed = {idx[0]: segs[idx[0]]}
    stack = [idx[0]]
    while stack:
        s = stack.pop()
        for end, k in enumerate(keys[s]):
            anchor = placed[s][end]
            for t, tend in by_key[k]:
                if t in placed:
                    continue
                shift = period * np.round((anchor - segs[t][tend]) / period)
                placed[t] = segs[t] + shift
                stack.append(t)
    return np.array([placed[s] for s in idx])


def _line_straightness(segs):
    pts = segs.reshape(-1, segs.shape[-1])
    c = pts - pts.mean(axis=0)
    sv = np.linalg.svd(c, compute_uv=False)
    length = float(np.sum(np.linalg.norm(segs[:, 1] - segs[:, 0], axis=1)))
    rms = sv[-1] / np.sqrt(len(pts))
    return float(rms / max(length, 1e-300))


def _circle_straightness(segs):
    pts = segs.reshape(-1, 3)
    sv = np.linalg.svd(pts, compute_uv=False)
    length = float(np.sum(_arc(segs[:, 0], segs[:, 1])))
    return float(sv[-1] / np.sqrt(len(pts)) / max(length, 1e-300))


def _arc(a, b):
    cross = np.linalg.norm(np.cross(a, b), axis=-1)
    return np.arctan2(cross, np.sum(a * b, axis=-1)) * np.linalg.norm(a, axis=-1)


def _torus_segments(m, vals):
    U = vals.reshape(m.shape)
    N1, N2 = m.shape
    h1, h2 = m.size[0] / N1, m.size[1] / N2
    sgn = U >= 0
    c00, c10 = sgn, np.roll(sgn, -1, 0)
    c11, c01 = np.roll(c10, -1, 1), np.roll(sgn, -1, 1)
    mixed = ~((c00 == c10) & (c10 == c11) & (c11 == c01))
    out = _Crossings()
    for i, j in zip(*np.nonzero(mixed)):
        ip, jp = (i + 1) % N1, (j + 1) % N2
        v = [U[i, j], U[ip, j], U[ip, jp], U[i, jp]]
        corners = [np.array([i * h1, j * h2]), np.array([(i + 1) * h1, j * h2]),
                   np.array([(i + 1) * h1, (j + 1) * h2]), np.array([i * h1, (j + 1) * h2])]
        keys = [("x", i, j), ("y", ip, j), ("x", i, jp), ("y", i, j)]
        _march_cell(v, corners, keys, out)
    return out


def _sphere_segments(m, vals):
    nlat, nlon = m.shape
    R = m.size[0]
    theta = np.arange(1, nlat) * np.pi / nlat
    phi = np.arange(nlon) * 2 * np.pi / nlon
    U = vals[1:-1].reshape(nlat - 1, nlon)
    out = _Crossings()

    def to3(tp):
        t, p_ = tp
        return R * np.array([np.sin(t) * np.cos(p_), np.sin(t) * np.sin(p_), np.cos(t)])

    sgn = U >= 0
    a, b = sgn[:-1], sgn[1:]
    mixed = ~((a == b) & (a == np.roll(a, -1, 1)) & (b == np.roll(b, -1, 1)))
    for j, k in zip(*np.nonzero(mixed)):
        kp = (k + 1) % nlon
        v = [U[j, k], U[j + 1, k], U[j + 1, kp], U[j, kp]]
        corners = [np.array([theta[j], phi[k]]), np.array([theta[j + 1], phi[k]]),
                   np.array([theta[j + 1], phi[k] + 2 * np.pi / nlon]),
                   np.array([theta[j], phi[k] + 2 * np.pi / nlon])]
        keys = [("m", j, k), ("r", j + 1, k), ("m", j, kp), ("r", j, k)]
        local = _Crossings()
        _march_cell(v, corners, keys, local)
        out.segs += [(to3(a), to3(b)) for a, b in local.segs]
        out.keys += local.keys
    # pole fans: triangles (pole, ring k, ring k+1)
    for pole, ring, t_pole in ((vals[0], 0, 0.0), (vals[-1], nlat - 2, np.pi)):
        for k in range(nlon):
            kp = (k + 1) % nlon
            v = [pole, U[ring, k], U[ring, kp]]
            s = [x >= 0 for x in v]
            if all(s) or not any(s):
                continue
            pts = [np.array([t_pole, phi[k]]), np.array([theta[ring], phi[k]]),
                   np.array([theta[ring], phi[k] + 2 * np.pi / nlon])]
            names = [("p", ring, k), ("r", ring, k), ("p", ring, kp)]
            cr, ks = [], []
            for a, b, key in ((0, 1, names[0]), (1, 2, names[1]), (2, 0, names[2])):
                if s[a] != s[b]:
                    t = _cross(v[a], v[b])
                    q = pts[a] + t * (pts[b] - pts[a])
                    if a == 0 or b == 0:
                        q[1] = pts[1][1] if key == names[0] else pts[2][1]
                    cr.append(q)
                    ks.append(key)
            out.segs.append((to3(cr[0]), to3(cr[1])))
            out.keys.append((ks[0], ks[1]))
    return out


def extract_interface(u: ScalarField, p: Potential, eps: float, level: float = 0.0
                      ) -> InterfaceReport:
    """Extract ``{u = level}`` and compare its measure with ``E / (2 sigma)``."""
    m = u.manifold
    vals = u.values - level
    e_ratio = energy(u, p, eps).total / (2.0 * sigma_constant(p))
    if m.kind == TORUS1:
        nxt = np.roll(vals, -1)
        cross = (vals >= 0) != (nxt >= 0)
        h = m.size[0] / m.shape[0]
        t = vals[cross] / (vals[cross] - nxt[cross])
        pts = (np.flatnonzero(cross) + t) * h
        segs = np.stack([pts, pts], axis=1)[:, :, None]
        count = float(len(pts))
        comps = [InterfaceComponent(1.0, s[None], 0.0) for s in segs]
        mult = e_ratio / count if count else None
        return InterfaceReport(segs, count, e_ratio, mult, comps)
    if m.kind == TORUS2:
        cr = _torus_segments(m, vals)
    elif m.kind == SPHERE2:
        cr = _sphere_segments(m, vals)
    else:  # pragma: no cover
        raise DomainError(m.kind)
    if not cr.segs:
        return InterfaceReport(np.zeros((0, 2, m.points.shape[1])), 0.0, e_ratio, None, [])
    segs = np.array([[a, b] for a, b in cr.segs])
    if m.kind == TORUS2:
        lengths = np.linalg.norm(segs[:, 1] - segs[:, 0], axis=1)
    else:
        lengths = _arc(segs[:, 0], segs[:, 1])
    comps = []
    for idx in _components(cr.keys):
        if m.kind == TORUS2:
            local = _unwrap(cr.segs, cr.keys, idx, np.array(m.size))
            straight = _line_straightness(local)
        else:
            local = segs[idx]
            straight = _circle_straightness(local)
        comps.append(InterfaceComponent(float(np.sum(lengths[idx])), local, straight))
    comps.sort(key=lambda c: -c.length)
    total = float(np.sum(lengths))
    return InterfaceReport(segs, total, e_ratio, e_ratio / total, comps)


def export_segments(report: InterfaceReport, path):
    """Write segments as ``x1,y1,x2,y2`` rows (3D points get ``z`` columns)."""
    dim = report.segments.shape[-1] if report.segments.size else 2
    names = ["x", "y", "z"][:dim]
    header = [f"{n}1" for n in names] + [f"{n}2" for n in names]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for a, b in report.segments:
            w.writerow([f"{x:.12g}" for x in list(a) + list(b)])


# -- density diagnostics -------------------------------------------------------

@dataclass
class DiscrepancyStats:
    """Extrema and integrals of the discrepancy ``xi``; ``spread = sup - inf``."""

    sup: float
    inf: float
    spread: float
    l1: float
    positive_part_l1: float


def discrepancy_stats(u: ScalarField, p: Potential, eps: float) -> DiscrepancyStats:
    """Statistics of ``xi = eps |grad u|^2 / 2 - W(u)/eps``."""
    _, xi = energy_density(u, p, eps)
    m = u.manifold
    hi, lo = float(np.max(xi)), float(np.min(xi))
    return DiscrepancyStats(hi, lo, hi - lo, m.integrate(np.abs(xi)),
                            m.integrate(np.maximum(xi, 0.0)))


def ball_energy(u: ScalarField, p: Potential, eps: float, centre, radius):
    """Energy contained in the geodesic ball ``B(centre, radius)``."""
    e, _ = energy_density(u, p, eps)
    m = u.manifold
    inside = geodesic_distance(m, m.points, np.asarray(centre, float)) < radius
    return float(np.dot(m.weights[inside], e[inside]))


def monotonicity_profile(u: ScalarField, p: Potential, eps: float, centre, radii,
                         growth: float = 0.0):
    """``exp(growth r) r^{1-n} E(u; B(centre, r))`` for each radius.

    Non-decreasing in ``r`` for critical points with a suitable ``growth``
    (zero on flat tori).
    """
    n = u.manifold.dim
    e, _ = energy_density(u, p, eps)
    m = u.manifold
    dist = geodesic_distance(m, m.points, np.asarray(centre, float))
    out = []
    for r in np.asarray(radii, float):
        inside = dist < r
        out.append(np.exp(growth * r) * r ** (1 - n) * float(np.dot(m.weights[inside], e[inside])))
    return np.array(out)


def _zero_mean_ball_ratio(u, p, eps, centre, radius):
    m = u.manifold
    dist = geodesic_distance(m, m.points, np.asarray(centre, float))
    inside = dist < radius
    v = u.values.copy()
    mean = np.dot(m.weights[inside], v[inside]) / np.sum(m.weights[inside])
    v[inside] = np.clip(v[inside] - mean, -1.0, 1.0)
    e, _ = energy_density(u.with_values(v), p, eps)
    return float(np.dot(m.weights[inside], e[inside])) / radius ** (m.dim - 1)


def ball_energy_floor_check(u: ScalarField, p: Potential, eps: float, trials):
    """Smallest scaled ball energy ``E(v; B) / r^{n-1}`` over ``(centre, r)`` trials.

    For each trial the field is shifted by its ball average and clamped to
    [-1, 1] inside the ball (so it has zero mean there up to the clamp).
    Every ``r`` must satisfy ``eps <= r``.
    """
    if np.max(np.abs(u.values)) > 1.0 + 1e-12:
        raise DomainError("ball energy floor needs |u| <= 1")
    ratios = []
    for centre, r in trials:
        if r < eps:
            raise DomainError("ball radius must be at least eps")
        ratios.append(_zero_mean_ball_ratio(u, p, eps, centre, r))
    if not ratios:
        raise DomainError("no trials")
    return float(min(ratios))
