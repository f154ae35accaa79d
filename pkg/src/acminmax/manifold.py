"""Discretized closed manifolds: flat tori and the round 2-sphere.

Every manifold is stored as a node set with quadrature weights (cell areas)
and a list of edges ``(i, j)`` carrying the coefficient
``c_e = |dual face| / |edge|``.  The Dirichlet form is
``sum_e c_e (u_i - u_j)^2`` and the Laplacian is ``-diag(w)^{-1} K`` with
``K`` the stiffness matrix of that form, so the gradient of the discrete
energy is exactly ``-eps * Laplacian(u) + W'(u)/eps``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import factorized

from .errors import DomainError, UsageError

TORUS1, TORUS2, SPHERE2 = "torus1", "torus2", "sphere2"
MIN_RESOLUTION = 16


@dataclass(eq=False)
class DiscreteManifold:
    """Node-centred discretization of a closed manifold.

    Attributes
    ----------
    kind : str
        ``"torus1"``, ``"torus2"`` or ``"sphere2"``.
    size : tuple of float
        Side lengths for tori, ``(R,)`` for the sphere.
    shape : tuple of int
        Grid shape; ``(nlat, nlon)`` for the sphere, which has
        ``(nlat - 1) * nlon`` ring nodes plus two poles.
    points : ndarray
        Node coordinates; in the fundamental domain for tori, embedded in
        R^3 for the sphere.
    weights : ndarray
        Quadrature weights, summing to the volume.
    edges, edge_coef : ndarray
        Edge endpoints and Dirichlet coefficients.
    """

    kind: str
    size: tuple
    shape: tuple
    points: np.ndarray
    weights: np.ndarray
    edges: np.ndarray
    edge_coef: np.ndarray
    stiffness: sp.csr_matrix = field(init=False, repr=False)
    laplacian: sp.csr_matrix = field(init=False, repr=False)
    _cache: dict = field(init=False, default_factory=dict, repr=False)

    def __post_init__(self):
        n = self.points.shape[0]
        i, j = self.edges[:, 0], self.edges[:, 1]
        c = self.edge_coef
        rows = np.concatenate([i, j, i, j])
        cols = np.concatenate([i, j, j, i])
        vals = np.concatenate([c, c, -c, -c])
        self.stiffness = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
        self.laplacian = sp.csr_matrix(-sp.diags(1.0 / self.weights) @ self.stiffness)
        for a in (self.points, self.weights, self.edges, self.edge_coef):
            a.setflags(write=False)

    # -- basic facts ----------------------------------------------------------

    @property
    def n_nodes(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return 1 if self.kind == TORUS1 else 2

    @property
    def volume(self):
        return float(np.sum(self.weights))

    @property
    def is_torus(self):
        return self.kind in (TORUS1, TORUS2)

    @property
    def spacing(self):
        """Smallest edge length, the resolution scale ``h``."""
        if self.kind == SPHERE2:
            nlat, nlon = self.shape
            R = self.size[0]
            return R * min(np.pi / nlat, np.sin(np.pi / nlat) * 2 * np.pi / nlon)
        return min(L / N for L, N in zip(self.size, self.shape))

    def same_as(self, other):
        return (self is other) or (self.kind == other.kind and self.size == other.size
                                   and self.shape == other.shape)

    def check_same(self, other):
        if not self.same_as(other):
            raise UsageError("fields live on different manifolds")

    # -- discrete calculus ----------------------------------------------------

    def edge_differences(self, u):
        return u[self.edges[:, 1]] - u[self.edges[:, 0]]

    def dirichlet(self, u, v=None):
        """``int <grad u, grad v>`` as ``sum_e c_e du_e dv_e``."""
        du = self.edge_differences(u)
        dv = du if v is None else self.edge_differences(v)
        return float(np.dot(self.edge_coef, du * dv))

    def grad_sq_nodal(self, u):
        """Nodal ``|grad u|^2``; integrates exactly to the Dirichlet form."""
        du = self.edge_differences(u)
        e = self.edge_coef * du * du
        acc = np.bincount(self.edges[:, 0], e, self.n_nodes)
        acc += np.bincount(self.edges[:, 1], e, self.n_nodes)
        return acc / (2.0 * self.weights)

    def integrate(self, values):
        return float(np.dot(self.weights, values))

    def apply_laplacian(self, u):
        if self.is_torus:
            return self._fft_apply(u, lambda mu: -mu)
        return self.laplacian @ u

    def solve_shifted(self, a, dt, rhs):
        """Solve ``(a I - dt Laplacian) x = rhs`` for ``a > 0``, ``dt >= 0``."""
        if self.is_torus:
            return self._fft_apply(rhs, lambda mu: 1.0 / (a + dt * mu))
        key = (float(a), float(dt))
        solve = self._cache.get(key)
        if solve is None:
            A = (a * sp.diags(self.weights) + dt * self.stiffness).tocsc()
            solve = factorized(A)
            if len(self._cache) > 8:
                self._cache.clear()
            self._cache[key] = solve
        return solve(self.weights * rhs)

    def _laplace_symbol(self):
        """Eigenvalues of ``-Laplacian`` on the Fourier grid (rfft layout)."""
        sym = self._cache.get("symbol")
        if sym is None:
            parts = []
            for ax, (L, N) in enumerate(zip(self.size, self.shape)):
                h = L / N
                last = ax == len(self.shape) - 1
                k = np.arange(N // 2 + 1) if last else np.arange(N)
                parts.append(4.0 / h ** 2 * np.sin(np.pi * k / N) ** 2)
            sym = parts[0] if len(parts) == 1 else parts[0][:, None] + parts[1][None, :]
            self._cache["symbol"] = sym
        return sym

    def _fft_apply(self, u, multiplier):
        grid = np.asarray(u, dtype=float).reshape(self.shape)
        spec = np.fft.rfftn(grid)
        spec *= multiplier(self._laplace_symbol())
        return np.fft.irfftn(spec, s=self.shape, axes=tuple(range(len(self.shape)))).ravel()

    def spectral_derivatives(self, u):
        """Spectral partial derivatives of nodal values along each torus axis."""
        if not self.is_torus:
            raise DomainError("spectral derivatives need a torus")
        grid = np.asarray(u, dtype=float).reshape(self.shape)
        out = []
        for ax, (L, N) in enumerate(zip(self.size, self.shape)):
            k = np.fft.fftfreq(N, d=L / N) * 2j * np.pi
            if N % 2 == 0:
                k[N // 2] = 0.0
            shape = [1] * grid.ndim
            shape[ax] = N
            spec = np.fft.fft(grid, axis=ax) * k.reshape(shape)
            out.append(np.real(np.fft.ifft(spec, axis=ax)).ravel())
        return out

    # -- grid views -----------------------------------------------------------

    def as_grid(self, values):
        """Reshape to the grid; for the sphere only ring nodes are returned."""
        values = np.asarray(values)
        if self.kind == SPHERE2:
            nlat, nlon = self.shape
            return values[1:-1].reshape(nlat - 1, nlon)
        return values.reshape(self.shape)

    def sphere_angles(self):
        """Polar angle and longitude of every node (sphere only)."""
        R = self.size[0]
        x = self.points / R
        theta = np.arccos(np.clip(x[:, 2], -1.0, 1.0))
        phi = np.mod(np.arctan2(x[:, 1], x[:, 0]), 2 * np.pi)
        return theta, phi


@dataclass(frozen=True)
class ManifoldSpec:
    """Declarative description used by configs: kind, sizes and resolution."""

    kind: str
    size: tuple = (1.0,)
    resolution: tuple = (64,)

    def build(self):
        return build_manifold(self.kind, self.resolution, self.size)


def build_manifold(kind, resolution, size=None) -> DiscreteManifold:
    """Build a discretized manifold.

    Parameters
    ----------
    kind : {"torus1", "torus2", "sphere2"}
    resolution : int or tuple of int
        Nodes per direction; for the sphere ``(nlat, nlon)`` or ``nlat`` (with
        ``nlon = 2 nlat``).
    size : float or tuple of float, optional
        Side lengths (tori) or radius (sphere). Defaults to 1.
    """
    res = tuple(int(r) for r in np.atleast_1d(resolution))
    if size is None:
        size = (1.0,)
    size = tuple(float(s) for s in np.atleast_1d(size))
    if any(s <= 0 for s in size):
        raise DomainError("manifold sizes must be positive")
    if kind == TORUS1:
        _check_res(res[:1])
        return _torus(size[:1], res[:1])
    if kind == TORUS2:
        if len(size) == 1:
            size = size * 2
        if len(res) == 1:
            res = res * 2
        _check_res(res[:2])
        return _torus(size[:2], res[:2])
    if kind == SPHERE2:
        if len(res) == 1:
            res = (res[0], 2 * res[0])
        _check_res(res[:2])
        return _sphere(size[0], res[0], res[1])
    raise DomainError(f"unknown manifold kind {kind!r}")


def _check_res(res):
    if any(r < MIN_RESOLUTION for r in res):
        raise DomainError(f"resolution must be at least {MIN_RESOLUTION} per dimension")


def _torus(size, res):
    idx = np.arange(int(np.prod(res))).reshape(res)
    hs = [L / N for L, N in zip(size, res)]
    axes = [np.arange(N) * h for N, h in zip(res, hs)]
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)
    cell = float(np.prod(hs))
    weights = np.full(points.shape[0], cell)
    edges, coefs = [], []
    for ax in range(len(res)):
        nb = np.roll(idx, -1, axis=ax)
        edges.append(np.stack([idx.ravel(), nb.ravel()], axis=1))
        coefs.append(np.full(idx.size, cell / hs[ax] ** 2))
    kind = TORUS1 if len(res) == 1 else TORUS2
    return DiscreteManifold(kind, tuple(size), tuple(res), points, weights,
                            np.concatenate(edges), np.concatenate(coefs))


def _sphere(R, nlat, nlon):
    dth, dph = np.pi / nlat, 2 * np.pi / nlon
    theta = np.arange(1, nlat) * dth
    phi = np.arange(nlon) * dph
    th, ph = np.meshgrid(theta, phi, indexing="ij")
    ring_pts = np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], -1)
    points = R * np.concatenate([[[0.0, 0.0, 1.0]], ring_pts.reshape(-1, 3),
                                 [[0.0, 0.0, -1.0]]])
    cap = 2 * np.pi * (1.0 - np.cos(dth / 2))
    band = dph * (np.cos(theta - dth / 2) - np.cos(theta + dth / 2))
    weights = R ** 2 * np.concatenate([[cap], np.repeat(band, nlon), [cap]])
    n = points.shape[0]
    ring = 1 + np.arange((nlat - 1) * nlon).reshape(nlat - 1, nlon)
    edges, coefs = [], []
    # along a ring
    edges.append(np.stack([ring.ravel(), np.roll(ring, -1, axis=1).ravel()], 1))
    coefs.append(np.repeat(dth / (np.sin(theta) * dph), nlon))
    # between neighbouring rings
    edges.append(np.stack([ring[:-1].ravel(), ring[1:].ravel()], 1))
    coefs.append(np.repeat(np.sin(theta[:-1] + dth / 2) * dph / dth, nlon))
    # pole caps
    cap_c = np.sin(dth / 2) * dph / dth
    edges.append(np.stack([np.zeros(nlon, int), ring[0]], 1))
    edges.append(np.stack([np.full(nlon, n - 1), ring[-1]], 1))
    coefs += [np.full(nlon, cap_c)] * 2
    return DiscreteManifold(SPHERE2, (float(R),), (nlat, nlon), points, weights,
                            np.concatenate(edges), np.concatenate(coefs))


# -- analytic facts -----------------------------------------------------------

@dataclass(frozen=True)
class AnalyticFacts:
    volume: float
    cheeger: float
    minimal_hypersurface_mass: float
    diameter: float
    laplace_eigenvalues: tuple = ()


def analytic_facts(m: DiscreteManifold, count: int = 0) -> AnalyticFacts:
    """Closed-form geometric constants of the continuum manifold.

    ``count`` Laplace eigenvalues (with multiplicity) are included.
    """
    eig = tuple(float(x) for x in laplace_eigenvalues(m, count)) if count > 0 else ()
    if m.kind == TORUS1:
        L = m.size[0]
        return AnalyticFacts(L, 4.0 / L, 2.0, L / 2, eig)
    if m.kind == TORUS2:
        L1, L2 = m.size
        # half-volume strip bounded by two closed geodesics of the shorter side
        return AnalyticFacts(L1 * L2, 4.0 / max(L1, L2), 2.0 * min(L1, L2),
                             0.5 * float(np.hypot(L1, L2)), eig)
    R = m.size[0]
    return AnalyticFacts(4 * np.pi * R ** 2, 1.0 / R, 2 * np.pi * R, np.pi * R, eig)


def laplace_eigenvalues(m: DiscreteManifold, count: int) -> np.ndarray:
    """First ``count`` eigenvalues of ``-Delta`` on the continuum manifold, with multiplicity."""
    if m.kind == SPHERE2:
        R = m.size[0]
        out, l = [], 0
        while len(out) < count:
            out += [l * (l + 1) / R ** 2] * (2 * l + 1)
            l += 1
        return np.array(out[:count])
    kmax = int(np.ceil(np.sqrt(count))) + 2
    ks = np.arange(-kmax, kmax + 1)
    if m.kind == TORUS1:
        vals = (2 * np.pi * ks / m.size[0]) ** 2
    else:
        a, b = np.meshgrid(ks, ks, indexing="ij")
        vals = 4 * np.pi ** 2 * ((a / m.size[0]) ** 2 + (b / m.size[1]) ** 2).ravel()
    return np.sort(vals)[:count]


def cheeger_lower_estimate(m: DiscreteManifold) -> float:
    """Minimal perimeter/volume ratio over strip or cap cuts of at most half volume.

    Perimeters are measured on the discrete cut (sum of dual-face lengths of
    cut edges), so this is an independent numerical cross-check of the
    analytic Cheeger constant.
    """
    best = np.inf
    half = 0.5 * m.volume * (1 + 1e-12)
    face = _edge_face_measure(m)
    if m.is_torus:
        for ax in range(m.dim):
            coord = m.points[:, ax]
            L, N = m.size[ax], m.shape[ax]
            for k in range(1, N):
                inside = coord < k * L / N - 1e-12
                best = min(best, _cut_ratio(m, inside, face, half))
    else:
        z = m.points[:, 2]
        for level in np.unique(np.round(z, 12))[1:]:
            best = min(best, _cut_ratio(m, z < level, face, half))
    return float(best)


def _edge_face_measure(m):
    if m.kind == TORUS1:
        return np.ones(len(m.edge_coef))
    # |face| = c_e * |edge|
    d = m.points[m.edges[:, 1]] - m.points[m.edges[:, 0]]
    if m.is_torus:
        d -= np.array(m.size) * np.round(d / np.array(m.size))
        length = np.linalg.norm(d, axis=1)
    else:
        R = m.size[0]
        length = R * _angle(m.points[m.edges[:, 0]], m.points[m.edges[:, 1]])
    return m.edge_coef * length


def _cut_ratio(m, inside, face, half):
    vol = float(np.sum(m.weights[inside]))
    if vol <= 0 or vol > half:
        return np.inf
    cut = inside[m.edges[:, 0]] != inside[m.edges[:, 1]]
    return float(np.sum(face[cut])) / vol


def _angle(x, y):
    cross = np.linalg.norm(np.cross(x, y), axis=-1)
    return np.arctan2(cross, np.sum(x * y, axis=-1))


def geodesic_distance(m: DiscreteManifold, x, y):
    """Distance between points (broadcasting over leading axes)."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if m.is_torus:
        L = np.array(m.size)
        d = x - y
        d = d - L * np.round(d / L)
        return np.linalg.norm(d, axis=-1)
    return m.size[0] * _angle(x, y)


def distance_to_set(m: DiscreteManifold, segments=None, skeleton_level=None, points=None):
    """Distance from every node to a closed set.

    Parameters
    ----------
    segments : array (k, 2, 2), optional
        Line segments on ``torus2`` given by endpoints; periodic images are
        accounted for.
    skeleton_level : int, optional
        Include the grid lines of the ``3^k`` subdivision of the torus.
    points : array (k, d), optional
        A finite point set (any manifold).

    Returns
    -------
    ndarray
        Nodal distances; ``+inf`` everywhere when the set is empty.
    """
    out = np.full(m.n_nodes, np.inf)
    if skeleton_level is not None:
        if m.kind != TORUS2:
            raise UsageError("skeleton distances are defined on torus2 only")
        out = np.minimum(out, skeleton_distance(m.points, m.size, skeleton_level))
    if segments is not None and len(segments):
        if m.kind != TORUS2:
            raise UsageError("segment distances are defined on torus2 only")
        for seg in np.asarray(segments, float):
            out = np.minimum(out, segment_distance(m.points, seg, m.size))
    if points is not None and len(points):
        for q in np.asarray(points, float):
            out = np.minimum(out, geodesic_distance(m, m.points, q))
    return out


def skeleton_distance(x, size, level):
    """Distance to the union of grid lines spaced ``L / 3^level``."""
    best = np.full(x.shape[0], np.inf)
    for ax, L in enumerate(size):
        c = L / 3 ** level
        r = np.mod(x[:, ax], c)
        best = np.minimum(best, np.minimum(r, c - r))
    return best


def segment_distance(x, seg, size):
    """Distance from points ``x`` to a segment on the flat torus (min over 9 translates)."""
    a, b = seg
    d = b - a
    dd = float(np.dot(d, d))
    # the segment is short compared with the torus, so fold x near a first
    L = np.array(size)
    rel = x - a
    rel = rel - L * np.floor(rel / L + 0.5)
    best = np.full(x.shape[0], np.inf)
    for sx in (-1, 0, 1):
        for sy in (-1, 0, 1):
            q = rel + np.array([sx * L[0], sy * L[1]])
            t = np.clip(q @ d / dd, 0.0, 1.0) if dd > 0 else np.zeros(len(q))
            best = np.minimum(best, np.linalg.norm(q - t[:, None] * d, axis=1))
    return best
