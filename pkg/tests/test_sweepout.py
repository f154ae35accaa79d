import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from acminmax.energy import ScalarField, energy, h1_norm_values
from acminmax.errors import ContractError, DomainError
from acminmax.interface import extract_interface
from acminmax.manifold import build_manifold, segment_distance, skeleton_distance
from acminmax.potential import sigma_constant
from acminmax.sweepout import (CubulationParams, PathSymmetrized, SphereLinear, TorusBendCancel,
                               bend_and_cancel, check_directions, cube_projection,
                               default_cubulation, family_field, match_roots, max_core_ratio,
                               modified_distance, polynomial_roots, polynomial_sign,
                               slice_segment, slice_set, subdivision_level, track_roots)


@pytest.fixture(scope="module")
def torus128():
    return build_manifold("torus2", 128)


def unit(rng, n):
    a = rng.standard_normal(n)
    return a / np.linalg.norm(a)


# -- cubulation and the bend map ------------------------------------------------

def test_subdivision_level():
    assert [subdivision_level(p) for p in (1, 8, 9, 80, 81)] == [0, 0, 1, 1, 2]
    with pytest.raises(DomainError):
        subdivision_level(0)


def test_cube_projection_examples():
    assert np.allclose(cube_projection([0.25, 0.0], 0.5), [0.5, 0.0])
    assert np.allclose(cube_projection([0.0, 0.0], 0.5), [0.0, 0.0])
    for y in ([1.0, 0.3], [-0.2, 1.0], [1.0, -1.0]):
        assert np.allclose(cube_projection(y, 0.5), y)
    # outside the core everything lands on the boundary
    assert np.max(np.abs(cube_projection([0.7, 0.1], 0.5))) == pytest.approx(1.0)


def test_bend_and_cancel_fixes_centres_and_skeleton():
    prm = default_cubulation(1)
    c = prm.centres()
    assert np.allclose(bend_and_cancel(prm, c), c)
    edge = np.array([[1 / 3, 0.5], [0.5, 2 / 3], [0.0, 0.2]])
    assert np.allclose(bend_and_cancel(prm, edge), edge)


def test_direction_checks():
    prm = default_cubulation(2)
    check_directions(prm)
    assert 0 < prm.rho < max_core_ratio(2)
    with pytest.raises(ContractError):
        check_directions(CubulationParams(1, 0.5, (1.0, 0.0)))
    with pytest.raises(ContractError):
        check_directions(CubulationParams(1, 0.5, (1.0, 1.0)))
    with pytest.raises(ContractError, match="reduce rho"):
        check_directions(CubulationParams(2, 0.99))


def test_slices_meet_at_most_one_core():
    prm = default_cubulation(2)
    f = np.sort(prm.f(prm.centres()))
    assert np.all(np.diff(f) > 2 * prm.core_half_width)


def test_slice_set_examples():
    prm = default_cubulation(1)
    fmin, _ = prm.f_range()
    segs, level = slice_set(prm, fmin - 0.1)
    assert segs.shape == (0, 2, 2) and level == 1
    c = prm.centres()[4]
    segs, _ = slice_set(prm, float(prm.f(c)))
    a, b = segs[0]
    # the chord passes through the cell centre and spans the cell
    t = np.dot(c - a, b - a) / np.dot(b - a, b - a)
    assert np.allclose(a + t * (b - a), c, atol=1e-12)
    assert np.max(np.abs(np.array([a, b]) - c)) == pytest.approx(prm.cell / 2)


def _hausdorff_to_slice(prm, pts, s):
    # distance of points to the bent slice (skeleton plus chord)
    size = (prm.side, prm.side)
    d = skeleton_distance(pts, size, prm.k)
    seg = slice_segment(prm, s)
    if seg is not None:
        d = np.minimum(d, segment_distance(pts, seg, size))
    return float(np.max(d))


def _chord_points(prm, s):
    seg = slice_segment(prm, s)
    if seg is None:
        return np.zeros((0, 2))
    t = np.linspace(0, 1, 50)[:, None]
    return seg[0] + t * (seg[1] - seg[0])


def test_slice_hausdorff_continuity():
    prm = default_cubulation(1)
    fmin, fmax = prm.f_range()
    for s in np.linspace(fmin, fmax, 400):
        for delta in (1e-4, 1e-6):
            pa, pb = _chord_points(prm, s), _chord_points(prm, s + delta)
            dist = max(_hausdorff_to_slice(prm, pa, s + delta) if len(pa) else 0.0,
                       _hausdorff_to_slice(prm, pb, s) if len(pb) else 0.0)
            assert dist <= 100 * delta / prm.rho


def test_modified_distance(torus128):
    prm = default_cubulation(1)
    m = torus128
    s = float(prm.f(prm.centres()[4]))
    plain = np.minimum(skeleton_distance(m.points, m.size, 1),
                       segment_distance(m.points, slice_segment(prm, s), m.size))
    assert np.allclose(modified_distance(prm, complex(s), m), plain)
    assert np.allclose(modified_distance(prm, complex(s, 0.3), m), plain + 0.3)
    fmin, _ = prm.f_range()
    assert np.allclose(modified_distance(prm, complex(fmin - 0.2, 0.0), m),
                       skeleton_distance(m.points, m.size, 1) + 0.2)


def test_modified_distance_lipschitz(torus128):
    m = torus128
    prm = default_cubulation(1)
    rng = np.random.default_rng(3)
    h = m.size[0] / m.shape[0]
    for z in rng.uniform(-0.7, 0.7, 10) + 1j * rng.uniform(-0.2, 0.2, 10):
        d = modified_distance(prm, complex(z), m)
        jump = np.abs(d[m.edges[:, 0]] - d[m.edges[:, 1]])
        assert np.all(jump <= h * (1 + 1e-9))


# -- polynomial roots ------------------------------------------------------------

def test_polynomial_roots_examples():
    r = polynomial_roots(np.array([-1.0, 0.0, 1.0]) / math.sqrt(2))
    assert np.allclose(np.sort(r.roots.real), [-1, 1]) and np.allclose(r.roots.imag, 0)
    for p in (1, 2, 5, 12):
        a = np.zeros(p + 1)
        a[0], a[-1] = 1.0, -1.0
        got = np.sort_complex(polynomial_roots(a / math.sqrt(2)).roots)
        exact = np.sort_complex(np.exp(2j * np.pi * np.arange(p) / p))
        assert np.max(np.abs(match_roots(exact, got) - exact)) < 1e-10
    e = polynomial_roots([1.0, 0.0, 0.0])
    assert e.empty and e.degree == 0
    assert polynomial_roots([0.0, 1.0, -2.0], radius=0.1).roots.size == 1
    with pytest.raises(DomainError):
        polynomial_roots([0.0, 0.0])


def test_polynomial_sign_agrees_with_evaluation(rng):
    for _ in range(50):
        a = rng.standard_normal(5)
        y = rng.uniform(-2, 2, 200)
        vals = np.polyval(a[::-1], y)
        ok = np.abs(vals) > 1e-8
        assert np.array_equal(polynomial_sign(a, y)[ok], np.sign(vals[ok]))


def _hausdorff(a, b):
    if a.size == 0 or b.size == 0:
        return 0.0 if a.size == b.size else np.inf
    d = np.abs(a[:, None] - b[None, :])
    return float(max(d.min(axis=0).max(), d.min(axis=1).max()))


def test_root_tracking_along_great_circles(rng):
    step = 1e-3
    checked = 0
    while checked < 100:
        p = int(rng.integers(1, 6))
        a0, d = unit(rng, p + 1), unit(rng, p + 1)
        a1 = a0 + 0.1 * (d - (d @ a0) * a0)
        path = np.array([a0 + t * (a1 - a0) for t in np.linspace(0, 1, 5)])
        if np.min(np.abs(path[:, -1]) / np.linalg.norm(path, axis=1)) < 0.2:
            continue  # keep the degree fixed along the path
        checked += 1
        a1 = a1 / np.linalg.norm(a1)
        ang = math.acos(min(1.0, float(a0 @ a1)))
        n = max(1, int(round(ang / step)))
        perp = (a1 - (a0 @ a1) * a0) / math.sin(ang)
        pts = [math.cos(t) * a0 + math.sin(t) * perp for t in np.linspace(0, ang, n + 1)]
        seq = track_roots(a0, a1, steps=n)
        for i, (r0, r1) in enumerate(zip(seq, seq[1:])):
            if np.all(np.abs(r1 - r0) <= 10 * ang / n):
                continue
            # a near collision: set-valued continuity under refinement of this step
            fine = track_roots(pts[i], pts[i + 1], steps=1000)
            jumps = [_hausdorff(x, y) for x, y in zip(fine, fine[1:])]
            assert max(jumps) <= 1e-2


@given(st.lists(st.floats(-1, 1), min_size=3, max_size=6))
def test_roots_vanish_polynomial(c):
    a = np.asarray(c)
    if np.linalg.norm(a) < 1e-3 or abs(a[-1]) < 1e-2:
        return
    for z in polynomial_roots(a / np.linalg.norm(a)).roots:
        assert abs(np.polyval(a[::-1], z)) <= 1e-8 * np.sum(np.abs(a) * (1 + abs(z)) ** np.arange(len(a)))


# -- families -------------------------------------------------------------------

def test_oddness(quartic, torus128, rng):
    fams = [(TorusBendCancel(torus128), 3), (TorusBendCancel(torus128), 10),
            (SphereLinear(build_manifold("sphere2", 32)), 3)]
    for fam, p in fams:
        for _ in range(100 if p == 3 else 20):
            a = unit(rng, p + 1)
            u = family_field(fam, a, quartic, 0.05, p).values
            v = family_field(fam, -a, quartic, 0.05, p).values
            assert np.max(np.abs(u + v)) <= 1e-12
    m = build_manifold("torus2", 16)
    path = PathSymmetrized(m, [np.full(m.n_nodes, -1.0), np.zeros(m.n_nodes),
                               np.full(m.n_nodes, 1.0)])
    for _ in range(100):
        a = unit(rng, 2)
        assert np.max(np.abs(path.field(a, quartic, 0.1).values
                             + path.field(-a, quartic, 0.1).values)) <= 1e-12


def test_family_continuity(quartic, torus128, rng):
    fam = TorusBendCancel(torus128)
    m = torus128
    for p in (2, 5):
        for _ in range(5):
            a = unit(rng, p + 1)
            d = unit(rng, p + 1)
            dists = [h1_norm_values(m, fam.field(a + t * d, quartic, 0.05, p).values
                                    - fam.field(a, quartic, 0.05, p).values)
                     for t in (1e-2, 1e-4, 1e-6)]
            assert dists[-1] < 1e-2
            assert dists[-1] <= dists[0] + 1e-12


def test_sphere_family_examples(quartic):
    m = build_manifold("sphere2", (128, 256))
    fam = SphereLinear(m)
    eq = fam.field([0, 0, 0, 1.0], quartic, 0.05)
    ratio = energy(eq, quartic, 0.05).total / (2 * sigma_constant(quartic))
    assert abs(ratio / (2 * math.pi) - 1) <= 0.02
    z = m.points[:, 2]
    # signed arc distance to the equator is the latitude
    assert np.allclose(fam.signed_distance([0, 0, 0, 1.0]), np.arcsin(np.clip(z, -1, 1)),
                       atol=1e-12)
    const = fam.field([1.0, 0, 0, 0], quartic, 0.05)
    assert np.all(const.values == 1.0) and energy(const, quartic, 0.05).total == 0.0
    with pytest.raises(DomainError):
        fam.signed_distance(np.ones(5))


def test_torus_single_slice_energy(quartic, torus128):
    fam = TorusBendCancel(torus128)
    eps = 0.01
    bound = fam.certified_mass_bound(1)
    for c in (-0.3, 0.0, 0.2):
        u = fam.field(np.array([-c, 1.0]), quartic, eps, 1)
        assert energy(u, quartic, eps).total / (2 * sigma_constant(quartic)) <= bound
    assert np.all(np.abs(fam.field([1.0, 0.0], quartic, eps, 1).values) == 1.0)


def test_certified_mass_bound(torus128):
    fam = TorusBendCancel(torus128)
    assert fam.certified_mass_bound(1) == pytest.approx(2 * math.sqrt(2) + 2)
    assert fam.certified_mass_bound(16) == pytest.approx(2 * 16 * math.sqrt(2) / 3 + 6)
    scaled = [fam.certified_mass_bound(p) / math.sqrt(p) for p in range(1, 65)]
    assert max(scaled) / min(scaled) <= 4
    fixed = TorusBendCancel(torus128, k=1)
    b = [fixed.certified_mass_bound(p) for p in (100, 200, 400)]
    assert b[2] - b[1] == pytest.approx(2 * (b[1] - b[0]))


def test_level_set_mass_within_bound(quartic):
    m = build_manifold("torus2", 64)
    fam = TorusBendCancel(m)
    rng = np.random.default_rng(11)
    h = m.size[0] / m.shape[0]
    done = 0
    while done < 100:
        p = int(rng.integers(1, 12))
        hval = fam.signed_distance(unit(rng, p + 1), p)
        if not np.all(np.isfinite(hval)):
            continue
        done += 1
        bound = fam.certified_mass_bound(p)
        slack = 1 + 2 * h / fam.params(p).cell
        levels = np.concatenate([rng.uniform(hval.min(), hval.max(), 10),
                                 rng.uniform(-4 * h, 4 * h, 10)])
        for s in levels:
            rep = extract_interface(ScalarField(m, hval), quartic, 0.1, level=s)
            assert rep.length <= bound * slack


def test_family_energy_within_bound(quartic):
    m = build_manifold("torus2", 256)
    fam = TorusBendCancel(m)
    rng = np.random.default_rng(5)
    sigma2 = 2 * sigma_constant(quartic)
    for p in (1, 4, 9):
        eps = fam.params(p).cell / 10
        worst = max(energy(fam.field(a, quartic, eps, p), quartic, eps).total
                    for a in [unit(rng, p + 1) for _ in range(20)] + fam.structured_starts(p))
        assert worst <= sigma2 * fam.certified_mass_bound(p) * 1.05


def test_structured_starts_have_real_roots_in_cores(torus128):
    fam = TorusBendCancel(torus128)
    for p in (1, 4, 9):
        prm = fam.params(p)
        a = fam.structured_starts(p)[0]
        roots = polynomial_roots(a).roots
        assert len(roots) == p and np.allclose(roots.imag, 0)
        assert all(slice_segment(prm, r.real) is not None for r in roots)


def test_path_family_validation(torus128):
    with pytest.raises(DomainError):
        PathSymmetrized(torus128, [np.zeros(torus128.n_nodes)])
    with pytest.raises(DomainError):
        TorusBendCancel(build_manifold("sphere2", 16))
    with pytest.raises(DomainError):
        SphereLinear(torus128)
