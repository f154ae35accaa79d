import csv
import math

import numpy as np
import pytest

from acminmax.dynamics import FlowParams, flow_to_critical, newton_refine
from acminmax.energy import ScalarField
from acminmax.errors import DomainError
from acminmax.interface import (ball_energy, ball_energy_floor_check, discrepancy_stats,
                                export_segments, extract_interface, monotonicity_profile)
from acminmax.manifold import build_manifold
from acminmax.potential import heteroclinic

FOUR_SIGMA = 4 * math.sqrt(2) / 3


def two_stripes(m, p, eps):
    x = m.points[:, 0]
    d = np.minimum(np.abs(x - 0.25), np.abs(x - 0.75))
    return ScalarField(m, heteroclinic(p, eps)(np.where((x > 0.25) & (x < 0.75), d, -d)))


def refine(u, p, eps):
    start = flow_to_critical(u, p, eps, FlowParams(dt=eps ** 2 / 2, max_steps=5000,
                                                   residual_tol=1e-3))
    return newton_refine(start.field, p, eps, tol=1e-10)


@pytest.fixture(scope="module")
def torus_solution(quartic):
    return refine(two_stripes(build_manifold("torus2", 256), quartic, 0.02), quartic, 0.02)


def test_two_geodesic_interface(quartic, torus_solution):
    cp = torus_solution
    rep = extract_interface(cp.field, quartic, cp.epsilon)
    assert abs(rep.length - 2.0) <= 0.02 * 2.0
    assert abs(rep.multiplicity - 1.0) <= 0.05
    assert len(rep.components) == 2
    assert all(c.straightness < 1e-6 for c in rep.components)
    assert abs(rep.energy_over_2sigma - 2.0) < 0.02


def test_interface_length_stable_under_refinement(quartic):
    eps = 0.05
    lengths = []
    for n in (128, 256):
        x = build_manifold("torus2", n)
        # a tilted closed curve: the graph of a small sine wave
        X, Y = x.points.T
        u = ScalarField(x, np.tanh((np.sin(2 * math.pi * (X - 0.1 * np.sin(2 * math.pi * Y))))
                                   / (eps * math.sqrt(2))))
        lengths.append(extract_interface(u, quartic, eps).length)
    assert abs(lengths[1] / lengths[0] - 1) <= 0.01


def test_sphere_equator_interface(quartic):
    eps = 0.05
    m = build_manifold("sphere2", (64, 128))
    theta = np.arccos(np.clip(m.points[:, 2], -1, 1))
    cp = refine(ScalarField(m, heteroclinic(quartic, eps)(math.pi / 2 - theta)), quartic, eps)
    rep = extract_interface(cp.field, quartic, eps)
    assert abs(rep.length / (2 * math.pi) - 1) <= 0.03
    assert abs(rep.multiplicity - 1) <= 0.1


def test_tilted_great_circle_on_sphere(quartic):
    m = build_manifold("sphere2", (96, 192))
    n = np.array([1.0, 0.0, 1.0]) / math.sqrt(2)
    u = ScalarField(m, np.tanh(np.arcsin(np.clip(m.points @ n, -1, 1)) / (0.05 * math.sqrt(2))))
    rep = extract_interface(u, quartic, 0.05)
    assert abs(rep.length / (2 * math.pi) - 1) <= 0.01
    assert len(rep.components) == 1


def test_constant_field_has_empty_interface(quartic, torus32):
    rep = extract_interface(ScalarField.constant(torus32, 1.0), quartic, 0.1)
    assert rep.empty and rep.length == 0.0 and rep.multiplicity is None


def test_torus1_interface_count(quartic):
    m = build_manifold("torus1", 256)
    rep = extract_interface(two_stripes(m, quartic, 0.05), quartic, 0.05)
    assert rep.length == 2.0
    assert np.allclose(np.sort(rep.segments[:, 0, 0]), [0.25, 0.75], atol=1e-3)


def test_export_segments(quartic, torus_solution, tmp_path):
    rep = extract_interface(torus_solution.field, quartic, torus_solution.epsilon)
    path = tmp_path / "seg.csv"
    export_segments(rep, path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["x1", "y1", "x2", "y2"]
    assert len(rows) == 1 + len(rep.segments)


def test_discrepancy_of_heteroclinic_and_constants(quartic):
    eps = 0.05
    m = build_manifold("torus1", 2048)
    x = m.points[:, 0]
    u = ScalarField(m, heteroclinic(quartic, eps)(x - 0.5))
    # the sample is not periodic; look away from the wrap-around seam
    from acminmax.energy import energy_density
    _, xi = energy_density(u, quartic, eps)
    assert np.max(np.abs(xi[(x > 0.2) & (x < 0.8)])) < 1e-3
    zero = discrepancy_stats(ScalarField.constant(m, 0.0), quartic, 0.1)
    assert zero.sup == zero.inf == pytest.approx(-2.5)
    assert zero.spread == 0.0


def test_discrepancy_of_periodic_two_transition_solution(quartic):
    eps = 0.05
    m = build_manifold("torus1", 1024)
    cp = refine(two_stripes(m, quartic, eps), quartic, eps)
    st = discrepancy_stats(cp.field, quartic, eps)
    assert st.spread <= 1e-3 / eps
    assert st.sup <= 0.0


def test_monotonicity_on_interface(quartic, torus_solution):
    cp = torus_solution
    radii = np.linspace(2 * cp.epsilon, 0.2, 12)
    prof = monotonicity_profile(cp.field, quartic, cp.epsilon, [0.25, 0.5], radii)
    assert np.all(prof[1:] >= 0.95 * prof[:-1])
    same = monotonicity_profile(cp.field, quartic, cp.epsilon, [0.25, 0.5], [0.1, 0.1])
    assert same[0] == same[1]


def test_monotonicity_of_zero(quartic):
    m = build_manifold("torus2", 256)
    radii = np.linspace(0.05, 0.3, 8)
    prof = monotonicity_profile(ScalarField.constant(m, 0.0), quartic, 0.1, [0.5, 0.5], radii)
    assert np.all(np.diff(prof) > 0)
    # W(0)/eps * pi r^2 / r on the flat torus
    assert np.allclose(prof, 2.5 * math.pi * radii, rtol=2e-2)


def test_ball_energy_of_line(quartic):
    eps, r = 0.02, 0.1
    m = build_manifold("torus2", 512)
    x = m.points[:, 0]
    u = ScalarField(m, heteroclinic(quartic, eps)(x - 0.5))
    ratio = ball_energy_floor_check(u, quartic, eps, [([0.5, 0.5], r)])
    assert ratio == pytest.approx(FOUR_SIGMA, rel=0.02)
    assert ball_energy(u, quartic, eps, [0.5, 0.5], r) / r == pytest.approx(ratio, rel=1e-3)


def smooth_zero_mean(m, rng):
    X, Y = m.points.T
    v = np.zeros(m.n_nodes)
    for j in range(1, 6):
        for k in range(1, 6):
            a, ph = rng.standard_normal(), rng.uniform(0, 2 * math.pi)
            v += a * np.sin(2 * math.pi * (j * X + k * Y) + ph) / (j * j + k * k)
    return v / np.max(np.abs(v))


def test_ball_energy_floor(quartic, rng):
    eps, r = 0.02, 0.1
    seeds = rng.integers(0, 2 ** 32, 100)
    floors = []
    for n in (128, 256):
        m = build_manifold("torus2", n)
        ratios = []
        for s in seeds:
            g = np.random.default_rng(s)
            u = ScalarField(m, smooth_zero_mean(m, g))
            ratios.append(ball_energy_floor_check(u, quartic, eps, [(g.uniform(0, 1, 2), r)]))
        floors.append(min(ratios))
    assert min(floors) > 0
    assert abs(floors[1] / floors[0] - 1) < 0.1


def test_ball_energy_floor_errors(quartic, torus32):
    with pytest.raises(DomainError):
        ball_energy_floor_check(ScalarField.constant(torus32, 1.5), quartic, 0.1, [([0, 0], 0.2)])
    with pytest.raises(DomainError):
        ball_energy_floor_check(ScalarField.constant(torus32, 0.5), quartic, 0.1, [([0, 0], 0.05)])
    with pytest.raises(DomainError):
        ball_energy_floor_check(ScalarField.constant(torus32, 0.5), quartic, 0.1, [])
