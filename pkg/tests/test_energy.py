import math

import numpy as np
import pytest

from acminmax.dynamics import FlowParams, flow_to_critical, newton_refine
from acminmax.energy import (ScalarField, critical_energy_identity, energy, energy_gradient,
                             h1_inner, hessian_apply, l2_inner, residual_norm, truncate)
from acminmax.errors import DomainError, UsageError
from acminmax.manifold import build_manifold
from acminmax.potential import heteroclinic, sigma_constant

FOUR_SIGMA = 4 * math.sqrt(2) / 3


def stripe(m, p, eps, a=0.25, b=0.75):
    # signed distance to {x=a} u {x=b}, positive between them
    x = m.points[:, 0]
    d = np.minimum(np.abs(x - a), np.abs(x - b))
    sign = np.where((x > a) & (x < b), 1.0, -1.0)
    return ScalarField(m, heteroclinic(p, eps)(sign * d))


def test_constant_energies(quartic, torus64):
    assert energy(ScalarField.constant(torus64, 0.0), quartic, 0.1).total == pytest.approx(2.5)
    assert energy(ScalarField.constant(torus64, 1.0), quartic, 0.1).total == 0.0


def test_breakdown_consistency(quartic, torus64, rng):
    u = ScalarField(torus64, rng.uniform(-1, 1, torus64.n_nodes))
    b = energy(u, quartic, 0.07)
    assert abs(b.total - b.dirichlet - b.potential) <= 1e-12 * b.total
    assert np.all(b.density.values >= 0)
    assert torus64.integrate(b.density.values) == pytest.approx(b.total, rel=1e-12)
    assert torus64.integrate(b.discrepancy.values) == pytest.approx(b.discrepancy_integral,
                                                                     rel=1e-10)
    with pytest.raises(DomainError):
        energy(u, quartic, 0.0)


def test_two_stripe_energy_near_four_sigma(quartic):
    m = build_manifold("torus2", 256)
    total = energy(stripe(m, quartic, 0.02), quartic, 0.02).total
    assert abs(total - FOUR_SIGMA) < 0.01 * FOUR_SIGMA
    assert FOUR_SIGMA == pytest.approx(4 * sigma_constant(quartic), abs=1e-12)


def test_gradient_examples(quartic, torus32):
    assert np.all(energy_gradient(ScalarField.constant(torus32, 0.0), quartic, 0.1).values == 0)
    g = energy_gradient(ScalarField.constant(torus32, 0.5), quartic, 1.0).values
    assert np.allclose(g, 0.5 ** 3 - 0.5, atol=1e-14)


def test_gradient_matches_finite_differences(quartic, torus32, rng):
    m, eps, h = torus32, 0.1, 1e-4
    for _ in range(20):
        u = ScalarField(m, rng.uniform(-1, 1, m.n_nodes))
        v = ScalarField(m, rng.standard_normal(m.n_nodes))
        fd = (energy(u.with_values(u.values + h * v.values), quartic, eps).total
              - energy(u.with_values(u.values - h * v.values), quartic, eps).total) / (2 * h)
        exact = l2_inner(energy_gradient(u, quartic, eps), v)
        assert abs(fd - exact) <= 1e-5 * abs(exact)


def test_hessian_matches_finite_differences(quartic, torus32, rng):
    m, eps, h = torus32, 0.1, 1e-4
    for _ in range(20):
        u = ScalarField(m, rng.uniform(-1, 1, m.n_nodes))
        v = ScalarField(m, rng.standard_normal(m.n_nodes))
        gp = energy_gradient(u.with_values(u.values + h * v.values), quartic, eps).values
        gm = energy_gradient(u.with_values(u.values - h * v.values), quartic, eps).values
        exact = hessian_apply(u, v, quartic, eps).values
        fd = (gp - gm) / (2 * h)
        assert np.linalg.norm(fd - exact) <= 1e-4 * np.linalg.norm(exact)


def test_hessian_examples(quartic, torus32, rng):
    m = torus32
    one = ScalarField.constant(m, 1.0)
    v = ScalarField(m, rng.standard_normal(m.n_nodes))
    Hv = hessian_apply(one, v, quartic, 1.0).values
    assert np.allclose(Hv, -m.apply_laplacian(v.values) + 2 * v.values)
    # the continuous eigenvalue 4 pi^2 is replaced by the grid symbol for the mode
    x = m.points[:, 0]
    mode = ScalarField(m, np.cos(2 * math.pi * x))
    lam = float(-(m.apply_laplacian(mode.values) / mode.values)[np.argmax(mode.values)])
    assert lam == pytest.approx(4 * math.pi ** 2, rel=1e-2)
    Hm = hessian_apply(ScalarField.constant(m, 0.0), mode, quartic, 0.1).values
    assert np.allclose(Hm, (0.1 * lam - 10) * mode.values, atol=1e-10)


def test_hessian_symmetry(quartic, torus32, rng):
    m = torus32
    for _ in range(10):
        u, v, w = (ScalarField(m, a) for a in rng.uniform(-1, 1, (3, m.n_nodes)))
        lhs = l2_inner(hessian_apply(u, v, quartic, 0.1), w)
        rhs = l2_inner(v, hessian_apply(u, w, quartic, 0.1))
        assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


def test_truncate(quartic, torus32, rng):
    m = torus32
    assert np.all(truncate(ScalarField.constant(m, 3.0)).values == 1.0)
    vals = np.zeros(m.n_nodes)
    vals[:3] = [-2.0, 0.0, 0.5]
    assert list(truncate(ScalarField(m, vals)).values[:3]) == [-1.0, 0.0, 0.5]
    u = ScalarField(m, rng.uniform(-1, 1, m.n_nodes))
    assert np.array_equal(truncate(u).values, u.values)
    wild = ScalarField(m, 2.5 * rng.standard_normal(m.n_nodes))
    assert energy(truncate(wild), quartic, 0.1).total <= energy(wild, quartic, 0.1).total


def test_h1_inner(torus64):
    m = torus64
    x = m.points[:, 0]
    one = ScalarField.constant(m, 1.0)
    c, s = ScalarField(m, np.cos(2 * math.pi * x)), ScalarField(m, np.sin(2 * math.pi * x))
    assert h1_inner(one, one) == pytest.approx(1.0, abs=1e-14)
    assert h1_inner(c, c) == pytest.approx(0.5 + 2 * math.pi ** 2, rel=2e-3)
    assert abs(h1_inner(c, s)) < 1e-12
    with pytest.raises(UsageError):
        h1_inner(one, ScalarField.constant(build_manifold("torus2", 32), 1.0))


def test_rejects_nonfinite(torus32):
    with pytest.raises(DomainError):
        ScalarField(torus32, np.full(torus32.n_nodes, np.nan))
    with pytest.raises(UsageError):
        ScalarField(torus32, np.zeros(5))


@pytest.fixture(scope="module")
def stripe_solution(quartic):
    m = build_manifold("torus2", 64)
    eps = 0.1
    start = flow_to_critical(stripe(m, quartic, eps), quartic, eps,
                             FlowParams(dt=eps ** 2 / 2, max_steps=400, residual_tol=1e-3))
    return newton_refine(start.field, quartic, eps, tol=1e-10)


def test_critical_energy_identity(quartic, stripe_solution):
    cp = stripe_solution
    assert residual_norm(cp.field, quartic, cp.epsilon) <= 1e-8
    ident = critical_energy_identity(cp.field, quartic, cp.epsilon)
    assert abs(cp.energy - ident) <= 1e-5 * cp.energy


def test_discrepancy_constant_and_nonpositive_for_stripes(quartic, stripe_solution):
    cp = stripe_solution
    xi = energy(cp.field, quartic, cp.epsilon).discrepancy.values
    assert np.max(xi) <= 1e-6
    # constant up to the discretization error of the nodal gradient
    assert np.ptp(xi) <= 0.05 * np.max(energy(cp.field, quartic, cp.epsilon).density.values)
