"""Scalar fields and the Allen-Cahn energy with its derivatives."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, UsageError
from .manifold import DiscreteManifold
from .potential import Potential


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Nodal values of a function on a discrete manifold."""

    manifold: DiscreteManifold
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.manifold.n_nodes,):
            raise UsageError(f"field has shape {v.shape}, manifold has {self.manifold.n_nodes} nodes")
        if not np.all(np.isfinite(v)):
            raise DomainError("field values must be finite")
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, m, c):
        return cls(m, np.full(m.n_nodes, float(c)))

    def with_values(self, values):
        return ScalarField(self.manifold, values)

    def __neg__(self):
        return self.with_values(-self.values)

    @property
    def spread(self):
        return float(np.ptp(self.values))


@dataclass(frozen=True)
class EnergyBreakdown:
    """``total = dirichlet + potential``; ``density`` and ``discrepancy`` are nodal."""

    epsilon: float
    total: float
    dirichlet: float
    potential: float
    density: ScalarField
    discrepancy: ScalarField

    @property
    def discrepancy_integral(self):
        return self.dirichlet - self.potential


def _pair(u, v):
    u.manifold.check_same(v.manifold)


def energy_density(u: ScalarField, p: Potential, eps: float):
    """Nodal ``e = eps |grad u|^2 / 2 + W(u)/eps`` and ``xi = eps |grad u|^2/2 - W(u)/eps``."""
    g2 = u.manifold.grad_sq_nodal(u.values)
    kin = 0.5 * eps * g2
    pot = p.W(u.values) / eps
    return kin + pot, kin - pot


def energy_values(m: DiscreteManifold, values, p: Potential, eps: float) -> float:
    """Total energy from raw nodal values (fast path for inner loops)."""
    return 0.5 * eps * m.dirichlet(values) + m.integrate(p.W(values)) / eps


def energy(u: ScalarField, p: Potential, eps: float) -> EnergyBreakdown:
    """Discrete ``E_eps(u)`` split into its Dirichlet and potential parts."""
    if not eps > 0:
        raise DomainError("eps must be positive")
    m = u.manifold
    kin = 0.5 * eps * m.dirichlet(u.values)
    pot = m.integrate(p.W(u.values)) / eps
    e, xi = energy_density(u, p, eps)
    return EnergyBreakdown(eps, kin + pot, kin, pot, u.with_values(e), u.with_values(xi))


def gradient_values(m: DiscreteManifold, values, p: Potential, eps: float):
    """``-eps Laplacian(u) + W'(u)/eps``; the L^2(weights) gradient of the energy."""
    return -eps * m.apply_laplacian(values) + p.dW(values) / eps


def energy_gradient(u: ScalarField, p: Potential, eps: float) -> ScalarField:
    return u.with_values(gradient_values(u.manifold, u.values, p, eps))


def residual_norm(u: ScalarField, p: Potential, eps: float) -> float:
    """Weighted L^2 norm of the Euler-Lagrange residual."""
    g = gradient_values(u.manifold, u.values, p, eps)
    return float(np.sqrt(u.manifold.integrate(g * g)))


def hessian_apply(u: ScalarField, v: ScalarField, p: Potential, eps: float) -> ScalarField:
    """Second variation ``(-eps Laplacian + W''(u)/eps) v``."""
    _pair(u, v)
    m = u.manifold
    return v.with_values(-eps * m.apply_laplacian(v.values) + p.d2W(u.values) * v.values / eps)


def truncate(u: ScalarField) -> ScalarField:
    """Clamp to [-1, 1]; never increases the energy."""
    return u.with_values(np.clip(u.values, -1.0, 1.0))


def l2_inner(u: ScalarField, v: ScalarField) -> float:
    _pair(u, v)
    return u.manifold.integrate(u.values * v.values)


def h1_inner(u: ScalarField, v: ScalarField) -> float:
    _pair(u, v)
    m = u.manifold
    return m.integrate(u.values * v.values) + m.dirichlet(u.values, v.values)


def h1_norm_values(m: DiscreteManifold, values) -> float:
    return float(np.sqrt(m.integrate(values * values) + m.dirichlet(values)))


def critical_energy_identity(u: ScalarField, p: Potential, eps: float) -> float:
    """``(Vol - int u^4) / (4 eps)``: the energy of a critical point of the standard quartic."""
    m = u.manifold
    return (m.volume - m.integrate(u.values ** 4)) / (4.0 * eps)
