"""Min-max procedures: least positive energy, mountain pass, multiparameter levels.

The mountain pass uses a string method: interior images of a path from -1 to
+1 are moved by stabilized flow steps and redistributed by H^1 arc length;
once the string settles, the highest image climbs along the string tangent
and is finally polished by Newton's method.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.stats import norm, qmc

from .dynamics import (CriticalPoint, FlowParams, flow_to_critical, make_critical_point,
                       newton_refine)
from .energy import ScalarField, energy_values, gradient_values
from .errors import (ContractError, DegeneratePathError, DomainError, NonConvergenceError,
                     NumericalError)
from .manifold import DiscreteManifold, analytic_facts, laplace_eigenvalues
from .potential import Potential, sigma_constant
from .spectral import laplace_spectrum
from .sweepout import SweepoutFamily, check_oddness

log = logging.getLogger(__name__)


@dataclass
class Path:
    """Samples of a continuous path in H^1 from the constant -1 to the constant +1."""

    samples: list

    def __post_init__(self):
        if len(self.samples) < 3:
            raise DomainError("a path needs at least three samples")
        first, last = self.samples[0].values, self.samples[-1].values
        if np.any(first != -1.0) or np.any(last != 1.0):
            raise DomainError("path must start at -1 and end at +1")

    @property
    def manifold(self):
        return self.samples[0].manifold

    def energies(self, p, eps):
        m = self.manifold
        return np.array([energy_values(m, s.values, p, eps) for s in self.samples])


@dataclass
class MinMaxReport:
    """Outcome of a min-max computation.

    ``level`` is the reported estimate of the critical level.  For
    multiparameter families it is ``min(family_max, E(gamma-constant))``,
    because shrinking the family towards the constant gives a competitor of
    energy ``E(gamma)``.  ``certified_bound`` (if present) is a rigorous
    upper bound ``2 sigma * mass bound`` on the family's energy sup, up to
    quadrature slack.
    """

    level: float
    p: int
    epsilon: float
    critical_point: CriticalPoint | None = None
    certified: bool = False
    family_max: float | None = None
    certified_bound: float | None = None
    argmax: np.ndarray | None = None
    path: Path | None = None
    history: list = field(default_factory=list)
    wall_time: float = 0.0


@dataclass(frozen=True)
class MountainPassControls:
    """Controls of the string method.

    ``dt`` is in units of ``eps^2``; ``stabilization`` is the constant of the
    stabilized semi-implicit step (2 makes it unconditionally stable for the
    quartic).
    """

    images: int = 24
    dt: float = 2.0
    stabilization: float = 2.0
    max_iter: int = 4000
    string_tol: float = 1e-9
    climb_tol: float = 1e-5
    newton_tol: float = 1e-10
    newton_basin: float = 1e-1
    perturbation: float = 0.5
    noise: float = 0.1
    seed: int = 0


def gamma_energy(m: DiscreteManifold, p: Potential, eps: float) -> float:
    """``E(gamma) = Vol(M) W(gamma) / eps``, the energy of the unstable constant."""
    return m.volume * p.w0 / eps


def lowest_mode(m: DiscreteManifold, rng=None):
    """A real lowest nonconstant Laplace eigenfunction, normalized to max 1."""
    if m.is_torus:
        x = m.points[:, 0]
        v = np.cos(2 * np.pi * x / m.size[0])
    else:
        v = m.points[:, 2] / m.size[0]
    return v / np.max(np.abs(v))


def band_limited_noise(m: DiscreteManifold, rng, modes=4):
    """Smooth random field with max norm 1 (low-frequency heat-smoothed noise)."""
    v = rng.standard_normal(m.n_nodes)
    lam1 = 4 * np.pi ** 2 / max(m.size) ** 2 if m.is_torus else 2.0 / m.size[0] ** 2
    t = 1.0 / (modes * lam1)
    for _ in range(20):
        v = m.solve_shifted(1.0, t / 20, v)
    v -= m.integrate(v) / m.volume
    return v / np.max(np.abs(v))


def initial_path(m: DiscreteManifold, images: int, amplitude=0.5, noise=0.1, seed=0,
                 direction=None) -> Path:
    """``u_t = t + A (1 - t^2) phi`` truncated to [-1, 1], ``t`` in [-1, 1].

    ``phi`` is the lowest Laplace mode plus a little band-limited noise; the
    perturbation breaks the symmetry of the straight path through the
    constants, which would otherwise keep the string on constant fields.
    """
    rng = np.random.default_rng(seed)
    phi = lowest_mode(m) if direction is None else np.asarray(direction, float)
    if noise:
        phi = phi + noise * band_limited_noise(m, rng)
    phi = phi / np.max(np.abs(phi))
    out = []
    for t in np.linspace(-1.0, 1.0, images):
        v = np.clip(t + amplitude * (1 - t * t) * phi, -1.0, 1.0)
        out.append(ScalarField(m, v))
    out[0] = ScalarField.constant(m, -1.0)
    out[-1] = ScalarField.constant(m, 1.0)
    return Path(out)


def _h1_dist(m, a, b):
    d = a - b
    return math.sqrt(max(m.integrate(d * d) + m.dirichlet(d), 0.0))


def _reparametrize(m, U):
    """Redistribute images uniformly in H^1 arc length (linear interpolation)."""
    seg = np.array([_h1_dist(m, U[i], U[i + 1]) for i in range(len(U) - 1)])
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] <= 0:
        return U
    target = np.linspace(0.0, s[-1], len(U))
    out = [U[0]]
    j = 0
    for t in target[1:-1]:
        while s[j + 1] < t:
            j += 1
        w = (t - s[j]) / max(seg[j], 1e-300)
        out.append((1 - w) * U[j] + w * U[j + 1])
    out.append(U[-1])
    return out


def _flow_images(m, U, p, eps, dt, S):
    a = 1.0 + S * dt / eps ** 2
    out = [U[0]]
    for v in U[1:-1]:
        v = np.clip(v, -1.0, 1.0)
        out.append(m.solve_shifted(a, dt, a * v - (dt / eps ** 2) * p.dW(v)))
    out.append(U[-1])
    return out


def _climb(m, U, i, p, eps, ctl, max_iter):
    """Climbing-image iteration on image ``i``: ascend along the string tangent."""
    dt = ctl.dt * eps ** 2
    a = 1.0 + ctl.stabilization * dt / eps ** 2
    v = U[i].copy()
    res = np.inf
    for it in range(max_iter):
        g = gradient_values(m, v, p, eps)
        res = math.sqrt(m.integrate(g * g))
        if res <= ctl.climb_tol:
            break
        tau = U[i + 1] - U[i - 1]
        tau = tau / math.sqrt(m.integrate(tau * tau))
        # explicit reversal of the tangential component of the (eps-scaled) force
        push = 2.0 * m.integrate(g * tau) * tau / eps
        rhs = a * v - (dt / eps ** 2) * p.dW(v) + dt * push
        v = m.solve_shifted(a, dt, rhs)
    return v, res, it


def mountain_pass(m: DiscreteManifold, p: Potential, eps: float, path_init: Path | None = None,
                  controls: MountainPassControls = MountainPassControls()) -> MinMaxReport:
    """Mountain-pass level and critical point between the constants -1 and +1."""
    t0 = time.perf_counter()
    if not eps > 0:
        raise DomainError("eps must be positive")
    if path_init is None:
        path_init = initial_path(m, controls.images, controls.perturbation, controls.noise,
                                 controls.seed)
    U = [s.values.copy() for s in path_init.samples]
    if len(U) != controls.images:
        U = _resample(m, U, controls.images)
    dt = controls.dt * eps ** 2
    history = []
    E = np.array([energy_values(m, v, p, eps) for v in U])
    prev = np.inf
    for it in range(controls.max_iter):
        U = _flow_images(m, U, p, eps, dt, controls.stabilization)
        U = _reparametrize(m, U)
        if it % 10 == 0 or it == controls.max_iter - 1:
            E = np.array([energy_values(m, v, p, eps) for v in U])
            emax = float(E.max())
            history.append((it, emax))
            if abs(prev - emax) <= controls.string_tol * max(1.0, abs(emax)):
                break
            prev = emax
    E = np.array([energy_values(m, v, p, eps) for v in U])
    endpoints = max(E[0], E[-1])
    if E.max() <= endpoints + 1e-9:
        raise DegeneratePathError("energy along the path does not exceed the endpoints")
    i = int(np.argmax(E[1:-1])) + 1
    v, res, _ = _climb(m, U, i, p, eps, controls, controls.max_iter)
    U[i] = v
    try:
        cp = newton_refine(ScalarField(m, v), p, eps, tol=controls.newton_tol,
                           basin=controls.newton_basin)
    except NonConvergenceError as exc:
        best = exc.best if exc.residual < res else ScalarField(m, v)
        log.warning("Newton refinement stopped (%s); returning the best iterate", exc)
        cp = make_critical_point(best, p, eps)
    except NumericalError as exc:
        log.warning("Newton refinement failed (%s); returning the climbing image", exc)
        cp = make_critical_point(ScalarField(m, v), p, eps)
    U[i] = cp.field.values
    samples = [ScalarField(m, u) for u in U]
    samples[0] = ScalarField.constant(m, -1.0)
    samples[-1] = ScalarField.constant(m, 1.0)
    path = Path(samples)
    level = max(float(np.max(path.energies(p, eps))), cp.energy)
    return MinMaxReport(level, 1, eps, cp, path=path, history=history,
                        wall_time=time.perf_counter() - t0)


def _resample(m, U, n):
    s = np.linspace(0, 1, len(U))
    t = np.linspace(0, 1, n)
    out = []
    for x in t:
        j = min(int(np.searchsorted(s, x, side="right")) - 1, len(U) - 2)
        w = (x - s[j]) / (s[j + 1] - s[j])
        out.append((1 - w) * U[j] + w * U[j + 1])
    return out


def mountain_pass_continuation(m, p, epsilons, controls=MountainPassControls()):
    """Mountain passes for decreasing ``eps``, each warm-started from the previous path."""
    reports, path = [], None
    for eps in epsilons:
        rep = mountain_pass(m, p, eps, path, controls)
        reports.append(rep)
        path = rep.path
    return reports


# -- least positive energy ------------------------------------------------------

def random_seed_field(m, rng, amplitude=0.9):
    """Band-limited random field with ``|u| <= amplitude``."""
    return ScalarField(m, amplitude * band_limited_noise(m, rng))


def least_positive_energy(m: DiscreteManifold, p: Potential, eps: float, seeds: int = 20,
                          flow: FlowParams | None = None, rng_seed: int = 0,
                          include_mountain_pass: bool = True,
                          mp_controls: MountainPassControls = MountainPassControls(),
                          energy_floor: float = 1e-6) -> CriticalPoint:
    """Lowest-energy nonconstant critical point among seeded flows and the mountain pass.

    Critical points with energy at most ``energy_floor`` count as the
    minima.  Returns the ``gamma``-constant point when no nonconstant
    solution exists (e.g. for ``eps`` above the Cheeger threshold).
    """
    if seeds < 1:
        raise DomainError("seeds must be at least 1")
    found = seeded_solutions(m, p, eps, seeds, flow, rng_seed)
    nonconst = [c for c in found if c.classification == "nonconstant"]
    if include_mountain_pass:
        try:
            rep = mountain_pass(m, p, eps, controls=mp_controls)
            if rep.critical_point.classification == "nonconstant":
                nonconst.append(rep.critical_point)
        except (NumericalError, DegeneratePathError) as exc:
            log.info("mountain pass failed: %s", exc)
    nonconst = [c for c in nonconst if c.energy > energy_floor]
    if nonconst:
        return min(nonconst, key=lambda c: c.energy)
    return make_critical_point(ScalarField.constant(m, p.gamma), p, eps)


def seeded_solutions(m, p, eps, seeds, flow=None, rng_seed=0, refine=True):
    """Flow ``seeds`` band-limited random fields to critical points.

    Flows that stall near a critical point are polished by Newton when within
    its basin; failures are skipped.
    """
    if flow is None:
        flow = FlowParams(dt=4.0 * eps ** 2, stabilization=p.max_abs_w2,
                          max_steps=4000, residual_tol=1e-8)
    ss = np.random.SeedSequence(rng_seed)
    out = []
    for child in ss.spawn(seeds):
        rng = np.random.Generator(np.random.Philox(child))
        u0 = random_seed_field(m, rng)
        try:
            out.append(flow_to_critical(u0, p, eps, flow))
        except NonConvergenceError as exc:
            if not refine:
                continue
            try:
                out.append(newton_refine(exc.best, p, eps, basin=1e-2))
            except NumericalError:
                log.info("seed %s did not converge", child.spawn_key)
    return out


# -- thresholds -----------------------------------------------------------------

def cheeger_constant_C(p: Potential, samples: int = 20001) -> float:
    """``C = max_s -W'(s) / (s - gamma)`` over [-1, 1] (removable point at gamma)."""
    s = np.linspace(-1.0, 1.0, samples)
    s = s[np.abs(s - p.gamma) > 1e-6]
    vals = -p.dW(s) / (s - p.gamma)
    return float(max(np.max(vals), -float(p.d2W(p.gamma))))


def cheeger_threshold(m: DiscreteManifold, p: Potential) -> float:
    """``eps_0 = 2 sqrt(C) / h(M)``: above it only constant solutions exist."""
    h = analytic_facts(m).cheeger
    return 2.0 * math.sqrt(cheeger_constant_C(p)) / h


def trivial_level_constant(p: Potential, samples: int = 20001) -> float:
    """``C = max_s (W(gamma) - W(s)) / (s - gamma)^2`` over [-1, 1]."""
    s = np.linspace(-1.0, 1.0, samples)
    s = s[np.abs(s - p.gamma) > 1e-6]
    vals = (p.w0 - p.W(s)) / (s - p.gamma) ** 2
    return float(max(np.max(vals), -0.5 * float(p.d2W(p.gamma))))


def trivial_level_threshold(m: DiscreteManifold, p: Potential, eps: float,
                            numeric: bool = False) -> int:
    """Smallest ``p`` with ``lambda_{p+1} >= 2 C / eps^2`` (eigenvalues counted from ``lambda_1 = 0``).

    For larger parameter counts the odd families exceed the level of the
    unstable constant.  ``numeric`` uses the discrete Laplace spectrum.
    """
    target = 2.0 * trivial_level_constant(p) / eps ** 2
    count = 16
    while True:
        lam = laplace_spectrum(m, min(count, m.n_nodes - 2)) if numeric \
            else laplace_eigenvalues(m, count)
        above = np.flatnonzero(lam >= target)
        if above.size:
            return int(above[0])
        if count >= m.n_nodes - 2:
            raise NumericalError("threshold beyond the resolved spectrum")
        count *= 2


# -- multiparameter levels --------------------------------------------------------

@dataclass(frozen=True)
class OptControls:
    """Sampling and local-maximization budget for :func:`multiparameter_estimate`."""

    samples: int = 256
    local_starts: int = 4
    local_maxfev: int = 200
    seed: int = 0


def _sphere_points(n, dim, seed):
    sob = qmc.Sobol(dim, scramble=True, seed=seed).random(n)
    z = norm.ppf(np.clip(sob, 1e-12, 1 - 1e-12))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def multiparameter_estimate(m: DiscreteManifold, p: Potential, eps: float, nparam: int,
                            family: SweepoutFamily, controls: OptControls = OptControls(),
                            nested_starts=None) -> MinMaxReport:
    """Estimate ``sup_a E(family(a))`` over ``a in S^p`` and the level ``c_eps(p)``.

    Low-discrepancy samples of the sphere, structured starts supplied by the
    family and ``nested_starts`` (maximizers for smaller ``p``, padded with
    zeros) are evaluated; the best few are improved by Powell's method.
    """
    t0 = time.perf_counter()
    if family.manifold is not m and not family.manifold.same_as(m):
        raise DomainError("family lives on another manifold")
    if family.max_parameters() is not None and nparam > family.max_parameters():
        raise DomainError(f"family supports at most {family.max_parameters()} parameters")
    rng = np.random.default_rng(controls.seed)
    check_oddness(family, p, eps, nparam, rng)
    dim = nparam + 1

    def value(a):
        a = np.asarray(a, float)
        a = a / np.linalg.norm(a)
        return energy_values(m, family.field(a, p, eps, nparam).values, p, eps)

    cands = list(_sphere_points(controls.samples, dim, controls.seed))
    cands += [np.asarray(a, float) for a in family.structured_starts(nparam)]
    for a in nested_starts or []:
        a = np.asarray(a, float)
        pad = np.zeros(dim)
        pad[: len(a)] = a
        cands.append(pad)
    vals = np.array([value(a) for a in cands])
    order = np.argsort(vals)[::-1]
    best_val, best_a = float(vals[order[0]]), cands[order[0]] / np.linalg.norm(cands[order[0]])
    for idx in order[: controls.local_starts]:
        res = minimize(lambda a: -value(a) if np.linalg.norm(a) > 1e-12 else 0.0,
                       cands[idx], method="Powell",
                       options={"maxfev": controls.local_maxfev, "xtol": 1e-4, "ftol": 1e-10})
        if -res.fun > best_val:
            best_val, best_a = float(-res.fun), res.x / np.linalg.norm(res.x)
    mass = family.certified_mass_bound(nparam)
    bound = None if mass is None else 2.0 * sigma_constant(p) * mass
    e_gamma = gamma_energy(m, p, eps)
    return MinMaxReport(min(best_val, e_gamma), nparam, eps, certified=mass is not None,
                        family_max=best_val, certified_bound=bound, argmax=best_a,
                        wall_time=time.perf_counter() - t0)


def multiparameter_sweep(m, p, eps, nparams, family, controls=OptControls()):
    """Estimates for increasing ``p``; maximizers are carried over when the family is nested."""
    reports, starts = [], []
    for k in sorted(nparams):
        rep = multiparameter_estimate(m, p, eps, k, family, controls,
                                      nested_starts=starts if family.nested else None)
        if family.nested and reports and rep.family_max < reports[-1].family_max:
            raise ContractError("nested family levels decreased")
        reports.append(rep)
        starts = starts + [rep.argmax]
    return reports
