"""Parabolic Allen-Cahn flow, critical-point solvers and the comparison check.

The flow is ``du/dt = Laplacian(u) - W'(u)/eps^2``.  The semi-implicit step
solves ``(a I - dt Laplacian) u+ = a u - (dt/eps^2) W'(u)`` with
``a = 1 + S dt/eps^2``; ``S`` is an optional stabilization constant.  With
``S = 0`` the step is energy decreasing and order preserving for
``dt <= eps^2 / max|W''|``; with ``S >= max|W''|`` it is so for every ``dt``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, eigsh, minres

from .energy import ScalarField, energy_values, gradient_values
from .errors import DomainError, NonConvergenceError, NumericalError
from .potential import Potential

log = logging.getLogger(__name__)

SEMI_IMPLICIT, EXPLICIT = "semi-implicit", "explicit"
CONSTANT_SPREAD = 1e-8


@dataclass(frozen=True)
class FlowParams:
    """Time stepping controls.

    Parameters
    ----------
    dt : float
        Time step.
    max_steps : int
        Step budget for :func:`flow_to_critical`.
    residual_tol : float
        Stop when the Euler-Lagrange residual drops below this.
    scheme : {"semi-implicit", "explicit"}
    stabilization : float
        The constant ``S`` above; 0 gives the plain semi-implicit scheme.
    check_every : int
        Residual evaluation interval.
    """

    dt: float
    max_steps: int = 10_000
    residual_tol: float = 1e-8
    scheme: str = SEMI_IMPLICIT
    stabilization: float = 0.0
    check_every: int = 5

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError("dt must be positive")
        if self.scheme not in (SEMI_IMPLICIT, EXPLICIT):
            raise DomainError(f"unknown scheme {self.scheme!r}")
        if self.stabilization < 0:
            raise DomainError("stabilization must be non-negative")


def max_stable_dt(m, p: Potential, eps, scheme=SEMI_IMPLICIT, stabilization=0.0):
    """Largest time step for which the step is monotone and energy decreasing."""
    w2 = p.max_abs_w2
    if scheme == EXPLICIT:
        diag = float(np.max(-m.laplacian.diagonal()))
        return 1.0 / (diag + w2 / eps ** 2)
    if stabilization >= w2:
        return np.inf
    return eps ** 2 / (w2 - stabilization)


def _step_values(m, v, p, eps, params):
    dt = params.dt
    if params.scheme == EXPLICIT:
        return v + dt * (m.apply_laplacian(v) - p.dW(v) / eps ** 2)
    a = 1.0 + params.stabilization * dt / eps ** 2
    rhs = a * v - (dt / eps ** 2) * p.dW(v)
    return m.solve_shifted(a, dt, rhs)


def flow_step(u: ScalarField, p: Potential, eps: float, params: FlowParams) -> ScalarField:
    """One time step of the flow applied to the truncation of ``u``."""
    if not eps > 0:
        raise DomainError("eps must be positive")
    bound = max_stable_dt(u.manifold, p, eps, params.scheme, params.stabilization)
    if params.dt > bound * (1 + 1e-12):
        raise DomainError(f"dt = {params.dt:.3g} exceeds the stability bound {bound:.3g}")
    v = np.clip(u.values, -1.0, 1.0)
    return u.with_values(_step_values(u.manifold, v, p, eps, params))


CLASSES = ("minus-one", "gamma-constant", "plus-one", "nonconstant")


@dataclass
class CriticalPoint:
    """A numerically converged critical point with its diagnostics."""

    field: ScalarField
    epsilon: float
    energy: float
    residual: float
    classification: str
    history: list = field(default_factory=list)


def classify(u: ScalarField, p: Potential) -> str:
    v = u.values
    if np.ptp(v) < CONSTANT_SPREAD:
        targets = np.array([-1.0, p.gamma, 1.0])
        return CLASSES[int(np.argmin(np.abs(targets - np.mean(v))))]
    return "nonconstant"


def _residual(m, v, p, eps):
    g = gradient_values(m, v, p, eps)
    return float(np.sqrt(m.integrate(g * g)))


def make_critical_point(u, p, eps, history=None) -> CriticalPoint:
    m = u.manifold
    return CriticalPoint(u, eps, energy_values(m, u.values, p, eps),
                         _residual(m, u.values, p, eps), classify(u, p), history or [])


def flow_to_critical(u: ScalarField, p: Potential, eps: float, params: FlowParams,
                     history_writer=None) -> CriticalPoint:
    """Run the flow until the residual is below ``params.residual_tol``.

    ``history_writer`` (optional) receives ``(step, energy, residual)`` at
    every check.  Raises :class:`NonConvergenceError` carrying the last
    iterate when the budget runs out.
    """
    flow_step(u, p, eps, FlowParams(params.dt, scheme=params.scheme,
                                    stabilization=params.stabilization))  # validates dt
    m = u.manifold
    v = np.clip(u.values, -1.0, 1.0)
    history = []
    res = np.inf
    for step in range(params.max_steps + 1):
        if step % params.check_every == 0 or step == params.max_steps:
            res = _residual(m, v, p, eps)
            rec = (step, energy_values(m, v, p, eps), res)
            history.append(rec)
            if history_writer is not None:
                history_writer(*rec)
            if res <= params.residual_tol:
                return CriticalPoint(u.with_values(v), eps, rec[1], res,
                                     classify(u.with_values(v), p), history)
        if step == params.max_steps:
            break
        v = _step_values(m, np.clip(v, -1.0, 1.0), p, eps, params)
        if not np.all(np.isfinite(v)):
            raise NumericalError("flow produced non-finite values")
    raise NonConvergenceError(f"flow did not reach residual {params.residual_tol:g} "
                              f"in {params.max_steps} steps (residual {res:.3e})",
                              best=u.with_values(v), residual=res, steps=params.max_steps)


def _translation_basis(m, v, p, eps, rq_tol=1e-2):
    """Spectral derivatives of ``v`` that are near-null Hessian directions.

    On tori the derivative along each axis is a translation mode when ``v``
    has interfaces; for nearly constant ``v`` it is an arbitrary low mode
    with a large Rayleigh quotient and must not be deflated.
    """
    if not m.is_torus:
        return None
    cols = []
    d2 = p.d2W(v) / eps
    for d in m.spectral_derivatives(v):
        nrm = m.integrate(d * d)
        if nrm <= 1e-24:
            continue
        rq = m.integrate(d * (-eps * m.apply_laplacian(d) + d2 * d)) / nrm
        if abs(rq) <= rq_tol / eps:
            cols.append(d)
    return np.stack(cols, axis=1) if cols else None


def _orthonormal(m, Q):
    # weighted Gram-Schmidt via QR of the sqrt(w)-scaled columns
    sw = np.sqrt(m.weights)[:, None]
    q, r = np.linalg.qr(sw * Q)
    keep = np.abs(np.diag(r)) > 1e-8 * max(1.0, float(np.abs(r).max()))
    return q[:, keep] / sw


def near_null_modes(m, v, p: Potential, eps: float, null_tol: float, k: int = 8,
                    with_values=False):
    """Hessian eigenvectors at ``v`` with ``|mu| <= null_tol`` (weighted-orthonormal)."""
    A = (eps * m.stiffness + sp.diags(m.weights * p.d2W(v) / eps)).tocsc()
    vals, vecs = eigsh(A, k=min(k, m.n_nodes - 2), M=sp.diags(m.weights).tocsc(),
                       sigma=-1e-6, which="LM", tol=0)
    keep = np.abs(vals) <= null_tol
    return (vals[keep], vecs[:, keep]) if with_values else vecs[:, keep]


def _complement_newton(m, v, p, eps, Q, M, tol, iters=12):
    """Newton on the weighted complement of ``Q`` (and of the translations).

    The coordinates of ``v`` along ``Q`` stay fixed; returns the values and
    the norm of the projected residual.
    """
    w = m.weights
    n = m.n_nodes
    pres = np.inf
    v_prev = v
    for _ in range(iters):
        g = gradient_values(m, v, p, eps)
        cols = [Q] + [T for T in (_translation_basis(m, v, p, eps),) if T is not None]
        B = _orthonormal(m, np.hstack(cols))
        WB = w[:, None] * B
        gp = g - B @ (WB.T @ g)
        new = float(np.sqrt(m.integrate(gp * gp)))
        if new > pres:
            v = v_prev
            break
        pres = new
        if pres <= tol:
            break
        d2 = p.d2W(v) / eps

        def hess(x, d2=d2, WB=WB):
            return w * (-eps * m.apply_laplacian(x) + d2 * x) + (WB @ (WB.T @ x)) / eps

        delta, _ = minres(LinearOperator((n, n), matvec=hess, dtype=float), -w * gp, M=M,
                          rtol=1e-12, maxiter=3000)
        delta = delta - Q @ ((w[:, None] * Q).T @ delta)
        v_prev = v
        v = v + delta
    return v, pres


def _reduced_solve(m, v, p, eps, null_tol, M, tol, max_iter=25):
    """Solve along the slowest near-null mode by a Lyapunov-Schmidt reduction.

    Slowly interacting interfaces leave the residual along an eigenvector
    ``q`` with a tiny eigenvalue.  A plain Newton step there is swamped by
    the quadratic term, so instead the complement equation is solved at a
    fixed coordinate ``t`` along ``q`` and the scalar equation
    ``phi(t) = <q, g(v(t))> = 0`` is solved by the secant method.  Returns
    the best values and full residual found.
    """
    w = m.weights
    vals, Q = near_null_modes(m, v, p, eps, null_tol, with_values=True)
    g = gradient_values(m, v, p, eps)
    proj = Q.T @ (w * g)
    live = np.abs(vals) > 1e-14 * max(1.0, p.max_abs_w2 / eps)
    if not np.any(live):
        return v, _residual(m, v, p, eps)
    j = int(np.argmax(np.where(live, np.abs(proj), -1.0)))
    q = Q[:, j]
    Qc = Q[:, [j]]

    def solve_at(base, t):
        x, _ = _complement_newton(m, base + t * q, p, eps, Qc, M, 0.1 * tol)
        gx = gradient_values(m, x, p, eps)
        return x, float(q @ (w * gx)), _residual(m, x, p, eps)

    best_v, best_res = v, _residual(m, v, p, eps)
    x0, f0, r0 = solve_at(v, 0.0)
    if r0 < best_res:
        best_v, best_res = x0, r0
    # first secant point: a short step in the linearized direction
    h = -f0 / vals[j]
    h = float(np.sign(h) * min(abs(h), 1e-2 * np.sqrt(m.volume))) if h else 1e-6
    t0, t1 = 0.0, h
    x1, f1, r1 = solve_at(x0, t1)
    for _ in range(max_iter):
        if r1 < best_res:
            best_v, best_res = x1, r1
        if best_res <= tol or f1 == f0:
            break
        t2 = t1 - f1 * (t1 - t0) / (f1 - f0)
        # the complement solution at t1 is the warm start for t2
        x2, f2, r2 = solve_at(x1, t2 - t1)
        t0, f0, x0 = t1, f1, x1
        t1, f1, x1, r1 = t2, f2, x2, r2
    return best_v, best_res


def newton_refine(u: ScalarField, p: Potential, eps: float, tol=1e-10, max_iter=30,
                  basin=1e-2, linear_rtol=1e-12, fallback: FlowParams | None = None,
                  nonmonotone_cap=1.0, max_nonmonotone=10, null_tol=1e-4) -> CriticalPoint:
    """Damped Newton iteration on the Euler-Lagrange equation.

    The Hessian system is solved by preconditioned MINRES on the symmetric
    (weighted) form; the preconditioner is the positive operator
    ``(-eps Laplacian + c/eps)`` with ``c = max|W''|``.  Steps are damped by
    backtracking on the residual norm, except that up to ``max_nonmonotone``
    full steps are accepted while the residual stays below
    ``nonmonotone_cap``: interfaces interacting through exponentially small
    forces make good Newton steps overshoot in the residual before
    converging.

    Nearly singular directions are deflated: on tori the translation modes
    always, and after the first stalled step every Hessian eigenvector with
    ``|mu| <= null_tol``.  The residual component along deflated directions
    is not driven to zero by these steps; when progress stalls or turns
    linear, a reduced solve along the slowest mode (see
    :func:`_reduced_solve`) removes it.  The best iterate is returned; when it misses ``tol`` a
    :class:`NonConvergenceError` carries it.  If Newton stalls, ``fallback``
    flow parameters (if given) continue with the flow instead.
    """
    m = u.manifold
    w = m.weights
    v = u.values.copy()
    res = _residual(m, v, p, eps)
    if res > basin:
        raise NumericalError(f"initial residual {res:.3e} outside the Newton basin {basin:g}")
    c = p.max_abs_w2
    history = [(0, energy_values(m, v, p, eps), res)]
    best, best_res = v, res
    free = max_nonmonotone
    extra = None
    n = m.n_nodes
    M = LinearOperator((n, n), matvec=lambda r: m.solve_shifted(c / eps, eps, r / w),
                       dtype=float)
    it = 0
    while it < max_iter and res > tol:
        it += 1
        g = gradient_values(m, v, p, eps)
        d2 = p.d2W(v) / eps
        rhs = -w * g
        cols = [Q for Q in (_translation_basis(m, v, p, eps), extra) if Q is not None]
        WQ = None
        if cols:
            Q = _orthonormal(m, np.hstack(cols))
            WQ = w[:, None] * Q
            rhs = rhs - WQ @ (Q.T @ rhs)

        def hess(x, d2=d2, WQ=WQ):
            y = w * (-eps * m.apply_laplacian(x) + d2 * x)
            if WQ is not None:
                # shift deflated directions away from zero
                y = y + (WQ @ (WQ.T @ x)) / eps
            return y

        A = LinearOperator((n, n), matvec=hess, dtype=float)
        delta, info = minres(A, rhs, M=M, rtol=linear_rtol, maxiter=3000)
        step, new_res = 1.0, np.inf
        while step > 1e-4:
            trial = v + step * delta
            new_res = _residual(m, trial, p, eps)
            if new_res < res or (step == 1.0 and new_res < nonmonotone_cap and free > 0
                                 and extra is None):
                break
            step *= 0.5
        accepted = new_res < res
        if not accepted and step == 1.0 and new_res < nonmonotone_cap and extra is None:
            free -= 1
            accepted = True
        if accepted:
            # linear progress once deflated means the slow modes hold the residual
            slow = extra is not None and new_res > 0.5 * res
            v, res = trial, new_res
            if res < best_res:
                best, best_res = v, res
            history.append((it, energy_values(m, v, p, eps), res))
            if not slow or res <= tol:
                continue
        if extra is None:
            extra = near_null_modes(m, best, p, eps, null_tol)
            v, res = best, best_res
            log.info("Newton stalled at %.3e; deflating %d near-null modes",
                     res, extra.shape[1])
            continue
        polished, pres = _reduced_solve(m, best, p, eps, null_tol, M, tol)
        if pres < best_res:
            log.info("reduced solve along the slow mode: %.3e -> %.3e", best_res, pres)
            best, best_res = polished, pres
            v, res = best, best_res
            extra = None
            history.append((it, energy_values(m, v, p, eps), res))
            continue
        if fallback is not None:
            log.info("Newton stalled at %.3e; continuing with the flow", best_res)
            cp = flow_to_critical(u.with_values(best), p, eps, fallback)
            cp.history = history + cp.history
            return cp
        break
    v, res = best, best_res
    if res > tol:
        raise NonConvergenceError(f"Newton reached residual {res:.3e} > {tol:g}",
                                  best=u.with_values(v), residual=res, steps=it)
    out = u.with_values(v)
    return CriticalPoint(out, eps, energy_values(m, v, p, eps), res, classify(out, p), history)


def comparison_check(u: ScalarField, v: ScalarField, p: Potential, eps: float,
                     params: FlowParams, steps: int = 1) -> bool:
    """Check that ``u < v`` pointwise is preserved by ``steps`` flow steps."""
    u.manifold.check_same(v.manifold)
    if not np.all(u.values < v.values):
        raise DomainError("comparison requires u < v at every node")
    a, b = u, v
    for _ in range(steps):
        a, b = flow_step(a, p, eps, params), flow_step(b, p, eps, params)
    return bool(np.all(a.values < b.values))
