"""Second variation spectra: Morse index, nullity and Laplace checks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh

from .dynamics import CriticalPoint
from .energy import ScalarField, hessian_apply
from .errors import ContractError, NumericalError, UsageError
from .manifold import DiscreteManifold, laplace_eigenvalues
from .potential import Potential

# concrete default for the zero-mode tolerance, scaled by 1/eps
DEFAULT_ZERO_TOL = 1e-4
EIG_RESIDUAL_RTOL, EIG_RESIDUAL_ATOL = 1e-8, 1e-10
MAX_RESIDUAL = 1e-8


@dataclass
class IndexReport:
    """Counts of negative and near-zero Hessian eigenvalues.

    ``negatives`` is the Morse index ``m`` and ``negatives + near_zero`` the
    extended index ``m*``.
    """

    eigenvalues: np.ndarray
    negatives: int
    near_zero: int
    zero_tol: float
    max_residual: float

    @property
    def extended(self):
        return self.negatives + self.near_zero

    @property
    def smallest_eigenvalues(self):
        return list(self.eigenvalues)


def _hessian_pencil(u: ScalarField, p: Potential, eps: float):
    m = u.manifold
    A = eps * m.stiffness + sp.diags(m.weights * p.d2W(u.values) / eps)
    B = sp.diags(m.weights)
    return A.tocsc(), B.tocsc()


def _weighted_residuals(A, B, vals, vecs, w):
    r = A @ vecs - (B @ vecs) * vals
    # back to the L^2(weights) setting: H v - mu v with H = B^{-1} A
    r = r / w[:, None]
    norms = np.sqrt(np.sum(w[:, None] * r * r, axis=0))
    vn = np.sqrt(np.sum(w[:, None] * vecs * vecs, axis=0))
    return norms / vn


def lowest_eigenpairs(u: ScalarField, p: Potential, eps: float, k: int, sigma=None):
    """Lowest ``k`` eigenpairs of the weighted second variation.

    Shift-invert about a shift below the spectrum (``min W''/eps - 1``), which
    makes the shifted pencil positive definite.
    """
    A, B = _hessian_pencil(u, p, eps)
    n = A.shape[0]
    k = min(k, n - 2)
    if sigma is None:
        sigma = float(np.min(p.d2W(u.values))) / eps - 1.0
    vals, vecs = eigsh(A, k=k, M=B, sigma=sigma, which="LM", tol=0)
    order = np.argsort(vals)
    return vals[order], vecs[:, order], A, B


def _near_zero_refine(A, B, count):
    # shift-invert close to 0 resolves tiny eigenvalues to high absolute accuracy
    vals = eigsh(A, k=count, M=B, sigma=-1e-7, which="LM", tol=0,
                 return_eigenvectors=False)
    return np.sort(vals)


def translation_zero_tol(u: ScalarField, p: Potential, eps: float, factor=10.0):
    """Zero-mode tolerance from the discrete translation modes (tori only).

    The spectral derivative of ``u`` along each axis is an exact zero mode of
    the continuum second variation; its Rayleigh quotient on the grid measures
    how far discretization moves the translation eigenvalues from zero.  The
    tolerance is ``factor`` times the largest such quotient, floored by the
    eigensolver accuracy.
    """
    m = u.manifold
    if not m.is_torus:
        return None
    quotients = []
    for d in m.spectral_derivatives(u.values):
        nrm = m.integrate(d * d)
        if nrm < 1e-20:
            continue
        hv = hessian_apply(u, u.with_values(d), p, eps).values
        quotients.append(abs(m.integrate(hv * d)) / nrm)
    floor = 1e-12 * max(1.0, p.max_abs_w2 / eps)
    return max(factor * max(quotients, default=0.0), floor)


def morse_index(cp, p: Potential, zero_tol=None, k: int = 12, max_k: int = 200) -> IndexReport:
    """Morse index and nullity of a critical point.

    Parameters
    ----------
    cp : CriticalPoint
        Must have ``residual <= 1e-8``.
    zero_tol : float, "translation" or "fixed", optional
        Eigenvalues with ``|mu| <= zero_tol`` count as near-zero.
        ``"translation"`` derives the tolerance from the discrete translation
        modes (see :func:`translation_zero_tol`); ``"fixed"`` is
        ``1e-4 / eps``.  The default uses the translation estimate on tori,
        capped by the fixed value (the estimate is meaningless away from a
        critical point), and the fixed value elsewhere.  The fixed value is too coarse for stripe
        saddles at small ``eps``, whose separation eigenvalue is only slightly
        negative (about ``-1.4e-3`` at ``eps = 0.05``).
    k : int
        Initial number of eigenpairs; doubled until an eigenvalue above
        ``zero_tol`` is found.
    """
    if not isinstance(cp, CriticalPoint):
        raise UsageError("morse_index needs a CriticalPoint; see morse_index_field")
    if cp.residual > MAX_RESIDUAL:
        raise ContractError(f"critical point residual {cp.residual:.2e} exceeds {MAX_RESIDUAL:g}")
    u, eps = cp.field, cp.epsilon
    return _morse(u, p, eps, zero_tol, k, max_k)


def morse_index_field(u: ScalarField, p: Potential, eps: float, zero_tol=None, k=12,
                      max_k=200) -> IndexReport:
    return _morse(u, p, eps, zero_tol, k, max_k)


def _morse(u, p, eps, zero_tol, k, max_k):
    if zero_tol is None or isinstance(zero_tol, str):
        if zero_tol not in (None, "translation", "fixed"):
            raise UsageError(f"unknown zero_tol {zero_tol!r}")
        tol = translation_zero_tol(u, p, eps) if zero_tol != "fixed" else None
        zero_tol = DEFAULT_ZERO_TOL / eps if tol is None else min(tol, DEFAULT_ZERO_TOL / eps)
    while True:
        vals, vecs, A, B = lowest_eigenpairs(u, p, eps, k)
        if vals[-1] > zero_tol or k >= max_k or k >= A.shape[0] - 2:
            break
        k *= 2
    if vals[-1] <= zero_tol:
        raise NumericalError(f"no eigenvalue above zero_tol among the lowest {k}")
    w = u.manifold.weights
    resid = _weighted_residuals(A, B, vals, vecs, w)
    rel = resid / (np.abs(vals) + EIG_RESIDUAL_ATOL / EIG_RESIDUAL_RTOL)
    if np.any(resid > EIG_RESIDUAL_RTOL * np.abs(vals) + EIG_RESIDUAL_ATOL):
        raise NumericalError(f"eigen-residual check failed (max relative {rel.max():.2e})")
    near = np.abs(vals) <= max(10 * zero_tol, 1e-3 / eps)
    if np.any(near):
        # resolve small eigenvalues accurately before classifying them
        refined = _near_zero_refine(A, B, int(np.count_nonzero(near)) + 1)
        small = vals.copy()
        idx = np.flatnonzero(near)
        for i, r in zip(idx, sorted(sorted(refined, key=abs)[: len(idx)])):
            small[i] = r
        vals = np.sort(small)
    negatives = int(np.count_nonzero(vals < -zero_tol))
    near_zero = int(np.count_nonzero(np.abs(vals) <= zero_tol))
    return IndexReport(vals, negatives, near_zero, float(zero_tol), float(np.max(resid)))


def rayleigh_quotient(cp, v: ScalarField, p: Potential, eps: float | None = None) -> float:
    """``<H v, v> / <v, v>`` in L^2(weights) at a CriticalPoint or ScalarField."""
    u = cp.field if isinstance(cp, CriticalPoint) else cp
    eps = cp.epsilon if eps is None and isinstance(cp, CriticalPoint) else eps
    if eps is None:
        raise UsageError("eps is required for a bare field")
    m = v.manifold
    nrm = m.integrate(v.values ** 2)
    if nrm == 0:
        raise UsageError("rayleigh quotient of the zero field")
    hv = hessian_apply(u, v, p, eps).values
    return m.integrate(hv * v.values) / nrm


def laplace_spectrum(m: DiscreteManifold, count: int) -> np.ndarray:
    vals = eigsh(m.stiffness.tocsc(), k=count, M=sp.diags(m.weights).tocsc(), sigma=-1.0,
                 which="LM", tol=0, return_eigenvectors=False)
    return np.sort(vals)


def laplace_spectrum_check(m: DiscreteManifold, count: int) -> float:
    """Largest relative error of the discrete Laplace eigenvalues (absolute for 0)."""
    num = laplace_spectrum(m, count)
    exact = laplace_eigenvalues(m, count)
    err = np.abs(num - exact) / np.where(exact > 0, exact, 1.0)
    return float(np.max(err))
