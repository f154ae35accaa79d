"""Double-well potentials and the one-dimensional heteroclinic profile.

Two kinds are supported: the quartic ``c (1 - s^2)^2 / 4`` with closed forms
for everything, and a potential tabulated in a two-column CSV file which is
interpolated by a cubic spline.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline

from .errors import DomainError, FormatError, NumericalError

QUARTIC = "quartic-standard"
TABULATED = "user-tabulated"

# |psi| reaches 1 - PROFILE_CUTOFF at the ends of the integration window
PROFILE_CUTOFF = 1e-9


@dataclass(frozen=True, eq=False)
class Potential:
    """A double-well potential ``W`` with wells at -1 and +1.

    Parameters
    ----------
    kind : str
        ``"quartic-standard"`` or ``"user-tabulated"``.
    scale : float
        Multiplier of the quartic, ``W = scale * (1 - s^2)^2 / 4``.
    table : tuple of arrays, optional
        Abscissae and values for the tabulated kind.
    validate : bool
        Check the double-well hypotheses on construction.
    """

    kind: str = QUARTIC
    scale: float = 1.0
    table: tuple | None = None
    validate: bool = True
    gamma: float = field(init=False)
    w0: float = field(init=False)
    w2_at_minima: tuple = field(init=False)
    _spline: object = field(init=False, repr=False)

    def __post_init__(self):
        if self.kind == QUARTIC:
            if not self.scale > 0:
                raise DomainError("quartic scale must be positive")
            set_ = object.__setattr__
            set_(self, "_spline", None)
            set_(self, "gamma", 0.0)
            set_(self, "w0", self.scale / 4.0)
            set_(self, "w2_at_minima", (2.0 * self.scale, 2.0 * self.scale))
            return
        if self.kind != TABULATED:
            raise DomainError(f"unknown potential kind {self.kind!r}")
        if self.table is None:
            raise DomainError("tabulated potential needs a table")
        s, w = (np.asarray(a, dtype=float) for a in self.table)
        if s.ndim != 1 or s.shape != w.shape or s.size < 4:
            raise FormatError("table needs two equal columns of at least 4 rows")
        if np.any(np.diff(s) <= 0):
            raise FormatError("table abscissae must be strictly increasing")
        if s[0] > -1.0 or s[-1] < 1.0:
            raise DomainError("table must cover [-1, 1]")
        spline = CubicSpline(s, w)
        object.__setattr__(self, "_spline", spline)
        gamma = self._find_gamma(spline)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "w0", float(spline(gamma)))
        d2 = spline.derivative(2)
        object.__setattr__(self, "w2_at_minima", (float(d2(-1.0)), float(d2(1.0))))
        if self.validate:
            self._check_hypotheses()

    # -- construction helpers -------------------------------------------------

    @classmethod
    def quartic(cls, scale=1.0):
        return cls(QUARTIC, scale=float(scale))

    @classmethod
    def from_table(cls, s, w, validate=True):
        return cls(TABULATED, table=(np.asarray(s, float), np.asarray(w, float)),
                   validate=validate)

    @staticmethod
    def _find_gamma(spline):
        roots = spline.derivative().roots(extrapolate=False)
        roots = roots[(roots > -1.0 + 1e-9) & (roots < 1.0 - 1e-9)]
        maxima = [r for r in roots if spline.derivative(2)(r) < 0]
        if not maxima:
            # degenerate tables (e.g. W = 0) have no interior maximum
            return 0.0
        return float(max(maxima, key=lambda r: spline(r)))

    def _check_hypotheses(self, tol=1e-6):
        s = np.linspace(-1.0, 1.0, 10_001)
        w = self.W(s)
        scale = max(float(np.max(np.abs(w))), 1e-300)
        problems = []
        if np.min(w) < -tol * scale:
            problems.append("W is negative inside [-1, 1]")
        if abs(self.W(-1.0)) > tol * scale or abs(self.W(1.0)) > tol * scale:
            problems.append("W(+-1) != 0")
        if abs(self.dW(-1.0)) > tol * scale or abs(self.dW(1.0)) > tol * scale:
            problems.append("W'(+-1) != 0")
        if min(self.w2_at_minima) <= 0:
            problems.append("W''(+-1) must be positive")
        dw = self.dW(s[1:-1])
        changes = int(np.count_nonzero(np.diff(np.sign(dw[np.abs(dw) > tol * scale]))))
        if changes != 1:
            problems.append("W must have exactly one interior critical point")
        if problems:
            raise DomainError("; ".join(problems))

    # -- evaluation -----------------------------------------------------------

    def _table_domain(self, s):
        lo, hi = self.table[0][0], self.table[0][-1]
        if np.any(s < lo) or np.any(s > hi):
            raise DomainError(f"argument outside tabulated range [{lo}, {hi}]")

    def W(self, s):
        s = np.asarray(s, dtype=float)
        if self._spline is None:
            return 0.25 * self.scale * (1.0 - s * s) ** 2
        self._table_domain(s)
        return self._spline(s)

    def dW(self, s):
        s = np.asarray(s, dtype=float)
        if self._spline is None:
            return self.scale * (s * s * s - s)
        self._table_domain(s)
        return self._spline(s, 1)

    def d2W(self, s):
        s = np.asarray(s, dtype=float)
        if self._spline is None:
            return self.scale * (3.0 * s * s - 1.0)
        self._table_domain(s)
        return self._spline(s, 2)

    @property
    def is_even(self):
        s = np.linspace(0.0, 1.0, 2001)
        w = self.W(s)
        return bool(np.allclose(w, self.W(-s), rtol=1e-8, atol=1e-12 * max(1.0, np.max(w))))

    @property
    def max_abs_w2(self):
        """Largest ``|W''|`` on [-1, 1]; sets the explicit time-step bound."""
        if self._spline is None:
            return 2.0 * self.scale
        return float(np.max(np.abs(self.d2W(np.linspace(-1.0, 1.0, 4001)))))


def eval_potential(p: Potential, s):
    """Return ``(W, W', W'')`` at ``s``."""
    return p.W(s), p.dW(s), p.d2W(s)


def load_potential_csv(path, validate=True) -> Potential:
    """Read a two-column CSV ``s, W(s)`` with a header row."""
    rows = []
    try:
        with open(Path(path), newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            for line in reader:
                if not line or not "".join(line).strip():
                    continue
                if len(line) != 2:
                    raise FormatError(f"expected two columns, got {line!r}")
                rows.append((float(line[0]), float(line[1])))
    except (StopIteration, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"cannot parse potential table {path}: {exc}") from exc
    if not rows:
        raise FormatError("potential table is empty")
    s, w = np.array(rows).T
    return Potential.from_table(s, w, validate=validate)


def sigma_constant(p: Potential, tol=1e-12) -> float:
    """``int_{-1}^{1} sqrt(W/2) ds``, the energy constant of one transition."""
    def integrand(s):
        return np.sqrt(max(float(p.W(s)), 0.0) / 2.0)

    points = None if p.gamma in (-1.0, 1.0) else [p.gamma]
    val, err = integrate.quad(integrand, -1.0, 1.0, epsabs=tol, epsrel=tol,
                              limit=400, points=points)
    if err > 1e3 * tol:
        raise NumericalError(f"sigma quadrature error estimate {err:.2e}")
    return float(val)


@dataclass(frozen=True, eq=False)
class Profile1D:
    """Monotone solution of ``-eps psi'' + W'(psi)/eps = 0`` through ``gamma`` at 0.

    For the quartic the closed form ``tanh`` is used; otherwise the
    first-order equipartition equation ``psi' = sqrt(2 W(psi)) / eps`` is
    integrated in both directions.
    """

    potential: Potential
    eps: float
    half_width: float
    _forward: object = field(default=None, repr=False)
    _backward: object = field(default=None, repr=False)

    @property
    def _rate(self):
        return np.sqrt(self.potential.scale) / (self.eps * np.sqrt(2.0))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.potential.kind == QUARTIC:
            return np.tanh(self._rate * t)
        out = np.empty_like(t)
        pos = t >= 0
        tp = np.minimum(t[pos], self.half_width)
        tn = np.maximum(t[~pos], -self.half_width)
        out[pos] = self._forward.sol(tp)[0] if tp.size else tp
        out[~pos] = self._backward.sol(-tn)[0] if tn.size else tn
        return np.clip(out, -1.0, 1.0)

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        if self.potential.kind == QUARTIC:
            return self._rate / np.cosh(self._rate * t) ** 2
        w = np.maximum(self.potential.W(self(t)), 0.0)
        return np.sqrt(2.0 * w) / self.eps

    def second_derivative(self, t):
        t = np.asarray(t, dtype=float)
        if self.potential.kind == QUARTIC:
            r = self._rate
            th = np.tanh(r * t)
            return -2.0 * r * r * th * (1.0 - th * th)
        return self.potential.dW(self(t)) / self.eps ** 2


def heteroclinic(p: Potential, eps: float) -> Profile1D:
    """The heteroclinic profile at scale ``eps``."""
    if not eps > 0:
        raise DomainError("eps must be positive")
    target = 1.0 - PROFILE_CUTOFF
    if p.kind == QUARTIC:
        rate = np.sqrt(p.scale) / (eps * np.sqrt(2.0))
        return Profile1D(p, eps, float(np.arctanh(target) / rate))

    def shoot(direction):
        def rhs(t, y):
            # Runge-Kutta stages may step just past a well, where a table ends
            s = min(max(float(y[0]), -1.0), 1.0)
            return [direction * np.sqrt(2.0 * max(float(p.W(s)), 0.0)) / eps]

        def reached(t, y):
            return abs(y[0]) - target
        reached.terminal = True
        # tails approach the wells exponentially with rate sqrt(W''(+-1))/eps
        rate = np.sqrt(min(p.w2_at_minima)) / eps if min(p.w2_at_minima) > 0 else 1.0 / eps
        t_max = 80.0 / rate
        sol = integrate.solve_ivp(rhs, (0.0, t_max), [p.gamma], method="DOP853",
                                  rtol=1e-12, atol=1e-14, dense_output=True,
                                  events=reached)
        if not sol.success:
            raise NumericalError(f"heteroclinic shooting failed: {sol.message}")
        if abs(sol.y[0, -1]) < 1.0 - 1e-6:
            raise NumericalError("heteroclinic shooting did not approach a well")
        return sol

    fwd, bwd = shoot(+1.0), shoot(-1.0)
    half = float(min(fwd.t[-1], bwd.t[-1]))
    return Profile1D(p, eps, half, fwd, bwd)


def transition_energy(p: Potential, eps: float, tol=1e-12) -> float:
    """``int (eps psi'^2/2 + W(psi)/eps) dt`` over the profile; equals ``2 sigma``."""
    prof = heteroclinic(p, eps)

    def density(t):
        d = float(prof.derivative(t))
        return 0.5 * eps * d * d + float(p.W(prof(t))) / eps

    T = prof.half_width
    total = 0.0
    for a, b in ((-T, 0.0), (0.0, T)):
        val, err = integrate.quad(density, a, b, epsabs=tol, epsrel=tol, limit=400)
        if err > 1e4 * tol:
            raise NumericalError(f"transition energy quadrature error {err:.2e}")
        total += val
    return float(total)
