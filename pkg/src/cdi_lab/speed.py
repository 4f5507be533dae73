"""psi, u and the speed function v.

    psi(q) = (c/2) q^2 + int (e^{-qx} - 1 + qx) x^{-2} Lambda(dx)
    u(q)   = int_q^inf dr / psi(r)
    v(t)   = u^{-1}(t)

``v`` is tabulated once per measure on a geometric q-grid (a
:class:`SpeedTable`) and inverted by cubic Hermite interpolation of
``log q`` against ``log u`` using the exact slope ``-u psi(q) / q``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import interpolate, optimize

from .errors import DomainError, RangeError, TailNotResolvedError, UnsupportedMeasureError
from .measure import DEFAULT_TOL, LambdaSpec, _gauss_legendre, nu_integrate, quadrature_rule
from .measure import truncate as _truncate

_CHUNK = 2_000_000


def phi(y):
    """(e^-y - 1 + y) / y^2, with phi(0) = 1/2."""
    y = np.asarray(y, dtype=float)
    out = np.empty_like(y)
    small = y < 1e-2
    ys = y[small]
    out[small] = 0.5 - ys / 6 + ys ** 2 / 24 - ys ** 3 / 120 + ys ** 4 / 720
    yl = y[~small]
    out[~small] = (np.expm1(-yl) + yl) / (yl * yl)
    return out


def phi1(y):
    """(1 - e^-y) / y, with value 1 at 0."""
    y = np.asarray(y, dtype=float)
    out = np.ones_like(y)
    nz = y > 0
    out[nz] = -np.expm1(-y[nz]) / y[nz]
    return out


@dataclass(frozen=True, eq=False)
class PsiEvaluator:
    """Vectorized psi for one measure.

    Calling the evaluator uses the fixed composite rule of
    :func:`cdi_lab.measure.quadrature_rule`; :func:`psi` is the adaptive,
    error-controlled route for single points.
    """

    measure: LambdaSpec
    tol: float = DEFAULT_TOL
    n_gl: int = 16

    def __post_init__(self):
        if self.measure.atom_one > 0:
            raise UnsupportedMeasureError("psi is undefined for a measure with an atom at 1")

    @property
    def atom_c(self) -> float:
        return self.measure.atom_zero

    @functools.cached_property
    def _rule(self):
        return quadrature_rule(self.measure, self.n_gl)

    def _apply(self, q, kernel):
        q = np.asarray(q, dtype=float)
        flat = q.ravel()
        x, w = self._rule
        out = np.zeros_like(flat)
        if len(x):
            step = max(1, _CHUNK // len(x))
            for i in range(0, len(flat), step):
                qs = flat[i:i + step]
                out[i:i + step] = kernel(qs[:, None], x[None, :]) @ w
        return out.reshape(q.shape)

    def __call__(self, q):
        q = np.asarray(q, dtype=float)
        if np.any(q < 0):
            raise DomainError("psi needs q >= 0")
        out = 0.5 * self.atom_c * q * q
        out = out + self._apply(q, lambda qq, xx: qq * qq * phi(qq * xx))
        return out if out.ndim else float(out)

    def derivative(self, q):
        """psi'(q) = c q + int (1 - e^{-qx}) x^{-1} Lambda(dx)."""
        q = np.asarray(q, dtype=float)
        out = self.atom_c * q + self._apply(q, lambda qq, xx: qq * phi1(qq * xx))
        return out if out.ndim else float(out)

    def exponent(self, q):
        """Local power d log psi / d log q."""
        q = np.asarray(q, dtype=float)
        return q * self.derivative(q) / self(q)


def psi(evaluator: PsiEvaluator, q: float) -> float:
    """psi(q) by adaptive quadrature (the error-controlled reference route)."""
    if q < 0:
        raise DomainError("psi needs q >= 0")
    if q == 0:
        return 0.0

    def ratio(x):
        return q * q * float(phi(np.array([q * x]))[0])
    return nu_integrate(evaluator.measure, ratio=ratio, limit=0.5 * q * q,
                        tol=evaluator.tol, rtol=1e-13)


def _log_gl_integral(func, lo, hi, n):
    """Gauss-Legendre integral of func(q) dq over [lo, hi] (arrays) in log q."""
    t, wt = _gauss_legendre(n)
    a, b = np.log(lo), np.log(hi)
    half = 0.5 * (b - a)
    s = 0.5 * (a + b)[..., None] + half[..., None] * t
    q = np.exp(s)
    return half * ((func(q) * q) @ wt)


@dataclass(frozen=True, eq=False)
class SpeedTable:
    """Tabulated u on a geometric grid, with its inverse v."""

    q_grid: np.ndarray
    u_values: np.ndarray
    q_max: float
    theta: float
    psi_max: float
    tol: float
    evaluator: PsiEvaluator = field(repr=False)
    points_per_decade: int = 64

    @property
    def q_min(self) -> float:
        return float(self.q_grid[0])

    @property
    def tail_model(self) -> dict:
        return {"theta": self.theta, "psi_at_qmax": self.psi_max}

    @functools.cached_property
    def _spline(self):
        x = np.log(self.u_values[::-1])
        y = np.log(self.q_grid[::-1])
        slope = -self.u_values * self.evaluator(self.q_grid) / self.q_grid
        spline = interpolate.CubicHermiteSpline(x, y, slope[::-1])
        probe = x[:-1, None] + np.diff(x)[:, None] * np.array([0.25, 0.5, 0.75])
        if np.any(spline.derivative()(probe) >= 0):
            return interpolate.PchipInterpolator(x, y)
        return spline

    def provenance(self) -> dict:
        return {
            "q_min": self.q_min, "q_max": self.q_max,
            "points_per_decade": self.points_per_decade, "tol": self.tol,
            "tail_theta": self.theta, "measure_id": self.evaluator.measure.measure_id,
        }

    def _tail_u(self, q):
        th = self.theta
        return self.q_max ** th * q ** (1.0 - th) / ((th - 1.0) * self.psi_max)

    def _tail_v(self, t):
        th = self.theta
        return (t * (th - 1.0) * self.psi_max / self.q_max ** th) ** (1.0 / (1.0 - th))

    def u(self, q):
        """u(q) from the table nodes plus a local Gauss-Legendre integral."""
        q = np.asarray(q, dtype=float)
        flat = np.atleast_1d(q).ravel()
        if np.any(flat < self.q_min):
            raise RangeError(f"u(q) needs q >= q_min = {self.q_min}")
        out = np.empty_like(flat)
        beyond = flat > self.q_max
        out[beyond] = self._tail_u(flat[beyond])
        inside = ~beyond
        if np.any(inside):
            qs = flat[inside]
            idx = np.clip(np.searchsorted(self.q_grid, qs, side="right"), 1,
                          len(self.q_grid) - 1)
            upper = self.q_grid[idx]
            part = _log_gl_integral(lambda r: 1.0 / self.evaluator(r), qs, upper, 16)
            out[inside] = self.u_values[idx] + part
        out = out.reshape(q.shape)
        return out if out.ndim else float(out)

    def v(self, t, extrapolate: bool = False):
        """Speed v(t); tail-model extrapolation for t < u(q_max) only on request."""
        t = np.asarray(t, dtype=float)
        flat = np.atleast_1d(t).ravel()
        if np.any(~(flat > 0)):
            raise RangeError("v(t) needs t > 0 (v(0+) is infinite)")
        u_hi = float(self.u_values[0])
        if np.any(flat > u_hi * (1 + 1e-12)):
            raise RangeError(f"t = {flat.max():g} beyond u(q_min) = {u_hi:g}; lower q_min")
        out = np.empty_like(flat)
        u_lo = float(self.u_values[-1])
        below = flat < u_lo
        if np.any(below):
            if not extrapolate:
                raise RangeError(f"t = {flat.min():g} below table floor u(q_max) = {u_lo:g}")
            out[below] = self._tail_v(flat[below])
        ok = ~below
        out[ok] = np.exp(self._spline(np.log(np.minimum(flat[ok], u_hi))))
        out = out.reshape(t.shape)
        return out if out.ndim else float(out)

    def v_exact(self, t: float) -> float:
        """v(t) by root finding on the exact u (slow; for verification)."""
        guess = self.v(t, extrapolate=True)
        if guess > self.q_max:
            return guess

        def f(s):
            return math.log(self.u(math.exp(s))) - math.log(t)
        lo = max(math.log(self.q_min), math.log(guess) - 0.05)
        hi = min(math.log(self.q_max), math.log(guess) + 0.05)
        while f(lo) < 0 and lo > math.log(self.q_min):
            lo = max(math.log(self.q_min), lo - 0.5)
        while f(hi) > 0 and hi < math.log(self.q_max):
            hi = min(math.log(self.q_max), hi + 0.5)
        return math.exp(optimize.brentq(f, lo, hi, xtol=1e-15, rtol=1e-15))

    @property
    def floor(self) -> float:
        """Smallest t resolvable without extrapolation, u(q_max)."""
        return float(self.u_values[-1])

    def integral_v(self, t0: float, t1: float) -> float:
        """int_{t0}^{t1} v(r) dr = int_{v(t1)}^{v(t0)} q / psi(q) dq."""
        if not 0 < t0 <= t1:
            raise DomainError("need 0 < t0 <= t1")
        q_hi = self.v(t0, extrapolate=True)
        q_lo = self.v(t1)
        return self.q_integral_v(q_lo, q_hi)

    def q_integral_v(self, q_lo: float, q_hi: float) -> float:
        """int_{q_lo}^{q_hi} q / psi(q) dq, composite over 1/16 decade pieces."""
        if q_hi <= q_lo:
            return 0.0
        pieces = max(1, math.ceil(16 * math.log10(q_hi / q_lo)))
        edges = q_lo * (q_hi / q_lo) ** (np.arange(pieces + 1) / pieces)
        parts = _log_gl_integral(lambda r: r / self.evaluator(r), edges[:-1], edges[1:], 16)
        return math.fsum(parts)


def build_speed_table(evaluator: PsiEvaluator, q_min: float = 1.0, q_max: float = 1e10,
                      points_per_decade: int = 64) -> SpeedTable:
    """Tabulate u on a geometric grid, accumulating from the tail inward.

    The tail beyond ``q_max`` uses the local power fit
    psi(q) ~ psi(q_max) (q/q_max)^theta, giving q_max / ((theta-1) psi(q_max)).
    """
    if q_min < 1 or q_max <= q_min:
        raise DomainError("need 1 <= q_min < q_max")
    m = max(2, math.ceil(math.log10(q_max / q_min) * points_per_decade))
    q = q_min * (q_max / q_min) ** (np.arange(m + 1) / m)
    q[-1] = q_max

    def inv(r):
        return 1.0 / evaluator(r)
    fine = _log_gl_integral(inv, q[:-1], q[1:], 16)
    coarse = _log_gl_integral(inv, q[:-1], q[1:], 8)
    psi_max = float(evaluator(q_max))
    theta = float(evaluator.exponent(q_max))
    if not theta > 1.05:
        raise TailNotResolvedError(
            f"local exponent {theta:.4f} <= 1.05 at q_max={q_max:g}; increase q_max "
            "(or the measure does not come down from infinity)")
    tail = q_max / ((theta - 1.0) * psi_max)
    theta_sec = math.log(psi_max / float(evaluator(q_max / 10))) / math.log(10.0)
    tail_err = abs(tail - q_max / ((theta_sec - 1.0) * psi_max)) if theta_sec > 1 else tail
    u = np.empty(m + 1)
    u[-1] = tail
    u[:-1] = tail + np.cumsum(fine[::-1])[::-1]
    tol = float(np.sum(np.abs(fine - coarse))) + tail_err
    return SpeedTable(q_grid=q, u_values=u, q_max=float(q_max), theta=theta, psi_max=psi_max,
                      tol=tol, evaluator=evaluator, points_per_decade=points_per_decade)


@functools.lru_cache(maxsize=32)
def speed_table_for(spec: LambdaSpec, q_min: float = 1.0, q_max: float = 1e10,
                    points_per_decade: int = 64) -> SpeedTable:
    """Cached :func:`build_speed_table` for a measure."""
    return build_speed_table(PsiEvaluator(spec), q_min, q_max, points_per_decade)


def v(table: SpeedTable, t, extrapolate: bool = False):
    return table.v(t, extrapolate=extrapolate)


def truncation_speed_ratio(spec: LambdaSpec, eta: float, t_grid, **table_kw) -> list[float]:
    """v(t) / v_eta(t) where v_eta is the speed of Lambda restricted to [0, eta]."""
    if not 0 < eta < 1:
        raise DomainError("eta must lie in (0, 1)")
    full = speed_table_for(spec, **table_kw)
    cut = speed_table_for(_truncate(spec, eta), **table_kw)
    t = np.asarray(t_grid, dtype=float)
    return [float(r) for r in np.atleast_1d(full.v(t)) / np.atleast_1d(cut.v(t))]
