"""Merger rates, gamma_b, merger-size laws and the two CDI criteria.

Notation: ``W[b, k] = C(b, k) lambda[b, k]`` is the rate at which some
k-tuple out of b blocks merges; the chain jumps from b to b - k + 1.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import interpolate, special

from .errors import (CriteriaDisagreementError, DomainError, NumericalInconsistencyError,
                     UnsupportedMeasureError)
from .measure import LambdaSpec, continuous_rule, integrate, quadrature_rule
from .speed import PsiEvaluator, _log_gl_integral

_CHUNK = 4_000_000


def log_binom(n, k):
    return special.gammaln(n + 1.0) - special.gammaln(k + 1.0) - special.gammaln(n - k + 1.0)


def _rate_kernel(b: int, k: int):
    def f(x):
        if isinstance(x, float):
            if x == 0.0:
                return 1.0 if k == 2 else 0.0
            if x == 1.0:
                return 1.0 if k == b else 0.0
            return math.exp((k - 2) * math.log(x) + (b - k) * math.log1p(-x))
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.exp((k - 2) * np.log(x) + (b - k) * np.log1p(-x))
        out = np.where(x == 0, 1.0 if k == 2 else 0.0, out)
        out = np.where(x == 1, 1.0 if k == b else 0.0, out)
        return out if out.ndim else float(out)
    return f


def lambda_bk(spec: LambdaSpec, b: int, k: int, tol: float = 0.0, rtol: float = 1e-10) -> float:
    """lambda_{b,k} = int x^(k-2) (1-x)^(b-k) Lambda(dx).

    The error target is ``max(tol, rtol * value)``; the default is purely
    relative because the rates span hundreds of decades.
    """
    if not 2 <= k <= b:
        raise DomainError(f"need 2 <= k <= b, got b={b}, k={k}")
    return integrate(spec, _rate_kernel(int(b), int(k)), tol=tol, rtol=rtol)


# -- stable single-quadrature kernels -------------------------------------------


def binom_tail2_ratio(b, x):
    """P(Binomial(b, x) >= 2) / x^2, finite at x = 0 (value C(b, 2))."""
    b = np.asarray(b, dtype=float)
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = special.betainc(2.0, b - 1.0, x) / (x * x)
    return np.where(x > 0, out, 0.5 * b * (b - 1.0))


def gamma_kernel(b, x):
    """(b x - 1 + (1 - x)^b) / x^2 = E[(K - 1) 1{K >= 2}] / x^2 for K ~ Bin(b, x)."""
    b, x = np.broadcast_arrays(np.asarray(b, dtype=float), np.asarray(x, dtype=float))
    y = b * x
    out = np.empty(y.shape)
    small = y < 0.05
    xs, bs = x[small], b[small]
    term = 0.5 * bs * (bs - 1.0)
    acc = term.copy()
    for j in range(3, 10):
        term = term * (-xs) * (bs - j + 1.0) / j
        acc += term
    out[small] = acc
    xl, bl = x[~small], b[~small]
    out[~small] = (bl * xl + np.expm1(bl * np.log1p(-xl))) / (xl * xl)
    return out


def total_rate_identity(spec: LambdaSpec, b) -> float | np.ndarray:
    """lambda_b = c C(b,2) + int P(Bin(b,x) >= 2) x^-2 Lambda(dx) on the fixed rule."""
    return _rule_sum(spec, b, binom_tail2_ratio)


def gamma_identity(spec: LambdaSpec, b) -> float | np.ndarray:
    """gamma_b = c C(b,2) + int (b x - 1 + (1-x)^b) x^-2 Lambda(dx), vectorized in b."""
    return _rule_sum(spec, b, gamma_kernel)


def _rule_sum(spec, b, kernel):
    b_arr = np.atleast_1d(np.asarray(b, dtype=float))
    x, w = continuous_rule(spec)
    extra = [(px, m) for px, m in spec.atoms]
    if spec.atom_one:
        extra.append((1.0, spec.atom_one))
    if extra:
        x = np.concatenate((x, [e[0] for e in extra]))
        w = np.concatenate((w, [e[1] for e in extra]))
    out = spec.atom_zero * 0.5 * b_arr * (b_arr - 1.0)
    if len(x):
        step = max(1, _CHUNK // len(x))
        for i in range(0, len(b_arr), step):
            bb = b_arr[i:i + step, None]
            out[i:i + step] += kernel(bb, x[None, :]) @ w
    return out if np.ndim(b) else float(out[0])


# -- merger-size distribution ----------------------------------------------------


@dataclass(frozen=True, eq=False)
class RateRow:
    """Merger-size law out of state b; entry i of the arrays is k = i + 2."""

    b: int
    log_weights: np.ndarray
    total_rate: float
    gamma: float

    @property
    def k(self) -> np.ndarray:
        return np.arange(2, self.b + 1)

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def probabilities(self) -> np.ndarray:
        return np.exp(self.log_weights - math.log(self.total_rate))

    def prob(self, k: int) -> float:
        return float(self.probabilities[k - 2])


def _row_refine(b: int) -> int:
    # the k-th integrand peaks with relative width ~ 1/sqrt(b); keep several
    # nodes per width on every dyadic panel
    return max(1, math.ceil(math.sqrt(b) / 4))


def _log_weight_row(spec: LambdaSpec, b: int) -> np.ndarray:
    k = np.arange(2, b + 1, dtype=float)
    lbin = log_binom(b, k)
    acc = np.full(b - 1, -np.inf)
    x, w = continuous_rule(spec, 16, _row_refine(b))
    if spec.atoms:
        x = np.concatenate((x, [a[0] for a in spec.atoms]))
        w = np.concatenate((w, [a[1] for a in spec.atoms]))
    if len(x):
        lx, l1x, lw = np.log(x), np.log1p(-x), np.log(w)
        step = max(1, _CHUNK // (b - 1))
        for i in range(0, len(x), step):
            block = (lw[i:i + step, None] + (k - 2.0) * lx[i:i + step, None]
                     + (b - k) * l1x[i:i + step, None])
            acc = np.logaddexp(acc, special.logsumexp(block, axis=0))
    if spec.atom_zero:
        acc[0] = np.logaddexp(acc[0], math.log(spec.atom_zero))
    if spec.atom_one:
        acc[-1] = np.logaddexp(acc[-1], math.log(spec.atom_one))
    return acc + lbin


_ROW_CACHE: dict = {}
_ROW_LOCK = threading.Lock()


def merger_distribution(spec: LambdaSpec, b: int) -> RateRow:
    """Rates W[b, k] for k = 2..b, checked against the single-integral identities.

    Rows are cached per (measure, b); insertion is idempotent.
    """
    if b < 2:
        raise DomainError("merger_distribution needs b >= 2")
    key = (spec, int(b))
    row = _ROW_CACHE.get(key)
    if row is not None:
        return row
    b = int(b)
    logw = _log_weight_row(spec, b)
    if not np.all(np.isfinite(logw) | (logw == -np.inf)):
        raise NumericalInconsistencyError(f"non-finite log weights in row b={b}")
    shift = float(np.max(logw))
    scaled = np.exp(logw - shift)
    total = math.fsum(scaled) * math.exp(shift)
    gamma = math.fsum(scaled * np.arange(1, b)) * math.exp(shift)
    ident_total = total_rate_identity(spec, b)
    ident_gamma = gamma_identity(spec, b)
    if abs(total - ident_total) > 1e-8 * ident_total:
        raise NumericalInconsistencyError(
            f"row b={b}: total rate {total!r} vs identity {ident_total!r}")
    if abs(gamma - ident_gamma) > 1e-6 * ident_gamma:
        raise NumericalInconsistencyError(
            f"row b={b}: gamma {gamma!r} vs identity {ident_gamma!r}")
    row = RateRow(b=b, log_weights=logw, total_rate=total, gamma=gamma)
    with _ROW_LOCK:
        _ROW_CACHE.setdefault(key, row)
        if len(_ROW_CACHE) > 4096:
            _ROW_CACHE.pop(next(iter(_ROW_CACHE)))
    return _ROW_CACHE.get(key, row)


class GammaValue(NamedTuple):
    value: float
    identity: float


def gamma_b(spec: LambdaSpec, b: int) -> GammaValue:
    """gamma_b as the log-space sum over k and as the single-integral identity.

    Raises :class:`NumericalInconsistencyError` if the two disagree by more
    than 1e-6 relative.
    """
    if b < 2:
        raise DomainError("gamma_b needs b >= 2")
    row = merger_distribution(spec, b)
    ident = gamma_identity(spec, b)
    if abs(row.gamma - ident) > 1e-6 * ident:
        raise NumericalInconsistencyError(f"gamma_{b}: sum {row.gamma!r} vs identity {ident!r}")
    return GammaValue(row.gamma, ident)


def pitman_downstep(row_w: np.ndarray, b: int) -> np.ndarray:
    """Weights of row b from row b + 1 (arrays indexed by k, entries 0, 1 unused).

    Uses lambda_{b,k} = lambda_{b+1,k} + lambda_{b+1,k+1} in weight form:
    W[b,k] = W[b+1,k] (b+1-k)/(b+1) + W[b+1,k+1] (k+1)/(b+1).
    """
    k = np.arange(2, b + 1)
    out = np.zeros(b + 1)
    out[2:] = (row_w[2:b + 1] * (b + 1 - k) + row_w[3:b + 2] * (k + 1)) / (b + 1)
    return out


# -- log-drift of the block count ------------------------------------------------


def log_drift(spec: LambdaSpec, n: int) -> float:
    """Generator of log N at state n: sum_k W[n,k] log((n-k+1)/n).

    Computed as c C(n,2) log(1 - 1/n) + int E_x[log((n-K+1)/n); K >= 2] x^-2 Lambda(dx)
    with K ~ Bin(n, x), the inner expectation summed exactly over k for each
    quadrature node.
    """
    if n < 2:
        raise DomainError("log_drift needs n >= 2")
    x, w = quadrature_rule(spec)
    out = spec.atom_zero * 0.5 * n * (n - 1) * math.log1p(-1.0 / n)
    if len(x):
        k = np.arange(2, n + 1, dtype=float)
        logf = np.log((n - k + 1.0) / n)
        lbin = log_binom(n, k)
        vals = np.empty(len(x))
        step = max(1, _CHUNK // (n - 1))
        for i in range(0, len(x), step):
            xs = x[i:i + step, None]
            with np.errstate(divide="ignore", invalid="ignore"):
                lp = lbin + k * np.log(xs) + (n - k) * np.log1p(-xs)
            lp = np.where(np.isnan(lp), -np.inf, lp)
            if np.any(xs == 1.0):
                lp[xs[:, 0] == 1.0] = np.where(k == n, 0.0, -np.inf)
            vals[i:i + step] = np.exp(lp) @ logf
        out += float(np.dot(w, vals / (x * x)))
    return out


# -- coming down from infinity ----------------------------------------------------

GREY_FINITE = 0.05
GREY_INFINITE = 0.02
_FIT_POINTS = 17
_EXACT_B = 2000


def _fit_offset(z: np.ndarray, theta: np.ndarray) -> tuple[float, float]:
    """Least squares theta - 1 = A + B / log z; returns (A, B)."""
    design = np.column_stack((np.ones_like(z), 1.0 / np.log(z)))
    (a, b), *_ = np.linalg.lstsq(design, theta - 1.0, rcond=None)
    return float(a), float(b)


def _schweinsberg(spec: LambdaSpec, b_max: int):
    top = min(b_max, _EXACT_B)
    bs = np.arange(2, top + 1)
    g = gamma_identity(spec, bs)
    partial = math.fsum(1.0 / g)
    if b_max > top:
        nodes = np.unique(np.round(np.geomspace(top, b_max, max(
            8, int(64 * math.log10(b_max / top)) + 1))))
        spline = interpolate.CubicSpline(np.log(nodes), np.log(gamma_identity(spec, nodes)))
        rest = np.arange(top + 1, b_max + 1, dtype=float)
        partial += math.fsum(np.exp(-spline(np.log(rest))))
    zb = np.geomspace(b_max / 100.0, b_max, _FIT_POINTS)
    h = 0.005
    theta = (np.log(gamma_identity(spec, zb * math.exp(h)))
             - np.log(gamma_identity(spec, zb * math.exp(-h)))) / (2 * h)
    return partial, zb, theta


def _grey(spec: LambdaSpec, q_max: float):
    ev = PsiEvaluator(spec)
    pieces = max(16, math.ceil(16 * math.log10(q_max)))
    edges = np.geomspace(1.0, q_max, pieces + 1)
    partial = math.fsum(_log_gl_integral(lambda r: 1.0 / ev(r), edges[:-1], edges[1:], 16))
    zq = np.geomspace(q_max / 100.0, q_max, _FIT_POINTS)
    return partial, zq, ev.exponent(zq)


def _verdict(a: float) -> tuple[bool, bool]:
    """(comes_down, decisive) from the fitted asymptotic offset of the exponent."""
    if a > GREY_FINITE:
        return True, True
    if a < GREY_INFINITE:
        return False, True
    return True, False


def cdi_classify(spec: LambdaSpec, b_max: int = 100_000, q_max: float = 1e8) -> dict:
    """Decide coming down from infinity with Schweinsberg's and Grey's criteria.

    Both partial sums are reported.  Each verdict comes from fitting the
    local power exponent theta of gamma_b (resp. psi) over the last two
    decades to ``1 + A + B / log z``: the series or integral converges iff
    the asymptotic exponent ``1 + A`` exceeds 1.
    """
    if spec.atom_one > 0:
        raise UnsupportedMeasureError("CDI criteria assume no atom at 1")
    if b_max < 100 or q_max < 1e3:
        raise DomainError("need b_max >= 100 and q_max >= 1e3")
    s_partial, zb, th_s = _schweinsberg(spec, int(b_max))
    g_partial, zq, th_g = _grey(spec, float(q_max))
    a_s, _ = _fit_offset(zb, th_s)
    a_g, _ = _fit_offset(zq, th_g)
    s_down, s_sure = _verdict(a_s)
    g_down, g_sure = _verdict(a_g)
    if s_down != g_down:
        raise CriteriaDisagreementError(
            f"Schweinsberg says {s_down}, Grey says {g_down}", s_partial, g_partial)
    stable = bool(np.all(th_g[zq >= q_max / 10.0] > 1.05))
    proved = g_down and s_sure and g_sure and stable
    return {
        "comes_down": bool(g_down),
        "schweinsberg_partial": s_partial,
        "grey_partial": g_partial,
        "confidence": "proved_numeric" if proved else "heuristic",
        "grey_exponent": float(th_g[-1]),
        "schweinsberg_exponent": float(th_s[-1]),
        "grey_offset": a_g,
        "schweinsberg_offset": a_s,
        "b_max": int(b_max),
        "q_max": float(q_max),
    }
