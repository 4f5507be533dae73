"""Binomial moment formulas and bounds, checked by exact enumeration.

Two random variables appear throughout:

* ``Y = X - 1{X > 0}`` with ``X ~ Bin(n, p)``: the number of blocks lost
  when X of n blocks take part in a merger.
* ``T = log(X + 1{X < n}) - log n`` with ``X ~ Bin(n, 1 - p)``: the change
  of log block count caused by such a merger.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from .errors import BoundViolationError, DomainError, EnumerationLimitError

ENUMERATION_LIMIT = 10_000
N0_EMP = 32
N_GRID = tuple(32 * 2 ** j for j in range(8))
P_GRID = tuple(2.0 ** -k for k in range(2, 13))
C_GRID = (0.25, 0.5, 1.0, 2.0, 4.0, 8.0)
_GROWTH = 1.1


@dataclass(frozen=True)
class BinomialMoments:
    n: int
    p: float
    ey: float
    var_y: float
    ey2: float


def moments_closed_form(n: int, p: float) -> BinomialMoments:
    """Mean, variance and second moment of Y = X - 1{X>0}, X ~ Bin(n, p)."""
    if n < 1 or not 0.0 <= p <= 1.0:
        raise DomainError("need n >= 1 and p in [0, 1]")
    q = (1.0 - p) ** n
    ey = n * p - 1.0 + q
    var = n * p * (1.0 - p) + q * (1.0 - q) - 2.0 * n * p * q
    ey2 = -n * p - n * p * p + n * n * p * p + 1.0 - q
    if abs(ey2 - (var + ey * ey)) > 1e-12 * max(1.0, abs(ey2)):
        raise BoundViolationError(f"moment identity fails at n={n}, p={p}")
    return BinomialMoments(n, p, ey, max(var, 0.0), ey2)


def _pmf(n: int, p: float) -> np.ndarray:
    """Bin(n, p) mass function on 0..n, with exact endpoints at p in {0, 1}."""
    k = np.arange(n + 1)
    if p == 0.0:
        return (k == 0).astype(float)
    if p == 1.0:
        return (k == n).astype(float)
    return np.exp(stats.binom.logpmf(k, n, p))


def enumerate_moments(n: int, p: float) -> BinomialMoments:
    """The same three moments by summing over all n + 1 outcomes."""
    pmf = _pmf(n, p)
    x = np.arange(n + 1, dtype=float)
    y = x - (x > 0)
    ey = math.fsum(pmf * y)
    ey2 = math.fsum(pmf * y * y)
    return BinomialMoments(n, p, ey, math.fsum(pmf * (y - ey) ** 2), ey2)


def closed_form_error(n_max: int = 200, p_grid=None) -> float:
    """Largest scaled gap between closed forms and enumeration, n = 1..n_max."""
    p_grid = np.linspace(0.01, 0.25, 25) if p_grid is None else p_grid
    worst = 0.0
    for n in range(1, n_max + 1):
        for p in p_grid:
            a, b = moments_closed_form(n, float(p)), enumerate_moments(n, float(p))
            for u, v in ((a.ey, b.ey), (a.var_y, b.var_y), (a.ey2, b.ey2)):
                worst = max(worst, abs(u - v) / max(1.0, abs(v)))
    return worst


def _check_log_args(n: int, p: float):
    if n > ENUMERATION_LIMIT:
        raise EnumerationLimitError(f"n={n} exceeds the enumeration limit {ENUMERATION_LIMIT}")
    if n < 1 or not 0.0 <= p <= 0.25:
        raise DomainError("need n >= 1 and p in [0, 1/4]")


def _t_values(n: int):
    x = np.arange(n + 1, dtype=float)
    return np.log(x + (x < n)) - math.log(n)


def log_moment_exact(n: int, p: float) -> tuple[float, float]:
    """(E T, E T^2) for T = log(X + 1{X<n}) - log n, X ~ Bin(n, 1 - p)."""
    _check_log_args(n, p)
    pmf = _pmf(n, 1.0 - p)
    t = _t_values(n)
    return math.fsum(pmf * t), math.fsum(pmf * t * t)


def log_exp_moment(n: int, p: float, c: float) -> float:
    """log E[exp(c T^2) - 1], summed in log space (no overflow)."""
    _check_log_args(n, p)
    if c <= 0:
        raise DomainError("need c > 0")
    if p == 0.0:
        return -math.inf
    x = np.arange(n + 1)
    logpmf = stats.binom.logpmf(x, n, 1.0 - p)
    z = c * _t_values(n) ** 2
    live = z > 0
    zl = z[live]
    terms = logpmf[live] + zl + np.log(-np.expm1(-zl))
    return float(special.logsumexp(terms))


def secmom(n: int, p: float) -> float:
    """E[((n - Y)/n)^2] for Y = X + 1{X<n}, X ~ Bin(n, 1 - p)."""
    _check_log_args(n, p)
    pmf = _pmf(n, 1.0 - p)
    x = np.arange(n + 1, dtype=float)
    d = (n - x - (x < n)) / n
    return math.fsum(pmf * d * d)


def _sweep(n_range, p_range, cell):
    n_range = sorted(int(n) for n in n_range)
    p_range = [float(p) for p in p_range]
    if any(p <= 0 or p > 0.25 for p in p_range):
        raise DomainError("grid p must lie in (0, 1/4]")
    if any(n < N0_EMP for n in n_range):
        raise DomainError(f"grid n must be >= {N0_EMP}")
    return {(n, p): cell(n, p) for n in n_range for p in p_range}


def _bounded(values: dict, name: str) -> tuple[float, bool]:
    """Empirical sup, raising if the sup still grows at the finest n."""
    sup = max(values.values())
    top = max(n for n, _ in values)
    rest = [v for (n, _), v in values.items() if n < top]
    if not math.isfinite(sup):
        raise BoundViolationError(f"{name}: non-finite ratio on the grid")
    if rest and max(v for (n, _), v in values.items() if n == top) > _GROWTH * max(rest):
        raise BoundViolationError(f"{name}: sup still growing at n={top}")
    return sup, True


def drift_ratios(n_range=N_GRID, p_range=P_GRID) -> dict:
    """Cells (n, p) -> (R, R2) with R = |E T + E Y / n| / p^2, R2 = E T^2 / p^2."""
    def cell(n, p):
        et, et2 = log_moment_exact(n, p)
        ey = n * p - 1.0 + (1.0 - p) ** n
        return abs(et + ey / n) / p ** 2, et2 / p ** 2
    return _sweep(n_range, p_range, cell)


def verify_drift_bound(n_range=N_GRID, p_range=P_GRID) -> tuple[float, bool]:
    """Sup over the grid of both drift ratios (the empirical C0)."""
    cells = drift_ratios(n_range, p_range)
    s1, _ = _bounded({k: v[0] for k, v in cells.items()}, "drift")
    s2, _ = _bounded({k: v[1] for k, v in cells.items()}, "second moment of T")
    return max(s1, s2), True


def verify_secmom_bound(n_range=N_GRID, p_range=P_GRID) -> tuple[float, bool]:
    """Sup of E[((n - Y)/n)^2] / p^2 over the grid."""
    cells = _sweep(n_range, p_range, lambda n, p: secmom(n, p) / p ** 2)
    return _bounded(cells, "second moment of (n - Y)/n")


def n0_for(c: float) -> int:
    """Smallest admissible n on the dyadic ladder for exponent c.

    For fixed n the absorbed outcome X = 0 alone contributes about
    p^n exp(c log(n)^2), which beats e^{9c/4} p^2 once c is large.  A cell
    is kept when this term is below the bound at p = 1/4, the worst p.
    """
    n = N0_EMP
    while n * math.log(4.0) < c * (math.log(n) ** 2 - 2.25) + 2.0 * math.log(4.0):
        n *= 2
    return n


def expmoment_ratios(n_range=N_GRID, p_range=P_GRID, c_range=C_GRID) -> dict:
    """Cells (n, p, c) -> E[exp(c T^2) - 1] / (e^{9c/4} p^2) for n >= n0_for(c)."""
    out = {}
    for c in c_range:
        keep = [n for n in n_range if n >= n0_for(c)]
        for n in keep:
            for p in p_range:
                out[(n, float(p), float(c))] = math.exp(
                    log_exp_moment(n, p, c) - 2.25 * c - 2.0 * math.log(p))
    return out


def verify_expmoment_bound(n_range=N_GRID, p_range=P_GRID, c_range=C_GRID) -> tuple[float, bool]:
    """Sup of the exponential-moment ratio over the admissible grid (the empirical K0)."""
    if any(c <= 0 or c > 8 for c in c_range):
        raise DomainError("c must lie in (0, 8]")
    cells = expmoment_ratios(n_range, p_range, c_range)
    if not cells:
        raise DomainError("no admissible (n, c) cells")
    by_np = {}
    for (n, p, _), v in cells.items():
        by_np[(n, p)] = max(by_np.get((n, p), 0.0), v)
    return _bounded(by_np, "exponential moment")


def ldp_gap(n: int, p: float) -> float:
    """log P(Bin(n,p) > n/2) - log(2^n p^{n/2} (1-p)^{n/2}); must be <= 0."""
    tail = stats.binom.logsf(n // 2, n, p)
    return float(tail - (n * math.log(2.0) + 0.5 * n * math.log(p * (1.0 - p))))


def verify_ldp_bound(n_range=range(1, 201), p_range=P_GRID) -> tuple[float, bool]:
    worst = max(ldp_gap(n, p) for n in n_range for p in p_range)
    return worst, worst <= 1e-12


def verify_calc_fact(points: int = 100_001) -> tuple[float, bool]:
    """Largest violation of |log(1-x) + x| <= x^2/(2(1-x)) <= x^2 on [0, 1/2]."""
    x = np.linspace(0.0, 0.5, points)
    lhs = np.abs(np.log1p(-x) + x)
    mid = x * x / (2.0 * (1.0 - x))
    worst = float(max(np.max(lhs - mid), np.max(mid - x * x)))
    return worst, worst <= 1e-15


def appendix_report() -> dict:
    """All appendix checks on the canonical grids."""
    c0, ok0 = verify_drift_bound()
    k, ok1 = verify_secmom_bound()
    k0, ok2 = verify_expmoment_bound()
    ldp, ok3 = verify_ldp_bound()
    calc, ok4 = verify_calc_fact()
    err = closed_form_error()
    checks = {
        "closed_forms": {"max_error": err, "pass": err <= 1e-12},
        "drift_bound": {"C0_emp": c0, "pass": ok0},
        "secmom_bound": {"K_emp": k, "pass": ok1},
        "expmoment_bound": {"K0_emp": k0, "pass": ok2,
                            "n0_by_c": {str(c): n0_for(c) for c in C_GRID}},
        "ldp_bound": {"max_log_gap": ldp, "pass": ok3},
        "calc_fact": {"max_violation": calc, "pass": ok4},
    }
    return {
        "schema": 1,
        "grid": {"n": list(N_GRID), "p": list(P_GRID), "c": list(C_GRID), "n0_emp": N0_EMP},
        "checks": checks,
        "pass": all(v["pass"] for v in checks.values()),
    }
