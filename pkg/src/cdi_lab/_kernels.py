"""numba kernels for the block-counting chain.

All kernels draw from a ``numpy.random.Generator`` passed in by the caller
and release the GIL, so replicas can run on worker threads.
"""

from __future__ import annotations

import math

import numba
import numpy as np

POWER_LOW = 0
POWER_HIGH = 1
POINT = 2

_JIT = dict(nogil=True, cache=True)


@numba.njit(**_JIT)
def tail2_ratio(b, x):
    """P(Bin(b, x) >= 2) / x^2."""
    if x >= 1.0:
        return 1.0
    if x <= 0.0:
        return 0.5 * b * (b - 1.0)
    y = b * x
    if y < 1.0:
        term = 0.5 * b * (b - 1.0) * math.exp((b - 2.0) * math.log1p(-x))
        acc = term
        j = 2.0
        r = x / (1.0 - x)
        while j < b:
            term *= (b - j) / (j + 1.0) * r
            acc += term
            if term < 1e-17 * acc:
                break
            j += 1.0
        return acc
    lx = math.log1p(-x)
    p = -math.expm1(b * lx) - y * math.exp((b - 1.0) * lx)
    return p / (x * x)


@numba.njit(**_JIT)
def sample_k_ge2(rng, b, x):
    """K ~ Binomial(b, x) conditioned on K >= 2."""
    if x >= 1.0:
        return b
    p2 = tail2_ratio(b, x) * x * x
    if p2 >= 0.25:
        while True:
            k = rng.binomial(b, x)
            if k >= 2:
                return k
    lt = (math.log(0.5 * b * (b - 1.0)) + 2.0 * math.log(x)
          + (b - 2.0) * math.log1p(-x) - math.log(p2))
    t = math.exp(lt)
    u = rng.random()
    k = 2
    cum = t
    r = x / (1.0 - x)
    while u > cum and k < b:
        t *= (b - k) / (k + 1.0) * r
        k += 1
        cum += t
    return k


@numba.njit(**_JIT)
def _envelope(b_hi, x_eval, gmass, out):
    total = 0.0
    for i in range(x_eval.shape[0]):
        total += tail2_ratio(b_hi, x_eval[i]) * gmass[i]
        out[i] = total
    return total


@numba.njit(**_JIT)
def _propose(rng, kind, lo, hi, p):
    if kind == POINT:
        return lo
    u = rng.random()
    if kind == POWER_LOW:
        a, b = lo, hi
    else:
        a, b = 1.0 - hi, 1.0 - lo
    q = p + 1.0
    y = (a ** q + u * (b ** q - a ** q)) ** (1.0 / q)
    y = min(max(y, a), b)
    if kind == POWER_LOW:
        return y
    return 1.0 - y


@numba.njit(**_JIT)
def _shape_ratio(beta, alpha, kind, x):
    """rho(x) / (const * g(x)) for beta cells; 1 when the proposal is exact."""
    if kind == POINT or not beta:
        return 1.0
    if kind == POWER_LOW:
        return (1.0 - x) ** (alpha - 1.0)
    return x ** (1.0 - alpha)


@numba.njit(**_JIT)
def xbinomial_path(rng, n, horizon, c, beta, alpha, kind, lo, hi, p, x_eval, sup_ratio,
                   gmass, rebuild_ratio, max_rejects):
    """Exact thinning simulation.

    Cell i proposes impacts x at rate A(b_hi, x_eval[i]) * gmass[i] with
    A(b, x) = P(Bin(b, x) >= 2) / x^2, which dominates A(b, x) rho(x) on the
    cell because A is increasing in b and decreasing in x.  Returns
    (times, counts, n_events, n_rejects, status) with status 1 when
    ``max_rejects`` consecutive proposals were rejected.
    """
    times = np.empty(n)
    counts = np.empty(n, dtype=np.int64)
    ncell = kind.shape[0]
    cum = np.empty(max(ncell, 1))
    b = n
    b_hi = n
    env = _envelope(float(b_hi), x_eval, gmass, cum) if ncell else 0.0
    t = 0.0
    m = 0
    rejects = 0
    streak = 0
    while b > 1:
        king = c * 0.5 * b * (b - 1.0)
        rate = king + env
        t += rng.standard_exponential() / rate
        if t > horizon:
            break
        u = rng.random() * rate
        if u < king:
            b -= 1
        else:
            i = np.searchsorted(cum[:ncell], u - king, side="right")
            if i >= ncell:
                i = ncell - 1
            x = _propose(rng, kind[i], lo[i], hi[i], p[i])
            acc = (tail2_ratio(float(b), x) / tail2_ratio(float(b_hi), x_eval[i])
                   * _shape_ratio(beta, alpha, kind[i], x) / sup_ratio[i])
            if rng.random() >= acc:
                rejects += 1
                streak += 1
                if streak > max_rejects:
                    return times, counts, m, rejects, 1
                continue
            streak = 0
            b -= sample_k_ge2(rng, b, x) - 1
        times[m] = t
        counts[m] = b
        m += 1
        if ncell and 1 < b < rebuild_ratio * b_hi:
            b_hi = b
            env = _envelope(float(b_hi), x_eval, gmass, cum)
    return times, counts, m, rejects, 0


@numba.njit(**_JIT)
def kingman_path(rng, n, horizon, c):
    times = np.empty(n)
    counts = np.empty(n, dtype=np.int64)
    t = 0.0
    b = n
    m = 0
    while b > 1:
        t += rng.standard_exponential() / (c * 0.5 * b * (b - 1.0))
        if t > horizon:
            break
        b -= 1
        times[m] = t
        counts[m] = b
        m += 1
    return times, counts, m


@numba.njit(**_JIT)
def downstep(w, b):
    """Row b of W from row b + 1, in place (w indexed by k)."""
    for k in range(2, b + 1):
        w[k] = (w[k] * (b + 1 - k) + w[k + 1] * (k + 1)) / (b + 1)
    w[b + 1] = 0.0


@numba.njit(**_JIT)
def build_triangle(top, n):
    """tri[b, k] = W[b, k] for 2 <= k <= b <= n, from the top row."""
    tri = np.zeros((n + 1, n + 2))
    w = np.zeros(n + 2)
    w[: n + 1] = top[: n + 1]
    tri[n, :] = w
    for b in range(n - 1, 1, -1):
        downstep(w, b)
        tri[b, :] = w
    return tri


@numba.njit(**_JIT)
def _pick_k(rng, w, b, total):
    u = rng.random() * total
    acc = 0.0
    for k in range(2, b + 1):
        acc += w[k]
        if u < acc:
            return k
    k = b
    while k > 2 and w[k] == 0.0:
        k -= 1
    return k


@numba.njit(**_JIT)
def direct_path_tri(rng, n, horizon, tri, totals):
    times = np.empty(n)
    counts = np.empty(n, dtype=np.int64)
    t = 0.0
    b = n
    m = 0
    while b > 1:
        t += rng.standard_exponential() / totals[b]
        if t > horizon:
            break
        k = _pick_k(rng, tri[b], b, totals[b])
        b -= k - 1
        times[m] = t
        counts[m] = b
        m += 1
    return times, counts, m


@numba.njit(**_JIT)
def direct_path_stream(rng, n, horizon, top):
    """direct_k without a stored triangle: rows are stepped down as the path falls."""
    times = np.empty(n)
    counts = np.empty(n, dtype=np.int64)
    w = np.zeros(n + 2)
    w[: n + 1] = top[: n + 1]
    row = n
    t = 0.0
    b = n
    m = 0
    while b > 1:
        while row > b:
            row -= 1
            downstep(w, row)
        total = 0.0
        for k in range(2, b + 1):
            total += w[k]
        t += rng.standard_exponential() / total
        if t > horizon:
            break
        k = _pick_k(rng, w, b, total)
        b -= k - 1
        times[m] = t
        counts[m] = b
        m += 1
    return times, counts, m
