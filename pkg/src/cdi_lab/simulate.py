"""Exact simulation of the block-counting chain N^{Lambda,n}.

Two backends produce the same law:

* ``direct_k`` draws the merger size from the rate row W[b, .].  Rows are
  derived from the top row by the consistency recursion, either as a cached
  triangle (n <= DIRECT_TRIANGLE_MAX) or streamed down along the path.
* ``x_binomial`` draws impact fractions x from a dominating Poisson
  intensity and thins them, then draws K ~ Bin(b, x) given K >= 2.  It
  needs no O(b) work per jump and handles n in the millions.

A measure that is a pure atom at 0 always uses the Kingman kernel, which
is reported as ``direct_k``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import DomainError, RangeError, SamplingError
from .measure import LambdaSpec, _gauss_legendre
from .rates import merger_distribution

BACKENDS = ("auto", "direct_k", "x_binomial")
DIRECT_TRIANGLE_MAX = 2048
AUTO_DIRECT_MAX = 2048
_CELLS_PER_OCTAVE = 8
_OCTAVES = 60
_REBUILD = 0.9


@dataclass(frozen=True, eq=False)
class BlockCountPath:
    """Jump times and post-jump counts of one realization."""

    initial_n: int
    times: np.ndarray
    counts: np.ndarray
    seed: int
    measure_id: str
    backend: str
    horizon: float = math.inf
    rejections: int = field(default=0, compare=False)

    @property
    def events(self) -> list[tuple[float, int]]:
        return list(zip(self.times.tolist(), self.counts.tolist()))

    @property
    def final_count(self) -> int:
        return int(self.counts[-1]) if len(self.counts) else self.initial_n

    @property
    def absorbed(self) -> bool:
        return self.final_count == 1

    @property
    def absorption_time(self) -> float | None:
        return float(self.times[-1]) if self.absorbed and len(self.times) else None

    def covers(self, t: float) -> bool:
        return self.absorbed or t <= self.horizon

    def count_at(self, t):
        """N(t), right-continuous; vectorized over t."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise DomainError("count_at needs t >= 0")
        if not self.absorbed and np.any(t > self.horizon):
            raise RangeError(f"path observed only up to horizon {self.horizon}")
        idx = np.searchsorted(self.times, t, side="right")
        full = np.concatenate(([self.initial_n], self.counts))
        out = full[idx]
        return out if out.ndim else int(out)

    def __eq__(self, other):
        return (isinstance(other, BlockCountPath)
                and (self.initial_n, self.seed, self.measure_id, self.backend, self.horizon)
                == (other.initial_n, other.seed, other.measure_id, other.backend, other.horizon)
                and np.array_equal(self.times, other.times)
                and np.array_equal(self.counts, other.counts))

    __hash__ = None


# -- x_binomial proposal cells ---------------------------------------------------


@dataclass(frozen=True)
class _Cells:
    kind: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    p: np.ndarray
    x_eval: np.ndarray
    sup_ratio: np.ndarray
    gmass: np.ndarray
    beta: bool
    alpha: float


def _edges(spec: LambdaSpec):
    """Geometric cell edges toward 0 and (when eta > 1/2) toward 1."""
    steps = 2.0 ** (-np.arange(_OCTAVES * _CELLS_PER_OCTAVE + 1) / _CELLS_PER_OCTAVE)
    mid = min(0.5, spec.eta)
    low = np.concatenate(([0.0], (mid * steps)[::-1]))
    high = np.zeros(0)
    if spec.eta > 0.5:
        gap = 0.5 * steps
        gap = gap[gap > 1.0 - spec.eta]
        high = np.concatenate((1.0 - gap, [spec.eta]))
    return low, high


def _power_mass(a, b, q):
    return (b ** q - a ** q) / q


@functools.lru_cache(maxsize=32)
def _cells(spec: LambdaSpec) -> _Cells:
    parts = []
    low, high = _edges(spec)
    beta = spec.family == "beta"
    alpha = float(spec.alpha) if beta else 1.0
    if spec.family in ("beta", "uniform"):
        const = spec._beta_const if beta else spec.weight
        p_lo, p_hi = (1.0 - alpha, alpha - 1.0) if beta else (0.0, 0.0)
        a, b = low[:-1], low[1:]
        sup = np.maximum((1 - a) ** (alpha - 1), (1 - b) ** (alpha - 1)) if beta else np.ones_like(a)
        parts.append((K.POWER_LOW, a, b, p_lo, a, sup, const * sup * _power_mass(a, b, p_lo + 1)))
        if len(high) > 1:
            a, b = high[:-1], high[1:]
            sup = np.maximum(a ** (1 - alpha), b ** (1 - alpha)) if beta else np.ones_like(a)
            parts.append((K.POWER_HIGH, a, b, p_hi, a, sup,
                          const * sup * _power_mass(1 - b, 1 - a, p_hi + 1)))
    elif spec.family == "density":
        edges = np.concatenate((low, high[1:])) if len(high) else low
        a, b = edges[:-1], edges[1:]
        t, wt = _gauss_legendre(8)
        nodes = 0.5 * (a + b)[:, None] + 0.5 * (b - a)[:, None] * t
        mass = 0.5 * (b - a) * (spec.continuous_density(nodes) @ wt)
        parts.append((K.POWER_LOW, a, b, 0.0, a, np.ones_like(a), mass))
    pts = list(spec.atoms) + ([(1.0, spec.atom_one)] if spec.atom_one else [])
    if pts:
        xs = np.array([x for x, _ in pts])
        ms = np.array([m for _, m in pts])
        parts.append((K.POINT, xs, xs, 0.0, xs, np.ones_like(xs), ms))
    cols = [[], [], [], [], [], [], []]
    for kind, a, b, p, xe, sup, gm in parts:
        keep = gm > 0
        cols[0].append(np.full(keep.sum(), kind, dtype=np.int64))
        cols[1].append(a[keep])
        cols[2].append(b[keep])
        cols[3].append(np.full(keep.sum(), p))
        cols[4].append(xe[keep])
        cols[5].append(sup[keep])
        cols[6].append(gm[keep])
    arrays = [np.concatenate(c) if c else np.zeros(0) for c in cols]
    arrays[0] = arrays[0].astype(np.int64)
    return _Cells(*arrays, beta=beta, alpha=alpha)


@functools.lru_cache(maxsize=8)
def _triangle(spec: LambdaSpec, n: int):
    top = np.zeros(n + 2)
    top[2:n + 1] = merger_distribution(spec, n).weights
    tri = K.build_triangle(top, n)
    return tri, tri.sum(axis=1)


def _top_row(spec: LambdaSpec, n: int) -> np.ndarray:
    top = np.zeros(n + 2)
    top[2:n + 1] = merger_distribution(spec, n).weights
    return top


def resolve_backend(spec: LambdaSpec, n: int, backend: str = "auto") -> str:
    if backend not in BACKENDS:
        raise DomainError(f"unknown backend {backend!r}; choose from {BACKENDS}")
    if spec.is_kingman:
        return "direct_k"
    if backend == "auto":
        return "direct_k" if n <= AUTO_DIRECT_MAX else "x_binomial"
    return backend


def simulate_path(spec: LambdaSpec, n: int, horizon: float = math.inf, seed: int = 0,
                  backend: str = "auto", max_rejects: int = 1_000_000) -> BlockCountPath:
    """One realization of N^{Lambda,n} on [0, horizon] (or until absorption)."""
    if n < 1:
        raise DomainError("n must be >= 1")
    if not horizon > 0:
        raise DomainError("horizon must be positive")
    used = resolve_backend(spec, n, backend)
    rng = np.random.default_rng(seed)
    rejects = 0
    horizon = float(horizon)
    if n == 1:
        times, counts, m = np.zeros(0), np.zeros(0, dtype=np.int64), 0
    elif spec.is_kingman:
        times, counts, m = K.kingman_path(rng, n, horizon, spec.atom_zero)
    elif used == "direct_k":
        if n <= DIRECT_TRIANGLE_MAX:
            tri, totals = _triangle(spec, n)
            times, counts, m = K.direct_path_tri(rng, n, horizon, tri, totals)
        else:
            times, counts, m = K.direct_path_stream(rng, n, horizon, _top_row(spec, n))
    else:
        c = _cells(spec)
        times, counts, m, rejects, status = K.xbinomial_path(
            rng, n, horizon, spec.atom_zero, c.beta, c.alpha, c.kind, c.lo, c.hi, c.p,
            c.x_eval, c.sup_ratio, c.gmass, _REBUILD, max_rejects)
        if status:
            raise SamplingError(
                f"{max_rejects} consecutive rejections at count {counts[m - 1] if m else n}; "
                f"{m} events, {rejects} rejections so far")
    return BlockCountPath(initial_n=int(n), times=times[:m].copy(), counts=counts[:m].copy(),
                          seed=int(seed), measure_id=spec.measure_id, backend=used,
                          horizon=horizon, rejections=int(rejects))


def tree_length(path: BlockCountPath, a: float, b: float) -> float:
    """Integral of N over [a, b]; after absorption N stays 1."""
    if not 0 <= a <= b:
        raise DomainError("need 0 <= a <= b")
    if not path.covers(b):
        raise RangeError(f"path observed only up to {path.horizon}")
    edges = np.concatenate(([0.0], path.times, [math.inf]))
    values = np.concatenate(([path.initial_n], path.counts))
    lo = np.clip(edges[:-1], a, b)
    hi = np.clip(edges[1:], a, b)
    return math.fsum((hi - lo) * values)


def hitting_time(path: BlockCountPath, n0: int) -> float | None:
    """First time with N <= n0; None when the observed path never gets there."""
    if n0 < 1:
        raise DomainError("n0 must be >= 1")
    if path.initial_n <= n0:
        return 0.0
    idx = np.flatnonzero(path.counts <= n0)
    return float(path.times[idx[0]]) if len(idx) else None


def count_at(path: BlockCountPath, t):
    return path.count_at(t)
