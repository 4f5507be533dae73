"""Finite measures Lambda on [0, 1] and integration against them.

A :class:`LambdaSpec` is an immutable description of

    Lambda = c * delta_0 + m_1 * delta_1 + sum_i m_i * delta_{x_i} + rho(x) dx

restricted to ``[0, eta]``.  Two integration routes are provided:

* :func:`integrate` / :func:`nu_integrate` -- adaptive QUADPACK on a
  geometric partition of ``(0, eta]`` with error control.  These are the
  reference routes.
* :func:`quadrature_rule` -- a fixed composite Gauss-Legendre rule on
  dyadic panels that accumulate at both ends of the support.  It is what
  the vectorized kernels (psi on thousands of points, whole rate rows) run on.
"""

from __future__ import annotations

import functools
import hashlib
import json
import math
from dataclasses import dataclass, replace
from typing import Callable, NamedTuple

import numpy as np
from scipy import integrate as _spi
from scipy import special

from .errors import ContractError, DomainError, InvalidMeasureError, QuadratureError
from .expr import Expression

FAMILIES = ("none", "beta", "uniform", "density")
DEFAULT_TOL = 1e-10

# fixed rule: dyadic panels toward 0 and toward eta
_LOW_LEVELS = 80
_HIGH_LEVELS = 45
# adaptive route: panels at ratio 16
_ADAPT_LOW = 20
_ADAPT_HIGH = 6


@dataclass(frozen=True)
class LambdaSpec:
    """Immutable finite measure on [0, 1].

    ``weight`` is the total mass of the continuous family before truncation
    (``beta`` and ``uniform`` are probability densities times ``weight``);
    for ``density`` it multiplies the user function.  ``label`` identifies
    a user density for hashing and serialization.
    """

    atom_zero: float = 0.0
    atom_one: float = 0.0
    family: str = "none"
    weight: float = 0.0
    alpha: float | None = None
    density: Callable | None = None
    atoms: tuple = ()
    eta: float = 1.0
    label: str | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidMeasureError(f"unknown family {self.family!r}")
        if not (0.0 < self.eta <= 1.0):
            raise DomainError(f"eta must lie in (0, 1], got {self.eta}")
        for name in ("atom_zero", "atom_one", "weight"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise InvalidMeasureError(f"{name} must be finite and >= 0, got {value}")
        if self.family == "beta":
            if self.alpha is None or not (0.0 < self.alpha < 2.0):
                raise InvalidMeasureError("beta family needs alpha in (0, 2)")
        if self.family == "density" and self.density is None:
            raise InvalidMeasureError("density family needs a density function")
        atoms = tuple((float(x), float(m)) for x, m in self.atoms)
        for x, m in atoms:
            if not (0.0 < x < 1.0):
                raise InvalidMeasureError(f"interior atom at {x} outside (0, 1)")
            if not (m > 0 and math.isfinite(m)):
                raise InvalidMeasureError(f"atom mass {m} must be positive")
        object.__setattr__(self, "atoms", tuple(sorted(a for a in atoms if a[0] <= self.eta)))
        if self.eta < 1.0:
            object.__setattr__(self, "atom_one", 0.0)
        if self.family == "density":
            grid = np.linspace(0.0, self.eta, 257)[1:]
            values = np.asarray(self.density(grid), dtype=float)
            if np.any(values < 0):
                raise InvalidMeasureError("density is negative somewhere on (0, eta]")
        mass = self.total_mass
        if not (mass > 0 and math.isfinite(mass)):
            raise InvalidMeasureError(f"total mass must be positive and finite, got {mass}")

    # -- constructors -----------------------------------------------------

    @classmethod
    def kingman(cls, c: float = 1.0) -> "LambdaSpec":
        return cls(atom_zero=c)

    @classmethod
    def beta(cls, alpha: float, weight: float = 1.0, atom_zero: float = 0.0) -> "LambdaSpec":
        """Beta(2 - alpha, alpha) law scaled by ``weight``."""
        return cls(family="beta", alpha=alpha, weight=weight, atom_zero=atom_zero)

    @classmethod
    def uniform(cls, weight: float = 1.0, atom_zero: float = 0.0) -> "LambdaSpec":
        return cls(family="uniform", weight=weight, atom_zero=atom_zero)

    @classmethod
    def from_density(cls, density, label=None, weight=1.0, atom_zero=0.0) -> "LambdaSpec":
        if isinstance(density, str):
            density = Expression(density)
        if label is None:
            label = density.source if isinstance(density, Expression) else repr(density)
        return cls(family="density", density=density, label=label, weight=weight,
                   atom_zero=atom_zero)

    @classmethod
    def from_atoms(cls, atoms, atom_zero: float = 0.0) -> "LambdaSpec":
        return cls(atoms=tuple(atoms), atom_zero=atom_zero)

    # -- basic properties ---------------------------------------------------

    @functools.cached_property
    def total_mass(self) -> float:
        mass = self.atom_zero + self.atom_one + sum(m for _, m in self.atoms)
        if self.family != "none" and self.weight > 0:
            mass += self.continuous_mass(0.0, self.eta)
        return mass

    @property
    def has_continuous(self) -> bool:
        return self.family != "none" and self.weight > 0

    @property
    def is_kingman(self) -> bool:
        """True when Lambda is a multiple of delta_0."""
        return not self.has_continuous and not self.atoms and self.atom_one == 0

    @functools.cached_property
    def _beta_const(self) -> float:
        return self.weight / math.exp(special.betaln(2.0 - self.alpha, self.alpha))

    def _density_at(self, x: float) -> float:
        if not (0.0 < x <= self.eta) or not self.has_continuous:
            return 0.0
        if self.family == "uniform":
            return self.weight
        if self.family == "beta":
            a = self.alpha
            return self._beta_const * x ** (1.0 - a) * (1.0 - x) ** (a - 1.0)
        return self.weight * float(self.density(np.asarray(x)))

    def continuous_density(self, x):
        """Density of the continuous part at ``x`` (zero outside (0, eta])."""
        if isinstance(x, float):
            return self._density_at(x)
        x = np.asarray(x, dtype=float)
        inside = (x > 0) & (x <= self.eta)
        out = np.zeros_like(x)
        if not self.has_continuous:
            return out
        xs = x[inside]
        if self.family == "uniform":
            out[inside] = self.weight
        elif self.family == "beta":
            a = self.alpha
            with np.errstate(divide="ignore"):
                out[inside] = self._beta_const * np.exp(
                    (1.0 - a) * np.log(xs) + (a - 1.0) * np.log1p(-xs))
        else:
            out[inside] = self.weight * np.asarray(self.density(xs), dtype=float)
        return out

    def continuous_mass(self, a: float, b: float) -> float:
        """Mass of the continuous part on [a, b] intersected with (0, eta]."""
        a, b = max(a, 0.0), min(b, self.eta)
        if b <= a or not self.has_continuous:
            return 0.0
        if self.family == "uniform":
            return self.weight * (b - a)
        if self.family == "beta":
            p, q = 2.0 - self.alpha, self.alpha
            if b <= 0.5:
                frac = special.betainc(p, q, b) - special.betainc(p, q, a)
            else:
                frac = special.betaincc(p, q, a) - special.betaincc(p, q, b)
            return self.weight * float(frac)
        value, _ = _spi.quad(lambda x: self.weight * float(self.density(x)), a, b,
                             limit=200, epsabs=0.0, epsrel=1e-12)
        return value

    # -- transformations -----------------------------------------------------

    def scaled(self, factor: float) -> "LambdaSpec":
        if not factor > 0:
            raise InvalidMeasureError("scale factor must be positive")
        return replace(self, atom_zero=self.atom_zero * factor, atom_one=self.atom_one * factor,
                       weight=self.weight * factor,
                       atoms=tuple((x, m * factor) for x, m in self.atoms))

    def to_doc(self) -> dict:
        """JSON document in the measure-file format (explicit ``weight``)."""
        doc = {"atom_zero": self.atom_zero}
        if self.atom_one:
            doc["atom_one"] = self.atom_one
        if self.family == "none":
            doc["family"] = "atoms" if self.atoms or self.atom_zero == 0 else "dirac0"
            if doc["family"] == "dirac0":
                doc["weight"] = 0.0
        elif self.family == "density":
            if not isinstance(self.density, Expression):
                raise ContractError("only expression densities can be serialized")
            doc["family"] = "density_expr"
            doc["expr"] = self.density.source
        else:
            doc["family"] = self.family
        if self.family == "beta":
            doc["alpha"] = self.alpha
        if self.family != "none":
            doc["weight"] = self.weight
        if self.atoms:
            doc["atoms"] = [list(a) for a in self.atoms]
        doc["eta"] = self.eta
        return doc

    @functools.cached_property
    def measure_id(self) -> str:
        """Content hash identifying the measure."""
        key = {
            "atom_zero": self.atom_zero, "atom_one": self.atom_one, "family": self.family,
            "weight": self.weight, "alpha": self.alpha, "atoms": [list(a) for a in self.atoms],
            "eta": self.eta, "density": self.label,
        }
        blob = json.dumps(key, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_measure(doc: dict) -> LambdaSpec:
    """Build a :class:`LambdaSpec` from a measure-file JSON document.

    ``dirac0``, ``uniform`` and ``beta`` describe probability laws B and the
    measure is ``mass_scale * (c delta_0 + (1 - c) B)`` with ``c = atom_zero``.
    ``atoms`` and ``density_expr`` are absolute: ``mass_scale * (c delta_0 + B)``.
    An explicit ``weight`` overrides the ``1 - c`` weight of the continuous part.
    """
    if not isinstance(doc, dict):
        raise InvalidMeasureError("measure document must be a JSON object")
    known = {"atom_zero", "atom_one", "family", "alpha", "atoms", "eta", "mass_scale",
             "expr", "weight", "schema", "name"}
    unknown = set(doc) - known
    if unknown:
        raise InvalidMeasureError(f"unknown measure keys: {sorted(unknown)}")
    family = doc.get("family", "dirac0")
    c = float(doc.get("atom_zero", 0.0))
    scale = float(doc.get("mass_scale", 1.0))
    eta = float(doc.get("eta", 1.0))
    atom_one = float(doc.get("atom_one", 0.0))
    atoms = tuple((float(x), float(m)) for x, m in doc.get("atoms", ()))
    if family in ("dirac0", "uniform", "beta") and "weight" not in doc and not 0 <= c <= 1:
        raise InvalidMeasureError("atom_zero must lie in [0, 1] for probability families")
    weight = float(doc.get("weight", 1.0 - c if family in ("uniform", "beta") else 1.0))
    if family == "dirac0":
        spec = LambdaSpec(atom_zero=1.0 if "weight" not in doc else c + weight,
                          atom_one=atom_one, atoms=atoms)
    elif family == "uniform":
        spec = LambdaSpec(family="uniform", weight=weight, atom_zero=c, atom_one=atom_one,
                          atoms=atoms)
    elif family == "beta":
        if "alpha" not in doc:
            raise InvalidMeasureError("beta family needs alpha")
        spec = LambdaSpec(family="beta", alpha=float(doc["alpha"]), weight=weight,
                          atom_zero=c, atom_one=atom_one, atoms=atoms)
    elif family == "atoms":
        spec = LambdaSpec(atoms=atoms, atom_zero=c, atom_one=atom_one)
    elif family == "density_expr":
        if "expr" not in doc:
            raise InvalidMeasureError("density_expr family needs expr")
        expr = Expression(str(doc["expr"]))
        spec = LambdaSpec(family="density", density=expr, label=expr.source, weight=weight,
                          atom_zero=c, atom_one=atom_one, atoms=atoms)
    else:
        raise InvalidMeasureError(f"unknown family {family!r}")
    if scale != 1.0:
        spec = spec.scaled(scale)
    if eta != 1.0:
        spec = truncate(spec, eta)
    return spec


def normalize(spec: LambdaSpec) -> tuple[LambdaSpec, float]:
    """Rescale to unit mass; returns the normalized measure and the old mass.

    Speeds transform as ``u_orig(q) = u_norm(q) / scale`` and
    ``v_orig(t) = v_norm(scale * t)``.
    """
    mass = spec.total_mass
    if not mass > 0:
        raise InvalidMeasureError("cannot normalize a zero-mass measure")
    if mass == 1.0:
        return spec, 1.0
    return spec.scaled(1.0 / mass), mass


def truncate(spec: LambdaSpec, eta: float) -> LambdaSpec:
    """Restriction of ``spec`` to ``[0, eta]``."""
    if not (0.0 < eta <= 1.0):
        raise DomainError(f"eta must lie in (0, 1], got {eta}")
    return replace(spec, eta=min(spec.eta, float(eta)))


# -- fixed composite rule --------------------------------------------------------


class Rule(NamedTuple):
    """Nodes and Lambda-weights for everything except the atom at zero."""

    x: np.ndarray
    w: np.ndarray


@functools.lru_cache(maxsize=None)
def _gauss_legendre(n: int):
    return np.polynomial.legendre.leggauss(n)


def _fixed_edges(eta: float) -> np.ndarray:
    low = eta * 2.0 ** -np.arange(_LOW_LEVELS, 0, -1, dtype=float)
    high = eta - eta * 2.0 ** -np.arange(2, _HIGH_LEVELS + 1, dtype=float)
    return np.concatenate(([0.0], low, high, [eta]))


@functools.lru_cache(maxsize=64)
def continuous_rule(spec: LambdaSpec, n_gl: int = 16, refine: int = 1) -> Rule:
    """Composite Gauss-Legendre rule for the continuous part of Lambda.

    Each dyadic panel is split into ``refine`` equal pieces carrying
    ``n_gl`` nodes each.  The two end panels (widths ``eta 2^-80`` and
    ``eta 2^-45``) are collapsed to a single node carrying their exact mass.
    """
    if not spec.has_continuous:
        return Rule(np.zeros(0), np.zeros(0))
    t, wt = _gauss_legendre(n_gl)
    edges = _fixed_edges(spec.eta)
    inner = edges[1:-1]
    if refine > 1:
        frac = np.arange(refine) / refine
        inner = np.concatenate([a + (b - a) * frac for a, b in zip(inner[:-1], inner[1:])]
                               + [inner[-1:]])
    a, b = inner[:-1], inner[1:]
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    nodes = (mid[:, None] + half[:, None] * t[None, :]).ravel()
    weights = (half[:, None] * wt[None, :]).ravel() * spec.continuous_density(nodes)
    lo_edge, hi_edge = edges[1], edges[-2]
    x = np.concatenate(([0.5 * lo_edge], nodes, [0.5 * (hi_edge + spec.eta)]))
    w = np.concatenate(([spec.continuous_mass(0.0, lo_edge)], weights,
                        [spec.continuous_mass(hi_edge, spec.eta)]))
    keep = w > 0
    return Rule(x[keep], w[keep])


@functools.lru_cache(maxsize=64)
def quadrature_rule(spec: LambdaSpec, n_gl: int = 16, refine: int = 1) -> Rule:
    """Rule for everything except the atom at zero (continuous part plus atoms)."""
    base = continuous_rule(spec, n_gl, refine)
    xs = [base.x, np.array([x for x, _ in spec.atoms], dtype=float)]
    ws = [base.w, np.array([m for _, m in spec.atoms], dtype=float)]
    if spec.atom_one:
        xs.append(np.array([1.0]))
        ws.append(np.array([spec.atom_one]))
    return Rule(np.concatenate(xs), np.concatenate(ws))


# -- adaptive route ---------------------------------------------------------------


def _vectorized(f):
    def call(x):
        try:
            out = np.asarray(f(x), dtype=float)
            if out.shape == np.shape(x):
                return out
        except Exception:
            pass
        return np.array([float(f(xi)) for xi in np.ravel(x)]).reshape(np.shape(x))
    return call


def _adaptive_edges(eta: float) -> np.ndarray:
    low = eta * 16.0 ** -np.arange(_ADAPT_LOW, 0, -1, dtype=float)
    high = eta - eta * 16.0 ** -np.arange(1, _ADAPT_HIGH + 1, dtype=float)
    return np.concatenate(([0.0], low, high, [eta]))


def _quad(func, a, b, epsabs, epsrel, **kw):
    out = _spi.quad(func, a, b, epsabs=epsabs, epsrel=epsrel, limit=200, full_output=1, **kw)
    return out[0], out[1], len(out) > 3


def _continuous_integral(spec: LambdaSpec, f, epsabs: float, epsrel: float):
    """Adaptive integral of f against the continuous part; (value, error, flagged)."""
    edges = _adaptive_edges(spec.eta)
    npan = len(edges) - 1
    pan_abs = epsabs / npan
    total, err, flagged = [], 0.0, False
    beta = spec.family == "beta"
    for i, (a, b) in enumerate(zip(edges[:-1], edges[1:])):
        if beta and i == 0:
            al, k = spec.alpha, spec._beta_const
            val, e, bad = _quad(lambda x: k * f(x) * (1.0 - x) ** (al - 1.0), a, b,
                                pan_abs, epsrel, weight="alg", wvar=(1.0 - al, 0.0))
        elif beta and i == npan - 1 and spec.eta == 1.0:
            al, k = spec.alpha, spec._beta_const
            val, e, bad = _quad(lambda x: k * f(x) * x ** (1.0 - al), a, b,
                                pan_abs, epsrel, weight="alg", wvar=(0.0, al - 1.0))
        else:
            val, e, bad = _quad(lambda x: f(x) * spec._density_at(x), a, b,
                                pan_abs, epsrel)
        total.append(val)
        err += e
        flagged |= bad
    return math.fsum(total), err, flagged


def _integrate(spec, f, tol, rtol, with_zero_atom):
    if tol < 0 or rtol < 0 or (tol == 0 and rtol == 0):
        raise DomainError("need a positive tolerance")
    parts = [spec.atom_zero * float(f(0.0))] if spec.atom_zero and with_zero_atom else []
    parts += [m * float(f(x)) for x, m in spec.atoms]
    if spec.atom_one:
        parts.append(spec.atom_one * float(f(1.0)))
    if not spec.has_continuous:
        return math.fsum(parts)
    rule = continuous_rule(spec)
    guess = abs(float(np.dot(rule.w, _vectorized(f)(rule.x))))
    target = max(tol, rtol * guess)
    value, err, flagged = _continuous_integral(spec, f, target, rtol)
    result = math.fsum(parts + [value])
    if err > max(tol, rtol * abs(result)) and (flagged or err > 10 * target):
        raise QuadratureError("adaptive quadrature did not converge", result, err)
    return result


def integrate(spec: LambdaSpec, f, tol: float = DEFAULT_TOL, rtol: float = 1e-12) -> float:
    """Integral of ``f`` against Lambda with error at most ``max(tol, rtol*|I|)``.

    Raises :class:`QuadratureError` (carrying the best estimate) when the
    adaptive refinement cannot meet the tolerance.
    """
    return _integrate(spec, f, tol, rtol, True)


def _stabilized_ratio(g, limit: float, eta: float):
    """g(x)/x**2, replaced by its limit below the point where rounding wins."""
    xs = eta * 2.0 ** -np.arange(4, 90)
    with np.errstate(all="ignore"):
        errs = np.array([abs(float(g(x)) / x ** 2 - limit) for x in xs])
    errs[~np.isfinite(errs)] = np.inf
    x_stab = xs[int(np.argmin(errs))]

    def ratio(x):
        if x < x_stab:
            return limit
        return float(g(x)) / (x * x)
    return ratio


def nu_integrate(spec: LambdaSpec, g=None, limit: float | None = None,
                 tol: float = DEFAULT_TOL, rtol: float = 1e-12, ratio=None) -> float:
    """Integral of g(x) x^-2 Lambda(dx), the atom at 0 contributing c * limit.

    ``g`` must vanish like x^2 at 0 and ``limit`` is lim g(x)/x^2.  A
    callable ``ratio`` computing g(x)/x^2 directly (and stably) may be
    given instead of ``g``.
    """
    if spec.atom_zero > 0 and limit is None:
        raise ContractError("atom at 0 requires the limit of g(x)/x^2")
    if ratio is None:
        if g is None:
            raise ContractError("need g or ratio")
        if limit is not None:
            ratio = _stabilized_ratio(g, limit, spec.eta)
        else:
            def ratio(x):
                return float(g(x)) / (x * x) if x > 0 else 0.0
    head = spec.atom_zero * limit if spec.atom_zero else 0.0
    return head + _integrate(spec, ratio, tol, rtol, False)
