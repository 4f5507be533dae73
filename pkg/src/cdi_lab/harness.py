"""Monte Carlo experiments comparing N^{Lambda,n} with the speed v.

Every experiment runs in the shifted frame: N^{Lambda,n}(t) is compared
with v(t_n + t) where t_n = u(n), so that v(t_n) = n.  Replica r of
ladder rung j uses the seed derived from (master_seed, j, r) only, so
results do not depend on scheduling or thread count.
"""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import ContractError, DomainError
from .measure import LambdaSpec, load_measure, normalize
from .rates import log_drift
from .speed import speed_table_for, truncation_speed_ratio
from .simulate import simulate_path

SCHEMA = 1
EXPERIMENTS = ("speed_ratio", "moment_ratio", "tree_length_ratio", "kingman_extremal",
               "drift_check", "truncation_ratio")
_QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)

DEFAULT_SUITE = (
    {"family": "dirac0"},
    {"family": "beta", "alpha": 1.5},
    {"family": "beta", "alpha": 1.2},
    {"family": "beta", "alpha": 1.8},
    {"family": "uniform", "atom_zero": 0.5},
    {"family": "beta", "alpha": 1.5, "eta": 0.25},
)


@dataclass(frozen=True)
class ExperimentConfig:
    """Experiment parameters; ``measure`` is a measure document (see load_measure)."""

    experiment: str
    measure: dict = field(default_factory=lambda: {"family": "dirac0"})
    n: int = 100_000
    s: float = 0.1
    replicas: int = 200
    d: float = 1.0
    epsilon: float = 0.05
    tolerance: float = 0.05
    master_seed: int = 0
    n_ladder: tuple = (1_000, 10_000, 100_000)
    s_ladder: tuple = (0.2, 0.1, 0.05)
    d_values: tuple = (1.0, 2.0, 4.0)
    measures: tuple = DEFAULT_SUITE
    t_grid: tuple = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6)
    eta: float = 0.25
    backend: str = "auto"
    q_max: float = 1e10
    points_per_decade: int = 64

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise DomainError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        if self.replicas < 1:
            raise DomainError("replicas must be >= 1")
        if not self.s > 0:
            raise DomainError("s must be positive")
        if self.d < 1:
            raise DomainError("d must be >= 1")
        for name in ("n_ladder", "s_ladder", "d_values", "measures", "t_grid"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = set(doc) - known - {"schema"}
        if extra:
            raise DomainError(f"unknown config keys: {sorted(extra)}")
        if doc.get("schema", SCHEMA) != SCHEMA:
            raise DomainError(f"unsupported config schema {doc.get('schema')}")
        return cls(**{k: v for k, v in doc.items() if k != "schema"})

    def to_dict(self) -> dict:
        out = asdict(self)
        for key, value in out.items():
            if isinstance(value, tuple):
                out[key] = list(value)
        out["schema"] = SCHEMA
        return out

    def spec(self) -> LambdaSpec:
        return load_measure(self.measure)


@dataclass
class ExperimentReport:
    experiment: str
    config: dict
    per_replica: list
    aggregate: dict
    provenance: dict
    passed: bool
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        """Persisted form; wall_time is left out so reruns compare byte for byte."""
        return {
            "schema": SCHEMA,
            "experiment": self.experiment,
            "pass": self.passed,
            "aggregate": self.aggregate,
            "provenance": self.provenance,
            "config": self.config,
            "per_replica": self.per_replica,
        }

    def to_json(self) -> str:
        return json.dumps(_plain(self.to_dict()), indent=2, sort_keys=True) + "\n"

    def csv_rows(self) -> list[list]:
        keys = sorted({k for row in self.per_replica for k in row})
        head = [k for k in ("rung", "replica", "seed", "statistic") if k in keys]
        head += [k for k in keys if k not in head]
        return [head] + [[row.get(k, "") for k in head] for row in self.per_replica]


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


# -- helpers ----------------------------------------------------------------------


def replica_seed(master_seed: int, rung: int, replica: int) -> int:
    """64-bit seed for one replica, a pure function of its coordinates."""
    state = np.random.SeedSequence([int(master_seed), int(rung), int(replica)]).generate_state(
        2, np.uint32)
    return int(state[0]) << 32 | int(state[1])


def thread_count() -> int:
    raw = os.environ.get("CDI_LAB_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise DomainError(f"CDI_LAB_THREADS must be an integer, got {raw!r}") from None
    return os.cpu_count() or 1


def _map(func, items):
    items = list(items)
    workers = min(thread_count(), len(items)) or 1
    if workers == 1:
        return [func(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


def summarize(values) -> dict:
    """Deterministic fold of per-replica statistics."""
    arr = np.asarray(list(values), dtype=float)
    mean = math.fsum(arr) / len(arr)
    sd = math.sqrt(math.fsum((arr - mean) ** 2) / (len(arr) - 1)) if len(arr) > 1 else 0.0
    quants = np.quantile(arr, _QUANTILES)
    return {"count": len(arr), "mean": mean, "sd": sd, "min": float(arr.min()),
            "max": float(arr.max()),
            "quantiles": {f"{q:g}": float(v) for q, v in zip(_QUANTILES, quants)}}


def _table(spec: LambdaSpec, cfg: ExperimentConfig):
    return speed_table_for(spec, 1.0, cfg.q_max, cfg.points_per_decade)


def _window_lo(table, t_n: float) -> float:
    return max(10.0 * t_n, table.floor)


def _pieces(path, lo: float, hi: float):
    """Constant pieces of N on [lo, hi]: (left, right, value) arrays."""
    inside = (path.times > lo) & (path.times < hi)
    cuts = path.times[inside]
    left = np.concatenate(([lo], cuts))
    right = np.concatenate((cuts, [hi]))
    values = np.asarray(path.count_at(left), dtype=float)
    return left, right, values


def sup_deviation(path, table, t_n: float, lo: float, hi: float) -> float:
    """Exact sup over [lo, hi] of |N(t) / v(t_n + t) - 1|.

    On each constant piece N / v(t_n + t) is increasing (v decreases), so
    the extremes sit at the two ends of the piece.
    """
    left, right, values = _pieces(path, lo, hi)
    v_left = table.v(t_n + left, extrapolate=True)
    v_right = table.v(t_n + right, extrapolate=True)
    return float(max(np.max(np.abs(values / v_left - 1.0)), np.max(np.abs(values / v_right - 1.0))))


def min_kingman_ratio(path, t_n: float, lo: float, hi: float) -> float:
    """min over [lo, hi] of (t_n + t) N(t) / 2, attained at piece left ends."""
    left, _, values = _pieces(path, lo, hi)
    return float(np.min((t_n + left) * values / 2.0))


def _provenance(table) -> dict:
    return {"speed_table": table.provenance(), "thresholds": "pilot-calibrated, frozen"}


def _simulate(spec, n, horizon, seed, backend):
    return simulate_path(spec, n, horizon=horizon, seed=seed, backend=backend)


def _strictly_decreasing(xs) -> bool:
    return all(b < a for a, b in zip(xs, xs[1:]))


# -- experiments --------------------------------------------------------------------


def speed_ratio_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Mean sup-deviation along the n-ladder; pass iff decreasing and < epsilon at the top."""
    spec = cfg.spec()
    table = _table(spec, cfg)
    rows, rungs = [], []
    for j, n in enumerate(cfg.n_ladder):
        t_n = table.u(float(n))
        lo = _window_lo(table, t_n)
        if lo >= cfg.s:
            rungs.append({"n": n, "t_n": t_n, "window": [lo, cfg.s], "mean": None,
                          "error": f"empty window: start {lo:g} is not below s={cfg.s:g}"})
            continue

        def one(r, n=n, j=j, t_n=t_n, lo=lo):
            seed = replica_seed(cfg.master_seed, j, r)
            path = _simulate(spec, n, cfg.s, seed, cfg.backend)
            return {"rung": j, "n": n, "replica": r, "seed": seed,
                    "statistic": sup_deviation(path, table, t_n, lo, cfg.s) ** cfg.d}
        out = _map(one, range(cfg.replicas))
        rows += out
        rungs.append({"n": n, "t_n": t_n, "window": [lo, cfg.s],
                      **summarize(r["statistic"] for r in out)})
    means = [r["mean"] for r in rungs]
    complete = None not in means
    decreasing = complete and _strictly_decreasing(means)
    passed = decreasing and means[-1] < cfg.epsilon
    return ExperimentReport("speed_ratio", cfg.to_dict(), rows,
                            {"rungs": rungs, "strictly_decreasing": decreasing,
                             "top_mean": means[-1], "epsilon": cfg.epsilon},
                            _provenance(table), passed)


def moment_ratio_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """E sup|N/v - 1|^d along the s-ladder at fixed n, for every d in d_values."""
    spec = cfg.spec()
    table = _table(spec, cfg)
    n = cfg.n
    t_n = table.u(float(n))
    lo = _window_lo(table, t_n)
    s_ladder = list(cfg.s_ladder)
    if lo >= min(s_ladder):
        raise DomainError(f"window start {lo:g} is not below min s")
    horizon = max(s_ladder)

    def one(r):
        seed = replica_seed(cfg.master_seed, 0, r)
        path = _simulate(spec, n, horizon, seed, cfg.backend)
        return {"replica": r, "seed": seed,
                **{f"sup_s={s:g}": sup_deviation(path, table, t_n, lo, s) for s in s_ladder}}
    rows = _map(one, range(cfg.replicas))
    table_out, ok = [], True
    for d in cfg.d_values:
        means = [summarize(row[f"sup_s={s:g}"] ** d for row in rows)["mean"] for s in s_ladder]
        dec = _strictly_decreasing(means)
        ok &= dec
        table_out.append({"d": d, "s": s_ladder, "means": means, "decreasing": dec})
    for row in rows:
        row["statistic"] = row[f"sup_s={s_ladder[-1]:g}"] ** cfg.d
    return ExperimentReport("moment_ratio", cfg.to_dict(), rows,
                            {"n": n, "t_n": t_n, "window_start": lo, "moments": table_out},
                            _provenance(table), bool(ok))


def tree_length_ratio_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """int_0^s N / int_0^s v(t_n + t) along the n-ladder."""
    from .simulate import tree_length

    spec = cfg.spec()
    table = _table(spec, cfg)
    rows, rungs = [], []
    for j, n in enumerate(cfg.n_ladder):
        t_n = table.u(float(n))
        denom = table.q_integral_v(table.v(t_n + cfg.s), float(n))

        def one(r, n=n, j=j):
            seed = replica_seed(cfg.master_seed, j, r)
            path = _simulate(spec, n, cfg.s, seed, cfg.backend)
            return {"rung": j, "n": n, "replica": r, "seed": seed,
                    "length": tree_length(path, 0.0, cfg.s)}
        out = _map(one, range(cfg.replicas))
        pooled = math.fsum(r["length"] for r in out) / len(out)
        for r in out:
            r["statistic"] = r["length"] / denom
            r["ratio_to_mean"] = r["length"] / pooled
        rows += out
        rungs.append({"n": n, "t_n": t_n, "integral_v": denom, "pooled_mean_length": pooled,
                      "mean_over_integral_v": pooled / denom,
                      **summarize(r["statistic"] for r in out)})
    sds = [r["sd"] for r in rungs]
    top = rungs[-1]["mean"]
    passed = abs(top - 1.0) <= cfg.tolerance and _strictly_decreasing(sds)
    return ExperimentReport("tree_length_ratio", cfg.to_dict(), rows,
                            {"rungs": rungs, "top_mean": top, "tolerance": cfg.tolerance,
                             "sd_decreasing": _strictly_decreasing(sds)},
                            _provenance(table), passed)


def kingman_extremal_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """min (t_n + t) N(t) / 2 for each unit-mass suite measure.

    The window is [0, u(n/100) - t_n] capped at s, where the block count is
    still large.  The deterministic half checks v(t) >= 2/t on the table.
    """
    rows, per_measure, ok = [], [], True
    provenance = {}
    n = cfg.n
    for m_idx, doc in enumerate(cfg.measures):
        spec, _ = normalize(load_measure(doc))
        table = _table(spec, cfg)
        provenance[spec.measure_id] = table.provenance()
        t = np.geomspace(table.floor, min(table.u_values[0], 1e3), 400)
        det = float(np.min(table.v(t) * t / 2.0))
        t_n = table.u(float(n))
        # the comparison with 2/t is a small-t statement: stop while v >= n/100
        lo, hi = 0.0, min(cfg.s, table.u(n / 100.0) - t_n)

        def one(r, spec=spec, t_n=t_n, lo=lo, hi=hi, m_idx=m_idx):
            seed = replica_seed(cfg.master_seed, m_idx, r)
            path = _simulate(spec, n, hi, seed, cfg.backend)
            return {"rung": m_idx, "replica": r, "seed": seed, "measure_id": spec.measure_id,
                    "statistic": min_kingman_ratio(path, t_n, lo, hi)}
        out = _map(one, range(cfg.replicas))
        rows += out
        sim_min = min(r["statistic"] for r in out)
        good = det >= 1.0 - 1e-9 and sim_min >= 1.0 - cfg.epsilon
        ok &= good
        per_measure.append({"measure": doc, "measure_id": spec.measure_id,
                            "min_v_t_over_2": det, "simulated_min": sim_min,
                            "window": [lo, hi], "pass": good,
                            **summarize(r["statistic"] for r in out)})
    return ExperimentReport("kingman_extremal", cfg.to_dict(), rows,
                            {"n": n, "epsilon": cfg.epsilon, "measures": per_measure},
                            {"speed_tables": provenance,
                             "thresholds": "pilot-calibrated, frozen"}, bool(ok))


def drift_check_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """delta(n) = generator of log N at n plus psi(n)/n, along the n-ladder."""
    from .appendix import N0_EMP
    from .speed import PsiEvaluator

    spec = cfg.spec()
    if spec.atom_one or spec.atoms and max(x for x, _ in spec.atoms) > 0.25 or (
            spec.has_continuous and spec.eta > 0.25):
        raise ContractError("drift check needs supp(Lambda) inside [0, 1/4]")
    ev = PsiEvaluator(spec)
    rows = []
    for n in cfg.n_ladder:
        drift = log_drift(spec, int(n))
        delta = drift + ev(float(n)) / n
        rows.append({"n": int(n), "drift": drift, "psi_over_n": ev(float(n)) / n,
                     "statistic": delta, "asserted": n >= N0_EMP})
    vals = [abs(r["statistic"]) for r in rows if r["asserted"]]
    sup = max(vals) if vals else 0.0
    growing = len(vals) > 1 and vals[-1] > 1.1 * max(vals[:-1]) + 1e-12
    passed = bool(vals) and math.isfinite(sup) and not growing and sup <= cfg.tolerance
    return ExperimentReport("drift_check", cfg.to_dict(), rows,
                            {"sup_abs_delta": sup, "growing": growing, "bound": cfg.tolerance},
                            {"quadrature": "fixed composite Gauss-Legendre, 16 nodes per panel",
                             "thresholds": "pilot-calibrated, frozen"}, passed)


def truncation_ratio_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """v(t) / v_eta(t) on t_grid, plus v_eta(t) c t / 2 when Lambda has an atom at 0."""
    from .measure import truncate

    spec = cfg.spec()
    t = sorted(cfg.t_grid, reverse=True)
    kw = {"q_min": 1.0, "q_max": cfg.q_max, "points_per_decade": cfg.points_per_decade}
    ratios = truncation_speed_ratio(spec, cfg.eta, t, **kw)
    rows = [{"t": tt, "statistic": r} for tt, r in zip(t, ratios)]
    in_range = all(0 < r <= 1 + 1e-9 for r in ratios)
    toward_one = all(b >= a - 1e-9 for a, b in zip(ratios, ratios[1:]))
    passed = in_range and toward_one and ratios[-1] > 1 - cfg.tolerance
    agg = {"eta": cfg.eta, "ratio_at_smallest_t": ratios[-1], "in_unit_interval": in_range,
           "increasing_toward_zero": toward_one, "tolerance": cfg.tolerance}
    cut = speed_table_for(truncate(spec, cfg.eta), **kw)
    if spec.atom_zero > 0:
        atom = [float(cut.v(tt)) * spec.atom_zero * tt / 2.0 for tt in t]
        for row, a in zip(rows, atom):
            row["v_eta_ct_over_2"] = a
        agg["atom_ratio_at_smallest_t"] = atom[-1]
        passed = passed and abs(atom[-1] - 1.0) <= cfg.tolerance
    return ExperimentReport("truncation_ratio", cfg.to_dict(), rows, agg,
                            {"speed_table": _table(spec, cfg).provenance(),
                             "truncated_table": cut.provenance(),
                             "thresholds": "pilot-calibrated, frozen"}, bool(passed))


_RUNNERS = {
    "speed_ratio": speed_ratio_experiment,
    "moment_ratio": moment_ratio_experiment,
    "tree_length_ratio": tree_length_ratio_experiment,
    "kingman_extremal": kingman_extremal_experiment,
    "drift_check": drift_check_experiment,
    "truncation_ratio": truncation_ratio_experiment,
}


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    start = time.perf_counter()
    report = _RUNNERS[cfg.experiment](cfg)
    report.wall_time = time.perf_counter() - start
    return report
