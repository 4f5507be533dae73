"""Acceptance criteria, one test each.

Every test logs a PASS/FAIL line through the ``record`` fixture (collected in
the terminal summary) and then asserts the same condition.  Thresholds and
time budgets are the stated ones.
"""

import math
import time
from fractions import Fraction

import numpy as np
import pytest
from scipy import special, stats

from cdi_lab.appendix import appendix_report
from cdi_lab.harness import ExperimentConfig, run_experiment
from cdi_lab.measure import LambdaSpec
from cdi_lab.rates import cdi_classify, lambda_bk, merger_distribution
from cdi_lab.simulate import simulate_path, tree_length
from cdi_lab.speed import PsiEvaluator, build_speed_table

pytestmark = pytest.mark.slow

KINGMAN = {"family": "dirac0"}
BETA15 = {"family": "beta", "alpha": 1.5}


def _experiment(**kw):
    return run_experiment(ExperimentConfig.from_dict(kw))


def test_criterion_01_kingman_closed_form(record):
    start = time.perf_counter()
    ev = PsiEvaluator(LambdaSpec.kingman())
    table = build_speed_table(ev)
    q = np.geomspace(1e-3, 1e10, 500)
    psi_err = float(np.max(np.abs(ev(q) / (q * q / 2) - 1)))
    t = np.geomspace(1e-6, 1.0, 500)
    v_err = float(np.max(np.abs(table.v(t) * t / 2 - 1)))
    qs = 2 / t
    u_err = float(np.max(np.abs(table.u(qs) * qs / 2 - 1)))
    took = time.perf_counter() - start
    ok = psi_err <= 1e-12 and u_err <= 1e-8 and v_err <= 1e-8 and took < 1.0
    record(1, ok, f"psi rel err {psi_err:.1e}, u {u_err:.1e}, v {v_err:.1e}", took)
    assert ok


def test_criterion_02_beta_asymptotics(record):
    start = time.perf_counter()
    a = 1.5
    spec = LambdaSpec.beta(a)
    table = build_speed_table(PsiEvaluator(spec))
    c2 = (a * math.gamma(a)) ** (-1 / (a - 1))
    c1 = 1 / (math.gamma(a) * a * (a - 1))
    v_scaled = table.v(1e-4) * 1e-4 ** (1 / (a - 1))
    psi_scaled = table.evaluator(1e6) / 1e6 ** a
    took = time.perf_counter() - start
    v_ok = abs(v_scaled / c2 - 1) <= 0.02
    psi_ok = abs(psi_scaled / c1 - 1) <= 0.05
    ok = v_ok and psi_ok and took < 10
    record(2, ok, f"v t^2 = {v_scaled:.5f} vs c2 = {c2:.5f} ({'ok' if v_ok else 'off'}); "
                  f"psi/q^a = {psi_scaled:.5f} vs c1 = {c1:.5f} ({'ok' if psi_ok else 'off'})",
           took)
    assert ok


def test_criterion_03_criteria_agreement(record):
    start = time.perf_counter()
    cases = [("dirac0", LambdaSpec.kingman(), True)]
    cases += [(f"beta{a}", LambdaSpec.beta(a), True) for a in (1.2, 1.5, 1.8)]
    cases += [("uniform", LambdaSpec.uniform(), False)]
    cases += [(f"beta{a}", LambdaSpec.beta(a), False) for a in (0.5, 1.0)]
    bad = []
    for name, spec, want in cases:
        out = cdi_classify(spec)
        s_down = out["schweinsberg_offset"] > 0.02
        g_down = out["grey_offset"] > 0.02
        if out["comes_down"] is not want or s_down != g_down:
            bad.append(name)
    took = time.perf_counter() - start
    ok = not bad and took < 30
    record(3, ok, f"{len(cases) - len(bad)}/{len(cases)} verdicts correct and agreeing"
                  + (f" (wrong: {', '.join(bad)})" if bad else ""), took)
    assert ok


def test_criterion_04_rate_oracles(record):
    start = time.perf_counter()
    uniform = LambdaSpec.uniform()
    u_err = 0.0
    for b in range(2, 51):
        for k in range(2, b + 1):
            exact = Fraction(math.factorial(k - 2) * math.factorial(b - k), math.factorial(b - 1))
            u_err = max(u_err, abs(lambda_bk(uniform, b, k) / float(exact) - 1))
    rng = np.random.default_rng(2024)
    b_err = 0.0
    for a in (0.5, 1.2, 1.5, 1.8):
        spec = LambdaSpec.beta(a)
        for b in rng.integers(2, 201, size=60):
            k = int(rng.integers(2, b + 1))
            exact = math.exp(special.betaln(k - a, b - k + a) - special.betaln(2 - a, a))
            b_err = max(b_err, abs(lambda_bk(spec, int(b), k) / exact - 1))
    spec = LambdaSpec.beta(1.3, weight=0.6, atom_zero=0.4)
    p_err = 0.0
    for _ in range(1000):
        b = int(rng.integers(2, 120))
        k = int(rng.integers(2, b + 1))
        lhs = merger_distribution(spec, b).weights[k - 2] / math.comb(b, k)
        up = merger_distribution(spec, b + 1).weights
        rhs = up[k - 2] / math.comb(b + 1, k) + up[k - 1] / math.comb(b + 1, k + 1)
        p_err = max(p_err, abs(lhs / rhs - 1))
    took = time.perf_counter() - start
    ok = u_err <= 1e-10 and b_err <= 1e-8 and p_err <= 1e-8 and took < 10
    record(4, ok, f"uniform {u_err:.1e}, beta {b_err:.1e}, Pitman {p_err:.1e}", took)
    assert ok


def test_criterion_05_appendix(record):
    start = time.perf_counter()
    rep = appendix_report()
    took = time.perf_counter() - start
    c = rep["checks"]
    frozen = (abs(c["drift_bound"]["C0_emp"] / 1.3229 - 1) < 0.1
              and abs(c["secmom_bound"]["K_emp"] / 0.99878 - 1) < 0.1
              and abs(c["expmoment_bound"]["K0_emp"] / 0.21925 - 1) < 0.1)
    ok = rep["pass"] and frozen and took < 60
    record(5, ok, f"closed forms {c['closed_forms']['max_error']:.1e}, "
                  f"C0 {c['drift_bound']['C0_emp']:.4f}, K {c['secmom_bound']['K_emp']:.5f}, "
                  f"K0 {c['expmoment_bound']['K0_emp']:.5f}, "
                  f"LDP gap {c['ldp_bound']['max_log_gap']:.2f}", took)
    assert ok


def _transition_check(spec, paths=100_000, n=5):
    """Worst |freq - p| / sigma over transitions out of b = 2..n."""
    visits = {b: np.zeros(b + 1, dtype=np.int64) for b in range(2, n + 1)}
    for seed in range(paths):
        path = simulate_path(spec, n, seed=seed)
        prev = n
        for c in path.counts.tolist():
            visits[prev][c] += 1
            prev = c
    worst = 0.0
    for b, row_counts in visits.items():
        total = int(row_counts.sum())
        row = merger_distribution(spec, b)
        for k in range(2, b + 1):
            p = row.prob(k)
            freq = row_counts[b - k + 1] / total
            sigma = math.sqrt(p * (1 - p) / total)
            if sigma > 0:
                worst = max(worst, abs(freq - p) / sigma)
            elif freq != p:
                worst = math.inf
    return worst


def _ks_backends(spec, n, reps=1000, s=0.05):
    a = [tree_length(simulate_path(spec, n, horizon=s, seed=r, backend="direct_k"), 0, s)
         for r in range(reps)]
    b = [tree_length(simulate_path(spec, n, horizon=s, seed=10 ** 6 + r, backend="x_binomial"),
                     0, s) for r in range(reps)]
    return stats.ks_2samp(a, b).pvalue


def test_criterion_06_simulator_small_scale(record):
    start = time.perf_counter()
    sig = {name: _transition_check(spec) for name, spec in
           (("uniform", LambdaSpec.uniform()), ("beta1.5", LambdaSpec.beta(1.5)))}
    pvals = {n: _ks_backends(LambdaSpec.beta(1.5), n) for n in (50, 500)}
    took = time.perf_counter() - start
    ok = max(sig.values()) <= 3 and min(pvals.values()) > 1e-3 and took < 120
    record(6, ok, "max |freq-p|/sigma " + ", ".join(f"{k} {v:.2f}" for k, v in sig.items())
           + "; KS p " + ", ".join(f"n={k} {v:.3f}" for k, v in pvals.items()), took)
    assert ok


def test_criterion_07_speed_ladder(record):
    start = time.perf_counter()
    parts, ok = [], True
    for name, doc in (("kingman", KINGMAN), ("beta1.5", BETA15)):
        rep = _experiment(experiment="speed_ratio", measure=doc, replicas=200, s=0.1,
                          n_ladder=[1000, 10000, 100000], epsilon=0.05)
        means = ["empty" if r["mean"] is None else f"{r['mean']:.3f}"
                 for r in rep.aggregate["rungs"]]
        parts.append(f"{name} means {'/'.join(means)}")
        ok &= rep.passed
    took = time.perf_counter() - start
    ok = ok and took < 300
    record(7, ok, "; ".join(parts) + " (need decreasing and < 0.05)", took)
    assert ok


def test_criterion_08_moment_ladder(record):
    start = time.perf_counter()
    parts, ok = [], True
    for name, doc in (("kingman", KINGMAN), ("beta1.5", BETA15)):
        rep = _experiment(experiment="moment_ratio", measure=doc, n=100000, replicas=200,
                          s_ladder=[0.2, 0.1, 0.05], d_values=[1, 2, 4])
        for m in rep.aggregate["moments"]:
            parts.append(f"{name} d={m['d']:g} " + "/".join(f"{x:.3g}" for x in m["means"]))
        ok &= rep.passed
    took = time.perf_counter() - start
    ok = ok and took < 300
    record(8, ok, "; ".join(parts), took)
    assert ok


def test_criterion_09_tree_length(record):
    start = time.perf_counter()
    parts, ok = [], True
    for name, doc, tol in (("kingman", KINGMAN, 0.02), ("beta1.5", BETA15, 0.05)):
        rep = _experiment(experiment="tree_length_ratio", measure=doc, replicas=200, s=0.1,
                          n_ladder=[1000, 10000, 100000], tolerance=tol)
        sds = "/".join(f"{r['sd']:.3f}" for r in rep.aggregate["rungs"])
        parts.append(f"{name} mean {rep.aggregate['top_mean']:.4f} sd {sds}")
        ok &= rep.passed
    took = time.perf_counter() - start
    ok = ok and took < 300
    record(9, ok, "; ".join(parts), took)
    assert ok


def test_criterion_10_kingman_extremal(record):
    start = time.perf_counter()
    rep = _experiment(experiment="kingman_extremal", n=100000, replicas=200, epsilon=0.1)
    took = time.perf_counter() - start
    ms = rep.aggregate["measures"]
    det = min(m["min_v_t_over_2"] for m in ms)
    sim = min(m["simulated_min"] for m in ms)
    ok = rep.passed and took < 120
    record(10, ok, f"{len(ms)} measures, min v(t)t/2 = {det:.4f}, "
                   f"min simulated tN/2 = {sim:.3f}", took)
    assert ok


def test_criterion_11_truncation(record):
    start = time.perf_counter()
    beta = _experiment(experiment="truncation_ratio", measure=BETA15, eta=0.25,
                       t_grid=[1e-1, 1e-2, 1e-3, 1e-4], tolerance=0.05)
    mix = _experiment(experiment="truncation_ratio",
                      measure={"family": "uniform", "atom_zero": 0.5}, eta=0.25,
                      t_grid=[1e-2, 1e-4, 1e-6], tolerance=0.02)
    took = time.perf_counter() - start
    r = beta.aggregate["ratio_at_smallest_t"]
    atom = mix.aggregate["atom_ratio_at_smallest_t"]
    ok = 0.95 < r <= 1 and abs(atom - 1) <= 0.02 and beta.passed and mix.passed and took < 30
    record(11, ok, f"beta1.5 v/v_eta(1e-4) = {r:.5f}; mixture v_eta c t/2 at 1e-6 = {atom:.6f}",
           took)
    assert ok


def test_criterion_12_determinism(record, monkeypatch):
    start = time.perf_counter()
    cfg = ExperimentConfig.from_dict({"experiment": "moment_ratio", "measure": BETA15,
                                      "n": 20000, "s_ladder": [0.4, 0.3, 0.2], "replicas": 40,
                                      "master_seed": 11})
    texts = []
    for threads in ("1", "2", "4", "1"):
        monkeypatch.setenv("CDI_LAB_THREADS", threads)
        texts.append(run_experiment(cfg).to_json().encode())
    took = time.perf_counter() - start
    ok = len(set(texts)) == 1
    record(12, ok, f"{len(texts)} runs at 1/2/4/1 threads, {len(texts[0])} bytes, "
                   f"{'identical' if ok else 'differ'}", took)
    assert ok
