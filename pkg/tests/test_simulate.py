import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from cdi_lab.errors import DomainError, RangeError
from cdi_lab.measure import LambdaSpec
from cdi_lab.rates import merger_distribution
from cdi_lab.simulate import BlockCountPath, hitting_time, resolve_backend, simulate_path, tree_length

UNIFORM = LambdaSpec.uniform()
BETA15 = LambdaSpec.beta(1.5)


def toy_path(horizon=math.inf):
    return BlockCountPath(initial_n=4, times=np.array([0.5, 1.0, 3.0]),
                          counts=np.array([3, 2, 1]), seed=0, measure_id="toy",
                          backend="direct_k", horizon=horizon)


def test_toy_path_queries():
    path = toy_path()
    assert path.absorbed and path.absorption_time == 3.0
    assert path.count_at(0.0) == 4
    assert path.count_at(0.5) == 3
    assert list(path.count_at([0.2, 0.99, 2.0, 10.0])) == [4, 3, 2, 1]
    assert tree_length(path, 0.0, 4.0) == pytest.approx(4 * 0.5 + 3 * 0.5 + 2 * 2 + 1)
    assert tree_length(path, 0.75, 1.5) == pytest.approx(3 * 0.25 + 2 * 0.5)
    assert hitting_time(path, 2) == 1.0
    assert hitting_time(path, 5) == 0.0


def test_horizon_is_enforced():
    path = BlockCountPath(initial_n=4, times=np.array([0.5]), counts=np.array([3]), seed=0,
                          measure_id="toy", backend="direct_k", horizon=1.0)
    assert hitting_time(path, 1) is None
    with pytest.raises(RangeError):
        path.count_at(2.0)
    with pytest.raises(RangeError):
        tree_length(path, 0.0, 2.0)
    with pytest.raises(DomainError):
        path.count_at(-1.0)


def test_kingman_two_blocks_is_exponential():
    spec = LambdaSpec.kingman()
    times = [simulate_path(spec, 2, seed=s).absorption_time for s in range(3000)]
    assert stats.kstest(times, "expon").pvalue > 1e-3


@pytest.mark.parametrize("n", [10, 200])
def test_kingman_absorption_mean(n):
    # E T = sum_{b=2}^n 2/(b(b-1)) = 2(1 - 1/n)
    spec = LambdaSpec.kingman()
    times = np.array([simulate_path(spec, n, seed=s).absorption_time for s in range(4000)])
    se = times.std() / math.sqrt(len(times))
    assert abs(times.mean() - 2 * (1 - 1 / n)) < 4 * se


def test_uniform_three_blocks():
    # from 3 blocks: P(triple merger) = 3 lambda_33 / (3 lambda_32 + lambda_33) = 1/4
    hits = sum(simulate_path(UNIFORM, 3, seed=s).counts[0] == 1 for s in range(20000))
    p = hits / 20000
    assert abs(p - 0.25) < 4 * math.sqrt(0.25 * 0.75 / 20000)


@pytest.mark.parametrize("backend", ["direct_k", "x_binomial"])
def test_first_jump_law(backend):
    b, reps = 6, 6000
    row = merger_distribution(BETA15, b)
    first = np.array([simulate_path(BETA15, b, seed=s, backend=backend).counts[0]
                      for s in range(reps)])
    for k in range(2, b + 1):
        p = row.prob(k)
        freq = np.mean(first == b - k + 1)
        assert abs(freq - p) < 4 * math.sqrt(p * (1 - p) / reps) + 1e-12


def test_first_jump_time_rate():
    b = 8
    row = merger_distribution(UNIFORM, b)
    t = [simulate_path(UNIFORM, b, seed=s, backend="x_binomial").times[0] for s in range(3000)]
    assert stats.kstest(t, "expon", args=(0, 1 / row.total_rate)).pvalue > 1e-3


@pytest.mark.parametrize("spec", [BETA15, LambdaSpec.beta(1.5, weight=0.5, atom_zero=0.5)])
def test_backends_agree_in_law(spec):
    n = 50
    a = [tree_length(simulate_path(spec, n, seed=s, backend="direct_k"), 0, 0.05)
         for s in range(1500)]
    b = [tree_length(simulate_path(spec, n, seed=10 ** 6 + s, backend="x_binomial"), 0, 0.05)
         for s in range(1500)]
    assert stats.ks_2samp(a, b).pvalue > 1e-3


def test_seeded_paths_repeat():
    for backend in ("direct_k", "x_binomial"):
        a = simulate_path(BETA15, 300, seed=7, backend=backend)
        assert a == simulate_path(BETA15, 300, seed=7, backend=backend)
        assert a != simulate_path(BETA15, 300, seed=8, backend=backend)


def test_auto_backend():
    assert resolve_backend(BETA15, 100) == "direct_k"
    assert resolve_backend(BETA15, 10 ** 5) == "x_binomial"
    assert resolve_backend(LambdaSpec.kingman(), 10 ** 5) == "direct_k"
    with pytest.raises(DomainError):
        resolve_backend(BETA15, 10, "gillespie")


def test_large_streaming_direct():
    path = simulate_path(BETA15, 2500, horizon=0.05, seed=1, backend="direct_k")
    assert path.final_count < 2500


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 400), st.integers(0, 2 ** 32 - 1),
       st.sampled_from(["uniform", "beta", "mix", "atoms"]))
def test_path_invariants(n, seed, kind):
    spec = {"uniform": UNIFORM, "beta": BETA15,
            "mix": LambdaSpec.beta(1.2, weight=0.5, atom_zero=0.5),
            "atoms": LambdaSpec.from_atoms([(0.2, 1.0), (0.7, 0.5)])}[kind]
    path = simulate_path(spec, n, seed=seed)
    counts = np.concatenate(([n], path.counts))
    assert np.all(np.diff(counts) < 0)
    assert np.all(np.diff(path.times) > 0)
    assert path.final_count == 1
    assert tree_length(path, 0, path.absorption_time or 0.0) >= (path.absorption_time or 0.0)


def test_simulate_rejects():
    with pytest.raises(DomainError):
        simulate_path(BETA15, 0)
    with pytest.raises(DomainError):
        simulate_path(BETA15, 5, horizon=0.0)
