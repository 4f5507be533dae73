import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cdi_lab.errors import DomainError, RangeError, TailNotResolvedError, UnsupportedMeasureError
from cdi_lab.measure import LambdaSpec
from cdi_lab.speed import (PsiEvaluator, build_speed_table, phi, psi, speed_table_for,
                           truncation_speed_ratio)

BETA15 = LambdaSpec.beta(1.5)

# psi(q) = q^2/2 * 2F2(1/2, 1; 2, 3; -q) and u(q) = int_q^inf dr/psi(r) for
# Beta(1/2, 3/2), evaluated with mpmath at 30 digits
PSI_BETA15_1E6 = 1502506684.50637614636
U_BETA15 = {1.0: 2.65840137227076122282, 10.0: 0.523895107383495727325,
            1000.0: 0.0429353760648501840165}


def test_phi_branches_meet():
    y = np.array([1e-2 * (1 - 1e-12), 1e-2])
    assert phi(y)[0] == pytest.approx(phi(y)[1], rel=1e-11)
    assert phi(np.array([0.0]))[0] == 0.5


def test_kingman_psi():
    ev = PsiEvaluator(LambdaSpec.kingman())
    q = np.geomspace(1e-3, 1e8, 50)
    assert np.allclose(ev(q), q * q / 2, rtol=1e-12, atol=0)


def test_interior_atom_psi():
    x0, m = 0.3, 2.0
    ev = PsiEvaluator(LambdaSpec.from_atoms([(x0, m)]))
    for q in (0.5, 10.0, 1e4):
        want = m * (math.exp(-q * x0) - 1 + q * x0) / x0 ** 2
        assert ev(q) == pytest.approx(want, rel=1e-13)


def test_beta_psi_oracle():
    ev = PsiEvaluator(BETA15)
    assert ev(1e6) == pytest.approx(PSI_BETA15_1E6, rel=1e-12)
    assert psi(ev, 1e6) == pytest.approx(PSI_BETA15_1E6, rel=1e-12)


def test_mixture_psi_is_linear():
    mix = PsiEvaluator(LambdaSpec.beta(1.5, weight=0.5, atom_zero=0.5))
    ev = PsiEvaluator(BETA15)
    q = np.geomspace(1.0, 1e6, 13)
    assert np.allclose(mix(q), q * q / 4 + ev(q) / 2, rtol=1e-13)


@pytest.mark.parametrize("spec", [BETA15, LambdaSpec.uniform(), LambdaSpec.beta(0.7, atom_zero=0.3)])
def test_psi_shape(spec):
    ev = PsiEvaluator(spec)
    q = np.geomspace(1e-2, 1e9, 400)
    p = ev(q)
    assert np.all(np.diff(p) > 0)
    assert np.all(np.diff(p / q) > 0)
    d = ev.derivative(q)
    assert np.all(np.diff(d) > 0)
    assert np.all(p <= q * q / 2 * spec.total_mass * (1 + 1e-12))


def test_psi_derivative_matches_difference():
    ev = PsiEvaluator(BETA15)
    for q in (3.0, 300.0, 3e6):
        h = q * 1e-5
        fd = (ev(q + h) - ev(q - h)) / (2 * h)
        assert ev.derivative(q) == pytest.approx(fd, rel=1e-8)


def test_psi_rejects():
    with pytest.raises(UnsupportedMeasureError):
        PsiEvaluator(LambdaSpec(atom_one=1.0))
    with pytest.raises(DomainError):
        PsiEvaluator(BETA15)(-1.0)


def test_kingman_table():
    table = speed_table_for(LambdaSpec.kingman())
    t = np.geomspace(1e-6, 1.0, 200)
    assert np.max(np.abs(table.v(t) * t / 2 - 1)) < 1e-8
    q = np.geomspace(1.0, 1e6, 200)
    assert np.max(np.abs(table.u(q) * q / 2 - 1)) < 1e-8


def test_beta_table_oracle():
    table = speed_table_for(BETA15)
    for q, want in U_BETA15.items():
        assert table.u(q) == pytest.approx(want, rel=1e-8)
    assert table.tol < 1e-9


def test_round_trip():
    table = speed_table_for(BETA15)
    t = np.geomspace(table.floor * 1.01, table.u_values[0] * 0.99, 300)
    assert np.max(np.abs(table.u(table.v(t)) / t - 1)) < 1e-6
    for tt in (1e-4, 1e-2, 1.0):
        assert table.v(tt) == pytest.approx(table.v_exact(tt), rel=1e-6)


def test_speed_bounds_unit_mass():
    # psi(q) <= q^2/2 for a probability measure, so u(q) >= 2/q and v(t) >= 2/t
    for spec in (BETA15, LambdaSpec.beta(1.2), LambdaSpec.beta(1.5, weight=0.5, atom_zero=0.5)):
        table = speed_table_for(spec)
        q = table.q_grid
        assert np.all(table.u_values * q / 2 >= 1 - 1e-9)
        t = np.geomspace(table.floor, 1.0, 100)
        assert np.all(table.v(t) * t / 2 >= 1 - 1e-9)


def test_ode_residual():
    # v' = -psi(v)
    table = speed_table_for(BETA15)
    ev = table.evaluator
    for t in (1e-4, 1e-3, 1e-1):
        h = t * 1e-4
        dv = (table.v(t + h) - table.v(t - h)) / (2 * h)
        assert -dv / ev(table.v(t)) == pytest.approx(1.0, rel=1e-5)


def test_integral_equation():
    # int_{v(t)}^{inf} dq / psi(q) = t
    table = speed_table_for(BETA15)
    for t in (1e-3, 0.1):
        assert table.u(table.v(t)) == pytest.approx(t, rel=1e-8)


def test_scaling():
    mass = 3.0
    base = speed_table_for(BETA15)
    scaled = speed_table_for(BETA15.scaled(mass))
    for t in (1e-3, 1e-2, 0.3):
        assert scaled.v(t) == pytest.approx(base.v(mass * t), rel=1e-7)


def test_integral_of_v_diverges():
    table = speed_table_for(BETA15)
    for delta in (1e-2, 1e-3, 1e-4):
        assert table.integral_v(delta, 1.0) >= 2 * math.log(1 / delta)
    kingman = speed_table_for(LambdaSpec.kingman())
    assert kingman.integral_v(1e-3, 1.0) == pytest.approx(2 * math.log(1e3), rel=1e-8)


def test_v_range_errors():
    table = speed_table_for(BETA15)
    with pytest.raises(RangeError):
        table.v(0.0)
    with pytest.raises(RangeError):
        table.v(table.floor / 2)
    with pytest.raises(RangeError):
        table.v(10.0)
    assert table.v(table.floor / 2, extrapolate=True) > table.q_max


def test_non_cdi_table_fails():
    with pytest.raises(TailNotResolvedError):
        build_speed_table(PsiEvaluator(LambdaSpec.uniform()))


def test_truncation_ratio():
    ratios = truncation_speed_ratio(BETA15, 0.25, [1e-1, 1e-2, 1e-3, 1e-4])
    assert all(0 < r <= 1 + 1e-12 for r in ratios)
    assert ratios == sorted(ratios)
    assert ratios[-1] > 0.95
    with pytest.raises(DomainError):
        truncation_speed_ratio(BETA15, 1.0, [0.1])


@settings(max_examples=20, deadline=None)
@given(st.floats(1.05, 1.95), st.floats(-4.0, 0.0))
def test_v_monotone_and_above_kingman(alpha, log_t):
    table = speed_table_for(LambdaSpec.beta(alpha), q_max=1e8, points_per_decade=16)
    t = 10.0 ** log_t
    if t < table.floor:
        return
    assert table.v(t) >= 2 / t * (1 - 1e-9)
    assert table.v(t) > table.v(min(1.0, 1.5 * t)) or t >= 1.0
