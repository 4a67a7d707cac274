from __future__ import annotations

import numpy as np
import pytest

from chronos.clock import idealness_report, make_clock
from chronos.observables import (
    check_linear_time,
    check_rate_constancy,
    haar_state,
    linear_time_error,
    mean_reading,
    mean_readings,
    pre_wraparound_window,
    rate_drift,
    rate_series,
    run_two_clock,
    variance_series,
    wavepacket_state,
)
from chronos.universe import build_additive, check_conditions

CLOCK = make_clock(64, 0.5)
IR = idealness_report(CLOCK).interior_residual
TOL = 10 * IR
L = CLOCK.period


def _free_cr(m=2):
    return build_additive(CLOCK, np.diag(np.linspace(-0.5, 0.5, m)))


def _dilation(g=0.1):
    HR = np.diag([0.4, -0.8, 1.1]).astype(complex)
    return build_additive(CLOCK, HR, g * np.kron(CLOCK.H_C, HR)), HR, g


def _non_commuting(g=0.1):
    HR = np.diag([0.4, -0.8]).astype(complex)
    O = np.array([[0.0, 1.0], [1.0, 0.0]])
    return build_additive(CLOCK, HR, g * np.kron(CLOCK.H_C, O))


def _packet(u, v):
    return wavepacket_state(u, L / 4, L / 32, v)


def test_time_eigenstate_mean():
    u = _free_cr()
    psi = np.kron(np.eye(CLOCK.d)[5], [1.0, 0.0])
    run = run_two_clock(u, psi, [0.0])
    assert mean_reading(run, 0) == pytest.approx(CLOCK.times[5], abs=1e-12)


def test_uniform_superposition_mean():
    u = _free_cr()
    psi = np.kron(np.ones(CLOCK.d), [0.0, 1.0])
    run = run_two_clock(u, psi, [0.0])
    assert mean_reading(run, 0) == pytest.approx((CLOCK.d - 1) * CLOCK.dt / 2, abs=1e-12)


def test_free_clock_ticks_at_unit_rate():
    u = _free_cr()
    run = run_two_clock(u, _packet(u, [1.0, 1.0]), np.linspace(0, L / 2, 41))
    norms = np.linalg.norm(run.states, axis=1)
    assert np.allclose(norms, 1.0, atol=1e-10)
    win = pre_wraparound_window(run)
    m = mean_readings(run)
    assert win.size > 10
    assert np.max(np.abs(m[win] - m[0] - run.t_grid[win])) <= TOL
    assert np.allclose(rate_series(run).values, 1.0, atol=TOL)
    assert check_linear_time(run, TOL)


def test_dilation_rate_is_one_plus_gE():
    u, HR, g = _dilation()
    E = np.real(np.diag(HR))
    for j in range(3):
        v = np.zeros(3)
        v[j] = 1.0
        run = run_two_clock(u, _packet(u, v), np.linspace(0, L / 2, 33))
        assert np.allclose(rate_series(run).values, 1 + g * E[j], atol=TOL)
        assert check_rate_constancy(run, TOL)
        assert check_linear_time(run, TOL)
        slope = np.polyfit(run.t_grid[pre_wraparound_window(run)],
                           mean_readings(run)[pre_wraparound_window(run)], 1)[0]
        assert slope == pytest.approx(1 + g * E[j], abs=1e-8)


def test_rate_forms_agree_to_second_order():
    # Noncommuting coupling, so the mean reading is curved and the centred
    # difference has a genuine O(h^2) error; the expectation form is exact.
    u = _non_commuting(0.3)
    psi = _packet(u, [1.0, 0.3])
    disc = [rate_series(run_two_clock(u, psi, np.linspace(0, L / 2, n))).max_discrepancy
            for n in (65, 129)]
    assert disc[0] > 1e-4
    assert disc[0] / disc[1] >= 3.5
    # Commuting case: the mean is linear, so both forms agree to roundoff.
    dil, _, _ = _dilation()
    run = run_two_clock(dil, _packet(dil, [1.0, 1.0, 0.0]), np.linspace(0, L / 2, 33))
    assert rate_series(run).max_discrepancy <= TOL


def test_rate_series_needs_two_points():
    run = run_two_clock(_free_cr(), _packet(_free_cr(), [1.0, 0.0]), [0.0])
    with pytest.raises(ValueError):
        rate_series(run)
    assert check_rate_constancy(run, TOL)


def test_grid_must_increase():
    u = _free_cr()
    with pytest.raises(ValueError):
        run_two_clock(u, _packet(u, [1.0, 0.0]), [0.0, 1.0, 1.0])


def test_time_eigenstate_variance_is_static():
    u = _free_cr()
    psi = np.kron(np.eye(CLOCK.d)[3], [1.0, 0.0])
    run = run_two_clock(u, psi, CLOCK.times[:20])
    vs = variance_series(run)
    assert vs.sigma2_alpha == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(vs.variance - vs.variance[0], 0.0, atol=1e-9)


def test_dilation_variance_closed_form():
    u, HR, g = _dilation()
    E = np.real(np.diag(HR))
    run = run_two_clock(u, _packet(u, [1.0, 0.0, 1.0]), np.linspace(0, L / 2, 33))
    vs = variance_series(run)
    assert vs.sigma2_alpha == pytest.approx(g**2 * (E[0] - E[2]) ** 2 / 4, abs=1e-12)
    assert vs.max_scaled_error(run.t_grid) <= TOL
    grown = vs.variance[vs.window[-1]] - vs.variance[0]
    assert grown > 0.1  # the spread genuinely grows


def test_non_commuting_model_breaks_the_laws():
    u = _non_commuting()
    assert not check_conditions(u).holds
    rng = np.random.default_rng(17)
    t = np.linspace(0, L / 2, 33)
    rate_bad = lin_bad = var_bad = False
    for _ in range(20):
        v = haar_state(2, rng)
        run = run_two_clock(u, _packet(u, v), t)
        rate_bad |= not check_rate_constancy(run, TOL)
        lin_bad |= not check_linear_time(run, TOL)
        var_bad |= variance_series(run).max_scaled_error(t) > TOL
    assert rate_bad and lin_bad and var_bad


def test_statistical_equivalence_of_rate_constancy_and_c2():
    rng = np.random.default_rng(50)
    good, _, _ = _dilation()
    bad = _non_commuting()
    t = np.linspace(0, L / 2, 17)
    good_drift = max(rate_drift(run_two_clock(good, haar_state(good.dim, rng), t)) for _ in range(50))
    bad_drift = max(rate_drift(run_two_clock(bad, haar_state(bad.dim, rng), t)) for _ in range(50))
    assert good_drift <= TOL < bad_drift


def test_window_is_empty_for_spread_state():
    u = _free_cr()
    run = run_two_clock(u, haar_state(u.dim, np.random.default_rng(0)), [0.0, 1.0])
    assert pre_wraparound_window(run).size == 0
    assert linear_time_error(run) == 0.0
