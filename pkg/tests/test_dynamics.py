from __future__ import annotations

import numpy as np
import pytest
from conftest import preset_model

from chronos.clock import idealness_report, make_clock
from chronos.dynamics import (
    TrajectoryRecord,
    closed_form_propagator,
    extract_trajectory,
    find_nonunitary_witness,
    kernel_restriction_check,
    norm_drift,
    physical_kernel,
    prepare_stationary,
    product_seed,
    propagator_match,
    reduced_trajectory,
    unitarity_diagnostics,
)
from chronos.errors import EmptyKernel, GridMismatch, InvertibleAlpha, SeedAnnihilated
from chronos.observables import haar_state
from chronos.operators import expm_general
from chronos.scenarios import build_model, preset
from chronos.universe import build_additive, lattice_energy, rate_operator


def _free(d=16, dt=0.5, ns=(1, 3, -2)):
    c = make_clock(d, dt)
    return build_additive(c, np.diag([-lattice_energy(c, n) for n in ns]).astype(complex))


def _state(u, seed):
    return prepare_stationary(u, haar_state(u.dim, np.random.default_rng(seed)))


# ---------------------------------------------------------------- preparation

def test_history_state_from_product_seed():
    u = _free()
    c = u.clock
    E = np.real(np.diag(u.construction.params["H_R"]))
    e = np.zeros(3)
    e[1] = 1.0
    s = prepare_stationary(u, product_seed(u, 0, e))
    hist = np.kron(np.exp(-1j * E[1] * c.times), e) / np.sqrt(c.d)
    assert np.allclose(s.psi_U, hist, atol=1e-12)
    assert s.constraint_residual <= 1e-9
    assert np.linalg.norm(s.psi_U) == pytest.approx(1.0)


def test_seed_orthogonal_to_kernel_is_annihilated():
    u = _free()
    P, _ = physical_kernel(u)
    seed = haar_state(u.dim, np.random.default_rng(0))
    with pytest.raises(SeedAnnihilated):
        prepare_stationary(u, seed - P @ seed)
    with pytest.raises(SeedAnnihilated):
        prepare_stationary(u, np.zeros(u.dim))


def test_empty_kernel():
    c = make_clock(8, 1.0)
    u = build_additive(c, np.diag([0.1]))
    with pytest.raises(EmptyKernel):
        prepare_stationary(u, np.ones(u.dim))


def test_unknown_weighting():
    u = _free()
    with pytest.raises(ValueError):
        prepare_stationary(u, np.ones(u.dim), weighting="nope")


def test_group_average_equals_projection_when_alpha_is_identity():
    u = _free()
    seed = haar_state(u.dim, np.random.default_rng(3))
    a = prepare_stationary(u, seed).psi_U
    b = prepare_stationary(u, seed, weighting="group_average").psi_U
    assert np.allclose(a, b, atol=1e-12)


def test_plain_projection_does_not_reproduce_the_freedom_claim():
    # Recorded contrast to criterion 8: without the 1/|alpha| weighting the
    # direction of Pi_0 psi_U differs from P+ seed on the dilation preset.
    u = preset_model("dilation")
    rate = rate_operator(u)
    chi = haar_state(u.rest_dim, np.random.default_rng(8))
    base = product_seed(u, 0, chi)
    s = prepare_stationary(u, rate.alpha @ base)
    pi0 = extract_trajectory(u, s, with_residuals=False).rel_states[0]
    cos = abs(np.vdot(pi0, base)) / np.linalg.norm(pi0) / np.linalg.norm(base)
    assert 1 - cos > 1e-6


# ---------------------------------------------------------------- trajectories

def test_free_norms_are_uniform():
    u = _free()
    traj = extract_trajectory(u, _state(u, 1))
    assert np.allclose(traj.norms, traj.norms[0], atol=1e-10)
    e = np.zeros(3)
    e[0] = 1
    traj1 = extract_trajectory(u, prepare_stationary(u, product_seed(u, 0, e)))
    assert np.allclose(traj1.norms, 1 / np.sqrt(u.clock.d), atol=1e-10)
    assert len(traj) == u.clock.d and traj.residuals.shape == (u.clock.d,)


def test_klein_gordon_generic_state_has_varying_norms():
    u = preset_model("klein_gordon")
    traj = extract_trajectory(u, _state(u, 2), with_residuals=False)
    assert traj.norms.max() / traj.norms.min() > 1 + 1e-3


def test_reduced_trajectory_of_product_state():
    u = _free()
    d, m = u.clock.d, u.rest_dim
    v = np.array([1.0, 2j, -0.5])
    blocks = np.tile(v, (d, 1))
    traj = extract_trajectory(u, blocks.reshape(-1), with_residuals=False)
    red = reduced_trajectory(traj, u.clock)
    assert np.allclose(red, blocks)
    assert np.allclose(np.linalg.norm(red, axis=1), traj.norms, atol=1e-12)
    assert traj.blocks().shape == (d, m)


def test_free_reduced_trajectory_is_schrodinger():
    u = _free(32, 0.5, (1, 3, -2, 2))
    traj = extract_trajectory(u, _state(u, 4))
    red = reduced_trajectory(traj, u.clock)
    HR = u.construction.params["H_R"]
    for k, t in enumerate(u.clock.times):
        assert np.linalg.norm(red[k] - expm_general(HR, t) @ red[0]) <= 1e-8


def test_reduced_grid_mismatch():
    u = _free()
    traj = extract_trajectory(u, _state(u, 0), with_residuals=False)
    with pytest.raises(GridMismatch):
        reduced_trajectory(traj, make_clock(8, 0.5))


@pytest.mark.parametrize("name", ["free", "dilation", "time_dependent", "dilation_kernel_tuned"])
def test_schrodinger_residual_is_second_order(name):
    cfg = preset(name)
    res = {}
    dts = {}
    for d in (64, 128):
        u = build_model(cfg.with_overrides(d=d, dt=cfg.clock.d * cfg.clock.dt / d))
        e = np.ones(u.rest_dim)
        s = prepare_stationary(u, product_seed(u, 0, e / np.linalg.norm(e)))
        res[d] = float(np.max(extract_trajectory(u, s).residuals))
        dts[d] = u.clock.dt
    C = res[64] / dts[64] ** 2
    ir = idealness_report(make_clock(128, dts[128])).interior_residual
    assert res[128] <= 1.1 * C * dts[128] ** 2 + 10 * ir
    assert res[64] / res[128] >= 3.5


def test_schrodinger_residual_not_small_for_higher_order_constraint():
    # H' is quadratic in H_C, so i alpha d/dt psi = H_U psi does not apply; the
    # residual stays O(1) as dt shrinks even though the dynamics is unitary.
    cfg = preset("product_unitary")
    res = []
    for d in (64, 128):
        u = build_model(cfg.with_overrides(d=d, dt=32.0 / d))
        e = np.ones(u.rest_dim) / 2
        s = prepare_stationary(u, product_seed(u, 0, e))
        res.append(float(np.max(extract_trajectory(u, s).residuals)))
    assert min(res) > 1.0


# ---------------------------------------------------------------- diagnostics

def test_unitarity_diagnostics_free_pair():
    u = _free()
    a = extract_trajectory(u, _state(u, 5), with_residuals=False)
    b = extract_trajectory(u, _state(u, 6), with_residuals=False)
    nd, gd = unitarity_diagnostics(a, b)
    assert nd <= 1e-8 and gd <= 1e-8
    nd_self, gd_self = unitarity_diagnostics(a, a)
    assert gd_self == pytest.approx(norm_drift(a.norms**2), abs=1e-12)


def test_klein_gordon_gram_drift():
    u = preset_model("klein_gordon")
    a = extract_trajectory(u, _state(u, 7), with_residuals=False)
    b = extract_trajectory(u, _state(u, 8), with_residuals=False)
    assert unitarity_diagnostics(a, b)[1] > 1e-3


def test_single_point_grid_has_no_drift():
    rec = TrajectoryRecord(times=np.zeros(1), rel_states=np.array([[1.0, 0.5j]]),
                           norms=np.array([np.sqrt(1.25)]), gram_drift=0.0,
                           residuals=np.zeros(1), rest_dim=2)
    assert unitarity_diagnostics(rec, rec) == (0.0, 0.0)


def test_diagnostics_grid_mismatch():
    a = extract_trajectory(_free(16), _state(_free(16), 0), with_residuals=False)
    b = extract_trajectory(_free(8), _state(_free(8), 0), with_residuals=False)
    with pytest.raises(GridMismatch):
        unitarity_diagnostics(a, b)


# ---------------------------------------------------------------- propagator

def test_propagator_at_zero_is_identity():
    u = preset_model("dilation")
    assert np.allclose(closed_form_propagator(u, 0.0), np.eye(u.dim))


def test_free_propagator_steps_relative_states():
    u = _free(32, 0.5)
    s = _state(u, 9)
    traj = extract_trajectory(u, s, with_residuals=False)
    U = closed_form_propagator(u, u.clock.dt)
    for k in range(u.clock.d - 1):
        assert np.linalg.norm(U @ traj.rel_states[k] - traj.rel_states[k + 1]) <= 1e-8


def test_dilation_propagator_symmetries():
    u = preset_model("dilation")
    L = u.clock.period
    ir = idealness_report(u.clock).interior_residual
    psi = np.kron(u.clock.wavepacket(L / 4, L / 32), np.ones(u.rest_dim) / 2)
    for t in (0.5, 3.0, 7.25):
        U = closed_form_propagator(u, t)
        assert np.linalg.norm(U.conj().T @ u.H_U @ U - u.H_U, 2) <= 1e-8
        T_t = U.conj().T @ u.T_full @ U
        shift = np.vdot(psi, T_t @ psi).real - np.vdot(psi, u.T_full @ psi).real
        assert shift == pytest.approx(t, abs=10 * ir)


def test_propagator_match_on_time_dependent_preset():
    u = preset_model("time_dependent")
    pm = propagator_match(u, _state(u, 10))
    assert pm.windowed_error <= 1e-10
    # The sharp comparison sees the clock-time dependence of the coupling.
    assert pm.sharp_error > 1e-3
    assert pm.steps == u.clock.d // 2


def test_kernel_restriction():
    with pytest.raises(InvertibleAlpha):
        kernel_restriction_check(_free(), _state(_free(), 0))
    u = preset_model("dilation_kernel_tuned")
    rate = rate_operator(u)
    s = _state(u, 11)
    assert kernel_restriction_check(u, s, rate) <= 1e-8
    # Inject a known amplitude along ker(alpha) at one clock reading.
    K = rate.kernel_projector
    v = np.zeros(u.dim, dtype=complex)
    v[3 * u.rest_dim:4 * u.rest_dim] = haar_state(u.rest_dim, np.random.default_rng(1))
    kv = K @ v
    kv *= 0.05 / np.linalg.norm(kv)
    assert kernel_restriction_check(u, s.psi_U + kv, rate) == pytest.approx(0.05, rel=1e-6)


def test_witness_search():
    w = find_nonunitary_witness(preset_model("klein_gordon"))
    assert w.norm_drift > 1e-3 and w.candidates > 1
    assert w.norm_drift == pytest.approx(norm_drift(np.linalg.norm(
        w.psi_U.reshape(64, -1), axis=1)))
    free = find_nonunitary_witness(_free())
    assert free.norm_drift <= 1e-10
