from __future__ import annotations

import numpy as np
import pytest
from conftest import preset_model

from chronos.clock import idealness_report, make_clock
from chronos.dynamics import physical_kernel
from chronos.equivalence import (
    PropagatorFamily,
    build_equivalent_constraint,
    extract_propagator_family,
    generator_from_propagator,
    verify_equivalence,
)
from chronos.errors import DimensionMismatch, EmptyKernel, GridTooSmall, NonUnitaryWitness
from chronos.operators import expm_general, kernel_projector
from chronos.scenarios import build_model, preset
from chronos.universe import Verdict, build_additive, lattice_energy


def _free(d=32, dt=1.0, ns=(1, 3, -2)):
    c = make_clock(d, dt)
    return build_additive(c, np.diag([-lattice_energy(c, n) for n in ns]).astype(complex))


def _family_from(U, dt):
    d, m, _ = U.shape
    return PropagatorFamily(t_grid=np.arange(d) * dt, U=U, allowed_projector=np.eye(m),
                            fit_residual=0.0, isometry_defect=0.0)


def _pipeline(u):
    fam = extract_propagator_family(u)
    gen = generator_from_propagator(fam, u.clock)
    ec = build_equivalent_constraint(u.clock, gen.X, fam.allowed_projector, fam.U)
    return fam, gen, ec


# ---------------------------------------------------------------- propagator family

def test_free_family_is_schrodinger():
    u = _free()
    fam = extract_propagator_family(u)
    HR = u.construction.params["H_R"]
    assert fam.fit_residual <= 1e-8
    for k, t in enumerate(u.clock.times):
        assert np.allclose(fam.U[k], expm_general(HR, t), atol=1e-8)
    assert np.allclose(fam.U[0], np.eye(u.rest_dim), atol=1e-12)
    assert fam.dt == pytest.approx(u.clock.dt)


def test_product_constraint_shares_the_free_family():
    ref = build_model(preset("free"))
    prod = preset_model("product_unitary")
    a = extract_propagator_family(ref)
    b = extract_propagator_family(prod)
    assert np.max(np.abs(a.U - b.U)) <= 1e-8


def test_klein_gordon_has_no_shared_propagator():
    with pytest.raises(NonUnitaryWitness) as info:
        extract_propagator_family(preset_model("klein_gordon"))
    assert info.value.defect > 1e-6


def test_empty_kernel_family():
    c = make_clock(8, 1.0)
    with pytest.raises(EmptyKernel):
        extract_propagator_family(build_additive(c, np.diag([0.1])))


# ---------------------------------------------------------------- generator

def test_centered_generator_recovers_H_R():
    u = _free()
    HR = u.construction.params["H_R"]
    U = np.array([expm_general(HR, t) for t in u.clock.times])
    gen = generator_from_propagator(_family_from(U, u.clock.dt), method="centered")
    assert gen.defect <= 1e-12
    e = np.abs(np.diag(HR))
    # sin(E dt)/dt versus E: relative error E^2 dt^2 / 6.
    assert np.max(np.abs(gen.X - HR)) <= np.max(e**3) * u.clock.dt**2 / 6 * 1.01
    spectral = generator_from_propagator(_family_from(U, u.clock.dt), u.clock)
    assert np.max(np.abs(spectral.X - HR)) <= 1e-9


def test_identity_family_has_zero_generator():
    U = np.broadcast_to(np.eye(2), (8, 2, 2)).copy()
    for method in ("centered", "spectral"):
        gen = generator_from_propagator(_family_from(U, 0.5), make_clock(8, 0.5), method=method)
        assert np.allclose(gen.X, 0.0, atol=1e-12)
    assert len(gen) == 8 and len(list(gen)) == 8


def test_time_dependent_generator():
    cfg = preset("time_dependent")
    u = preset_model("time_dependent")
    fam = extract_propagator_family(u)
    HR = u.construction.params["H_R"]
    O = np.diag(cfg.coupling.params["operator"][: u.rest_dim])
    c = u.clock
    f = cfg.coupling.params["amplitude"] * np.sin(2 * np.pi * c.times / c.period)
    assert np.allclose(u.construction.params["V"], np.kron(np.diag(f), O))
    expected = np.array([HR + fk * O for fk in f])
    spectral = generator_from_propagator(fam, u.clock)
    assert np.max(np.abs(spectral.X - expected)) <= 1e-8
    cent = generator_from_propagator(fam, method="centered")
    assert np.max(np.abs(cent.X - expected)) <= 0.05
    assert cent.defect > spectral.defect


def test_generator_convergence_under_halving():
    # Fixed period with halved spacing keeps the snapped energies.
    errs = []
    defects = []
    for d in (32, 64):
        u = _free(d, 32.0 / d)
        HR = u.construction.params["H_R"]
        gen = generator_from_propagator(extract_propagator_family(u), method="centered")
        errs.append(float(np.max(np.abs(gen.X - HR))))
        defects.append(gen.defect)
    assert errs[0] / errs[1] >= 3.5
    assert max(defects) <= 1e-8


def test_generator_errors():
    U = np.broadcast_to(np.eye(2), (2, 2, 2)).copy()
    with pytest.raises(GridTooSmall):
        generator_from_propagator(_family_from(U, 1.0))
    U3 = np.broadcast_to(np.eye(2), (4, 2, 2)).copy()
    with pytest.raises(ValueError):
        generator_from_propagator(_family_from(U3, 1.0), method="spectral")
    with pytest.raises(ValueError):
        generator_from_propagator(_family_from(U3, 1.0), method="weird")
    with pytest.raises(DimensionMismatch):
        generator_from_propagator(_family_from(U3, 1.0), make_clock(5, 1.0))


# ---------------------------------------------------------------- constraints

def test_trivial_constraint_assembly():
    c = make_clock(8, 0.5)
    HR = np.diag([0.3, -0.2])
    ec = build_equivalent_constraint(c, [HR] * c.d, np.eye(2))
    expected = np.kron(c.H_C, np.eye(2)) + np.kron(np.eye(c.d), HR)
    assert np.allclose(ec.C, expected)
    assert np.allclose(ec.C_prime, ec.C)
    assert np.allclose(ec.C, ec.C.conj().T, atol=1e-9)


def test_constraint_length_and_shape_checks():
    c = make_clock(8, 0.5)
    with pytest.raises(DimensionMismatch):
        build_equivalent_constraint(c, [np.eye(2)] * 7, np.eye(2))
    with pytest.raises(DimensionMismatch):
        build_equivalent_constraint(c, [np.eye(2)] * 8, np.eye(3))
    with pytest.raises(DimensionMismatch):
        build_equivalent_constraint(c, [np.eye(2)] * 8, np.eye(2), propagators=np.zeros((8, 3, 3)))


def test_product_constraint_kernel_is_contained():
    u = preset_model("product_unitary")
    _, _, ec = _pipeline(u)
    rep = verify_equivalence(u, ec)
    assert rep.containment_residual <= 1e-7
    assert rep.equality_angle <= 1e-6


def test_restricted_allowed_space():
    u = preset_model("dilation_kernel_tuned")
    ir = idealness_report(u.clock).interior_residual
    fam, _, ec = _pipeline(u)
    rep = verify_equivalence(u, ec)
    assert np.linalg.matrix_rank(fam.allowed_projector, tol=1e-8) == u.rest_dim - 1
    assert rep.equality_angle <= 1e-6 + 10 * ir
    assert rep.c_strictly_larger
    assert rep.kernel_dims["C"] > rep.kernel_dims["C_prime"] == rep.kernel_dims["H_U"]
    assert rep.conditions.verdict is Verdict.UNITARY


def test_time_independent_allowed_space_simplifies():
    u = preset_model("dilation_kernel_tuned")
    fam, gen, ec = _pipeline(u)
    for U in fam.U:
        assert np.allclose(U @ fam.allowed_projector, fam.allowed_projector @ U, atol=1e-9)
    P_plus = np.kron(np.eye(u.clock.d), fam.allowed_projector)
    XT = ec.C - np.kron(u.clock.H_C, np.eye(u.rest_dim))
    reduced = P_plus @ np.kron(u.clock.H_C, np.eye(u.rest_dim)) + XT
    assert np.max(np.abs(ec.C_prime - ec.mu * ec.P0_full - reduced)) <= 1e-9


def test_spectral_generator_annihilates_history_states():
    u = preset_model("time_dependent")
    _, _, ec = _pipeline(u)
    _, basis = physical_kernel(u)
    assert np.linalg.norm(ec.C @ basis.columns, 2) <= 1e-9
    _, kc = kernel_projector(ec.C_prime)
    assert kc.dim == basis.dim


def test_free_self_test():
    u = _free()
    _, _, ec = _pipeline(u)
    rep = verify_equivalence(u, ec)
    assert rep.containment_residual <= 1e-8 and rep.equality_angle <= 1e-8
    assert rep.conditions.holds


@pytest.mark.parametrize("name", ["free", "time_dependent", "dilation", "dilation_kernel_tuned",
                                  "product_unitary"])
def test_round_trip_on_unitary_presets(name):
    u = preset_model(name)
    ir = idealness_report(u.clock).interior_residual
    _, _, ec = _pipeline(u)
    rep = verify_equivalence(u, ec)
    assert rep.conditions.holds
    assert rep.equality_angle <= 1e-6 + 10 * ir
