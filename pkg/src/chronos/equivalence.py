"""Equivalent first-order constraints built from a unitary relational dynamics.

Pipeline: :func:`extract_propagator_family` fits one propagator per clock
reading to all kernel states at once, :func:`generator_from_propagator` turns
it into X_R(t_k), :func:`build_equivalent_constraint` assembles
C = H_C + X_R(T_C) and the restricted C', and :func:`verify_equivalence`
compares their kernels with ker(H_U).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .clock import FiniteClock
from .dynamics import physical_kernel
from .errors import DimensionMismatch, EmptyKernel, GridTooSmall, NonUnitaryWitness
from .operators import (
    DEFAULT_TOL,
    as_operator,
    kernel_projector,
    orthonormal_basis,
    spectral_norm,
    subspace_angle,
)
from .universe import ConditionReport, UniverseModel, build_custom, check_conditions

__all__ = [
    "PropagatorFamily",
    "GeneratorResult",
    "EquivalentConstraint",
    "EquivalenceReport",
    "extract_propagator_family",
    "generator_from_propagator",
    "build_equivalent_constraint",
    "verify_equivalence",
]

UNITARY_TOL = 1e-6


@dataclass(frozen=True)
class PropagatorFamily:
    t_grid: np.ndarray
    U: np.ndarray  # (d, m, m); U[k] maps psi_R(t_0) to psi_R(t_k)
    allowed_projector: np.ndarray  # P+_R(t_0): span of all psi_R(t_0) of kernel states
    fit_residual: float
    isometry_defect: float

    @property
    def dt(self) -> float:
        return float(self.t_grid[1] - self.t_grid[0])


def extract_propagator_family(u: UniverseModel, eps: float = DEFAULT_TOL,
                              unitary_tol: float = UNITARY_TOL) -> PropagatorFamily:
    """Least-squares propagators shared by every state in ker(H_U).

    Raises :class:`NonUnitaryWitness` when the kernel states cannot all be
    carried by one isometry per time step.
    """
    _, basis = physical_kernel(u, eps)
    if basis.dim == 0:
        raise EmptyKernel(f"H_U has no 0-eigenvectors at eps={eps:g}")
    d, m = u.clock.d, u.rest_dim
    Y = basis.columns.reshape(d, m, basis.dim)  # Y[k] = [psi_R^(j)(t_k)]_j
    Y0 = Y[0]
    allowed = orthonormal_basis(Y0)
    P_plus = allowed.projector()
    Y0_pinv = np.linalg.pinv(Y0, rcond=1e-10)
    U = np.einsum("kmr,rn->kmn", Y, Y0_pinv)
    fit = 0.0
    scale = max(float(np.linalg.norm(Y0, 2)), 1e-300)
    Q = allowed.columns
    iso = 0.0
    for k in range(d):
        fit = max(fit, float(np.linalg.norm(U[k] @ Y0 - Y[k], 2)) / scale)
        # Y0 has orthogonal structure only up to the kernel basis choice, so
        # the isometry is tested on an orthonormal basis of the allowed space.
        G = (U[k] @ Q).conj().T @ (U[k] @ Q)
        iso = max(iso, float(np.linalg.norm(G - np.eye(allowed.dim), 2)))
    if fit > unitary_tol:
        raise NonUnitaryWitness(
            f"kernel states do not share one propagator (fit residual {fit:.3e})", fit)
    if iso > unitary_tol:
        raise NonUnitaryWitness(
            f"fitted propagator is not an isometry (defect {iso:.3e})", iso)
    return PropagatorFamily(t_grid=u.clock.times.copy(), U=U, allowed_projector=P_plus,
                            fit_residual=fit, isometry_defect=iso)


@dataclass(frozen=True)
class GeneratorResult:
    """X_R(t_k) after Hermitization, with the removed anti-Hermitian part."""

    X: np.ndarray  # (d, m, m)
    defect: float
    method: str

    def __iter__(self):
        return iter(self.X)

    def __len__(self) -> int:
        return int(self.X.shape[0])


def generator_from_propagator(fam: PropagatorFamily, clock: FiniteClock | None = None,
                              method: str = "spectral") -> GeneratorResult:
    """X_R(t_k) = i dU/dt U^dagger at every clock reading.

    ``method="centered"`` uses i (U[k+1] - U[k-1]) / (2 dt) U[k]^dagger with
    cyclic neighbours.  ``method="spectral"`` applies the clock Hamiltonian
    itself as the derivative, X_k = -sum_j (H_C)_kj U[j] U[k]^dagger, which
    makes H_C + X_R(T_C) annihilate every history state exactly; it needs
    the clock.
    """
    U = fam.U
    d = U.shape[0]
    if d < 3:
        raise GridTooSmall("the generator needs at least three clock readings")
    if method == "centered":
        dU = (np.roll(U, -1, axis=0) - np.roll(U, 1, axis=0)) / (2.0 * fam.dt)
        raw = 1j * np.einsum("kab,kcb->kac", dU, U.conj())
    elif method == "spectral":
        if clock is None:
            raise ValueError("the spectral generator needs the clock")
        if clock.d != d:
            raise DimensionMismatch(f"family has {d} readings, clock has {clock.d}")
        mixed = np.einsum("kj,jab->kab", clock.H_C, U)
        raw = -np.einsum("kab,kcb->kac", mixed, U.conj())
    else:
        raise ValueError(f"unknown generator method {method!r}")
    herm = 0.5 * (raw + np.conj(np.swapaxes(raw, 1, 2)))
    anti = raw - herm
    defect = float(max(np.linalg.norm(a, 2) for a in anti))
    return GeneratorResult(X=herm, defect=defect, method=method)


@dataclass(frozen=True)
class EquivalentConstraint:
    C: np.ndarray
    C_prime: np.ndarray
    allowed_projector: np.ndarray
    P0_full: np.ndarray  # P0(T_C) on the full space
    mu: float


def _blockdiag_in_time(blocks: np.ndarray) -> np.ndarray:
    d, m, _ = blocks.shape
    out = np.zeros((d, m, d, m), dtype=np.complex128)
    idx = np.arange(d)
    out[idx, :, idx, :] = blocks
    return out.reshape(d * m, d * m)


def build_equivalent_constraint(clock: FiniteClock, X_list: Sequence, allowed_projector,
                                propagators: np.ndarray | None = None,
                                mu: float = 1.0) -> EquivalentConstraint:
    """C = H_C + X_R(T_C) and C' = H_C - P0 H_C P0 + X_R(T_C) + mu P0.

    P0(T_C) is I - U[k] P+ U[k]^dagger at reading k; without ``propagators``
    it is taken time independent, I - P+.  The mu P0 term gives X_R a nonzero
    P0 sector so that C' rejects states outside the allowed subspace.
    """
    X = np.asarray([as_operator(x, f"X_R(t_{k})") for k, x in enumerate(X_list)])
    if X.shape[0] != clock.d:
        raise DimensionMismatch(f"X_list has {X.shape[0]} entries, clock has d={clock.d}")
    m = X.shape[1]
    P_plus = as_operator(allowed_projector, "allowed projector")
    if P_plus.shape != (m, m):
        raise DimensionMismatch(f"allowed projector has shape {P_plus.shape}, expected {(m, m)}")
    if propagators is None:
        P0_blocks = np.broadcast_to(np.eye(m) - P_plus, (clock.d, m, m))
    else:
        U = np.asarray(propagators)
        if U.shape != (clock.d, m, m):
            raise DimensionMismatch(f"propagators have shape {U.shape}")
        P0_blocks = np.eye(m) - np.einsum("kab,bc,kdc->kad", U, P_plus, U.conj())
    P0_blocks = 0.5 * (P0_blocks + np.conj(np.swapaxes(P0_blocks, 1, 2)))
    HC = np.kron(clock.H_C, np.eye(m))
    XT = _blockdiag_in_time(X)
    P0 = _blockdiag_in_time(np.array(P0_blocks))
    C = HC + XT
    C_prime = HC - P0 @ HC @ P0 + XT + mu * P0
    C = 0.5 * (C + C.conj().T)
    C_prime = 0.5 * (C_prime + C_prime.conj().T)
    return EquivalentConstraint(C=C, C_prime=C_prime, allowed_projector=P_plus,
                                P0_full=P0, mu=float(mu))


@dataclass(frozen=True)
class EquivalenceReport:
    containment_residual: float  # ||(1 - P_ker C) P_ker H_U||
    equality_angle: float  # angle between ker C' and ker H_U
    kernel_dims: dict[str, int]
    conditions: ConditionReport

    @property
    def c_strictly_larger(self) -> bool:
        return self.kernel_dims["C"] > self.kernel_dims["H_U"]


def verify_equivalence(u: UniverseModel, ec: EquivalentConstraint, eps: float = DEFAULT_TOL,
                       condition_tol: float = 1e-6) -> EquivalenceReport:
    P_h, basis_h = physical_kernel(u, eps)
    P_c, basis_c = kernel_projector(ec.C, eps)
    _, basis_cp = kernel_projector(ec.C_prime, eps)
    containment = spectral_norm((np.eye(u.dim) - P_c) @ P_h)
    angle = subspace_angle(basis_cp, basis_h)
    cp_model = build_custom(u.clock, u.factor_dims, ec.C_prime, source="equivalent_constraint")
    cond = check_conditions(cp_model, tol=condition_tol, eps=eps)
    return EquivalenceReport(
        containment_residual=containment, equality_angle=angle,
        kernel_dims={"H_U": basis_h.dim, "C": basis_c.dim, "C_prime": basis_cp.dim},
        conditions=cond)

