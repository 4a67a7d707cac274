"""Hamiltonians of the Universe, the rate operator and the unitarity conditions.

The full space is ordered clock first, then any ancilla factors, then the
rest of the Universe R.  Everything after the clock is called "the rest"
below.

Rate operator
-------------
alpha = i[H_U, T_C] is meant with the ideal commutation relation
[T_C, H_C] = i, i.e. alpha is the derivative of H_U with respect to H_C.  On
the cyclic clock the literal matrix commutator is polluted by the wrap point,
so by default alpha is computed *canonically*: H_U is split into a part
diagonal in clock time (any function of T_C, zero derivative) and a part
diagonal in clock energy, whose blocks are fitted by a low-degree polynomial
in the clock energy and differentiated.  Operators that admit no such split
fall back to the literal commutator, and ``RateOperator.method`` records
which route was used.
"""
from __future__ import annotations

import enum
import logging
import threading
from dataclasses import dataclass, field
from math import prod
from typing import Any, Sequence

import numpy as np
from numpy.polynomial import legendre

from .clock import FiniteClock, idealness_report
from .errors import DimensionMismatch, NonCommutingFactors, NotHermitian
from .operators import (
    DEFAULT_TOL,
    as_operator,
    commutator,
    hermitian_defect,
    is_hermitian,
    kernel_projector,
    pinv_hermitian,
    spectral_norm,
    SubspaceBasis,
)

log = logging.getLogger(__name__)

__all__ = [
    "Construction",
    "UniverseModel",
    "RateOperator",
    "Verdict",
    "ConditionReport",
    "build_additive",
    "build_product",
    "build_mass_energy",
    "build_custom",
    "clock_derivative",
    "rate_operator",
    "check_conditions",
    "cyclic_laplacian",
    "lattice_energy",
    "random_unitary",
    "random_commuting_model",
]

_MAX_POLY_DEGREE = 8
_FIT_RTOL = 1e-10
_SPLIT_RTOL = 1e-11


@dataclass(frozen=True)
class Construction:
    """Provenance tag: ``additive``, ``product``, ``mass_energy`` or ``custom``."""

    kind: str
    params: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class UniverseModel:
    clock: FiniteClock
    factor_dims: tuple[int, ...]
    H_U: np.ndarray
    construction: Construction
    _lock: threading.RLock = field(default_factory=threading.RLock, repr=False)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self) -> int:
        return int(self.H_U.shape[0])

    @property
    def rest_dim(self) -> int:
        return int(prod(self.factor_dims[1:]))

    def lift_clock(self, op) -> np.ndarray:
        """op (on the clock) tensored with the identity on the rest."""
        return np.kron(as_operator(op), np.eye(self.rest_dim))

    def lift_rest(self, op) -> np.ndarray:
        return np.kron(np.eye(self.clock.d), as_operator(op))

    @property
    def T_full(self) -> np.ndarray:
        return self._memo("T_full", lambda: self.lift_clock(self.clock.T_C))

    @property
    def H_C_full(self) -> np.ndarray:
        return self._memo("H_C_full", lambda: self.lift_clock(self.clock.H_C))

    def blocks(self, vector) -> np.ndarray:
        """Full-space vector reshaped to (d, rest_dim): row k is <phi_k|vector>."""
        return np.asarray(vector).reshape(self.clock.d, self.rest_dim)

    def _memo(self, key, factory):
        # Once-only initialization that is safe under concurrent first access.
        # Reentrant: factories may themselves read memoized entries.
        try:
            return self._cache[key]
        except KeyError:
            pass
        with self._lock:
            if key not in self._cache:
                self._cache[key] = factory()
            return self._cache[key]


def _check_model(clock: FiniteClock, factor_dims: Sequence[int], H: np.ndarray) -> tuple[int, ...]:
    dims = tuple(int(x) for x in factor_dims)
    if dims[0] != clock.d or any(x < 1 for x in dims):
        raise DimensionMismatch(f"factor dims {dims} must start with clock d={clock.d}")
    if H.shape[0] != prod(dims):
        raise DimensionMismatch(f"H_U has dim {H.shape[0]}, factors give {prod(dims)}")
    if hermitian_defect(H) > 1e-12 * max(1.0, float(np.max(np.abs(H)))):
        raise NotHermitian(f"H_U is not Hermitian (defect {hermitian_defect(H):.3e})")
    return dims


def build_custom(clock: FiniteClock, factor_dims: Sequence[int], H_U, **params) -> UniverseModel:
    H = as_operator(H_U, "H_U")
    dims = _check_model(clock, factor_dims, H)
    return UniverseModel(clock, dims, 0.5 * (H + H.conj().T), Construction("custom", dict(params)))


def build_additive(clock: FiniteClock, H_R, V=None) -> UniverseModel:
    """H_U = H_C (x) 1 + 1 (x) H_R + V."""
    H_R = as_operator(H_R, "H_R")
    if not is_hermitian(H_R):
        raise NotHermitian("H_R must be Hermitian")
    m = H_R.shape[0]
    H = np.kron(clock.H_C, np.eye(m)) + np.kron(np.eye(clock.d), H_R)
    if V is not None and not (np.isscalar(V) and V == 0):
        V = as_operator(V, "V")
        if V.shape != H.shape:
            raise DimensionMismatch(f"V has shape {V.shape}, expected {H.shape}")
        H = H + V
    dims = _check_model(clock, (clock.d, m), H)
    return UniverseModel(clock, dims, 0.5 * (H + H.conj().T),
                         Construction("additive", {"H_R": H_R, "V": V}))


def build_product(clock: FiniteClock, factors: Sequence, factor_dims: Sequence[int] | None = None,
                  commute_tol: float = 1e-9) -> UniverseModel:
    """Ordered product of mutually commuting Hermitian full-space factors."""
    mats = [as_operator(f, f"factor {i}") for i, f in enumerate(factors)]
    if not mats:
        raise ValueError("build_product needs at least one factor")
    n = mats[0].shape[0]
    for i, f in enumerate(mats):
        if f.shape != (n, n):
            raise DimensionMismatch(f"factor {i} has shape {f.shape}")
        if not is_hermitian(f):
            raise NotHermitian(f"factor {i} is not Hermitian")
    for i in range(len(mats)):
        for j in range(i + 1, len(mats)):
            scale = spectral_norm(mats[i]) * spectral_norm(mats[j])
            if spectral_norm(commutator(mats[i], mats[j])) > commute_tol * max(scale, 1e-300):
                raise NonCommutingFactors(f"factors {i} and {j} do not commute")
    H = mats[0]
    for f in mats[1:]:
        H = H @ f
    if factor_dims is None:
        factor_dims = (clock.d, n // clock.d)
    dims = _check_model(clock, factor_dims, 0.5 * (H + H.conj().T))
    return UniverseModel(clock, dims, 0.5 * (H + H.conj().T),
                         Construction("product", {"factors": mats}))


def cyclic_laplacian(n: int, spacing: float = 1.0) -> np.ndarray:
    """P^2 as the periodic second-difference operator -(S + S^T - 2)/a^2."""
    shift = np.roll(np.eye(n), 1, axis=0)
    return (-(shift + shift.T - 2 * np.eye(n)) / spacing**2).astype(np.complex128)


def build_mass_energy(clock: FiniteClock, cm_dim: int, m: float, Lambda_profile, H_R,
                      cm_spacing: float = 1.0) -> UniverseModel:
    """Internal clock (x) centre of mass (x) R with a position-dependent redshift.

    H_U = H_int + P^2/(2m) + H_R + Lambda(X) H_int H_R, where Lambda(X) is
    diagonal in the centre-of-mass position basis.
    """
    if cm_dim < 2:
        raise DimensionMismatch("cm_dim must be >= 2")
    profile = np.asarray(Lambda_profile, dtype=float).reshape(-1)
    if profile.shape[0] != cm_dim:
        raise DimensionMismatch(f"Lambda_profile has {profile.shape[0]} values, cm_dim is {cm_dim}")
    if m <= 0:
        raise ValueError("mass m must be positive")
    H_R = as_operator(H_R, "H_R")
    r = H_R.shape[0]
    d = clock.d
    Ic, Im, Ir = np.eye(d), np.eye(cm_dim), np.eye(r)
    kinetic = cyclic_laplacian(cm_dim, cm_spacing) / (2.0 * m)
    Lam = np.diag(profile).astype(np.complex128)
    H = (np.kron(np.kron(clock.H_C, Im), Ir)
         + np.kron(np.kron(Ic, kinetic), Ir)
         + np.kron(np.kron(Ic, Im), H_R)
         + np.kron(np.kron(clock.H_C, Lam), H_R))
    H = 0.5 * (H + H.conj().T)
    dims = _check_model(clock, (d, cm_dim, r), H)
    return UniverseModel(clock, dims, H, Construction(
        "mass_energy", {"cm_dim": cm_dim, "m": m, "Lambda_profile": profile, "H_R": H_R}))


def lattice_energy(clock: FiniteClock, n: int) -> float:
    """2 pi n / (d dt), i.e. the n-th clock energy (n may lie outside the index range)."""
    return 2.0 * np.pi * n / clock.period


def random_unitary(m: int, rng: np.random.Generator) -> np.ndarray:
    z = (rng.normal(size=(m, m)) + 1j * rng.normal(size=(m, m))) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_commuting_model(clock: FiniteClock, dim_R: int, rng: np.random.Generator,
                           time_dependent: bool = True) -> UniverseModel:
    """Additive model whose coupling keeps both unitarity conditions.

    H_R, O and O' share a random eigenbasis; V = g H_C (x) O + f(T_C) (x) O'
    with a zero-mean f.  Each H_R eigenvalue is snapped so that its sector
    has a history state: E_j = -omega_{n_j} (1 + g o_j).
    """
    W = random_unitary(dim_R, rng)
    g = float(rng.uniform(0.02, 0.2))
    o = rng.uniform(-1.0, 1.0, size=dim_R)
    n_max = max(2, clock.d // 8)
    ns = rng.choice(np.arange(-n_max, n_max + 1), size=dim_R, replace=dim_R > 2 * n_max + 1)
    E = np.array([-lattice_energy(clock, int(n)) * (1.0 + g * oj) for n, oj in zip(ns, o)])
    rot = lambda diag: (W * diag) @ W.conj().T  # noqa: E731
    H_R = rot(E)
    V = g * np.kron(clock.H_C, rot(o))
    params = {"g": g, "o": o, "n": ns}
    if time_dependent:
        o2 = rng.uniform(-1.0, 1.0, size=dim_R)
        amp = float(rng.uniform(0.05, 0.3))
        phase = float(rng.uniform(0.0, 2 * np.pi))
        f = amp * np.sin(2 * np.pi * clock.times / clock.period + phase)
        V = V + np.kron(np.diag(f), rot(o2))
        params.update({"o2": o2, "amplitude": amp, "phase": phase})
    u = build_additive(clock, H_R, V)
    return UniverseModel(u.clock, u.factor_dims, u.H_U, Construction("additive", {
        "H_R": H_R, "V": V, "random": params}))


def _time_diagonal_part(blocks4: np.ndarray) -> np.ndarray:
    d = blocks4.shape[0]
    out = np.zeros_like(blocks4)
    idx = np.arange(d)
    out[idx, :, idx, :] = blocks4[idx, :, idx, :]
    return out


def clock_derivative(H, clock: FiniteClock) -> np.ndarray | None:
    """dH/dH_C under the ideal commutation relation, or None if H does not split.

    H must be (function of T_C) + (polynomial in H_C of degree <= 8 with
    rest-space coefficients).  The energy blocks are fitted in a Legendre basis
    over the clock's energy lattice; the minimal degree that reproduces them to
    1e-10 relative accuracy is differentiated.
    """
    H = as_operator(H)
    d = clock.d
    m = H.shape[0] // d
    if m * d != H.shape[0]:
        raise DimensionMismatch("operator dimension is not a multiple of the clock dimension")
    scale = max(float(np.max(np.abs(H))), 1e-300)
    H4 = H.reshape(d, m, d, m)
    R4 = H4 - _time_diagonal_part(H4)
    F = clock.fourier
    # Move the clock index of the remainder to the energy basis.
    E4 = np.einsum("an,ajbk,bp->njpk", F.conj(), R4, F, optimize=True)
    idx = np.arange(d)
    diag_blocks = E4[idx, :, idx, :]  # (d, m, m)
    off = E4.copy()
    off[idx, :, idx, :] = 0.0
    if float(np.max(np.abs(off))) > _SPLIT_RTOL * scale * d:
        return None
    w = clock.energies
    wscale = float(np.max(np.abs(w)))
    x = w / wscale
    values = diag_blocks.reshape(d, m * m)
    vnorm = max(float(np.max(np.abs(values))), 1e-300)
    for deg in range(0, min(_MAX_POLY_DEGREE, d - 2) + 1):
        vander = legendre.legvander(x, deg)
        coef, *_ = np.linalg.lstsq(vander, values, rcond=None)
        if float(np.max(np.abs(vander @ coef - values))) <= _FIT_RTOL * max(vnorm, scale):
            break
    else:
        return None
    if deg == 0:
        return np.zeros_like(H)
    dcoef = legendre.legder(coef, axis=0) / wscale
    deriv = legendre.legvander(x, deg - 1) @ dcoef  # (d, m*m)
    deriv = deriv.reshape(d, m, m)
    # Back to the time basis: alpha = (F (x) 1) blockdiag(deriv) (F^dag (x) 1).
    A4 = np.einsum("an,njk,bn->ajbk", F, deriv, F.conj(), optimize=True)
    alpha = A4.reshape(d * m, d * m)
    return 0.5 * (alpha + alpha.conj().T)


def literal_rate(H, T_full) -> np.ndarray:
    a = 1j * commutator(H, T_full)
    return 0.5 * (a + a.conj().T)


class RateOperator:
    """alpha together with its lazily computed Moore-Penrose inverse."""

    def __init__(self, alpha: np.ndarray, method: str, eps: float = DEFAULT_TOL,
                 rank_tol: float = DEFAULT_TOL):
        self.alpha = alpha
        self.method = method
        self.eps = eps
        self.rank_tol = rank_tol
        self._lock = threading.Lock()
        self._pinv: np.ndarray | None = None
        self._kernel: tuple[np.ndarray, SubspaceBasis] | None = None

    @property
    def pinv_alpha(self) -> np.ndarray:
        if self._pinv is None:
            with self._lock:
                if self._pinv is None:
                    self._pinv = pinv_hermitian(self.alpha, self.rank_tol)
        return self._pinv

    def _kern(self) -> tuple[np.ndarray, SubspaceBasis]:
        if self._kernel is None:
            with self._lock:
                if self._kernel is None:
                    self._kernel = kernel_projector(self.alpha, self.eps)
        return self._kernel

    @property
    def kernel_projector(self) -> np.ndarray:
        """P^(0), the projector onto ker(alpha)."""
        return self._kern()[0]

    @property
    def kernel_dim(self) -> int:
        return self._kern()[1].dim

    def __repr__(self) -> str:
        return f"RateOperator(dim={self.alpha.shape[0]}, method={self.method!r})"


def rate_operator(u: UniverseModel, method: str = "canonical",
                  eps: float = DEFAULT_TOL) -> RateOperator:
    """alpha = i[H_U, T_C (x) 1]; see the module docstring for ``method``."""
    if method not in ("canonical", "literal"):
        raise ValueError(f"unknown rate method {method!r}")

    def build():
        if method == "canonical":
            alpha = clock_derivative(u.H_U, u.clock)
            if alpha is not None:
                return RateOperator(alpha, "canonical", eps=eps, rank_tol=eps)
            log.warning("H_U does not split into time- and energy-diagonal parts; "
                        "using the literal commutator")
        return RateOperator(literal_rate(u.H_U, u.T_full), "literal", eps=eps, rank_tol=eps)

    return u._memo(("rate", method, eps), build)


class Verdict(str, enum.Enum):
    UNITARY = "UnitaryConditionsHold"
    C1_FAILS = "C1Fails"
    C2_FAILS = "C2Fails"
    BOTH_FAIL = "BothFail"
    PATHOLOGICAL = "Pathological"


@dataclass(frozen=True)
class ConditionReport:
    c1_residual: float
    c2_residual: float
    pathology_dim: int
    verdict: Verdict
    threshold: float
    rate_method: str

    @property
    def holds(self) -> bool:
        return self.verdict is Verdict.UNITARY


def common_kernel_dim(a, b, eps: float = DEFAULT_TOL) -> int:
    """dim(ker a  intersect  ker b) from the rank deficiency of the stacked map."""
    a = as_operator(a)
    b = as_operator(b)
    stacked = np.vstack([a / max(spectral_norm(a), 1e-300), b / max(spectral_norm(b), 1e-300)])
    s = np.linalg.svd(stacked, compute_uv=False)
    if spectral_norm(a) == 0.0:
        s = np.linalg.svd(b / max(spectral_norm(b), 1e-300), compute_uv=False)
    return int(np.sum(s <= eps * (s[0] if s.size and s[0] > 0 else 1.0)))


def check_conditions(u: UniverseModel, tol: float = 1e-6, eps: float = DEFAULT_TOL,
                     rate: RateOperator | None = None) -> ConditionReport:
    """Residuals of [T_C, alpha] = 0 and [H_U, alpha] = 0, plus the pathology test.

    The verdict threshold is max(tol, 5 * interior_residual of the clock).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    rate = rate or rate_operator(u, eps=eps)
    alpha = rate.alpha
    na = spectral_norm(alpha)
    nt = spectral_norm(u.T_full)
    nh = spectral_norm(u.H_U)
    if na == 0.0:
        c1 = c2 = 0.0
    else:
        c1 = spectral_norm(commutator(u.T_full, alpha)) / (na * nt)
        c2 = spectral_norm(commutator(u.H_U, alpha)) / (na * max(nh, 1e-300))
    pathology = common_kernel_dim(alpha, u.H_U, eps)
    threshold = max(tol, 5.0 * idealness_report(u.clock).interior_residual)
    if pathology > 0:
        verdict = Verdict.PATHOLOGICAL
    elif c1 > threshold and c2 > threshold:
        verdict = Verdict.BOTH_FAIL
    elif c1 > threshold:
        verdict = Verdict.C1_FAILS
    elif c2 > threshold:
        verdict = Verdict.C2_FAILS
    else:
        verdict = Verdict.UNITARY
    return ConditionReport(c1_residual=float(c1), c2_residual=float(c2), pathology_dim=pathology,
                           verdict=verdict, threshold=threshold, rate_method=rate.method)
