"""Dense complex operator algebra.

Operators are plain ``numpy`` complex arrays of shape ``(n, n)``; the helpers
here validate shape and Hermiticity on demand instead of caching a flag.
Every routine is a pure function of its inputs.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import reduce

import numpy as np

from .errors import DimensionMismatch, NotHermitian

__all__ = [
    "DEFAULT_TOL",
    "EigDecomposition",
    "SubspaceBasis",
    "as_operator",
    "as_state",
    "is_hermitian",
    "hermitian_defect",
    "spectral_norm",
    "tensor",
    "commutator",
    "eigh",
    "expm_general",
    "pinv_hermitian",
    "kernel_projector",
    "subspace_angle",
    "orthonormal_basis",
    "identity",
]

DEFAULT_TOL = 1e-9
_HERMITIAN_RTOL = 1e-10
_PHASE_CUTOFF = 1e-8


def as_operator(a, name: str = "operator") -> np.ndarray:
    """Return ``a`` as a square complex128 array, raising on bad shape."""
    arr = np.asarray(a, dtype=np.complex128)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {arr.shape}")
    return arr


def as_state(v, dim: int | None = None, name: str = "state") -> np.ndarray:
    arr = np.asarray(v, dtype=np.complex128).reshape(-1)
    if dim is not None and arr.shape[0] != dim:
        raise DimensionMismatch(f"{name} has length {arr.shape[0]}, expected {dim}")
    return arr


def identity(n: int) -> np.ndarray:
    return np.eye(n, dtype=np.complex128)


def hermitian_defect(a) -> float:
    """max_ij |A_ij - conj(A_ji)|."""
    a = as_operator(a)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - a.conj().T)))


def is_hermitian(a, rtol: float = _HERMITIAN_RTOL) -> bool:
    a = as_operator(a)
    scale = float(np.max(np.abs(a))) if a.size else 0.0
    return hermitian_defect(a) <= rtol * max(scale, 1e-300)


def _require_hermitian(a: np.ndarray, name: str, rtol: float = _HERMITIAN_RTOL) -> np.ndarray:
    if not is_hermitian(a, rtol):
        raise NotHermitian(f"{name} is not Hermitian (defect {hermitian_defect(a):.3e})")
    return 0.5 * (a + a.conj().T)


def spectral_norm(a) -> float:
    a = np.asarray(a, dtype=np.complex128)
    if a.size == 0:
        return 0.0
    if a.ndim == 1:
        return float(np.linalg.norm(a))
    return float(np.linalg.norm(a, 2))


def tensor(*ops) -> np.ndarray:
    """Kronecker product of one or more square operators, left factor outermost."""
    if not ops:
        raise ValueError("tensor needs at least one operator")
    mats = [as_operator(op, f"factor {i}") for i, op in enumerate(ops)]
    return reduce(np.kron, mats)


def commutator(a, b) -> np.ndarray:
    a = as_operator(a, "a")
    b = as_operator(b, "b")
    if a.shape != b.shape:
        raise DimensionMismatch(f"commutator of {a.shape} and {b.shape}")
    return a @ b - b @ a


@dataclass(frozen=True)
class EigDecomposition:
    """Ascending eigenvalues and orthonormal eigenvectors (as columns)."""

    values: np.ndarray
    vectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.values) @ self.vectors.conj().T


def _fix_phases(vectors: np.ndarray) -> np.ndarray:
    out = vectors.copy()
    mags = np.abs(out)
    for j in range(out.shape[1]):
        col = mags[:, j]
        cutoff = _PHASE_CUTOFF * col.max()
        i = int(np.argmax(col > cutoff))
        ph = out[i, j] / mags[i, j]
        out[:, j] *= np.conj(ph)
        out[i, j] = mags[i, j]
    return out


def eigh(a, rtol: float = _HERMITIAN_RTOL) -> EigDecomposition:
    """Hermitian eigendecomposition with a reproducible phase convention.

    Eigenvalues ascend; in each eigenvector the first component whose modulus
    exceeds ``1e-8`` of the column maximum is made real and positive.
    """
    a = _require_hermitian(as_operator(a), "eigh input", rtol)
    values, vectors = np.linalg.eigh(a)
    return EigDecomposition(values=values, vectors=_fix_phases(vectors))


# Pade coefficients and 1-norm thresholds for scaling and squaring.
_PADE = {
    3: (120.0, 60.0, 12.0, 1.0),
    5: (30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0),
    7: (17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0),
    9: (17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0,
        2162160.0, 110880.0, 3960.0, 90.0, 1.0),
    13: (64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
         1187353796428800.0, 129060195264000.0, 10559470521600.0,
         670442572800.0, 33522128640.0, 1323241920.0, 40840800.0, 960960.0,
         16380.0, 182.0, 1.0),
}
_THETA = {
    3: 1.495585217958292e-2,
    5: 2.539398330063230e-1,
    7: 9.504178996162932e-1,
    9: 2.097847961257068e0,
    13: 5.371920351148152e0,
}


def _pade_uv(a: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    b = _PADE[m]
    eye = np.eye(a.shape[0], dtype=a.dtype)
    a2 = a @ a
    if m == 13:
        a4 = a2 @ a2
        a6 = a4 @ a2
        u = a @ (a6 @ (b[13] * a6 + b[11] * a4 + b[9] * a2)
                 + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * eye)
        v = (a6 @ (b[12] * a6 + b[10] * a4 + b[8] * a2)
             + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * eye)
        return u, v
    powers = [eye, a2]
    for _ in range(2, m // 2 + 1):
        powers.append(powers[-1] @ a2)
    u_inner = sum(b[2 * k + 1] * powers[k] for k in range(m // 2 + 1))
    v = sum(b[2 * k] * powers[k] for k in range(m // 2 + 1))
    return a @ u_inner, v


def _expm(a: np.ndarray) -> np.ndarray:
    n = a.shape[0]
    if n == 0:
        return a.copy()
    norm1 = float(np.linalg.norm(a, 1))
    if norm1 == 0.0:
        return np.eye(n, dtype=a.dtype)
    for m in (3, 5, 7, 9):
        if norm1 <= _THETA[m]:
            u, v = _pade_uv(a, m)
            return np.linalg.solve(v - u, v + u)
    s = max(0, int(np.ceil(np.log2(norm1 / _THETA[13]))))
    u, v = _pade_uv(a / 2.0**s, 13)
    r = np.linalg.solve(v - u, v + u)
    for _ in range(s):
        r = r @ r
    return r


def expm_general(g, t: float = 1.0) -> np.ndarray:
    """exp(-i g t) by scaling and squaring with a diagonal Pade approximant.

    ``g`` need not be normal; no eigendecomposition is used.
    """
    g = as_operator(g, "generator")
    return _expm(-1j * float(t) * g)


def pinv_hermitian(a, rank_tol: float = DEFAULT_TOL) -> np.ndarray:
    """Spectral Moore-Penrose inverse of a Hermitian operator.

    Eigenvalues with ``|lambda| <= rank_tol * max|lambda|`` are mapped to zero.
    """
    dec = eigh(a)
    lam = dec.values
    scale = float(np.max(np.abs(lam))) if lam.size else 0.0
    keep = np.abs(lam) > rank_tol * scale
    inv = np.zeros_like(lam)
    inv[keep] = 1.0 / lam[keep]
    out = (dec.vectors * inv) @ dec.vectors.conj().T
    return 0.5 * (out + out.conj().T)


@dataclass(frozen=True)
class SubspaceBasis:
    """Orthonormal columns spanning a subspace of a ``ambient_dim`` space."""

    columns: np.ndarray

    @property
    def ambient_dim(self) -> int:
        return int(self.columns.shape[0])

    @property
    def dim(self) -> int:
        return int(self.columns.shape[1])

    def projector(self) -> np.ndarray:
        p = self.columns @ self.columns.conj().T
        return 0.5 * (p + p.conj().T)


def orthonormal_basis(vectors, rtol: float = 1e-10) -> SubspaceBasis:
    """Orthonormal basis of the column span of ``vectors`` (SVD, relative cutoff)."""
    m = np.asarray(vectors, dtype=np.complex128)
    if m.ndim == 1:
        m = m[:, None]
    if m.shape[1] == 0:
        return SubspaceBasis(np.zeros((m.shape[0], 0), dtype=np.complex128))
    u, s, _ = np.linalg.svd(m, full_matrices=False)
    rank = int(np.sum(s > rtol * s[0])) if s.size and s[0] > 0 else 0
    return SubspaceBasis(_fix_phases(u[:, :rank]) if rank else u[:, :0])


def kernel_projector(a, eps: float = DEFAULT_TOL) -> tuple[np.ndarray, SubspaceBasis]:
    """Projector onto eigenvectors of Hermitian ``a`` with ``|lambda| <= eps*||a||_2``."""
    dec = eigh(a)
    scale = float(np.max(np.abs(dec.values))) if dec.values.size else 0.0
    mask = np.abs(dec.values) <= eps * scale
    basis = SubspaceBasis(dec.vectors[:, mask])
    return basis.projector(), basis


def subspace_angle(a: SubspaceBasis, b: SubspaceBasis) -> float:
    """Largest principal angle between two subspaces, in radians.

    Subspaces of different dimension are at angle pi/2 (their projectors differ
    by a unit spectral norm), so a zero angle means equal spans.
    """
    if a.ambient_dim != b.ambient_dim:
        raise DimensionMismatch(
            f"ambient dimensions differ: {a.ambient_dim} vs {b.ambient_dim}")
    if a.dim != b.dim:
        return float(np.pi / 2)
    if a.dim == 0:
        return 0.0
    residual = b.columns - a.columns @ (a.columns.conj().T @ b.columns)
    sin_max = np.linalg.norm(residual, 2)
    return float(np.arcsin(min(1.0, sin_max)))
