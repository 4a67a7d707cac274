"""Stationary states, relative states and the closed-form relational propagator."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .clock import FiniteClock
from .errors import (
    EmptyKernel,
    GridMismatch,
    InvertibleAlpha,
    SeedAnnihilated,
)
from .operators import (
    DEFAULT_TOL,
    SubspaceBasis,
    as_state,
    expm_general,
    kernel_projector,
)
from .universe import RateOperator, UniverseModel, rate_operator

__all__ = [
    "StationaryState",
    "TrajectoryRecord",
    "PropagatorCheck",
    "Witness",
    "physical_kernel",
    "product_seed",
    "prepare_stationary",
    "extract_trajectory",
    "closed_form_propagator",
    "propagator_match",
    "kernel_restriction_check",
    "unitarity_diagnostics",
    "norm_drift",
    "reduced_trajectory",
    "find_nonunitary_witness",
]

_ANNIHILATION_TOL = 1e-12


@dataclass(frozen=True)
class StationaryState:
    psi_U: np.ndarray
    constraint_residual: float
    seed: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class TrajectoryRecord:
    """Relative states psi_U(t_k) = Pi_k psi_U, stored as rows of ``rel_states``."""

    times: np.ndarray
    rel_states: np.ndarray  # (d, N)
    norms: np.ndarray
    gram_drift: float
    residuals: np.ndarray
    rest_dim: int

    def __len__(self) -> int:
        return int(self.times.shape[0])

    def blocks(self) -> np.ndarray:
        """(d, rest_dim) array whose row k is the rest-space part at t_k."""
        d = len(self)
        return np.stack([self.rel_states[k].reshape(d, self.rest_dim)[k] for k in range(d)])


def physical_kernel(u: UniverseModel, eps: float = DEFAULT_TOL) -> tuple[np.ndarray, SubspaceBasis]:
    """Projector onto ker(H_U) and its basis, memoized on the model."""
    return u._memo(("kernel", eps), lambda: kernel_projector(u.H_U, eps))


def product_seed(u: UniverseModel, k: int, rest_vector) -> np.ndarray:
    """|phi_k> (x) rest_vector as a full-space vector."""
    v = as_state(rest_vector, u.rest_dim, "rest vector")
    e = np.zeros(u.clock.d, dtype=np.complex128)
    e[k] = 1.0
    return np.kron(e, v)


def prepare_stationary(u: UniverseModel, seed, eps: float = DEFAULT_TOL,
                       weighting: str = "projector") -> StationaryState:
    """Project ``seed`` onto ker(H_U) and normalize.

    ``weighting="projector"`` is the plain spectral projection.  With
    ``weighting="group_average"`` each kernel direction is additionally
    divided by |<alpha>| in the eigenbasis of alpha compressed to the kernel,
    which is what averaging exp(-i H_U t) over the whole time line does when
    the clock is ideal; it makes Pi_0 psi_U proportional to alpha^+ seed.
    """
    seed_v = as_state(seed, u.dim, "seed")
    sn = float(np.linalg.norm(seed_v))
    if sn == 0.0:
        raise SeedAnnihilated("seed is the zero vector")
    seed_v = seed_v / sn
    _, basis = physical_kernel(u, eps)
    if basis.dim == 0:
        raise EmptyKernel(f"H_U has no 0-eigenvectors at eps={eps:g}")
    K = basis.columns
    coeff = K.conj().T @ seed_v
    if weighting == "group_average":
        rate = rate_operator(u, eps=eps)
        M = K.conj().T @ rate.alpha @ K
        mu, W = np.linalg.eigh(0.5 * (M + M.conj().T))
        scale = max(float(np.max(np.abs(mu))), 1e-300)
        w = np.where(np.abs(mu) > eps * scale, 1.0 / np.maximum(np.abs(mu), 1e-300), 1.0)
        coeff = W @ (w * (W.conj().T @ coeff))
    elif weighting != "projector":
        raise ValueError(f"unknown weighting {weighting!r}")
    psi = K @ coeff
    pn = float(np.linalg.norm(psi))
    if pn < _ANNIHILATION_TOL:
        raise SeedAnnihilated(f"seed has no component in ker(H_U) (norm {pn:.2e})")
    psi = psi / pn
    resid = float(np.linalg.norm(u.H_U @ psi))
    return StationaryState(psi_U=psi, constraint_residual=resid,
                           seed={"weighting": weighting, "eps": eps, "kernel_dim": basis.dim})


def _cyclic_derivative(blocks: np.ndarray, dt: float) -> np.ndarray:
    return (np.roll(blocks, -1, axis=0) - np.roll(blocks, 1, axis=0)) / (2.0 * dt)


def schrodinger_residuals(u: UniverseModel, blocks: np.ndarray,
                          rate: RateOperator | None = None) -> np.ndarray:
    """||i alpha d/dt psi_U(t_k) - H_U psi_U(t_k)|| with a centred clock derivative.

    d/dt (Pi_t Psi) = -i[H_C, Pi_t] Psi; the H_C Pi_t Psi piece is applied
    exactly and the remaining |phi_t> (x) d psi_R/dt piece by centred
    differences on the cyclic grid.
    """
    rate = rate or rate_operator(u)
    d, m = blocks.shape
    cols = np.zeros((d, d, m), dtype=np.complex128)
    idx = np.arange(d)
    cols[idx, idx, :] = blocks
    psi_t = cols.reshape(d, d * m).T  # column k is psi_U(t_k)
    dcols = np.zeros_like(cols)
    dcols[idx, idx, :] = _cyclic_derivative(blocks, u.clock.dt)
    dpsi = -1j * (u.H_C_full @ psi_t) + dcols.reshape(d, d * m).T
    res = 1j * (rate.alpha @ dpsi) - u.H_U @ psi_t
    return np.linalg.norm(res, axis=0)


def _trajectory_from_blocks(u: UniverseModel, blocks: np.ndarray, with_residuals: bool,
                            rate: RateOperator | None) -> TrajectoryRecord:
    d, m = blocks.shape
    rel = np.zeros((d, d, m), dtype=np.complex128)
    idx = np.arange(d)
    rel[idx, idx, :] = blocks
    norms = np.linalg.norm(blocks, axis=1)
    n0 = norms[0]
    if n0 > 0:
        gram = float(np.max(np.abs(norms**2 - n0**2)) / n0**2)
    else:
        gram = 0.0
    resid = schrodinger_residuals(u, blocks, rate) if with_residuals else np.zeros(d)
    return TrajectoryRecord(times=u.clock.times.copy(), rel_states=rel.reshape(d, d * m),
                            norms=norms, gram_drift=gram, residuals=resid, rest_dim=m)


def extract_trajectory(u: UniverseModel, s: StationaryState | np.ndarray,
                       with_residuals: bool = True) -> TrajectoryRecord:
    """Relative states at every clock reading, with norms and Schrodinger residuals."""
    psi = s.psi_U if isinstance(s, StationaryState) else as_state(s, u.dim)
    return _trajectory_from_blocks(u, u.blocks(psi).copy(), with_residuals, None)


def reduced_trajectory(traj: TrajectoryRecord, clock: FiniteClock) -> np.ndarray:
    """psi_R(t_k) = <phi_k| psi_U(t_k)>, as rows of a (d, rest_dim) array."""
    d = clock.d
    if len(traj) != d:
        raise GridMismatch(f"trajectory has {len(traj)} points, clock has {d}")
    phi = clock.time_states
    out = np.empty((d, traj.rest_dim), dtype=np.complex128)
    for k in range(d):
        out[k] = phi[:, k].conj() @ traj.rel_states[k].reshape(d, traj.rest_dim)
    return out


def norm_drift(norms: np.ndarray) -> float:
    norms = np.asarray(norms, dtype=float)
    if norms.size == 0 or norms[0] == 0.0:
        return 0.0
    return float(np.max(np.abs(norms - norms[0])) / norms[0])


def unitarity_diagnostics(traj_a: TrajectoryRecord, traj_b: TrajectoryRecord) -> tuple[float, float]:
    """(norm_drift over both trajectories, drift of their mutual overlap)."""
    if traj_a.times.shape != traj_b.times.shape or not np.allclose(traj_a.times, traj_b.times):
        raise GridMismatch("trajectories live on different time grids")
    if traj_a.rel_states.shape != traj_b.rel_states.shape:
        raise GridMismatch("trajectories live on different spaces")
    nd = max(norm_drift(traj_a.norms), norm_drift(traj_b.norms))
    overlaps = np.einsum("kn,kn->k", traj_a.rel_states.conj(), traj_b.rel_states)
    scale = traj_a.norms[0] * traj_b.norms[0]
    gd = float(np.max(np.abs(overlaps - overlaps[0])) / scale) if scale > 0 else 0.0
    return nd, gd


def closed_form_propagator(u: UniverseModel, t: float, rate: RateOperator | None = None) -> np.ndarray:
    """exp(-i alpha^+ H_U t)."""
    rate = rate or rate_operator(u)
    return expm_general(rate.pinv_alpha @ u.H_U, t)


@dataclass(frozen=True)
class PropagatorCheck:
    """How well U(t) reproduces the extracted relative states.

    ``sharp_error`` compares U(t_k) psi_U(t_0) with psi_U(t_k) directly.
    ``windowed_error`` compares U(tau) G_c psi_U with G_{c+tau} psi_U for a
    smooth Gaussian clock window G_c, which is the form the relation takes on
    interior wavepackets when the coupling depends on clock time.
    Both are measured on the complement of ker(alpha).  The default window
    width L/16 keeps the tails negligible at the wrap point but needs d >= 64
    to span enough grid points; at d = 32 aliasing puts the error near 1e-5.
    """

    sharp_error: float
    windowed_error: float
    window_width: float
    steps: int


def _cyclic_window(clock: FiniteClock, center: float, width: float) -> np.ndarray:
    L = clock.period
    x = (clock.times - center + 0.5 * L) % L - 0.5 * L
    return np.exp(-(x**2) / (2.0 * width**2))


def propagator_match(u: UniverseModel, s: StationaryState, steps: int | None = None,
                     window_width: float | None = None, rate: RateOperator | None = None
                     ) -> PropagatorCheck:
    rate = rate or rate_operator(u)
    clock = u.clock
    d = clock.d
    steps = d // 2 if steps is None else int(steps)
    width = clock.period / 16.0 if window_width is None else float(window_width)
    P_plus = np.eye(u.dim) - rate.kernel_projector
    step = closed_form_propagator(u, clock.dt, rate)
    blocks = u.blocks(s.psi_U)

    def full(b):
        return b.reshape(-1)

    def lift(b_k, k):
        out = np.zeros_like(blocks)
        out[k] = b_k
        return full(out)

    psi0 = lift(blocks[0], 0)
    n0 = float(np.linalg.norm(psi0))
    sharp = 0.0
    v = psi0.copy()
    for k in range(1, d):
        v = step @ v
        err = float(np.linalg.norm(P_plus @ (v - lift(blocks[k], k))))
        sharp = max(sharp, err / n0 if n0 > 0 else err)

    center = clock.times[d // 4]
    g0 = _cyclic_window(clock, center, width)
    w = full(g0[:, None] * blocks)
    wn = float(np.linalg.norm(w))
    windowed = 0.0
    for k in range(1, steps + 1):
        w = step @ w
        target = full(_cyclic_window(clock, center + k * clock.dt, width)[:, None] * blocks)
        err = float(np.linalg.norm(P_plus @ (w - target)))
        windowed = max(windowed, err / wn if wn > 0 else err)
    return PropagatorCheck(sharp_error=sharp, windowed_error=windowed, window_width=width, steps=steps)


def kernel_restriction_check(u: UniverseModel, s: StationaryState | np.ndarray,
                             rate: RateOperator | None = None) -> float:
    """max_k ||P0 psi_U(t_k)||, with P0 the projector onto ker(alpha)."""
    rate = rate or rate_operator(u)
    if rate.kernel_dim == 0:
        raise InvertibleAlpha("alpha is invertible; the kernel restriction is empty")
    psi = s.psi_U if isinstance(s, StationaryState) else as_state(s, u.dim)
    traj = extract_trajectory(u, psi, with_residuals=False)
    proj = traj.rel_states @ rate.kernel_projector.T
    return float(np.max(np.linalg.norm(proj, axis=1)))


@dataclass(frozen=True)
class Witness:
    psi_U: np.ndarray
    norm_drift: float
    label: str
    candidates: int


def find_nonunitary_witness(u: UniverseModel, eps: float = DEFAULT_TOL,
                            max_pairs: int = 400) -> Witness:
    """Kernel state with the largest relative-norm drift.

    Sweeps every kernel basis vector and the combinations Psi_i + Psi_j,
    Psi_i + i Psi_j for the first ``max_pairs`` pairs.
    """
    _, basis = physical_kernel(u, eps)
    if basis.dim == 0:
        raise EmptyKernel(f"H_U has no 0-eigenvectors at eps={eps:g}")
    K = basis.columns
    d, m = u.clock.d, u.rest_dim

    def drift(v):
        b = v.reshape(d, m)
        return norm_drift(np.linalg.norm(b, axis=1))

    best = (-1.0, None, "")
    count = 0
    for i in range(basis.dim):
        nd = drift(K[:, i])
        count += 1
        if nd > best[0]:
            best = (nd, K[:, i], f"basis[{i}]")
    pairs = 0
    for i in range(basis.dim):
        for j in range(i + 1, basis.dim):
            if pairs >= max_pairs:
                break
            pairs += 1
            for ph, tag in ((1.0, "+"), (-1.0, "-"), (1j, "+i"), (-1j, "-i")):
                v = (K[:, i] + ph * K[:, j]) / np.sqrt(2.0)
                nd = drift(v)
                count += 1
                if nd > best[0]:
                    best = (nd, v, f"basis[{i}]{tag}basis[{j}]")
    return Witness(psi_U=best[1], norm_drift=best[0], label=best[2], candidates=count)

