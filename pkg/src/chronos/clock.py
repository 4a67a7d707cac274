"""Finite cyclic clock: d orthonormal time states on a periodic grid.

The clock Hamiltonian is diagonal in the discrete Fourier basis with energies
2*pi*n/(d*dt), n = -floor(d/2) .. ceil(d/2)-1, so that exp(-i H_C dt) shifts
|phi_k> to |phi_{k+1 mod d}> exactly.  The price is that [T_C, H_C] = i only
holds on smooth wavepackets away from the wrap point; ``idealness_report``
measures how far off it is.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidClock
from .operators import commutator, spectral_norm

__all__ = ["FiniteClock", "IdealnessReport", "make_clock", "projector_at", "idealness_report"]


@dataclass(frozen=True, eq=False)
class FiniteClock:
    d: int
    dt: float
    times: np.ndarray
    energies: np.ndarray
    fourier: np.ndarray  # columns are energy eigenstates written in the time basis
    T_C: np.ndarray
    H_C: np.ndarray
    _shift: np.ndarray = field(repr=False)

    @property
    def period(self) -> float:
        return self.d * self.dt

    @property
    def energy_spacing(self) -> float:
        return 2 * np.pi / self.period

    @property
    def time_states(self) -> np.ndarray:
        """Columns |phi_k>, which in the time basis are the unit vectors."""
        return np.eye(self.d, dtype=np.complex128)

    @property
    def shift(self) -> np.ndarray:
        """exp(-i H_C dt), the one-tick Weyl shift."""
        return self._shift

    def energy_index(self, omega: float) -> int:
        """Position in ``energies`` of the lattice energy nearest to ``omega``."""
        return int(np.argmin(np.abs(self.energies - omega)))

    def wavepacket(self, center: float, width: float, carrier: float = 0.0) -> np.ndarray:
        """Normalized Gaussian exp(-(t-c)^2 / (2 w^2)) * exp(i carrier t) on the grid."""
        if width <= 0:
            raise InvalidClock("wavepacket width must be positive")
        x = self.times - center
        psi = np.exp(-(x**2) / (2.0 * width**2) + 1j * carrier * self.times)
        return psi / np.linalg.norm(psi)


def make_clock(d: int, dt: float) -> FiniteClock:
    if not isinstance(d, (int, np.integer)) or isinstance(d, bool) or d < 2:
        raise InvalidClock(f"clock needs an integer d >= 2, got {d!r}")
    if not np.isfinite(dt) or dt <= 0:
        raise InvalidClock(f"clock spacing dt must be > 0, got {dt!r}")
    d = int(d)
    dt = float(dt)
    times = np.arange(d) * dt
    n = np.arange(-(d // 2), -(d // 2) + d)
    energies = 2 * np.pi * n / (d * dt)
    fourier = np.exp(1j * np.outer(times, energies)) / np.sqrt(d)
    H_C = (fourier * energies) @ fourier.conj().T
    H_C = 0.5 * (H_C + H_C.conj().T)
    shift = (fourier * np.exp(-1j * energies * dt)) @ fourier.conj().T
    T_C = np.diag(times).astype(np.complex128)
    return FiniteClock(d=d, dt=dt, times=times, energies=energies, fourier=fourier,
                       T_C=T_C, H_C=H_C, _shift=shift)


def projector_at(clock: FiniteClock, k: int) -> np.ndarray:
    """|phi_k><phi_k| on the clock factor alone."""
    if not 0 <= k < clock.d:
        raise IndexError(f"clock reading {k} outside 0..{clock.d - 1}")
    p = np.zeros((clock.d, clock.d), dtype=np.complex128)
    p[k, k] = 1.0
    return p


@dataclass(frozen=True)
class IdealnessReport:
    d: int
    commutator_residual: float
    interior_residual: float


def idealness_report(clock: FiniteClock) -> IdealnessReport:
    """Distance of the finite pair (T_C, H_C) from [T_C, H_C] = i.

    ``commutator_residual`` is the spectral norm over the whole space;
    ``interior_residual`` is the same operator compressed onto a Gaussian
    wavepacket centred at t_{d/2} with width d*dt/8.
    """
    defect = commutator(clock.T_C, clock.H_C) - 1j * np.eye(clock.d)
    full = spectral_norm(defect)
    psi = clock.wavepacket(clock.times[clock.d // 2], clock.period / 8.0)
    interior = float(abs(np.vdot(psi, defect @ psi)))
    return IdealnessReport(d=clock.d, commutator_residual=full, interior_residual=interior)
