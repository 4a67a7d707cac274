"""Clock readings of a clock+rest system evolving in external time.

A second, ideal clock supplies the external time t, so the clock+rest system
C(x)R simply evolves as exp(-i H_CR t).  The checks here compare the mean,
rate and spread of C's readings against the laws implied by the rate operator.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .operators import as_state, eigh
from .universe import UniverseModel, rate_operator

__all__ = [
    "TwoClockRun",
    "RateSeries",
    "VarianceSeries",
    "run_two_clock",
    "haar_state",
    "wavepacket_state",
    "mean_reading",
    "reading_spread",
    "pre_wraparound_window",
    "rate_series",
    "rate_drift",
    "check_rate_constancy",
    "linear_time_error",
    "check_linear_time",
    "variance_series",
]

WINDOW_SIGMAS = 6.0


@dataclass(frozen=True)
class TwoClockRun:
    model: UniverseModel
    psi0: np.ndarray
    t_grid: np.ndarray
    states: np.ndarray  # (len(t_grid), N)
    alpha_CR: np.ndarray

    @property
    def H_CR(self) -> np.ndarray:
        return self.model.H_U

    def __len__(self) -> int:
        return int(self.t_grid.shape[0])


def haar_state(dim: int, rng: np.random.Generator) -> np.ndarray:
    z = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return z / np.linalg.norm(z)


def wavepacket_state(u: UniverseModel, center: float, width: float, rest_vector) -> np.ndarray:
    """Gaussian clock wavepacket (x) a normalized rest vector."""
    v = as_state(rest_vector, u.rest_dim, "rest vector")
    return np.kron(u.clock.wavepacket(center, width), v / np.linalg.norm(v))


def run_two_clock(u: UniverseModel, psi0, t_grid) -> TwoClockRun:
    """Evolve psi0 under H_CR = u.H_U for every external time in t_grid."""
    t = np.asarray(t_grid, dtype=float).reshape(-1)
    if t.size > 1 and np.any(np.diff(t) <= 0):
        raise ValueError("t_grid must be strictly increasing")
    psi0 = as_state(psi0, u.dim, "psi0")
    psi0 = psi0 / np.linalg.norm(psi0)
    dec = u._memo("eigh_H", lambda: eigh(u.H_U))
    c0 = dec.vectors.conj().T @ psi0
    phases = np.exp(-1j * np.outer(t, dec.values))
    states = (phases * c0) @ dec.vectors.T
    alpha = rate_operator(u).alpha
    return TwoClockRun(model=u, psi0=psi0, t_grid=t, states=states, alpha_CR=alpha)


def _expect(states: np.ndarray, diag_or_op: np.ndarray) -> np.ndarray:
    if diag_or_op.ndim == 1:
        vals = np.einsum("kn,n,kn->k", states.conj(), diag_or_op, states)
    else:
        vals = np.einsum("kn,nm,km->k", states.conj(), diag_or_op, states)
    norms = np.einsum("kn,kn->k", states.conj(), states).real
    return vals.real / norms


def _time_diag(run: TwoClockRun) -> np.ndarray:
    return np.repeat(run.model.clock.times, run.model.rest_dim)


def mean_readings(run: TwoClockRun) -> np.ndarray:
    return _expect(run.states, _time_diag(run))


def mean_reading(run: TwoClockRun, i: int) -> float:
    """<T_C (x) 1> at external time t_grid[i]."""
    return float(mean_readings(run)[i])


def reading_spread(run: TwoClockRun) -> np.ndarray:
    """Variance <T^2> - <T>^2 of C's readings at each grid time."""
    tdiag = _time_diag(run)
    m1 = _expect(run.states, tdiag)
    m2 = _expect(run.states, tdiag**2)
    return m2 - m1**2


def pre_wraparound_window(run: TwoClockRun, sigmas: float = WINDOW_SIGMAS) -> np.ndarray:
    """Indices of the leading stretch where mean +- sigmas*std stays on the grid."""
    times = run.model.clock.times
    lo, hi = times[0], times[-1]
    mean = mean_readings(run)
    std = np.sqrt(np.maximum(reading_spread(run), 0.0))
    ok = (mean - sigmas * std >= lo) & (mean + sigmas * std <= hi)
    if not ok.size or not ok[0]:
        return np.zeros(0, dtype=int)
    stop = int(np.argmin(ok)) if not ok.all() else ok.size
    return np.arange(stop)


@dataclass(frozen=True)
class RateSeries:
    """Rate of C against external time, in both forms.

    ``values`` is the expectation of alpha_CR; ``finite_difference`` is the
    centred derivative of the mean reading (NaN outside the pre-wraparound
    window); ``max_discrepancy`` compares the two inside the window.
    """

    values: np.ndarray
    finite_difference: np.ndarray
    max_discrepancy: float


def rate_series(run: TwoClockRun) -> RateSeries:
    if len(run) < 2:
        raise ValueError("rate_series needs at least two grid points")
    values = _expect(run.states, run.alpha_CR)
    fd = np.gradient(mean_readings(run), run.t_grid)
    win = pre_wraparound_window(run)
    masked = np.full_like(fd, np.nan)
    # One-sided ends of np.gradient are first order; compare interior points only.
    inner = win[(win > 0) & (win < len(run) - 1)]
    masked[inner] = fd[inner]
    disc = float(np.max(np.abs(fd[inner] - values[inner]))) if inner.size else 0.0
    return RateSeries(values=values, finite_difference=masked, max_discrepancy=disc)


def rate_drift(run: TwoClockRun) -> float:
    values = _expect(run.states, run.alpha_CR)
    return float(np.max(np.abs(values - values[0])))


def check_rate_constancy(run: TwoClockRun, tol: float) -> bool:
    """max_t |alpha(t) - alpha(0)| <= tol.

    The expectation form of the rate does not see the grid boundary, so the
    full grid is used.
    """
    if len(run) < 2:
        return True
    return rate_drift(run) <= tol


def linear_time_error(run: TwoClockRun, scaled: bool = True) -> float:
    """max over the window of |tau(t) - tau(0) - alpha(0) t|, divided by 1+|t| if scaled."""
    win = pre_wraparound_window(run)
    if win.size < 2:
        return 0.0
    mean = mean_readings(run)
    a0 = float(_expect(run.states[:1], run.alpha_CR)[0])
    t = run.t_grid[win] - run.t_grid[0]
    err = np.abs(mean[win] - mean[0] - a0 * t)
    if scaled:
        err = err / (1.0 + np.abs(t))
    return float(np.max(err))


def check_linear_time(run: TwoClockRun, tol: float) -> bool:
    """|tau(t) - tau(0) - alpha(0) t| <= tol (1 + |t|) on the pre-wraparound window."""
    return linear_time_error(run) <= tol


@dataclass(frozen=True)
class VarianceSeries:
    variance: np.ndarray
    sigma2_alpha: float
    law_error: np.ndarray  # (sigma^2(t) - sigma^2(0)) - t^2 sigma2_alpha, NaN off-window
    window: np.ndarray

    def max_scaled_error(self, t_grid) -> float:
        """max |law_error| / (1 + t^2) over the window."""
        if self.window.size == 0:
            return 0.0
        t = np.asarray(t_grid)[self.window] - np.asarray(t_grid)[0]
        return float(np.max(np.abs(self.law_error[self.window]) / (1.0 + t**2)))


def variance_series(run: TwoClockRun) -> VarianceSeries:
    var = reading_spread(run)
    a = run.alpha_CR
    psi0 = run.psi0
    m1 = float(np.vdot(psi0, a @ psi0).real)
    m2 = float(np.vdot(a @ psi0, a @ psi0).real)
    s2a = m2 - m1**2
    win = pre_wraparound_window(run)
    t = run.t_grid - run.t_grid[0]
    law = np.full_like(var, np.nan)
    law[win] = (var[win] - var[0]) - t[win] ** 2 * s2a
    return VarianceSeries(variance=var, sigma2_alpha=s2a, law_error=law, window=win)
