"""Periodic grid and Fourier utilities on the unit torus T = R/Z.

Mode convention: ``f(s) = sum_k fhat_k exp(2 pi i k s)`` with ``fhat = fft(values) / N``
in numpy FFT ordering.  A nonzero Nyquist coefficient of a real field is
treated as ``fhat_{N/2} cos(pi N s)``, which is the real trigonometric
interpolant at the nodes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

NOISE_FLOOR = 1e-12
RHO_MAX = 1.0
STRIP_CAP = 1e8


class StripOverflowError(ArithmeticError):
    """Strip continuation amplified a mode past the configured cap."""


class IndeterminateFitError(ValueError):
    """Too few usable modes to fit a decay rate."""


@dataclass(frozen=True)
class PeriodicGrid:
    n_points: int

    def __post_init__(self):
        n = self.n_points
        if int(n) != n or n < 8 or n % 2:
            raise ValueError(f"n_points must be an even integer >= 8, got {n!r}")

    @property
    def spacing(self) -> float:
        return 1.0 / self.n_points

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n_points) / self.n_points

    @property
    def wavenumbers(self) -> np.ndarray:
        return np.fft.fftfreq(self.n_points, d=1.0 / self.n_points)


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Grid samples of a periodic field together with their Fourier modes.

    Modes are computed eagerly at construction, so instances are safe to share
    read-only between threads.
    """

    grid: PeriodicGrid
    values: np.ndarray
    modes: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.shape != (self.grid.n_points,):
            raise ValueError("values must have length grid.n_points")
        object.__setattr__(self, "values", values)
        if self.modes is None:
            object.__setattr__(self, "modes", np.fft.fft(values) / values.size)
        else:
            object.__setattr__(self, "modes", np.asarray(self.modes, dtype=complex))

    @classmethod
    def from_values(cls, values) -> "SpectralField":
        values = np.asarray(values)
        return cls(PeriodicGrid(values.size), values)

    @classmethod
    def from_modes(cls, modes, real: bool = True) -> "SpectralField":
        modes = np.asarray(modes, dtype=complex)
        values = np.fft.ifft(modes) * modes.size
        if real:
            values = values.real
        return cls(PeriodicGrid(modes.size), values, modes)

    @classmethod
    def from_function(cls, func, n_points: int) -> "SpectralField":
        grid = PeriodicGrid(n_points)
        return cls(grid, np.asarray(func(grid.nodes), dtype=float))

    @property
    def is_real(self) -> bool:
        return not np.iscomplexobj(self.values)

    def __call__(self, z) -> np.ndarray:
        return fourier_eval(self.modes, z)


# -- array-level helpers (operate along the last axis) ---------------------------


def wavenumbers(n: int) -> np.ndarray:
    return np.fft.fftfreq(n, d=1.0 / n)


def derivative(values: np.ndarray, order: int = 1) -> np.ndarray:
    """Spectral ``d^order/ds^order`` along the last axis; Nyquist mode zeroed."""
    values = np.asarray(values)
    n = values.shape[-1]
    k = wavenumbers(n)
    mult = (2j * np.pi * k) ** order
    mult[n // 2] = 0.0
    out = np.fft.ifft(np.fft.fft(values, axis=-1) * mult, axis=-1)
    return out.real if not np.iscomplexobj(values) else out


def filter_modes(values: np.ndarray, threshold: float) -> np.ndarray:
    """Krasny filter along the last axis: zero every mode with ``|fhat_k| < threshold``."""
    if threshold <= 0.0:
        return np.asarray(values)
    values = np.asarray(values)
    n = values.shape[-1]
    modes = np.fft.fft(values, axis=-1) / n
    modes[np.abs(modes) < threshold] = 0.0
    out = np.fft.ifft(modes, axis=-1) * n
    return out.real if not np.iscomplexobj(values) else out


def resample(values: np.ndarray, factor: int = 1, shift: float = 0.0) -> np.ndarray:
    """Trigonometric interpolant at ``(m + shift) / (factor N)``, m = 0..factor N - 1.

    ``shift`` is measured in units of the fine spacing; ``shift=0.5`` gives the
    half-shifted (alternate-point) grid.
    """
    values = np.asarray(values)
    n = values.shape[-1]
    m = factor * n
    modes = np.fft.fft(values, axis=-1) / n
    fine = np.zeros(values.shape[:-1] + (m,), dtype=complex)
    half = n // 2
    fine[..., :half] = modes[..., :half]
    fine[..., m - half + 1:] = modes[..., half + 1:]
    # split the Nyquist coefficient symmetrically so the interpolant stays real
    fine[..., half] += 0.5 * modes[..., half]
    fine[..., m - half] += 0.5 * modes[..., half]
    if shift:
        fine = fine * np.exp(2j * np.pi * wavenumbers(m) * shift / m)
    out = np.fft.ifft(fine, axis=-1) * m
    return out.real if not np.iscomplexobj(values) else out


def fourier_eval(modes: np.ndarray, z) -> np.ndarray:
    """Evaluate ``sum_k modes_k exp(2 pi i k z)`` at arbitrary (possibly complex) points."""
    modes = np.asarray(modes, dtype=complex)
    n = modes.size
    k = wavenumbers(n)
    z = np.asarray(z)
    keep = np.arange(n) != n // 2
    phase = np.exp(2j * np.pi * np.multiply.outer(z, k[keep]))
    # Nyquist as a cosine
    return phase @ modes[keep] + modes[n // 2] * np.cos(np.pi * n * z)


def strip_multipliers(n: int, beta: float) -> np.ndarray:
    k = wavenumbers(n)
    mult = np.exp(-2.0 * np.pi * k * beta)
    mult[n // 2] = math.cosh(np.pi * n * beta)
    return mult


# -- operations on SpectralField ---------------------------------------------------


def spectral_derivative(f: SpectralField) -> SpectralField:
    k = f.grid.wavenumbers
    mult = 2j * np.pi * k
    mult[f.grid.n_points // 2] = 0.0
    return SpectralField.from_modes(f.modes * mult, real=f.is_real)


@dataclass(frozen=True)
class StripSample:
    beta: float
    values: np.ndarray


def shift_to_strip(f: SpectralField, beta: float, cap: float = STRIP_CAP) -> StripSample:
    """Samples of the analytic continuation ``f(s_j + i beta)``."""
    n = f.grid.n_points
    scaled = f.modes * strip_multipliers(n, beta)
    if np.max(np.abs(scaled)) > cap:
        raise StripOverflowError(
            f"scaled mode magnitude {np.max(np.abs(scaled)):.3e} exceeds cap {cap:.1e} "
            f"at beta={beta}; beta is likely outside the analyticity strip"
        )
    return StripSample(float(beta), np.fft.ifft(scaled) * n)


def krasny_filter(f: SpectralField, threshold: float) -> SpectralField:
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    modes = f.modes.copy()
    modes[np.abs(modes) < threshold] = 0.0
    return SpectralField.from_modes(modes, real=f.is_real)


def estimate_analyticity_radius(
    f: SpectralField,
    noise_floor: float = NOISE_FLOOR,
    rho_max: float = RHO_MAX,
    min_modes: int = 4,
) -> float:
    """Least-squares decay rate of ``-log|fhat_k| / (2 pi k)`` over resolved modes.

    Modes below ``noise_floor * max|fhat|`` are discarded.  A spectrum that
    stops abruptly (last usable mode far above the floor, followed by modes
    below it) is band-limited and reported as ``rho_max``.
    """
    n = f.grid.n_points
    amps = np.abs(f.modes)
    # fold +k and -k together: for real fields they coincide
    pos = np.zeros(n // 2 + 1)
    pos[0] = amps[0]
    for k in range(1, n // 2):
        pos[k] = max(amps[k], amps[n - k])
    pos[n // 2] = amps[n // 2]
    scale = pos.max()
    if scale == 0.0:
        raise IndeterminateFitError("zero field")
    floor = noise_floor * scale
    ks = np.nonzero(pos[1:] > floor)[0] + 1
    if ks.size < min_modes:
        raise IndeterminateFitError(f"only {ks.size} modes above the noise floor")
    last = ks[-1]
    # the Nyquist slot alone is often zeroed by differentiation, so it does not count as a cutoff
    if last < n // 2 - 1 and pos[last] > 1e3 * floor and np.all(pos[last + 1:] <= floor):
        return rho_max
    slope, _ = np.polyfit(ks, np.log(pos[ks]), 1)
    rho = -slope / (2.0 * np.pi)
    return float(min(rho, rho_max))


def _holder_half(values: np.ndarray) -> float:
    n = values.size
    idx = np.arange(n)
    diff = np.abs(values[:, None] - values[None, :])
    sep = np.abs(idx[:, None] - idx[None, :])
    sep = np.minimum(sep, n - sep) / n
    np.fill_diagonal(sep, 1.0)
    return float(np.max(diff / np.sqrt(sep)))


def discrete_holder_norm(values: np.ndarray) -> float:
    """Sup norm plus the largest C^{1/2} quotient over all node pairs."""
    values = np.asarray(values)
    return float(np.max(np.abs(values))) + _holder_half(values)


def strip_holder_norm(f: SpectralField, rho: float, n_beta: int = 5,
                      cap: float = STRIP_CAP) -> float:
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    betas = np.linspace(-rho, rho, n_beta) if rho > 0 else np.zeros(1)
    return max(discrete_holder_norm(shift_to_strip(f, b, cap).values) for b in betas)
