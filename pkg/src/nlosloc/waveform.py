"""FMCW chirp / IF-signal model and uniform linear array phase."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

C = 299_792_458.0


@dataclass(frozen=True)
class FmcwConfig:
    """Chirp parameters. Defaults follow the 24 GHz / 250 MHz prototype radar."""

    f_c: float = 24e9
    bandwidth_b: float = 250e6
    chirp_t: float = 2.56e-3
    chirps_per_frame: int = 32
    sample_rate: float = 100e3

    def __post_init__(self):
        if self.bandwidth_b <= 0 or self.chirp_t <= 0 or self.sample_rate <= 0:
            raise ValueError("bandwidth, chirp duration and sample rate must be positive")
        if self.chirps_per_frame < 1:
            raise ValueError("chirps_per_frame must be >= 1")

    @property
    def slope(self) -> float:
        return self.bandwidth_b / self.chirp_t

    @property
    def samples_per_chirp(self) -> int:
        return int(round(self.sample_rate * self.chirp_t))

    @property
    def wavelength(self) -> float:
        return C / self.f_c

    @property
    def range_resolution(self) -> float:
        return C / (2 * self.bandwidth_b)

    def max_unaliased_distance(self) -> float:
        """One-way distance whose beat frequency hits Nyquist (complex sampling)."""
        return self.sample_rate * C / (2 * self.slope)


@dataclass(frozen=True)
class ArrayConfig:
    """Virtual ULA. 2 Tx x 4 Rx -> 8 virtual elements at half-wavelength."""

    n_antennas: int = 8
    spacing: float = C / 24e9 / 2

    def __post_init__(self):
        if self.n_antennas < 1:
            raise ValueError("n_antennas must be >= 1")
        if self.spacing <= 0:
            raise ValueError("spacing must be positive")


@dataclass(frozen=True)
class ChirpReturn:
    amplitude: complex
    delay_theta: float

    def __post_init__(self):
        if self.delay_theta < 0:
            raise ValueError("delay must be non-negative")

    @classmethod
    def from_distance(cls, amplitude: complex, one_way_distance: float) -> "ChirpReturn":
        return cls(amplitude, 2.0 * one_way_distance / C)


def round_trip_delay(one_way_distance):
    return 2.0 * np.asarray(one_way_distance, dtype=float) / C


def beat_frequency(cfg: FmcwConfig, one_way_distance):
    """IF tone frequency (Hz) of a return from `one_way_distance` metres."""
    d = np.asarray(one_way_distance, dtype=float)
    if np.any(d < 0):
        raise ValueError("distance must be non-negative")
    out = cfg.slope * 2.0 * d / C
    return float(out) if out.ndim == 0 else out


def distance_from_beat(cfg: FmcwConfig, beat_hz):
    return np.asarray(beat_hz, dtype=float) * C / (2.0 * cfg.slope)


def synthesize_if_chirp(cfg: FmcwConfig, returns, n_samples: int | None = None) -> np.ndarray:
    """Dechirped samples y(n) = sum_k a_k exp(j2pi(f_c th_k + S th_k n/fs)).

    The residual quadratic phase term is not modelled.
    """
    n = cfg.samples_per_chirp if n_samples is None else n_samples
    t = np.arange(n) / cfg.sample_rate
    y = np.zeros(n, dtype=complex)
    for r in returns:
        th = r.delay_theta
        y += r.amplitude * np.exp(2j * np.pi * (cfg.f_c * th + cfg.slope * th * t))
    return y


def array_phase(arr: ArrayConfig, antenna_index, aoa, wavelength: float):
    """Phase (rad) of element `antenna_index` for a plane wave from `aoa`."""
    idx = np.asarray(antenna_index)
    if np.any(idx < 0) or np.any(idx >= arr.n_antennas):
        raise IndexError(f"antenna index out of range [0, {arr.n_antennas})")
    return 2 * np.pi * idx * arr.spacing * np.sin(aoa) / wavelength


def steering_angle(arr: ArrayConfig, aoa, wavelength: float) -> np.ndarray:
    """Array response, shape (n_antennas, len(aoa))."""
    aoa = np.atleast_1d(np.asarray(aoa, dtype=float))
    m = np.arange(arr.n_antennas)[:, None]
    return np.exp(1j * array_phase(arr, m, aoa[None, :], wavelength))
