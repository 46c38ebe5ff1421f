"""Received multi-antenna baseband frames for the TLC and RLC phases."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .codes import TlcSequence
from .scene import Scene, direct_path, enumerate_first_order_paths
from .waveform import C, ArrayConfig, ChirpReturn, FmcwConfig, steering_angle, synthesize_if_chirp

TLC = "TLC"
RLC = "RLC"
TLC_ACTIVE = "TLC_ACTIVE"
RLC_SILENT = "RLC_SILENT"


@dataclass(frozen=True)
class TagState:
    mode: str = RLC_SILENT
    tlc: TlcSequence | None = None
    offset: int = 0  # frame sample where the tag starts its TLC burst

    def __post_init__(self):
        if self.mode not in (TLC_ACTIVE, RLC_SILENT):
            raise ValueError(f"bad tag mode {self.mode!r}")
        if (self.tlc is not None) != (self.mode == TLC_ACTIVE):
            raise ValueError("tlc must be present iff the tag is TLC_ACTIVE")
        if self.offset < 0:
            raise ValueError("offset must be >= 0")


@dataclass(frozen=True)
class NoiseSpec:
    """White complex Gaussian noise.

    By default the level is `snr_db` below the strongest tag-path component of
    the scene. `reference_power`, when given, pins that reference instead so a
    sweep can hold the noise floor fixed while geometry changes.
    """

    snr_db: float = math.inf
    seed: int = 0
    reference_power: float | None = None

    def noise_power(self, tag_power: float) -> float:
        if math.isinf(self.snr_db) and self.snr_db > 0:
            return 0.0
        ref = self.reference_power if self.reference_power is not None else tag_power
        return ref / 10 ** (self.snr_db / 10)


@dataclass(frozen=True, eq=False)
class RxFrame:
    samples: np.ndarray  # (n_antennas, n_samples) complex
    sample_rate: float
    phase_tag: str

    def __post_init__(self):
        if self.samples.ndim != 2:
            raise ValueError("samples must be n_antennas x n_samples")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("non-finite samples")
        if self.phase_tag not in (TLC, RLC):
            raise ValueError(f"bad phase tag {self.phase_tag!r}")

    @property
    def n_antennas(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    def __sub__(self, other: "RxFrame") -> "RxFrame":
        return RxFrame(self.samples - other.samples, self.sample_rate, self.phase_tag)

    def to_csv(self, path) -> None:
        """Debug interchange: one row per (antenna, sample) with real/imag columns."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["phase", "sample_rate", "antenna", "sample", "re", "im"])
            for m in range(self.n_antennas):
                for n in range(self.n_samples):
                    v = self.samples[m, n]
                    w.writerow([self.phase_tag, repr(self.sample_rate), m, n, repr(float(v.real)), repr(float(v.imag))])

    @classmethod
    def from_csv(cls, path) -> "RxFrame":
        with Path(path).open() as fh:
            rows = list(csv.DictReader(fh))
        na = 1 + max(int(r["antenna"]) for r in rows)
        ns = 1 + max(int(r["sample"]) for r in rows)
        x = np.zeros((na, ns), dtype=complex)
        for r in rows:
            x[int(r["antenna"]), int(r["sample"])] = complex(float(r["re"]), float(r["im"]))
        return cls(x, float(rows[0]["sample_rate"]), rows[0]["phase"])


@dataclass(frozen=True)
class ChannelParams:
    """Scalar knobs of the propagation model that the scene does not carry."""

    tag_gain: float = 1.0  # retro-reflective tag relative to a unit scatterer
    target_scatter: float = 0.5  # unmodulated echo off the target body


def _component(fmcw: FmcwConfig, arr: ArrayConfig, amplitude: float, one_way: float,
               aoa: float, n_samples: int) -> np.ndarray:
    y = synthesize_if_chirp(fmcw, [ChirpReturn.from_distance(amplitude, one_way)], n_samples)
    a = steering_angle(arr, aoa, fmcw.wavelength)[:, 0]
    return a[:, None] * y[None, :]


def strongest_tag_power(scene: Scene, params: ChannelParams = ChannelParams()) -> float:
    """Power of the strongest tag path with wall absorption ignored.

    The noise floor is a property of the radar, not of the walls, so lossy
    walls lower the SNR instead of being normalised away.
    """
    p = 0.0
    for t in scene.targets:
        for path in enumerate_first_order_paths(scene, t.id):
            loss = 1.0 - scene.reflectors[path.reflector_index].absorption
            p = max(p, (params.tag_gain * path.attenuation / loss) ** 2)
        dp = direct_path(scene, t.id)
        if dp is not None:
            p = max(p, (params.tag_gain * dp.attenuation) ** 2)
    return p


def _tag_modulation(state: TagState, back_delay: float, n_samples: int) -> np.ndarray:
    tlc = state.tlc
    mod = np.zeros(n_samples, dtype=complex)
    stop = min(n_samples, state.offset + tlc.total_len)
    if stop > state.offset:
        mod[state.offset:stop] = tlc.emitted(delay=back_delay)[: stop - state.offset]
    return mod


def simulate_clean(scene: Scene, target_states: Mapping, fmcw: FmcwConfig, arr: ArrayConfig,
                   phase: str, params: ChannelParams = ChannelParams(),
                   n_samples: int | None = None) -> np.ndarray:
    n = fmcw.samples_per_chirp if n_samples is None else n_samples
    x = np.zeros((arr.n_antennas, n), dtype=complex)
    seen = set()
    for t in scene.targets:
        paths = enumerate_first_order_paths(scene, t.id)
        dp = direct_path(scene, t.id)
        for p in paths:
            key = (p.reflector_index, round(p.p_s.x, 12), round(p.p_s.y, 12))
            if key in seen:
                continue
            seen.add(key)
            amp = scene.reflectors[p.reflector_index].scatter_coeff / p.d_rs**2
            x = x + _component(fmcw, arr, amp, p.d_rs, p.aoa_phi, n)
        if dp is not None:
            # passive echo off the target body, present in both phases
            x = x + _component(fmcw, arr, params.target_scatter * dp.attenuation, dp.distance, dp.aoa_phi, n)
        state = target_states.get(t.id)
        if phase != TLC or state is None or state.mode != TLC_ACTIVE:
            continue
        legs = [(params.tag_gain * p.attenuation, p.d_total, p.aoa_phi) for p in paths]
        if dp is not None:
            legs.append((params.tag_gain * dp.attenuation, dp.distance, dp.aoa_phi))
        for amp, d, aoa in legs:
            mod = _tag_modulation(state, d / C, n)
            x = x + _component(fmcw, arr, amp, d, aoa, n) * mod[None, :]
    return x


def _noise(shape, power: float, seed, n_average: int = 1) -> np.ndarray:
    rng = np.random.default_rng(seed)
    s = math.sqrt(power / 2)
    if n_average == 1:
        return s * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    full = (n_average,) + tuple(shape)
    return s * (rng.standard_normal(full) + 1j * rng.standard_normal(full)).mean(axis=0)


def add_noise(frame: RxFrame, noise: NoiseSpec, reference_power: float | None = None,
              n_average: int = 1) -> RxFrame:
    """Add AWGN so that reference_power / noise power equals snr_db.

    The reference defaults to `noise.reference_power`, then to the mean power of
    the frame itself. With n_average > 1 the frame is the mean of that many
    chirps of a static scene, each carrying its own noise draw.
    """
    if math.isinf(noise.snr_db) and noise.snr_db > 0:
        return frame
    ref = noise.reference_power if noise.reference_power is not None else reference_power
    if ref is None:
        ref = float(np.mean(np.abs(frame.samples) ** 2))
    power = ref / 10 ** (noise.snr_db / 10)
    return replace(frame, samples=frame.samples + _noise(frame.samples.shape, power, noise.seed, n_average))


def simulate_frame(scene: Scene, target_states: Mapping, fmcw: FmcwConfig, arr: ArrayConfig,
                   noise: NoiseSpec, phase: str, params: ChannelParams = ChannelParams(),
                   n_samples: int | None = None, integrate_chirps: bool = True) -> RxFrame:
    """One frame: the coherent mean over fmcw.chirps_per_frame chirps.

    The scene is static and the tag repeats its burst at the same chirp offset,
    so only the noise differs between chirps. snr_db is per chirp and sample.
    """
    if phase not in (TLC, RLC):
        raise ValueError(f"bad phase {phase!r}")
    x = simulate_clean(scene, target_states, fmcw, arr, phase, params, n_samples)
    frame = RxFrame(x, fmcw.sample_rate, phase)
    ref = noise.reference_power if noise.reference_power is not None else strongest_tag_power(scene, params)
    # independent noise per phase from one seed
    phase_noise = replace(noise, seed=np.random.SeedSequence([noise.seed, 0 if phase == TLC else 1]))
    k = fmcw.chirps_per_frame if integrate_chirps else 1
    return add_noise(frame, phase_noise, ref, k)
