"""Sliding correlation, alignment, reflector detection and LoS/NLoS decisions."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .codes import HopPlan, TlcSequence
from .fsmusic import (Grid, build_conventional_matrix, estimate_covariance, find_paths, model_order,
                      music_spectrum)
from .waveform import ArrayConfig, FmcwConfig

log = logging.getLogger(__name__)

LOS = "LOS"
NLOS = "NLOS"
INDETERMINATE = "INDETERMINATE"

DEFAULT_RANGE_TOL = 0.3
DEFAULT_ANGLE_TOL = math.radians(2.0)
MATCH_ANGLE_TOL = math.radians(1.0)


@dataclass(frozen=True, eq=False)
class CorrelationResult:
    r_k: np.ndarray  # (n_antennas, n_lags)
    peak_lag: int
    peak_gain_db: float
    aligned: np.ndarray  # (n_antennas, N_T), demodulated
    window: np.ndarray  # (n_antennas, N_T), raw frame at peak_lag
    beat_hz: float

    @property
    def magnitude(self) -> np.ndarray:
        """Antenna-averaged |r(k)|."""
        return np.mean(np.abs(self.r_k), axis=0)


@dataclass(frozen=True)
class Detection:
    distance: float
    aoa: float
    strength: float = 1.0

    def __post_init__(self):
        if not self.distance > 0:
            raise ValueError("distance must be positive")


@dataclass(frozen=True)
class SceneReading:
    reflectors_rlc: tuple[Detection, ...] = ()
    virtuals_tlc: tuple[Detection, ...] = ()
    los_verdict: str = INDETERMINATE
    matches: tuple[tuple[Detection, Detection], ...] = field(default=())


# --- correlation --------------------------------------------------------------

def _samples(frame) -> np.ndarray:
    x = frame.samples if hasattr(frame, "samples") else np.asarray(frame)
    return np.atleast_2d(x)


def sliding_correlate(frame, g_t: TlcSequence, beat_hz: float | None = None,
                      n_fft: int = 1024, max_beat_hz: float | None = None) -> CorrelationResult:
    """Correlate every antenna against the known TLC reference at every lag.

    r(k) = sum_n frame(n + k) ref(n) exp(-j 2 pi beat n / fs), where ref strips
    the chips and sub-carrier. The beat of the strongest path is unknown, so by
    default it is searched on an n_fft-point grid jointly with the lag; pass
    `beat_hz` to fix it (the correlation is then linear in the frame).
    """
    x = _samples(frame)
    n_t = g_t.total_len
    if x.shape[1] < n_t:
        raise ValueError(f"frame has {x.shape[1]} samples, TLC needs {n_t}")
    ref = g_t.demod_reference()
    win = sliding_window_view(x, n_t, axis=1)  # (Na, L, N_T)
    prod = win * ref
    fs = g_t.sample_rate
    if beat_hz is None:
        spec = np.fft.fft(prod, n=max(n_fft, n_t), axis=-1)
        freqs = np.fft.fftfreq(spec.shape[-1], 1 / fs)
        ok = freqs >= 0
        if max_beat_hz is not None:
            ok &= freqs <= max_beat_hz
        cols = np.nonzero(ok)[0]
        power = np.sum(np.abs(spec[..., cols]) ** 2, axis=0)  # (L, bins)
        lag_best = np.argmax(power, axis=1)
        r_k = spec[:, np.arange(spec.shape[1]), cols[lag_best]]
        beats = freqs[cols[lag_best]]
    else:
        tone = np.exp(-2j * np.pi * beat_hz * np.arange(n_t) / fs)
        r_k = prod @ tone
        beats = np.full(r_k.shape[1], float(beat_hz))
    mag = np.mean(np.abs(r_k), axis=0)
    peak = int(np.argmax(mag))
    gain = peak_to_floor_db(mag, peak, guard=max(1, g_t.hop_period // 15))
    window = x[:, peak:peak + n_t]
    return CorrelationResult(r_k, peak, gain, window * ref, window, float(beats[peak]))


def peak_to_floor_db(mag: np.ndarray, peak: int, guard: int = 1) -> float:
    """Peak power over the mean power of lags outside +-guard of the peak."""
    mask = np.ones(len(mag), dtype=bool)
    mask[max(0, peak - guard):peak + guard + 1] = False
    if not mask.any():
        return math.inf
    floor = float(np.mean(mag[mask] ** 2))
    return math.inf if floor == 0 else 10 * math.log10(mag[peak] ** 2 / floor)


def correlate_at(frame, g_t: TlcSequence, lag: int, beat_hz: float = 0.0) -> np.ndarray:
    """Per-antenna r(lag) at a fixed beat frequency."""
    x = _samples(frame)
    n_t = g_t.total_len
    if lag < 0 or lag + n_t > x.shape[1]:
        raise ValueError("lag window outside the frame")
    tone = np.exp(-2j * np.pi * beat_hz * np.arange(n_t) / g_t.sample_rate)
    return (x[:, lag:lag + n_t] * g_t.demod_reference()) @ tone


def cancel_clutter(tlc_frame, rlc_frame):
    """Static returns are common to both phases; the difference keeps the tag."""
    return tlc_frame - rlc_frame


def align_and_segment(corr: CorrelationResult, plan: HopPlan, demodulated: bool = True) -> np.ndarray:
    """(n_antennas, n_slots, N_h) hop segments starting at the correlation peak."""
    x = corr.aligned if demodulated else corr.window
    n_h = plan.hop_period_samples
    n_slots = x.shape[1] // n_h
    if n_slots < plan.n_hops:
        raise ValueError(f"aligned signal has {x.shape[1]} samples, need {plan.n_hops * n_h}")
    return x[:, : n_slots * n_h].reshape(x.shape[0], n_slots, n_h)


# --- detections ---------------------------------------------------------------

def detect_reflectors(frame, fmcw: FmcwConfig, arr: ArrayConfig, grid: Grid | None = None,
                      lags: Sequence[int] = (0, 8, 16, 24), threshold_db: float = 8.0,
                      max_paths: int | None = None, order_rule: str = "gap",
                      forward_backward: bool = False) -> list[Detection]:
    """Conventional MUSIC on an RLC frame; peaks below threshold_db over the spectrum median are dropped."""
    grid = grid or Grid()
    x = _samples(frame)
    if not np.any(x):
        return []
    cov = estimate_covariance(build_conventional_matrix(x, lags), forward_backward)
    i = model_order(cov.eigvals, order_rule, cap=max_paths)
    if i == 0:
        return []
    coarse = Grid(grid.d_min, grid.d_max, max(0.05, grid.d_step), grid.eta_min, grid.eta_max,
                  max(math.radians(0.5), grid.eta_step))
    median = float(np.median(music_spectrum(cov, i, fmcw, arr, coarse).values))
    peaks, _ = find_paths(cov, i, fmcw, arr, grid)
    thr = median * 10 ** (threshold_db / 10)
    return [Detection(p.d, p.eta, p.value) for p in peaks if p.value >= thr and p.d > 0]


def _close(a: Detection, b: Detection, range_tol: float, angle_tol: float) -> bool:
    return abs(a.distance - b.distance) <= range_tol and abs(a.aoa - b.aoa) <= angle_tol


def classify_los_nlos(reading: SceneReading, range_tol: float = DEFAULT_RANGE_TOL,
                      angle_tol: float = DEFAULT_ANGLE_TOL) -> str:
    if not reading.virtuals_tlc:
        return INDETERMINATE
    for v in reading.virtuals_tlc:
        for r in reading.reflectors_rlc:
            if _close(v, r, range_tol, angle_tol):
                return LOS
    return NLOS


def los_match(reading: SceneReading, range_tol: float = DEFAULT_RANGE_TOL,
              angle_tol: float = DEFAULT_ANGLE_TOL) -> Detection | None:
    """The TLC detection that also appears in RLC, strongest first."""
    for v in sorted(reading.virtuals_tlc, key=lambda d: -d.strength):
        if any(_close(v, r, range_tol, angle_tol) for r in reading.reflectors_rlc):
            return v
    return None


def match_virtual_to_reflectors(virtuals: Sequence[Detection], reflectors: Sequence[Detection],
                                angle_tol: float = MATCH_ANGLE_TOL) -> list[tuple[Detection, Detection]]:
    """Greedy unique pairing by ascending |angle difference|, requiring D_v > D_r."""
    cands = []
    for i, v in enumerate(virtuals):
        for j, r in enumerate(reflectors):
            da = abs(v.aoa - r.aoa)
            if da <= angle_tol + 1e-12 and v.distance > r.distance:
                cands.append((da, i, j))
    cands.sort()
    used_v, used_r, out = set(), set(), []
    for _, i, j in cands:
        if i in used_v or j in used_r:
            continue
        used_v.add(i)
        used_r.add(j)
        out.append((i, virtuals[i], reflectors[j]))
    if len(out) < len(virtuals):
        log.debug("%d virtual detections left unmatched", len(virtuals) - len(out))
    out.sort(key=lambda t: t[0])
    return [(v, r) for _, v, r in out]
