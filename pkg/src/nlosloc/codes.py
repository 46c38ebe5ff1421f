"""Tag spreading codes, hop plans, TLC waveforms, baselines and the tag power model."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

# x^n + ... + 1, listed as the exponents strictly between 0 and n
PRIMITIVE_TAPS = {
    3: (1,),
    4: (1,),
    5: (2,),
    6: (1,),
    7: (1,),
    8: (4, 3, 2),
    9: (4,),
    10: (3,),
    11: (2,),
}

HOURS_PER_YEAR = 24 * 365.25


@dataclass(frozen=True)
class DsssCode:
    chips: tuple[int, ...]

    def __post_init__(self):
        if len(self.chips) < 2:
            raise ValueError("code length must be >= 2")
        if any(c not in (0, 1) for c in self.chips):
            raise ValueError("chips must be 0/1")
        if not any(self.chips):
            raise ValueError("code must not be all-zero")

    @property
    def length(self) -> int:
        return len(self.chips)

    def bipolar(self) -> np.ndarray:
        return 2.0 * np.asarray(self.chips, dtype=float) - 1.0


@dataclass(frozen=True)
class HopPlan:
    channel_freqs: tuple[float, ...]
    index_seq: tuple[int, ...]
    hop_period_samples: int
    seed: int = 0

    def __post_init__(self):
        nf = len(self.channel_freqs)
        if nf == 0:
            raise ValueError("empty channel list")
        if len(set(self.channel_freqs)) != nf or min(self.channel_freqs) <= 0:
            raise ValueError("channel frequencies must be distinct and positive")
        if any(i < 0 or i >= nf for i in self.index_seq):
            raise ValueError("hop index out of range")
        if self.hop_period_samples < 1:
            raise ValueError("hop period must be >= 1 sample")

    @property
    def n_channels(self) -> int:
        return len(self.channel_freqs)

    @property
    def n_hops(self) -> int:
        return len(self.index_seq)

    def hop_freqs(self) -> np.ndarray:
        return np.asarray(self.channel_freqs)[list(self.index_seq)]


@dataclass(frozen=True)
class HfdSchedule:
    tlc_duration: float = 0.1
    rlc_duration: float = 0.9

    def __post_init__(self):
        if self.tlc_duration <= 0 or self.rlc_duration <= 0:
            raise ValueError("phase durations must be positive")

    @property
    def duty_tlc(self) -> float:
        return self.tlc_duration / (self.tlc_duration + self.rlc_duration)


@dataclass(frozen=True)
class PowerProfile:
    per_freq_mw: Mapping[float, float] = field(
        default_factory=lambda: {2e3: 0.348, 5e3: 0.373, 10e3: 0.506}
    )

    def __post_init__(self):
        if any(v <= 0 for v in self.per_freq_mw.values()):
            raise ValueError("powers must be positive")


@dataclass(frozen=True, eq=False)
class TlcSequence:
    """Sampled tag modulation.

    `samples` is the real waveform g(n) cos(2 pi f_H(n) n / fs). `chips` and
    `carrier_hz` hold the per-sample code and sub-carrier so the receiver can
    undo the modulation. Coded kinds switch between two opposite-phase
    reflection states, so their chips are +-1; FSK chips are on/off.
    `kind` is one of HFD, DSSS_ONLY, FSK.
    """

    samples: np.ndarray
    chips: np.ndarray
    carrier_hz: np.ndarray
    sample_rate: float
    hop_period: int
    kind: str = "HFD"

    @property
    def total_len(self) -> int:
        return len(self.samples)

    @property
    def n_slots(self) -> int:
        return self.total_len // self.hop_period

    def phase_time(self) -> np.ndarray:
        return np.arange(self.total_len) / self.sample_rate

    def emitted(self, delay: float = 0.0) -> np.ndarray:
        """Complex modulation the tag imposes on the incident chirp.

        Coded kinds use the single-sideband form g(t) exp(j 2 pi f_H t); FSK is
        a plain on/off square wave.
        """
        if self.kind == "FSK":
            return self.chips.astype(complex)
        t = self.phase_time() - delay
        return self.chips * np.exp(2j * np.pi * self.carrier_hz * t)

    def demod_reference(self) -> np.ndarray:
        """Per-sample factor that strips the modulation from an aligned window."""
        t = self.phase_time()
        tone = np.exp(-2j * np.pi * self.carrier_hz * t)
        if self.kind == "FSK":
            # tone receiver: keeps the fundamental only
            return tone
        return self.chips * tone

    def energy(self) -> float:
        return float(np.sum(self.samples**2))


# --- code family --------------------------------------------------------------

def m_sequence(n: int) -> np.ndarray:
    if n not in PRIMITIVE_TAPS:
        raise ValueError(f"no primitive polynomial tabulated for degree {n}")
    L = 2**n - 1
    taps = PRIMITIVE_TAPS[n]
    a = np.zeros(L + n, dtype=np.int8)
    a[n - 1] = 1
    for k in range(L):
        v = a[k]
        for t in taps:
            v ^= a[k + t]
        a[k + n] = v
    return a[:L].copy()


def periodic_xcorr(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cyclic correlation sum_n a(n) b(n+k mod L) for every lag k."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.real(np.fft.ifft(np.conj(np.fft.fft(a)) * np.fft.fft(b)))


def _period(v: np.ndarray) -> int:
    L = len(v)
    for p in range(1, L + 1):
        if L % p == 0 and np.array_equal(v, np.roll(v, -p)):
            return p
    return L


def _family_score(fam: list[np.ndarray]) -> int:
    bip = [2.0 * f - 1.0 for f in fam]
    L = len(fam[0])
    worst = 0.0
    for i in range(len(bip)):
        ac = periodic_xcorr(bip[i], bip[i])
        worst = max(worst, np.max(np.abs(ac[1:])))
        for j in range(i + 1, len(bip)):
            worst = max(worst, np.max(np.abs(periodic_xcorr(bip[i], bip[j]))))
    return int(round(worst)) if L else 0


@lru_cache(maxsize=None)
def code_family(length: int) -> tuple[tuple[int, ...], ...]:
    """Deterministic low-correlation family of binary codes of `length` = 2^n - 1.

    Built as {u} + {u xor shift_k(v)} from an m-sequence u and its decimation v,
    keeping the decimation with the smallest worst-case periodic correlation
    (auto off-peak and cross). For n = 4 this is the small Kasami set.
    """
    n = int(round(math.log2(length + 1)))
    if length < 7 or 2**n - 1 != length:
        raise ValueError(f"unsupported code length {length}; need 2^n - 1 with n >= 3")
    u = m_sequence(n)
    L = length
    best = None
    for q in range(2, L):
        v = u[(q * np.arange(L)) % L]
        if not v.any():
            continue
        if any(np.array_equal(v, np.roll(u, s)) for s in range(L)):
            continue
        fam = [u] + [u ^ np.roll(v, -k) for k in range(_period(v))]
        if _period(v) == L:
            fam.append(v)
        uniq = []
        for f in fam:
            if f.any() and not any(np.array_equal(f, g) for g in uniq):
                uniq.append(f)
        if len(uniq) < 2:
            continue
        key = (_family_score(uniq), -len(uniq), q)
        if best is None or key < best[0]:
            best = (key, uniq)
    return tuple(tuple(int(c) for c in f) for f in best[1])


def family_bound(length: int) -> int:
    """Measured worst-case |periodic correlation| (bipolar) across the family."""
    return _family_score([np.asarray(f, dtype=np.int8) for f in code_family(length)])


def generate_dsss_code(family_seed: int, length: int = 15) -> DsssCode:
    fam = code_family(length)
    return DsssCode(fam[family_seed % len(fam)])


# --- hopping ------------------------------------------------------------------

def generate_hop_plan(seed: int, channel_freqs: Sequence[float], n_hops: int,
                      hop_period_samples: int) -> HopPlan:
    if len(channel_freqs) == 0:
        raise ValueError("empty channel list")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(channel_freqs), size=n_hops)
    return HopPlan(tuple(float(f) for f in channel_freqs), tuple(int(i) for i in idx),
                   int(hop_period_samples), seed)


def build_tlc_waveform(code: DsssCode, plan: HopPlan, sample_rate: float,
                       repetitions: int = 1, kind: str = "HFD", levels: str = "bipolar") -> TlcSequence:
    """Code chips times the hopped sub-carrier.

    levels="bipolar" maps chips to +-1 (two opposite-phase reflection states);
    levels="onoff" keeps them as 0/1 gating.
    """
    nh = plan.hop_period_samples
    if nh % code.length:
        raise ValueError("hop period must be an integer number of samples per chip")
    if levels not in ("bipolar", "onoff"):
        raise ValueError(f"invalid levels {levels!r}")
    spc = nh // code.length
    vals = code.bipolar() if levels == "bipolar" else np.asarray(code.chips, dtype=float)
    per_hop = np.repeat(vals, spc)
    chips = np.tile(per_hop, plan.n_hops * repetitions)
    carrier = np.tile(np.repeat(plan.hop_freqs(), nh), repetitions)
    n = np.arange(len(chips))
    samples = chips * np.cos(2 * np.pi * carrier * n / sample_rate)
    return TlcSequence(samples, chips, carrier, float(sample_rate), nh, kind)


def build_baseline_waveform(kind: str, *, sample_rate: float, n_samples: int | None = None,
                            freq: float | None = None, code: DsssCode | None = None,
                            carrier: float | None = None, samples_per_chip: int = 1,
                            repetitions: int = 1, levels: str = "bipolar") -> TlcSequence:
    """FSK on/off square wave at `freq`, or DSSS_ONLY: `code` on one fixed `carrier`."""
    if kind == "FSK":
        if freq is None or n_samples is None or freq <= 0:
            raise ValueError("FSK needs freq > 0 and n_samples")
        t = np.arange(n_samples) / sample_rate
        sq = (np.cos(2 * np.pi * freq * t) >= 0).astype(float)
        return TlcSequence(sq.copy(), sq, np.full(n_samples, float(freq)), float(sample_rate),
                           n_samples, "FSK")
    if kind == "DSSS_ONLY":
        if code is None or carrier is None:
            raise ValueError("DSSS_ONLY needs code and carrier")
        plan = HopPlan((float(carrier),), (0,), code.length * samples_per_chip)
        return build_tlc_waveform(code, plan, sample_rate, repetitions, kind="DSSS_ONLY", levels=levels)
    raise ValueError(f"invalid baseline kind {kind!r}")


# --- correlation / power ------------------------------------------------------

def correlation_profile(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("length mismatch")
    L = len(a)
    return np.array([np.dot(a, np.roll(b, -k)) for k in range(L)])


def power_model(profile: PowerProfile, plan: HopPlan, schedule: HfdSchedule,
                battery_mwh: float) -> dict:
    """Average tag draw during TLC, over the whole HFD cycle, and battery life."""
    counts = np.bincount(plan.index_seq, minlength=plan.n_channels).astype(float)
    occ = counts / counts.sum()
    mw = np.array([profile.per_freq_mw[f] for f in plan.channel_freqs])
    avg_tlc_mw = float(np.dot(occ, mw))
    # the tag draws nothing while silent in RLC
    avg_overall_mw = avg_tlc_mw * schedule.duty_tlc
    return {
        "avg_tlc_mw": avg_tlc_mw,
        "avg_overall_uw": avg_overall_mw * 1e3,
        "lifetime_years": battery_mwh / avg_overall_mw / HOURS_PER_YEAR,
    }
