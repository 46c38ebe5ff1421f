import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlosloc.channel import RLC, TLC, NoiseSpec, RxFrame, add_noise
from nlosloc.codes import (HopPlan, build_baseline_waveform, build_tlc_waveform, generate_dsss_code,
                           generate_hop_plan)
from nlosloc.fsmusic import Grid
from nlosloc.receiver import (INDETERMINATE, LOS, NLOS, CorrelationResult, Detection, SceneReading,
                              align_and_segment, cancel_clutter, classify_los_nlos, correlate_at,
                              detect_reflectors, match_virtual_to_reflectors, sliding_correlate)
from nlosloc.waveform import ArrayConfig, ChirpReturn, FmcwConfig, beat_frequency, steering_angle, synthesize_if_chirp

FM = FmcwConfig()
ARR = ArrayConfig(8, FM.wavelength / 2)
FS = FM.sample_rate
DEG = math.radians


def hfd(k=0, seed=2, nh=60, hops=3):
    return build_tlc_waveform(generate_dsss_code(k), generate_hop_plan(seed, [2e3, 5e3, 10e3], hops, nh), FS)


def echo(d, eta, amp=1.0, n=256):
    y = synthesize_if_chirp(FM, [ChirpReturn.from_distance(amp, d)], n)
    return steering_angle(ARR, eta, FM.wavelength)[:, 0][:, None] * y[None, :]


def embed(g, offset, n=256, n_a=2):
    x = np.zeros((n_a, n), dtype=complex)
    x[:, offset:offset + g.total_len] = g.emitted()
    return x


# --- correlation --------------------------------------------------------------

def test_clean_embedding_peak_and_energy():
    g = hfd()
    c = sliding_correlate(embed(g, 37), g, beat_hz=0.0)
    assert c.peak_lag == 37
    assert c.magnitude[37] == pytest.approx(g.total_len)  # unit-modulus chips: energy N_T
    real = np.zeros((1, 256))
    real[0, 37:37 + g.total_len] = g.samples
    r = correlate_at(real, g, 37)
    assert r[0].real == pytest.approx(g.energy(), rel=1e-12)
    assert sliding_correlate(real, g, beat_hz=0.0).peak_lag == 37


def test_frame_too_short():
    g = hfd()
    with pytest.raises(ValueError):
        sliding_correlate(np.zeros((1, g.total_len - 1)), g)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 8e3))
def test_correlation_linearity(seed, beat):
    g = hfd()
    r = np.random.default_rng(seed)
    a = r.standard_normal((3, 256)) + 1j * r.standard_normal((3, 256))
    b = r.standard_normal((3, 256)) + 1j * r.standard_normal((3, 256))
    ra = sliding_correlate(a, g, beat_hz=beat).r_k
    rb = sliding_correlate(b, g, beat_hz=beat).r_k
    np.testing.assert_allclose(sliding_correlate(a + b, g, beat_hz=beat).r_k, ra + rb, atol=1e-9)


def test_noise_and_signal_growth_rates():
    """Matched output grows as N_T, noise output as sqrt(N_T)."""
    code = generate_dsss_code(0)
    reps = np.array([1, 2, 4, 8])
    sig, noi = [], []
    r = np.random.default_rng(0)
    for k in reps:
        g = build_baseline_waveform("DSSS_ONLY", sample_rate=FS, code=code, carrier=5e3, samples_per_chip=1,
                                    repetitions=int(k))
        s = correlate_at(g.emitted()[None, :], g, 0)[0]
        n = [abs(correlate_at((r.standard_normal((1, g.total_len)) + 1j * r.standard_normal((1, g.total_len)))
                              / np.sqrt(2), g, 0)[0]) ** 2 for _ in range(400)]
        sig.append(abs(s))
        noi.append(math.sqrt(np.mean(n)))
    slope_s = np.polyfit(np.log(reps * 15), np.log(sig), 1)[0]
    slope_n = np.polyfit(np.log(reps * 15), np.log(noi), 1)[0]
    assert slope_s == pytest.approx(1.0, abs=0.02)
    assert slope_n == pytest.approx(0.5, abs=0.05)


def test_beat_search_recovers_path():
    g = hfd()
    d = 6.1
    x = echo(d, DEG(5), n=256)
    mod = np.zeros(256, dtype=complex)
    mod[20:20 + g.total_len] = g.emitted()
    c = sliding_correlate(x * mod, g, n_fft=4096)
    assert c.peak_lag == 20
    assert abs(c.beat_hz - beat_frequency(FM, d)) <= FS / 4096
    assert c.aligned.shape == (8, g.total_len)


def test_cancel_clutter():
    a = RxFrame(np.ones((2, 4), dtype=complex), FS, TLC)
    b = RxFrame(0.25 * np.ones((2, 4), dtype=complex), FS, RLC)
    np.testing.assert_array_equal(cancel_clutter(a, b).samples, 0.75 * np.ones((2, 4)))


# --- alignment ----------------------------------------------------------------

def _corr(aligned):
    return CorrelationResult(np.zeros((aligned.shape[0], 1)), 0, 0.0, aligned, aligned, 0.0)


def test_segments_at_hop_boundaries():
    plan = HopPlan((2e3, 5e3, 10e3), (2, 0, 1), 60)
    x = np.arange(2 * 180).reshape(2, 180).astype(complex)
    seg = align_and_segment(_corr(x), plan)
    assert seg.shape == (2, 3, 60)
    for k in range(3):
        np.testing.assert_array_equal(seg[:, k], x[:, 60 * k:60 * (k + 1)])
    with pytest.raises(ValueError):
        align_and_segment(_corr(x[:, :100]), plan)


def test_permuted_blocks_permute_segments():
    plan = HopPlan((2e3, 5e3, 10e3), (0, 1, 2), 60)
    x = np.random.default_rng(0).standard_normal((2, 180)) + 0j
    perm = [2, 0, 1]
    xp = np.concatenate([x[:, 60 * p:60 * (p + 1)] for p in perm], axis=1)
    np.testing.assert_array_equal(align_and_segment(_corr(xp), plan), align_and_segment(_corr(x), plan)[:, perm])


def test_segment_tone_at_hop_channel():
    g = hfd(seed=4)
    d = 3.0
    x = echo(d, 0.0)
    mod = np.zeros(256, dtype=complex)
    mod[10:10 + g.total_len] = g.emitted()
    c = sliding_correlate(x * mod, g, n_fft=2048)
    plan = generate_hop_plan(4, [2e3, 5e3, 10e3], 3, 60)
    # strip only the chips: each segment keeps its sub-carrier plus the beat
    raw = align_and_segment(c, plan, demodulated=False) * g.chips.reshape(3, 60)[None]
    n_fft = 4096
    f = np.fft.fftfreq(n_fft, 1 / FS)
    for k, fh in enumerate(plan.hop_freqs()):
        spec = np.abs(np.fft.fft(raw[0, k], n_fft))
        assert abs(f[np.argmax(spec)] - (fh + beat_frequency(FM, d))) <= FS / n_fft * 2


# --- reflector detection ------------------------------------------------------

GRID = Grid(0.5, 10, 0.01, DEG(-60), DEG(60), DEG(0.25))
RLC_LAGS = (0, 8, 24, 48, 72, 88, 96)


def test_single_reflector_noiseless():
    f = RxFrame(echo(3.0, DEG(20)), FS, RLC)
    dets = detect_reflectors(f, FM, ARR, GRID, RLC_LAGS)
    assert len(dets) >= 1
    best = max(dets, key=lambda d: d.strength)
    assert best.distance == pytest.approx(3.0, abs=0.05)
    assert best.aoa == pytest.approx(DEG(20), abs=DEG(1))


def test_no_reflectors():
    assert detect_reflectors(RxFrame(np.zeros((8, 256), dtype=complex), FS, RLC), FM, ARR, GRID) == []


def test_three_reflectors_at_10db():
    truth = [(2.0, DEG(-30)), (4.0, DEG(5)), (6.5, DEG(35))]
    x = sum(echo(d, e) for d, e in truth)
    hits = 0
    for seed in range(10):
        f = add_noise(RxFrame(x, FS, RLC), NoiseSpec(10.0, seed), reference_power=1.0)
        dets = detect_reflectors(f, FM, ARR, GRID, RLC_LAGS, order_rule="floor", forward_backward=True)
        ok = all(any(abs(t.distance - d) <= 0.10 and abs(t.aoa - e) <= DEG(2) for t in dets) for d, e in truth)
        hits += ok and len(dets) == 3
    assert hits >= 9


# --- decisions ----------------------------------------------------------------

def D(d, deg, s=1.0):
    return Detection(d, DEG(deg), s)


def test_classification_examples():
    assert classify_los_nlos(SceneReading((D(5.05, 10.2),), (D(5.0, 10),))) == LOS
    assert classify_los_nlos(SceneReading((D(2.0, -30),), (D(5.0, 10),))) == NLOS
    assert classify_los_nlos(SceneReading((D(2.0, -30),), ())) == INDETERMINATE


def test_detection_validation():
    with pytest.raises(ValueError):
        Detection(0.0, 0.1)


det_st = st.builds(D, st.floats(0.6, 9), st.floats(-50, 50))


@settings(max_examples=60)
@given(st.lists(det_st, max_size=5), st.lists(det_st, max_size=5), st.randoms())
def test_classification_order_invariant(rlc, tlc, rnd):
    a = classify_los_nlos(SceneReading(tuple(rlc), tuple(tlc)))
    rnd.shuffle(rlc)
    rnd.shuffle(tlc)
    assert classify_los_nlos(SceneReading(tuple(rlc), tuple(tlc))) == a


def test_matching_examples():
    v = D(6.0, 40.5)
    r1, r2 = D(2.0, 40.1), D(3.0, 10)
    assert match_virtual_to_reflectors([v], [r1, r2]) == [(v, r1)]
    assert match_virtual_to_reflectors([v], [D(2.0, 42)]) == []
    assert match_virtual_to_reflectors([D(1.5, 40.5)], [r1]) == []


def test_matching_is_unique_and_greedy():
    r = D(2.0, 20.0)
    v1, v2 = D(5.0, 20.8), D(6.0, 20.1)
    assert match_virtual_to_reflectors([v1, v2], [r]) == [(v2, r)]
