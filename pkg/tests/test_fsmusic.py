import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from nlosloc.fsmusic import (FsSnapshotMatrix, Grid, Spectrum2D, build_conventional_matrix, build_fs_matrix,
                             conventional_music, count_above_floor, estimate_covariance, estimate_num_paths,
                             find_paths, max_resolvable, model_order, music_spectrum, pick_peaks, steering,
                             unstack_fs_matrix)
from nlosloc.waveform import ArrayConfig, FmcwConfig, beat_frequency, steering_angle

FM = FmcwConfig()
ARR = ArrayConfig(8, FM.wavelength / 2)
HOP_OFFSETS = np.array([0, 60, 120])
# one range-ambiguity interval of the hop baseline (fs / 60 Hz of beat = 2.56 m)
ALIAS_FREE = Grid(3.0, 5.5, 0.01, math.radians(-60), math.radians(60), math.radians(0.25))


def synth(paths, offsets=HOP_OFFSETS, n_cols=60, seed=0):
    """Independent unit-power signals on the given (d, eta) paths."""
    r = np.random.default_rng(seed)
    A = np.stack([steering(FM, ARR, offsets, d, e) for d, e in paths], axis=1)
    S = (r.standard_normal((len(paths), n_cols)) + 1j * r.standard_normal((len(paths), n_cols))) / np.sqrt(2)
    return A @ S


def fs_cov(paths, seed=0):
    return estimate_covariance(FsSnapshotMatrix(synth(paths, seed=seed), 8, 3, 60))


def tone_signal(paths, gains, n=180, snr_db=None, seed=0):
    """Aligned per-antenna signal with coherent paths (one tag seen along several routes)."""
    r = np.random.default_rng(seed)
    t = np.arange(n) / FM.sample_rate
    x = np.zeros((8, n), dtype=complex)
    for (d, e), g in zip(paths, gains):
        x += g * steering_angle(ARR, e, FM.wavelength)[:, 0][:, None] * np.exp(2j * np.pi * beat_frequency(FM, d) * t)
    if snr_db is not None:
        p = 10 ** (-snr_db / 10)
        x += np.sqrt(p / 2) * (r.standard_normal(x.shape) + 1j * r.standard_normal(x.shape))
    return x


# --- matrices -----------------------------------------------------------------

def test_row_order_is_antenna_major():
    seg = np.array([[[f"a{a}f{f}n{n}" for n in range(3)] for f in range(2)] for a in range(2)], dtype=object)
    labels = np.arange(12).reshape(2, 2, 3)
    m = build_fs_matrix(labels)
    assert m.entries.shape == (4, 3)
    order = [tuple(seg[a, f, 0] for _ in [0]) for a in range(2) for f in range(2)]
    assert [m.entries[k, 0] for k in range(4)] == [labels[a, f, 0] for a in range(2) for f in range(2)]
    assert order == [("a0f0n0",), ("a0f1n0",), ("a1f0n0",), ("a1f1n0",)]


def test_single_hop_matches_conventional():
    x = np.random.default_rng(1).standard_normal((8, 60)) + 0j
    np.testing.assert_array_equal(build_fs_matrix(x[:, None, :]).entries, build_conventional_matrix(x).entries)


def test_unstack_round_trip():
    x = np.random.default_rng(2).standard_normal((4, 3, 7)) + 1j
    np.testing.assert_array_equal(unstack_fs_matrix(build_fs_matrix(x)), x)


def test_shape_errors():
    with pytest.raises(ValueError):
        build_fs_matrix([np.zeros((3, 5)), np.zeros((3, 4))])
    with pytest.raises(ValueError):
        build_fs_matrix(np.zeros((2, 3, 5)), lags=(5,))
    with pytest.raises(ValueError):
        estimate_covariance(build_fs_matrix(np.zeros((2, 3, 1))))


def test_lagged_rows_offsets():
    m = build_fs_matrix(np.zeros((2, 3, 60)), lags=(0, 10, 20))
    assert m.entries.shape == (18, 40)
    assert list(m.row_offsets) == [0, 10, 20, 60, 70, 80, 120, 130, 140]


# --- covariance and model order -----------------------------------------------

def test_single_path_rank_one():
    c = fs_cov([(4.0, 0.2)])
    assert c.eigvals[1] / c.eigvals[0] < 1e-8
    np.testing.assert_allclose(c.matrix, c.matrix.conj().T, atol=1e-10)
    assert np.all(np.diff(c.eigvals) <= 0)


@pytest.mark.parametrize("i", [2, 5, 9, 16])
def test_independent_paths_rank(i):
    eta = np.radians(np.linspace(-50, 50, i))
    d = 3.1 + (np.arange(i) * 0.77) % 2.3
    c = fs_cov(list(zip(d, eta)))
    assert int(np.sum(c.eigvals > 1e-8 * c.eigvals[0])) == i
    assert estimate_num_paths(c.eigvals) == i


def test_white_noise_eigen_spread():
    r = np.random.default_rng(0)
    x = (r.standard_normal((24, 10_000)) + 1j * r.standard_normal((24, 10_000))) / np.sqrt(2)
    c = estimate_covariance(FsSnapshotMatrix(x, 8, 3, 10_000))
    assert c.eigvals[0] / c.eigvals[-1] < 1.2 ** 2
    assert np.all(np.abs(c.eigvals - 1) < 0.2)


def test_estimate_num_paths_examples():
    assert estimate_num_paths([100, 90, 80, 0.1, 0.09]) == 3
    assert estimate_num_paths([1.0] * 6) == 0
    assert max_resolvable(24) == 16
    assert max_resolvable(8) == 5


def test_floor_rule():
    ev = [50, 20, 9, 1.1, 1.0, 0.9, 1.0, 0.95]
    assert count_above_floor(ev, 6.0) == 3
    assert model_order(ev, "floor") == 3
    # noiseless: round-off and mismatch terms far below the dynamic range
    assert count_above_floor([1, 0.15, 4e-3, 2e-8, 1e-11] + [1e-16] * 20) == 3
    with pytest.raises(ValueError):
        model_order(ev, "aic")


def test_forward_backward_needs_symmetric_offsets():
    x = np.random.default_rng(0).standard_normal((2, 3, 60)) + 0j
    with pytest.raises(ValueError):
        estimate_covariance(build_fs_matrix(x, (0, 3, 10)), forward_backward=True)
    cov = estimate_covariance(build_fs_matrix(x, (0, 10, 20)), forward_backward=True)
    J = np.eye(cov.dim)[::-1]
    np.testing.assert_allclose(cov.matrix, J @ cov.matrix.conj() @ J, atol=1e-12)


# --- spectrum -----------------------------------------------------------------

def test_single_path_spectrum_max():
    d0, e0 = 5.0, math.radians(20)
    c = estimate_covariance(build_fs_matrix(tone_signal([(d0, e0)], [1.0]).reshape(8, 3, 60), (0, 10, 20)))
    grid = Grid(0.5, 10, 0.01, math.radians(-60), math.radians(60), math.radians(0.25))
    sp = music_spectrum(c, 1, FM, ARR, grid)
    i, j = np.unravel_index(np.argmax(sp.values), sp.values.shape)
    assert abs(sp.grid_d[i] - d0) <= grid.d_step + 1e-9
    assert abs(sp.grid_eta[j] - e0) <= grid.eta_step + 1e-9
    assert np.all(np.isfinite(sp.values)) and np.all(sp.values >= 0)


def test_noise_only_flat_spectrum():
    r = np.random.default_rng(0)
    x = r.standard_normal((24, 500)) + 1j * r.standard_normal((24, 500))
    c = estimate_covariance(FsSnapshotMatrix(x, 8, 3, 500))
    sp = music_spectrum(c, 0, FM, ARR, Grid(1, 8, 0.1, -1, 1, 0.05))
    assert 10 * math.log10(sp.values.max() / sp.values.min()) < 3


def test_i_paths_range_checked():
    c = fs_cov([(4.0, 0.0)])
    with pytest.raises(ValueError):
        music_spectrum(c, 24, FM, ARR, ALIAS_FREE)


def test_fs_resolves_ten_paths_conventional_cannot():
    eta = np.radians(np.linspace(-45, 45, 10))
    d = 3.2 + (np.arange(10) * 0.77) % 2.2
    truth = list(zip(d, eta))
    peaks, short = find_paths(fs_cov(truth), 10, FM, ARR, ALIAS_FREE)
    assert not short
    for dt, et in truth:
        assert any(abs(p.d - dt) <= 0.02 and abs(p.eta - et) <= math.radians(0.5) for p in peaks)
    # the antenna-only matrix has 8 rows: at most floor(16/3) = 5 paths
    x = synth(truth, offsets=[0])
    conv = estimate_covariance(FsSnapshotMatrix(x, 8, 1, 60))
    assert estimate_num_paths(conv.eigvals) <= 5
    with pytest.raises(ValueError):
        music_spectrum(conv, 10, FM, ARR, ALIAS_FREE)


def test_equal_range_pair_gains_nothing_from_hops():
    """Two coherent paths at one range: the hop rows share the range phase, so they add no angular aperture.

    Without forward-backward averaging both estimators merge the pair; with it both resolve it.
    """
    paths = [(5.0, math.radians(10)), (5.0, math.radians(16))]
    x = tone_signal(paths, [1.0, 0.8 * np.exp(1j)], snr_db=20)
    grid = Grid(3, 7, 0.01, math.radians(-20), math.radians(40), math.radians(0.25))

    def resolved(m, fb):
        peaks, _ = find_paths(estimate_covariance(m, fb), 2, FM, ARR, grid)
        return all(any(abs(p.d - d) < 0.1 and abs(p.eta - e) < math.radians(1) for p in peaks) for d, e in paths)

    fs_m = build_fs_matrix(x.reshape(8, 3, 60), (0, 10, 20))
    cv_m = build_conventional_matrix(x, (0, 8, 16, 24))
    assert resolved(fs_m, True) and resolved(cv_m, True)
    assert not resolved(fs_m, False) and not resolved(cv_m, False)


def test_conventional_consistency_and_determinism():
    d0, e0 = 4.3, math.radians(-12)
    x = tone_signal([(d0, e0)], [1.0])
    grid = Grid(2, 7, 0.01, math.radians(-30), math.radians(10), math.radians(0.25))
    conv = conventional_music(x, 1, FM, ARR, grid, lags=(0, 8, 16, 24))
    fs = music_spectrum(estimate_covariance(build_fs_matrix(x.reshape(8, 3, 60), (0, 10, 20))), 1, FM, ARR, grid)
    a = np.unravel_index(np.argmax(conv.values), conv.values.shape)
    b = np.unravel_index(np.argmax(fs.values), fs.values.shape)
    assert abs(a[0] - b[0]) <= 1 and abs(a[1] - b[1]) <= 1
    again = conventional_music(x, 1, FM, ARR, grid, lags=(0, 8, 16, 24))
    np.testing.assert_array_equal(conv.values, again.values)


# --- peaks --------------------------------------------------------------------

def _spec(v):
    v = np.asarray(v, dtype=float)
    return Spectrum2D(np.arange(v.shape[0]) * 1.0 + 1, np.arange(v.shape[1]) * 0.1, v)


def test_pick_peaks_examples():
    v = np.ones((5, 5))
    v[2, 3] = 9
    (p,), short = pick_peaks(_spec(v), 1)
    assert (p.d, p.eta, short) == (3.0, pytest.approx(0.3), False)
    v = np.ones((5, 7))
    v[3, 1] = v[1, 5] = 4
    (p,), _ = pick_peaks(_spec(v), 1)
    assert p.d == 2.0  # lower range wins the tie
    peaks, short = pick_peaks(_spec(np.ones((4, 4))), 2)
    assert peaks == [] and short
    with pytest.raises(ValueError):
        pick_peaks(_spec(v), 0)


def test_pick_peaks_strength_from_eigenvalues():
    v = np.ones((6, 6))
    v[1, 1], v[4, 4] = 5, 7
    peaks, _ = pick_peaks(_spec(v), 2, eigvals=[10.0, 3.0, 0.1])
    assert [p.strength for p in peaks] == [10.0, 3.0]
    assert peaks[0].d == 5.0


def test_spectrum_csv(tmp_path):
    sp = _spec(np.arange(6).reshape(2, 3) + 1.0)
    sp.to_csv(tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "d_m,eta_deg,value"
    assert len(lines) == 7


# --- properties ---------------------------------------------------------------

path_st = st.tuples(st.floats(3.1, 5.4), st.floats(-0.9, 0.9))


@settings(max_examples=25, deadline=None)
@given(st.lists(path_st, min_size=1, max_size=4), st.floats(0, 2 * math.pi), st.floats(1e-3, 1e3))
def test_invariances(paths, theta, scale):
    # distinct paths keep the signal subspace well defined
    for k, a in enumerate(paths):
        for b in paths[k + 1:]:
            assume(abs(a[0] - b[0]) > 0.3 or abs(a[1] - b[1]) > 0.15)
    m = synth(paths)
    grid = Grid(3.0, 5.5, 0.1, -1.0, 1.0, 0.05)
    i = len(paths)
    c = estimate_covariance(FsSnapshotMatrix(m, 8, 3, 60))
    c_rot = estimate_covariance(FsSnapshotMatrix(m * np.exp(1j * theta), 8, 3, 60))
    s0 = music_spectrum(c, i, FM, ARR, grid).values
    s1 = music_spectrum(c_rot, i, FM, ARR, grid).values
    # compare the null-space projections: at an exact noiseless peak 1/P is round-off
    np.testing.assert_allclose(1 / s1, 1 / s0, rtol=1e-6, atol=1e-9 * float(np.max(1 / s0)))
    Us, Un = c.eigvecs[:, :i], c.eigvecs[:, i:]
    assert np.linalg.norm(Us.conj().T @ Un) <= 1e-10
    c_scaled = estimate_covariance(FsSnapshotMatrix(m * math.sqrt(scale), 8, 3, 60))
    p0, _ = pick_peaks(music_spectrum(c, i, FM, ARR, grid), i)
    p1, _ = pick_peaks(music_spectrum(c_scaled, i, FM, ARR, grid), i)
    # noiseless peak heights are round-off, so only the set of peaks is invariant
    assert sorted((p.d, p.eta) for p in p0) == sorted((p.d, p.eta) for p in p1)
