"""Frequency-spatial MUSIC and the conventional antenna-only baseline.

Snapshot rows are (antenna, hop segment, lag) triples; columns are sample
positions inside a segment. A row's time offset from the start of the aligned
signal is ``hop * n_h + lag`` samples, so a path at one-way distance d and
azimuth eta has steering element

    exp(j * [2 pi * beat(d) * offset / fs + array_phase(antenna, eta)])

where beat(d) is the FMCW beat frequency. Equivalently the hop segments sample
the chirp at RF offsets slope * offset / fs, which is what couples range into
the row phases. With one lag at 0 the row layout is exactly antenna-major,
hop-minor; extra lags add short-baseline rows that remove the range aliasing
of the hop baseline.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .waveform import C, ArrayConfig, FmcwConfig, steering_angle


@dataclass(frozen=True, eq=False)
class FsSnapshotMatrix:
    entries: np.ndarray  # (n_a * n_f * n_lags) x n_cols
    n_a: int
    n_f: int
    n_h: int
    lags: tuple[int, ...] = (0,)

    @property
    def row_offsets(self) -> np.ndarray:
        """Sample offset of each row within one antenna block."""
        return np.array([f * self.n_h + l for f in range(self.n_f) for l in self.lags])

    @property
    def n_rows(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True, eq=False)
class CovarianceEstimate:
    matrix: np.ndarray
    eigvals: np.ndarray  # descending
    eigvecs: np.ndarray  # columns, same order
    n_a: int
    row_offsets: np.ndarray

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class Grid:
    d_min: float = 0.5
    d_max: float = 10.0
    d_step: float = 0.01
    eta_min: float = math.radians(-60)
    eta_max: float = math.radians(60)
    eta_step: float = math.radians(0.25)

    @property
    def d(self) -> np.ndarray:
        n = int(round((self.d_max - self.d_min) / self.d_step))
        return self.d_min + self.d_step * np.arange(n + 1)

    @property
    def eta(self) -> np.ndarray:
        n = int(round((self.eta_max - self.eta_min) / self.eta_step))
        return self.eta_min + self.eta_step * np.arange(n + 1)

    def around(self, d0: float, eta0: float, d_half: float, eta_half: float,
               d_step: float, eta_step: float) -> "Grid":
        return Grid(max(self.d_min, d0 - d_half), min(self.d_max, d0 + d_half), d_step,
                    max(self.eta_min, eta0 - eta_half), min(self.eta_max, eta0 + eta_half), eta_step)


@dataclass(frozen=True, eq=False)
class Spectrum2D:
    grid_d: np.ndarray
    grid_eta: np.ndarray
    values: np.ndarray  # (len(grid_d), len(grid_eta))

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["d_m", "eta_deg", "value"])
            for i, d in enumerate(self.grid_d):
                for j, e in enumerate(self.grid_eta):
                    w.writerow([f"{d:.4f}", f"{math.degrees(e):.4f}", f"{self.values[i, j]:.9e}"])


@dataclass(frozen=True)
class Peak:
    d: float
    eta: float
    strength: float
    value: float


# --- matrices -----------------------------------------------------------------

def build_fs_matrix(segmented, lags: Sequence[int] = (0,)) -> FsSnapshotMatrix:
    """Stack per-antenna (n_f, n_h) hop segments into snapshot rows.

    `segmented` is an (n_a, n_f, n_h) array or a list of (n_f, n_h) blocks.
    """
    if isinstance(segmented, np.ndarray):
        blocks = segmented
        if blocks.ndim != 3:
            raise ValueError("segmented must be (n_a, n_f, n_h)")
    else:
        shapes = {np.shape(b) for b in segmented}
        if len(shapes) != 1:
            raise ValueError("all antennas must share (n_f, n_h)")
        blocks = np.stack([np.asarray(b) for b in segmented])
    n_a, n_f, n_h = blocks.shape
    lags = tuple(int(l) for l in lags)
    if min(lags) < 0 or max(lags) >= n_h:
        raise ValueError("lags must lie in [0, n_h)")
    n_cols = n_h - max(lags)
    rows = [blocks[m, f, l:l + n_cols] for m in range(n_a) for f in range(n_f) for l in lags]
    return FsSnapshotMatrix(np.array(rows), n_a, n_f, n_h, lags)


def unstack_fs_matrix(m: FsSnapshotMatrix) -> np.ndarray:
    if m.lags != (0,):
        raise ValueError("only the plain layout round-trips")
    return m.entries.reshape(m.n_a, m.n_f, m.n_h)


def build_conventional_matrix(aligned: np.ndarray, lags: Sequence[int] = (0,)) -> FsSnapshotMatrix:
    """Antenna rows over the whole signal, optionally with short-lag smoothing."""
    aligned = np.atleast_2d(aligned)
    return build_fs_matrix(aligned[:, None, :], lags)


def estimate_covariance(m: FsSnapshotMatrix, forward_backward: bool = False) -> CovarianceEstimate:
    """Sample covariance (1/n_cols) M M^H, optionally forward-backward averaged.

    Forward-backward averaging partly decorrelates coherent paths. It needs
    row offsets symmetric about their midpoint so that J a* is parallel to a.
    """
    n_cols = m.entries.shape[1]
    if n_cols < 2:
        raise ValueError("need at least two snapshot columns")
    R = m.entries @ m.entries.conj().T / n_cols
    if forward_backward:
        off = m.row_offsets
        if not np.array_equal(np.sort(off.max() - off), np.sort(off)):
            raise ValueError("forward-backward averaging needs symmetric row offsets")
        R = 0.5 * (R + R[::-1, ::-1].conj())
    R = 0.5 * (R + R.conj().T)
    w, V = np.linalg.eigh(R)
    order = np.argsort(w)[::-1]
    w = np.clip(w[order], 0.0, None)
    return CovarianceEstimate(R, w, V[:, order], m.n_a, m.row_offsets)


def max_resolvable(n_rows: int) -> int:
    return (2 * n_rows) // 3


def estimate_num_paths(eigvals, gap_ratio: float = 10.0, rel_floor: float = 1e-10,
                       cap: int | None = None) -> int:
    """Largest I with eig[I-1] / eig[I] >= gap_ratio, capped at floor(2 M / 3).

    Eigenvalues below rel_floor * max are treated as equal to that floor so
    round-off in the null space cannot fake a gap.
    """
    ev = np.asarray(eigvals, dtype=float)
    if ev.size == 0 or ev[0] <= 0:
        return 0
    ev = np.maximum(ev, rel_floor * ev[0])
    limit = max_resolvable(ev.size) if cap is None else min(cap, max_resolvable(ev.size))
    best = 0
    for i in range(1, min(limit, ev.size - 1) + 1):
        if ev[i - 1] / ev[i] >= gap_ratio:
            best = i
    return best


def count_above_floor(eigvals, floor_ratio: float = 6.0, cap: int | None = None,
                      dynamic_range: float = 1e-6) -> int:
    """Number of eigenvalues at least floor_ratio times the median eigenvalue.

    The median stands in for the noise level when the signal subspace is
    small compared with the matrix dimension. It is clamped to
    dynamic_range * max so that noiseless round-off and tiny model-mismatch
    terms are not counted as paths.
    """
    ev = np.asarray(eigvals, dtype=float)
    if ev.size == 0 or ev[0] <= 0:
        return 0
    limit = max_resolvable(ev.size) if cap is None else min(cap, max_resolvable(ev.size))
    med = max(float(np.median(ev)), dynamic_range * ev[0])
    return int(min(limit, np.sum(ev >= floor_ratio * med)))


def model_order(eigvals, rule: str = "gap", gap_ratio: float = 10.0, floor_ratio: float = 6.0,
                cap: int | None = None) -> int:
    if rule == "gap":
        return estimate_num_paths(eigvals, gap_ratio, cap=cap)
    if rule == "floor":
        return count_above_floor(eigvals, floor_ratio, cap)
    raise ValueError(f"unknown model-order rule {rule!r}")


# --- spectrum -----------------------------------------------------------------

def range_vectors(fmcw: FmcwConfig, row_offsets, d) -> np.ndarray:
    """(n_offsets, len(d)) range part of the steering vector."""
    t = np.asarray(row_offsets, dtype=float)[:, None] / fmcw.sample_rate
    beat = fmcw.slope * 2.0 * np.asarray(d, dtype=float)[None, :] / C
    return np.exp(2j * np.pi * beat * t)


def steering(fmcw: FmcwConfig, arr: ArrayConfig, row_offsets, d: float, eta: float) -> np.ndarray:
    a = steering_angle(arr, eta, fmcw.wavelength)[:, 0]
    r = range_vectors(fmcw, row_offsets, [d])[:, 0]
    return np.kron(a, r)


def _null_projection(Un: np.ndarray, n_a: int, fmcw, arr, row_offsets, d, eta,
                     chunk: int = 64) -> np.ndarray:
    """a^H Un Un^H a over the grid, exploiting a = angle (x) range."""
    R = len(row_offsets)
    K = Un.shape[1]
    A = steering_angle(arr, eta, fmcw.wavelength)  # (n_a, E)
    W = np.einsum("mrk,me->rke", Un.conj().reshape(n_a, R, K), A)
    T = range_vectors(fmcw, row_offsets, d)  # (R, D)
    out = np.empty((len(d), len(eta)))
    W2 = W.reshape(R, K * len(eta))
    for s in range(0, len(d), chunk):
        Z = (T[:, s:s + chunk].T @ W2).reshape(-1, K, len(eta))
        out[s:s + chunk] = np.sum(Z.real**2 + Z.imag**2, axis=1)
    return out


def music_spectrum(cov: CovarianceEstimate, i_paths: int, fmcw: FmcwConfig, arr: ArrayConfig,
                   grid: Grid | None = None) -> Spectrum2D:
    grid = grid or Grid()
    if i_paths < 0 or i_paths >= cov.dim:
        raise ValueError(f"i_paths must lie in [0, {cov.dim})")
    Un = cov.eigvecs[:, i_paths:]
    d, eta = grid.d, grid.eta
    den = _null_projection(Un, cov.n_a, fmcw, arr, cov.row_offsets, d, eta)
    tiny = np.finfo(float).tiny
    return Spectrum2D(d, eta, 1.0 / np.maximum(den, tiny * 1e10))


def pick_peaks(spec: Spectrum2D, i_paths: int, eigvals=None) -> tuple[list[Peak], bool]:
    """The i_paths highest strict 8-neighbour maxima, and a shortfall flag.

    Ties go to the lower range, then the lower angle. Strength is the signal
    eigenvalue of the same rank when `eigvals` is given, else the spectrum value.
    """
    if i_paths < 1:
        raise ValueError("i_paths must be >= 1")
    v = spec.values
    pad = np.pad(v, 1, constant_values=-np.inf)
    core = pad[1:-1, 1:-1]
    is_max = np.ones_like(v, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            nb = pad[1 + di:pad.shape[0] - 1 + di, 1 + dj:pad.shape[1] - 1 + dj]
            is_max &= core > nb
    ii, jj = np.nonzero(is_max)
    order = sorted(range(len(ii)), key=lambda k: (-v[ii[k], jj[k]], ii[k], jj[k]))[:i_paths]
    peaks = []
    for rank, k in enumerate(order):
        val = float(v[ii[k], jj[k]])
        u = float(eigvals[rank]) if eigvals is not None and rank < len(eigvals) else val
        peaks.append(Peak(float(spec.grid_d[ii[k]]), float(spec.grid_eta[jj[k]]), u, val))
    return peaks, len(peaks) < i_paths


def conventional_music(aligned: np.ndarray, i_paths: int, fmcw: FmcwConfig, arr: ArrayConfig,
                       grid: Grid | None = None, lags: Sequence[int] = (0,)) -> Spectrum2D:
    cov = estimate_covariance(build_conventional_matrix(aligned, lags))
    return music_spectrum(cov, i_paths, fmcw, arr, grid)


def _parabolic(vm: float, v0: float, vp: float) -> float:
    """Vertex offset in cells of the parabola through three samples."""
    den = vm - 2 * v0 + vp
    if den >= 0:
        return 0.0
    return float(np.clip(0.5 * (vm - vp) / den, -0.5, 0.5))


def _refine_peak(sp: Spectrum2D) -> tuple[float, float, float, bool]:
    """Argmax of a local spectrum with separable sub-cell interpolation.

    The last element is False when the maximum sits on the window edge.
    """
    v = np.log(sp.values)
    i, j = np.unravel_index(int(np.argmax(v)), v.shape)
    d, e = float(sp.grid_d[i]), float(sp.grid_eta[j])
    interior = 0 < i < v.shape[0] - 1 and 0 < j < v.shape[1] - 1
    if 0 < i < v.shape[0] - 1:
        d += _parabolic(v[i - 1, j], v[i, j], v[i + 1, j]) * (sp.grid_d[1] - sp.grid_d[0])
    if 0 < j < v.shape[1] - 1:
        e += _parabolic(v[i, j - 1], v[i, j], v[i, j + 1]) * (sp.grid_eta[1] - sp.grid_eta[0])
    return float(sp.values[i, j]), d, e, interior


def find_paths(cov: CovarianceEstimate, i_paths: int, fmcw: FmcwConfig, arr: ArrayConfig,
               grid: Grid | None = None, coarse: tuple[float, float] = (0.05, math.radians(0.5)),
               n_candidates: int | None = None, interpolate: bool = True) -> tuple[list[Peak], bool]:
    """Coarse-to-fine peak search.

    Local maxima of a coarse spectrum seed local fine-grid searches; candidates
    that refine onto the same fine peak are merged. With `interpolate` the
    reported location gets a parabolic sub-cell correction.
    """
    grid = grid or Grid()
    if i_paths < 1:
        return [], True
    cg = Grid(grid.d_min, grid.d_max, max(coarse[0], grid.d_step), grid.eta_min, grid.eta_max,
              max(coarse[1], grid.eta_step))
    cand, _ = pick_peaks(music_spectrum(cov, i_paths, fmcw, arr, cg), n_candidates or 2 * i_paths)
    refined = []
    for p in cand:
        g = grid.around(p.d, p.eta, 1.5 * cg.d_step, 1.5 * cg.eta_step, grid.d_step, grid.eta_step)
        # snap the local window onto the global fine lattice
        d0 = grid.d_min + grid.d_step * math.floor((g.d_min - grid.d_min) / grid.d_step + 1e-9)
        e0 = grid.eta_min + grid.eta_step * math.floor((g.eta_min - grid.eta_min) / grid.eta_step + 1e-9)
        g = Grid(d0, g.d_max, grid.d_step, e0, g.eta_max, grid.eta_step)
        val, d, eta, _ = _refine_peak(music_spectrum(cov, i_paths, fmcw, arr, g))
        if not interpolate:
            d = d0 + grid.d_step * round((d - d0) / grid.d_step)
            eta = e0 + grid.eta_step * round((eta - e0) / grid.eta_step)
        refined.append((val, d, eta))
    refined.sort(key=lambda r: (-r[0], r[1], r[2]))
    kept = []
    for r in refined:
        if all(abs(r[1] - k[1]) > 2 * grid.d_step or abs(r[2] - k[2]) > 2 * grid.eta_step for k in kept):
            kept.append(r)
    peaks = [Peak(d, eta, float(cov.eigvals[rank]), val) for rank, (val, d, eta) in enumerate(kept[:i_paths])]
    return peaks, len(peaks) < i_paths
