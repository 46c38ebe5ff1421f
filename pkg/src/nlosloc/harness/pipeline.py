"""Seeded Monte Carlo engine: scene draw, frame simulation, receiver chain, localization."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import receiver as rx
from ..channel import RLC, TLC, TLC_ACTIVE, NoiseSpec, RxFrame, TagState, simulate_frame
from ..codes import (TlcSequence, build_baseline_waveform, build_tlc_waveform, generate_dsss_code,
                     generate_hop_plan)
from ..fsmusic import (FsSnapshotMatrix, build_conventional_matrix, build_fs_matrix,
                       estimate_covariance, find_paths, model_order, max_resolvable, music_spectrum,
                       Grid, Spectrum2D)
from ..locate import (InsufficientAnchorsError, LocalizationEstimate, anchors_from_matches,
                      max_line_deviation, wls_best_of)
from ..scene import (DegenerateGeometryError, Point2D, Reflector, Scene, Target, direct_path,
                     enumerate_first_order_paths)
from ..waveform import beat_frequency
from .config import ConfigError, ScenarioConfig

TRIAL_COLUMNS = ["trial_id", "target_id", "modulation", "estimator", "sweep_value", "truth_x", "truth_y",
                 "est_x", "est_y", "err_x_cm", "err_y_cm", "err_euclid_cm", "verdict", "truth_verdict",
                 "anchors_used", "converged"]
SUMMARY_COLUMNS = ["modulation", "estimator", "sweep_axis", "sweep_value", "n_records", "n_failed",
                   "median_err_x_cm", "median_err_y_cm", "median_err_cm", "mean_err_x_cm",
                   "mean_err_y_cm", "mean_err_cm", "verdict_accuracy"]


@dataclass
class TrialRecord:
    trial_id: int
    target_id: object
    modulation: str
    estimator: str
    truth: Point2D
    estimate: Point2D | None
    verdict: str
    truth_verdict: str
    anchors_used: int = 0
    converged: bool = False
    sweep_value: object = ""
    timing_s: float = 0.0

    @property
    def failed(self) -> bool:
        return self.estimate is None

    @property
    def err_x_cm(self) -> float:
        return math.nan if self.failed else 100 * abs(self.estimate.x - self.truth.x)

    @property
    def err_y_cm(self) -> float:
        return math.nan if self.failed else 100 * abs(self.estimate.y - self.truth.y)

    @property
    def err_euclid_cm(self) -> float:
        return math.nan if self.failed else 100 * self.truth.dist(self.estimate)

    def row(self) -> list:
        def f(v):
            return "nan" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.4f}"

        est = self.estimate
        return [self.trial_id, self.target_id, self.modulation, self.estimator, self.sweep_value,
                f(self.truth.x), f(self.truth.y), f(est.x if est else None), f(est.y if est else None),
                f(self.err_x_cm), f(self.err_y_cm), f(self.err_euclid_cm), self.verdict,
                self.truth_verdict, self.anchors_used, int(self.converged)]


@dataclass
class TargetDetail:
    target_id: object
    correlation: rx.CorrelationResult
    reading: rx.SceneReading
    i_paths: int
    estimate: LocalizationEstimate | None
    position: Point2D | None
    snapshot: FsSnapshotMatrix


@dataclass
class TrialDetail:
    scene: Scene
    tlc: RxFrame
    rlc: RxFrame
    reflectors: list
    targets: list[TargetDetail] = field(default_factory=list)


# --- scene generation ---------------------------------------------------------

def _wall_through(p: np.ndarray, target: np.ndarray, length: float, slide: float,
                  scatter: float, absorption: float) -> Reflector:
    """Wall through p oriented so that radar(origin) -> p -> target is specular."""
    u1 = -p / np.linalg.norm(p)
    u2 = (target - p) / np.linalg.norm(target - p)
    n = u1 + u2
    n = n / np.linalg.norm(n)
    t = np.array([-n[1], n[0]])
    c = p + slide * length * t
    a, b = c - 0.5 * length * t, c + 0.5 * length * t
    return Reflector(Point2D.of(a), Point2D.of(b), scatter, absorption)


def _blocker(target: np.ndarray, frac: float, half: float) -> tuple[Point2D, Point2D]:
    c = frac * target
    t = np.array([-target[1], target[0]]) / np.linalg.norm(target)
    return Point2D.of(c - half * t), Point2D.of(c + half * t)


def _path_ok(p, grid: Grid, eta_lim: float) -> bool:
    return (0.8 <= p.d_rs and p.d_st >= 0.5 and p.d_total <= grid.d_max - 0.5
            and abs(p.aoa_phi) <= eta_lim)


def scene_ok(scene: Scene, los: bool, grid: Grid, min_sep_deg: float = 4.0,
             min_paths: int = 3, min_range_sep: float = 0.15,
             partial: bool = False) -> bool:
    """Acceptance test for random scenes: resolvable, matchable, non-degenerate.

    With `partial` the path-count and anchor-spread checks are skipped, so a
    scene still being built can be screened wall by wall.
    """
    if partial:
        min_paths = 0
    eta_lim = max(abs(grid.eta_min), abs(grid.eta_max)) - math.radians(2)
    rlc_angles = []
    for t in scene.targets:
        paths = enumerate_first_order_paths(scene, t.id)
        dp = direct_path(scene, t.id)
        if (dp is not None) != los or len(paths) < min_paths:
            return False
        if not all(_path_ok(p, grid, eta_lim) for p in paths):
            return False
        rlc_angles.extend(p.aoa_phi for p in paths)
        if dp is not None:
            if not (grid.d_min + 0.5 <= dp.distance and abs(dp.aoa_phi) <= eta_lim):
                return False
            rlc_angles.append(dp.aoa_phi)
        elif not partial and max_line_deviation(np.array([p.p_s.xy for p in paths])) < 0.3:
            return False
        # coherent tag paths at equal range cannot be decorrelated by lag smoothing
        tag = np.sort([p.d_total for p in paths] + ([dp.distance] if dp else []))
        if np.any(np.diff(tag) < min_range_sep):
            return False
    a = np.sort(np.array(rlc_angles))
    return bool(np.all(np.diff(a) >= math.radians(min_sep_deg)))


def _draw_wall(rng, target: Target, scene: Scene, gen: dict, grid: Grid, tries: int = 50) -> Reflector | None:
    """A wall specular for `target` that keeps the partial scene acceptable for every target."""
    t = target.position.xy
    n_before = len(enumerate_first_order_paths(scene, target.id))
    for _ in range(tries):
        phi = rng.uniform(math.radians(-55), math.radians(55))
        d_rs = rng.uniform(1.0, 0.5 * np.linalg.norm(t) + 2.5)
        p = d_rs * np.array([math.cos(phi), math.sin(phi)])
        if np.linalg.norm(p - t) < 0.5:
            continue
        try:
            w = _wall_through(p, t, rng.uniform(*gen["wall_length_m"]), rng.uniform(-0.3, 0.3),
                              gen["scatter_coeff"], gen["absorption"])
            trial = replace(scene, reflectors=scene.reflectors + (w,))
        except (ValueError, ZeroDivisionError, DegenerateGeometryError):
            continue
        if (len(enumerate_first_order_paths(trial, target.id)) > n_before
                and scene_ok(trial, gen["los"], grid, partial=True)):
            return w
    return None


def random_scene(rng: np.random.Generator, gen: dict, grid: Grid, max_tries: int = 2000) -> Scene:
    """Draw radar-at-origin scenes until `scene_ok` accepts one.

    Each target gets n_reflectors walls placed specular for it; walls are
    redrawn one at a time before the whole scene is checked.
    """
    lo, hi = gen["target_range_m"]
    alo, ahi = (math.radians(v) for v in gen["target_angle_deg"])
    for _ in range(max_tries):
        targets, obstacles = [], []
        for k in range(int(gen["n_targets"])):
            r, a = rng.uniform(lo, hi), rng.uniform(alo, ahi)
            pos = r * np.array([math.cos(a), math.sin(a)])
            targets.append(Target(k, Point2D.of(pos)))
            if not gen["los"]:
                obstacles.append(_blocker(pos, rng.uniform(0.35, 0.65), 0.3))
        try:
            sc = Scene(Point2D(0.0, 0.0), (), tuple(obstacles), tuple(targets))
        except (ValueError, DegenerateGeometryError):
            continue
        complete = True
        for tgt in targets:
            for _ in range(int(gen["n_reflectors"])):
                w = _draw_wall(rng, tgt, sc, gen, grid)
                if w is None:
                    complete = False
                    break
                sc = replace(sc, reflectors=sc.reflectors + (w,))
            if not complete:
                break
        if complete and scene_ok(sc, gen["los"], grid):
            return sc
    raise RuntimeError("could not draw an acceptable scene; loosen the generator settings")


# --- tags ---------------------------------------------------------------------

def build_tag(cfg: ScenarioConfig, modulation: str, k: int, hop_seed: int) -> TlcSequence:
    t = cfg.tag
    fs = cfg.fmcw.sample_rate
    code = generate_dsss_code(k, t["code_length"])
    if modulation == "HFD":
        plan = generate_hop_plan(hop_seed, t["channels_hz"], t["n_hops"], cfg.hop_period)
        return build_tlc_waveform(code, plan, fs, t["repetitions"])
    if modulation == "DSSS_ONLY":
        return build_baseline_waveform("DSSS_ONLY", sample_rate=fs, code=code, carrier=t["dsss_carrier_hz"],
                                       samples_per_chip=t["samples_per_chip"],
                                       repetitions=t["n_hops"] * t["repetitions"])
    if modulation == "FSK":
        return build_baseline_waveform("FSK", sample_rate=fs, n_samples=cfg.tlc_len,
                                       freq=t["fsk_freq_hz"] * (k + 1))
    raise ConfigError(f"methods: invalid modulation {modulation!r}")


# --- one trial ----------------------------------------------------------------

def trial_rng(seed: int, trial_id: int) -> np.random.Generator:
    return np.random.default_rng([seed, trial_id])


def _tag_matrix(cfg: ScenarioConfig, modulation: str, estimator: str,
                corr: rx.CorrelationResult, tlc: TlcSequence) -> FsSnapshotMatrix:
    rc = cfg.receiver
    if estimator == "MUSIC":
        return build_conventional_matrix(corr.aligned, rc["music_lags"])
    if modulation == "HFD":
        n_h = tlc.hop_period
        seg = corr.aligned.reshape(corr.aligned.shape[0], -1, n_h)
        return build_fs_matrix(seg, rc["fs_lags"])
    # no hop structure: a single segment
    return build_fs_matrix(corr.aligned[:, None, :], rc["fs_lags"])


def locate_target(cfg: ScenarioConfig, modulation: str, estimator: str, diff: RxFrame, tlc: TlcSequence,
                  reflectors: list, radar: Point2D) -> TargetDetail:
    rc = cfg.receiver
    fmcw, arr, grid = cfg.fmcw, cfg.array, cfg.grid
    corr = rx.sliding_correlate(diff, tlc, max_beat_hz=beat_frequency(fmcw, grid.d_max) + 500.0)
    m = _tag_matrix(cfg, modulation, estimator, corr, tlc)
    cov = estimate_covariance(m, rc["forward_backward"])
    i = model_order(cov.eigvals, rc["order_rule"], rc["gap_ratio"], rc["floor_ratio"])
    virtuals = []
    if i > 0:
        peaks, _ = find_paths(cov, i, fmcw, arr, grid)
        virtuals = [rx.Detection(p.d, p.eta, p.strength) for p in peaks if p.d > 0]
    range_tol, angle_tol = rc["range_tol_m"], math.radians(rc["angle_tol_deg"])
    reading = rx.SceneReading(tuple(reflectors), tuple(virtuals))
    verdict = rx.classify_los_nlos(reading, range_tol, angle_tol)
    est, pos, matches = None, None, ()
    if verdict == rx.LOS:
        hit = rx.los_match(reading, range_tol, angle_tol)
        pos = Point2D(radar.x + hit.distance * math.cos(hit.aoa), radar.y + hit.distance * math.sin(hit.aoa))
    elif verdict == rx.NLOS:
        matches = tuple(rx.match_virtual_to_reflectors(virtuals, reflectors, math.radians(rc["match_angle_deg"])))
        anchors = anchors_from_matches(radar, matches)
        try:
            est = wls_best_of(anchors)
            pos = est.position
        except (InsufficientAnchorsError, DegenerateGeometryError):
            pass
    reading = replace(reading, los_verdict=verdict, matches=matches)
    return TargetDetail(None, corr, reading, i, est, pos, m)


def run_trial(cfg: ScenarioConfig, trial_id: int, methods: Sequence[tuple[str, str]] | None = None,
              sweep_value="") -> tuple[list[TrialRecord], dict]:
    """All methods on one trial with shared scene and noise draws."""
    methods = list(methods or cfg.methods)
    rng = trial_rng(cfg.seed, trial_id)
    scene = cfg.scene or random_scene(rng, cfg.generator, cfg.grid)
    fmcw, arr = cfg.fmcw, cfg.array
    n = fmcw.samples_per_chirp
    offsets = {t.id: int(rng.integers(0, n - cfg.tlc_len + 1)) for t in scene.targets}
    hop_seeds = {t.id: int(rng.integers(2**31)) for t in scene.targets}
    noise_seed = int(rng.integers(2**31))
    nz = cfg.noise
    noise = NoiseSpec(cfg.snr_db, noise_seed, nz["reference_power"])
    rlc = simulate_frame(scene, {}, fmcw, arr, noise, RLC, cfg.channel)
    rc = cfg.receiver
    reflectors = rx.detect_reflectors(rlc, fmcw, arr, cfg.grid, rc["rlc_lags"], rc["rlc_threshold_db"],
                                      order_rule=rc["order_rule"], forward_backward=rc["forward_backward"])
    records, details = [], {}
    for modulation, estimator in methods:
        tags = {t.id: build_tag(cfg, modulation, k, hop_seeds[t.id]) for k, t in enumerate(scene.targets)}
        states = {tid: TagState(TLC_ACTIVE, g, offsets[tid]) for tid, g in tags.items()}
        tlc = simulate_frame(scene, states, fmcw, arr, noise, TLC, cfg.channel)
        diff = rx.cancel_clutter(tlc, rlc)
        det = TrialDetail(scene, tlc, rlc, reflectors)
        for t in scene.targets:
            t0 = time.perf_counter()
            td = locate_target(cfg, modulation, estimator, diff, tags[t.id], reflectors, scene.radar)
            td.target_id = t.id
            det.targets.append(td)
            truth_verdict = rx.NLOS if direct_path(scene, t.id) is None else rx.LOS
            records.append(TrialRecord(
                trial_id, t.id, modulation, estimator, t.position, td.position, td.reading.los_verdict,
                truth_verdict, td.estimate.anchors_used if td.estimate else (1 if td.position else 0),
                bool(td.estimate.converged) if td.estimate else td.position is not None,
                sweep_value, time.perf_counter() - t0))
        details[(modulation, estimator)] = det
    return records, details


def run_scenario(cfg: ScenarioConfig, methods=None, sweep_value="") -> list[TrialRecord]:
    out = []
    for i in range(cfg.trials):
        recs, _ = run_trial(cfg, i, methods, sweep_value)
        out.extend(recs)
    return out


# --- statistics ---------------------------------------------------------------

def _median_inf(v: np.ndarray) -> float:
    """Median with failed trials (nan) counted as infinite error."""
    if v.size == 0:
        return math.nan
    return float(np.median(np.where(np.isnan(v), np.inf, v)))


def _mean_ok(v: np.ndarray) -> float:
    ok = v[~np.isnan(v)]
    return float(ok.mean()) if ok.size else math.nan


def summarize(records: Sequence[TrialRecord], sweep_axis: str = "") -> list[dict]:
    groups: dict = {}
    for r in records:
        groups.setdefault((r.modulation, r.estimator, r.sweep_value), []).append(r)
    rows = []
    for (mod, est, sv), rs in groups.items():
        ex = np.array([r.err_x_cm for r in rs])
        ey = np.array([r.err_y_cm for r in rs])
        ee = np.array([r.err_euclid_cm for r in rs])
        rows.append({
            "modulation": mod, "estimator": est, "sweep_axis": sweep_axis, "sweep_value": sv,
            "n_records": len(rs), "n_failed": int(sum(r.failed for r in rs)),
            "median_err_x_cm": _median_inf(ex), "median_err_y_cm": _median_inf(ey),
            "median_err_cm": _median_inf(ee), "mean_err_x_cm": _mean_ok(ex),
            "mean_err_y_cm": _mean_ok(ey), "mean_err_cm": _mean_ok(ee),
            "verdict_accuracy": float(np.mean([r.verdict == r.truth_verdict for r in rs])),
        })
    return rows


def sweep(cfg: ScenarioConfig, axis: str, values: Sequence, methods=None) -> tuple[list[TrialRecord], list[dict]]:
    key = {"distance": "generator.target_range_m", "snr": "noise.snr_db",
           "n_targets": "generator.n_targets", "absorption": "generator.absorption"}
    if axis not in key:
        raise ConfigError(f"sweep.axis: must be one of {tuple(key)}")
    if cfg.raw["scene"] is not None and axis != "snr":
        raise ConfigError(f"sweep.axis: {axis} sweeps need the random scene generator")
    records = []
    for v in values:
        val = [float(v), float(v)] if axis == "distance" else v
        c = cfg.set(key[axis], val)
        records.extend(run_scenario(c, methods, sweep_value=v))
    return records, summarize(records, axis)


def compare_report(cfg: ScenarioConfig, methods: Sequence[tuple[str, str]]) -> tuple[list[TrialRecord], list[dict]]:
    """Same trials and noise for every method; ratios are against the first method."""
    methods = [tuple(m) for m in methods]
    if len(methods) < 2:
        raise ConfigError("methods: compare needs at least two method selectors")
    records = run_scenario(cfg, methods)
    rows = summarize(records)
    base = rows[0]["median_err_cm"]
    for r in rows:
        r["ratio_to_first"] = (r["median_err_cm"] / base) if base and math.isfinite(base) else math.nan
    return records, rows


# --- output -------------------------------------------------------------------

def write_trials_csv(path, records: Sequence[TrialRecord]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRIAL_COLUMNS)
        for r in records:
            w.writerow(r.row())


def write_summary_csv(path, rows: Sequence[dict]) -> None:
    cols = list(SUMMARY_COLUMNS)
    for r in rows:
        cols += [k for k in r if k not in cols]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([f"{r[c]:.4f}" if isinstance(r.get(c), float) else r.get(c, "") for c in cols])


def write_timing_csv(path, records: Sequence[TrialRecord]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trial_id", "target_id", "modulation", "estimator", "seconds"])
        for r in records:
            w.writerow([r.trial_id, r.target_id, r.modulation, r.estimator, f"{r.timing_s:.6f}"])


def tag_spectrum(cfg: ScenarioConfig, detail: TrialDetail, k: int = 0, grid: Grid | None = None) -> Spectrum2D:
    td = detail.targets[k]
    cov = estimate_covariance(td.snapshot, cfg.receiver["forward_backward"])
    i = min(max(td.i_paths, 1), max_resolvable(cov.dim))
    g = cfg.grid
    grid = grid or Grid(g.d_min, g.d_max, max(g.d_step, 0.05), g.eta_min, g.eta_max,
                        max(g.eta_step, math.radians(0.5)))
    return music_spectrum(cov, i, cfg.fmcw, cfg.array, grid)
