"""Anchors from matched detections and weighted least-squares multilateration."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .receiver import Detection
from .scene import DegenerateGeometryError, Point2D

log = logging.getLogger(__name__)

COLLINEAR_TOL = 0.01


class InsufficientAnchorsError(ValueError):
    pass


@dataclass(frozen=True)
class Anchor:
    p_s: Point2D
    d_st: float
    weight: float = 1.0

    def __post_init__(self):
        if not self.d_st > 0:
            raise ValueError("d_st must be positive")
        if not self.weight >= 0:
            raise ValueError("weight must be non-negative")


@dataclass(frozen=True)
class LocalizationEstimate:
    position: Point2D
    residual: float
    anchors_used: int
    converged: bool
    iterations: int = 0


def reflection_point(radar: Point2D, d_rs: float, phi: float) -> Point2D:
    if not d_rs > 0:
        raise ValueError("d_rs must be positive")
    return Point2D(radar.x + d_rs * math.cos(phi), radar.y + d_rs * math.sin(phi))


def compute_weights(eigvals: Sequence[float]) -> np.ndarray:
    u = np.asarray(eigvals, dtype=float)
    if u.size == 0 or np.any(u <= 0):
        raise ValueError("eigenvalues must be positive")
    return u / u.sum()


def anchors_from_matches(radar: Point2D, matches: Iterable[tuple[Detection, Detection]]) -> list[Anchor]:
    """One anchor per (virtual, reflector) pair, weighted by the virtual's eigenvalue.

    Pairs whose D - D_RS is not positive are dropped with a diagnostic.
    """
    kept = []
    for v, r in matches:
        d_st = v.distance - r.distance
        if d_st <= 0:
            log.debug("dropping anchor with d_st=%.3f", d_st)
            continue
        kept.append((reflection_point(radar, r.distance, r.aoa), d_st, v.strength))
    if not kept:
        return []
    w = compute_weights([max(s, 1e-300) for _, _, s in kept])
    return [Anchor(p, d, float(wi)) for (p, d, _), wi in zip(kept, w)]


def max_line_deviation(points: np.ndarray) -> float:
    """Largest perpendicular distance from the total-least-squares line."""
    c = points - points.mean(axis=0)
    _, _, vt = np.linalg.svd(c, full_matrices=False)
    return float(np.max(np.abs(c @ vt[-1])))


def total_error(xy: np.ndarray, pts: np.ndarray, d: np.ndarray, w: np.ndarray) -> float:
    r = np.linalg.norm(pts - xy, axis=1) - d
    return float(np.sum(w * r * r))


def wls_multilaterate(anchors: Sequence[Anchor], init: Point2D | None = None,
                      max_iter: int = 100, tol: float = 1e-6, trace: list | None = None) -> LocalizationEstimate:
    """Minimize sum_i w_i (|x - p_i| - d_i)^2 by damped Gauss-Newton.

    `trace`, if given, receives E_total at the start and after every accepted step.
    """
    if len(anchors) < 3:
        raise InsufficientAnchorsError(f"need at least 3 anchors, got {len(anchors)}")
    pts = np.array([a.p_s.xy for a in anchors])
    d = np.array([a.d_st for a in anchors])
    w = np.array([a.weight for a in anchors], dtype=float)
    if w.sum() <= 0:
        raise ValueError("weights must not all be zero")
    w = w / w.sum()
    if max_line_deviation(pts) <= COLLINEAR_TOL:
        raise DegenerateGeometryError("anchors are collinear")
    x = init.xy.astype(float) if init is not None else w @ pts
    e = total_error(x, pts, d, w)
    if trace is not None:
        trace.append(e)
    sw = np.sqrt(w)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        diff = x - pts
        rng = np.linalg.norm(diff, axis=1)
        rng = np.where(rng < 1e-12, 1e-12, rng)
        J = sw[:, None] * diff / rng[:, None]
        r = sw * (rng - d)
        step, *_ = np.linalg.lstsq(J, -r, rcond=None)
        lam = 1.0
        while True:
            cand = x + lam * step
            ec = total_error(cand, pts, d, w)
            if ec <= e or lam < 1e-10:
                break
            lam *= 0.5
        if ec > e:
            # no descent along the GN direction: stationary to numerical precision
            converged = True
            break
        moved = float(np.linalg.norm(cand - x))
        x, e = cand, ec
        if trace is not None:
            trace.append(e)
        if moved < tol:
            converged = True
            break
    return LocalizationEstimate(Point2D(float(x[0]), float(x[1])), e, len(anchors), converged, it)


def linearized_init(anchors: Sequence[Anchor]) -> Point2D:
    """Closed-form start from differencing the circle equations (unweighted)."""
    pts = np.array([a.p_s.xy for a in anchors])
    d = np.array([a.d_st for a in anchors])
    A = 2 * (pts[1:] - pts[0])
    b = (d[0] ** 2 - d[1:] ** 2) + np.sum(pts[1:] ** 2, axis=1) - np.sum(pts[0] ** 2)
    x, *_ = np.linalg.lstsq(A, b, rcond=None)
    return Point2D(float(x[0]), float(x[1]))


def wls_best_of(anchors: Sequence[Anchor]) -> LocalizationEstimate:
    """Solve from the weighted centroid and the linearized start; keep the lower E_total."""
    runs = [wls_multilaterate(anchors), wls_multilaterate(anchors, init=linearized_init(anchors))]
    return min(runs, key=lambda e: (e.residual, not e.converged))


def write_estimates_csv(path, rows: Iterable[tuple[int, LocalizationEstimate | None]]) -> None:
    with Path(path).open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["trial_id", "x", "y", "residual", "anchors_used"])
        for tid, est in rows:
            if est is None:
                wr.writerow([tid, "", "", "", 0])
            else:
                wr.writerow([tid, f"{est.position.x:.6f}", f"{est.position.y:.6f}",
                             f"{est.residual:.6e}", est.anchors_used])
