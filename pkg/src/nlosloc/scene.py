"""2-D scene geometry: reflectors, obstacles, tagged targets and first-order paths.

The radar sits at `Scene.radar` with its array boresight along +x; all angles
are world-frame azimuths measured from +x, in radians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Iterable

import numpy as np

EPS = 1e-12


class DegenerateGeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Point2D:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError("coordinates must be finite")

    def __sub__(self, other: "Point2D") -> np.ndarray:
        return np.array([self.x - other.x, self.y - other.y])

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @classmethod
    def of(cls, v) -> "Point2D":
        if isinstance(v, Point2D):
            return v
        return cls(float(v[0]), float(v[1]))

    def dist(self, other: "Point2D") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class Reflector:
    endpoint_a: Point2D
    endpoint_b: Point2D
    scatter_coeff: float = 1.0
    absorption: float = 0.0

    def __post_init__(self):
        if self.endpoint_a.dist(self.endpoint_b) <= EPS:
            raise DegenerateGeometryError("reflector endpoints coincide")
        if not 0.0 < self.scatter_coeff <= 1.0:
            raise ValueError("scatter_coeff must lie in (0, 1]")
        if not 0.0 <= self.absorption < 1.0:
            raise ValueError("absorption must lie in [0, 1)")

    @property
    def gain(self) -> float:
        return self.scatter_coeff * (1.0 - self.absorption)

    @property
    def direction(self) -> np.ndarray:
        d = self.endpoint_b - self.endpoint_a
        return d / np.linalg.norm(d)

    @property
    def normal(self) -> np.ndarray:
        ux, uy = self.direction
        return np.array([-uy, ux])


@dataclass(frozen=True)
class Target:
    id: Hashable
    position: Point2D


@dataclass(frozen=True)
class Scene:
    radar: Point2D
    reflectors: tuple[Reflector, ...] = ()
    obstacles: tuple[tuple[Point2D, Point2D], ...] = ()
    targets: tuple[Target, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "reflectors", tuple(self.reflectors))
        object.__setattr__(self, "obstacles", tuple((Point2D.of(a), Point2D.of(b)) for a, b in self.obstacles))
        object.__setattr__(self, "targets", tuple(self.targets))
        ids = [t.id for t in self.targets]
        if len(set(ids)) != len(ids):
            raise ValueError("target ids must be unique")
        for t in self.targets:
            if t.position.dist(self.radar) <= EPS:
                raise DegenerateGeometryError(f"target {t.id!r} coincides with the radar")
        for a, b in self.obstacles:
            if a.dist(b) <= EPS:
                raise DegenerateGeometryError("obstacle endpoints coincide")
        refl = self.reflectors
        for i in range(len(refl)):
            for j in range(i + 1, len(refl)):
                if _collinear_overlap(refl[i].endpoint_a, refl[i].endpoint_b, refl[j].endpoint_a, refl[j].endpoint_b):
                    raise DegenerateGeometryError(f"reflectors {i} and {j} are collinear and overlap")

    def target(self, target_id) -> Target:
        for t in self.targets:
            if t.id == target_id:
                return t
        raise KeyError(f"unknown target id {target_id!r}")


@dataclass(frozen=True)
class PathGeometry:
    reflector_index: int
    p_s: Point2D
    d_rs: float
    d_st: float
    d_total: float
    aoa_phi: float
    attenuation: float


@dataclass(frozen=True)
class DirectPath:
    distance: float
    aoa_phi: float
    attenuation: float


# --- segment predicates -----------------------------------------------------

def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _orient(o, a, b, tol=1e-12) -> int:
    c = _cross(o, a, b)
    scale = max(1.0, abs(a[0] - o[0]) + abs(a[1] - o[1])) * max(1.0, abs(b[0] - o[0]) + abs(b[1] - o[1]))
    if abs(c) <= tol * scale:
        return 0
    return 1 if c > 0 else -1


def _collinear_overlap(p1: Point2D, p2: Point2D, q1: Point2D, q2: Point2D) -> bool:
    a, b, c, d = p1.xy, p2.xy, q1.xy, q2.xy
    if _orient(a, b, c) != 0 or _orient(a, b, d) != 0:
        return False
    u = (b - a) / np.dot(b - a, b - a)
    tc, td = np.dot(c - a, u), np.dot(d - a, u)
    lo, hi = min(tc, td), max(tc, td)
    return hi > EPS and lo < 1 - EPS


def _param_on(P, Q, X) -> float:
    d = Q - P
    return float(np.dot(X - P, d) / np.dot(d, d))


def open_segment_intersects(p: Point2D, q: Point2D, a: Point2D, b: Point2D) -> bool:
    """True iff the open segment p->q touches the closed segment a-b."""
    P, Q, A, B = p.xy, q.xy, a.xy, b.xy
    o1, o2 = _orient(P, Q, A), _orient(P, Q, B)
    o3, o4 = _orient(A, B, P), _orient(A, B, Q)
    if o1 == 0 and o2 == 0:
        ta, tb = _param_on(P, Q, A), _param_on(P, Q, B)
        return max(ta, tb) > EPS and min(ta, tb) < 1 - EPS
    if o1 * o2 < 0 and o3 * o4 < 0:
        return True
    # an obstacle endpoint resting on the interior of p->q
    if o1 == 0 and EPS < _param_on(P, Q, A) < 1 - EPS:
        return True
    if o2 == 0 and EPS < _param_on(P, Q, B) < 1 - EPS:
        return True
    return False


def is_segment_blocked(scene: Scene, p: Point2D, q: Point2D) -> bool:
    return any(open_segment_intersects(p, q, a, b) for a, b in scene.obstacles)


def is_direct_path_blocked(scene: Scene, target_id) -> bool:
    return is_segment_blocked(scene, scene.radar, scene.target(target_id).position)


# --- specular paths ---------------------------------------------------------

def mirror_point(p: np.ndarray, refl: Reflector) -> np.ndarray:
    a = refl.endpoint_a.xy
    n = refl.normal
    return p - 2.0 * np.dot(p - a, n) * n


def specular_point(radar: Point2D, target: Point2D, refl: Reflector) -> tuple[np.ndarray, float] | None:
    """Mirror-image construction. Returns (point, segment parameter) or None."""
    a, n = refl.endpoint_a.xy, refl.normal
    sr = np.dot(radar.xy - a, n)
    st = np.dot(target.xy - a, n)
    if sr * st <= 0 or abs(sr) < EPS or abs(st) < EPS:
        return None  # not on the same side, or touching the wall
    img = mirror_point(radar.xy, refl)
    # line img->target meets the reflector line where the signed distance is zero
    si = -sr
    lam = si / (si - st)
    p = img + lam * (target.xy - img)
    u = refl.endpoint_b.xy - a
    s = np.dot(p - a, u) / np.dot(u, u)
    return p, s


def enumerate_first_order_paths(scene: Scene, target_id) -> list[PathGeometry]:
    target = scene.target(target_id).position
    out = []
    for k, refl in enumerate(scene.reflectors):
        hit = specular_point(scene.radar, target, refl)
        if hit is None:
            continue
        p, s = hit
        if not (EPS < s < 1.0 - EPS):
            continue
        ps = Point2D(float(p[0]), float(p[1]))
        if is_segment_blocked(scene, scene.radar, ps) or is_segment_blocked(scene, ps, target):
            continue
        d_rs = ps.dist(scene.radar)
        d_st = ps.dist(target)
        d_total = d_rs + d_st
        v = ps - scene.radar
        phi = math.atan2(v[1], v[0])
        if phi == -math.pi:
            phi = math.pi
        out.append(PathGeometry(k, ps, d_rs, d_st, d_total, phi, refl.gain / d_total**2))
    return out


def direct_path(scene: Scene, target_id) -> DirectPath | None:
    """Unobstructed radar->target line, or None when blocked."""
    if is_direct_path_blocked(scene, target_id):
        return None
    t = scene.target(target_id).position
    v = t - scene.radar
    d = float(np.hypot(*v))
    return DirectPath(d, math.atan2(v[1], v[0]), 1.0 / d**2)


def virtual_target_position(radar: Point2D, path: PathGeometry) -> Point2D:
    if path.d_rs <= 0:
        raise DegenerateGeometryError("d_rs must be positive")
    v = radar.xy + (path.d_total / path.d_rs) * (path.p_s - radar)
    return Point2D(float(v[0]), float(v[1]))


# --- config -----------------------------------------------------------------

def scene_from_dict(spec: dict) -> Scene:
    """Build a Scene from the JSON-compatible schema documented in docs/config.md."""
    refl = []
    for i, r in enumerate(spec.get("reflectors", [])):
        if "a" in r:
            a, b = Point2D.of(r["a"]), Point2D.of(r["b"])
        else:
            c = np.asarray(r["center"], dtype=float)
            ang = math.radians(r["angle_deg"])
            h = 0.5 * r["length"] * np.array([math.cos(ang), math.sin(ang)])
            a, b = Point2D.of(c - h), Point2D.of(c + h)
        refl.append(Reflector(a, b, r.get("scatter_coeff", 1.0), r.get("absorption", 0.0)))
    obstacles = [(Point2D.of(o["a"]), Point2D.of(o["b"])) for o in spec.get("obstacles", [])]
    targets = [Target(t["id"], Point2D.of(t["position"])) for t in spec.get("targets", [])]
    return Scene(Point2D.of(spec.get("radar", (0.0, 0.0))), tuple(refl), tuple(obstacles), tuple(targets))


def scene_to_dict(scene: Scene) -> dict:
    return {
        "radar": [scene.radar.x, scene.radar.y],
        "reflectors": [
            {"a": [r.endpoint_a.x, r.endpoint_a.y], "b": [r.endpoint_b.x, r.endpoint_b.y],
             "scatter_coeff": r.scatter_coeff, "absorption": r.absorption}
            for r in scene.reflectors
        ],
        "obstacles": [{"a": [a.x, a.y], "b": [b.x, b.y]} for a, b in scene.obstacles],
        "targets": [{"id": t.id, "position": [t.position.x, t.position.y]} for t in scene.targets],
    }


def with_targets(scene: Scene, targets: Iterable[Target]) -> Scene:
    return Scene(scene.radar, scene.reflectors, scene.obstacles, tuple(targets))
