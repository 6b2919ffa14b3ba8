"""Analytic scenes, ray casting and synthetic trajectories for tests and benchmarks."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .sensor import SphericalSensorModel, ray_directions


class Primitive:
    def intersect(self, o: np.ndarray, d: np.ndarray) -> np.ndarray:
        """Smallest positive hit distance per ray (``inf`` on a miss)."""
        raise NotImplementedError

    def distance(self, p: np.ndarray) -> np.ndarray:
        """Unsigned distance of points to the surface."""
        raise NotImplementedError


def _safe_div(a, b):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(b != 0, a / np.where(b != 0, b, 1.0), np.inf)


@dataclass
class BoxRoom(Primitive):
    """Inside walls of an axis-aligned box, seen from within."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=np.float64)
        self.hi = np.asarray(self.hi, dtype=np.float64)

    def intersect(self, o, d):
        inside = np.all((o > self.lo) & (o < self.hi), axis=-1)
        t_hi = _safe_div(self.hi - o, d)
        t_lo = _safe_div(self.lo - o, d)
        t = np.where(d > 0, t_hi, np.where(d < 0, t_lo, np.inf)).min(axis=-1)
        return np.where(inside, t, np.inf)

    def distance(self, p):
        p = np.asarray(p, dtype=np.float64)
        q = np.maximum(self.lo - p, p - self.hi)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = -np.minimum(q.max(axis=-1), 0.0)
        return np.where(np.all(q <= 0, axis=-1), inside, outside)


@dataclass
class SolidBox(Primitive):
    """Outer faces of an axis-aligned box."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=np.float64)
        self.hi = np.asarray(self.hi, dtype=np.float64)

    def intersect(self, o, d):
        t1 = _safe_div(self.lo - o, d)
        t2 = _safe_div(self.hi - o, d)
        # rays parallel to a slab: inside the slab is unbounded, outside misses
        par = d == 0
        inslab = (o >= self.lo) & (o <= self.hi)
        t1 = np.where(par, np.where(inslab, -np.inf, np.inf), t1)
        t2 = np.where(par, np.where(inslab, np.inf, -np.inf), t2)
        tmin = np.minimum(t1, t2).max(axis=-1)
        tmax = np.maximum(t1, t2).min(axis=-1)
        hit = (tmax >= tmin) & (tmin > 0)
        return np.where(hit, tmin, np.inf)

    def distance(self, p):
        return BoxRoom(self.lo, self.hi).distance(p)


@dataclass
class Sphere(Primitive):
    center: np.ndarray
    radius: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)

    def intersect(self, o, d):
        oc = o - self.center
        b = np.sum(oc * d, axis=-1)
        c = np.sum(oc * oc, axis=-1) - self.radius ** 2
        disc = b * b - c
        sq = np.sqrt(np.maximum(disc, 0.0))
        t0 = -b - sq
        t1 = -b + sq
        t = np.where(t0 > 0, t0, np.where(t1 > 0, t1, np.inf))
        return np.where(disc >= 0, t, np.inf)

    def distance(self, p):
        return np.abs(np.linalg.norm(p - self.center, axis=-1) - self.radius)


@dataclass
class Pillar(Primitive):
    """Vertical cylinder between ``z_lo`` and ``z_hi`` (side surface only)."""

    center_xy: np.ndarray
    radius: float
    z_lo: float = -np.inf
    z_hi: float = np.inf

    def __post_init__(self):
        self.center_xy = np.asarray(self.center_xy, dtype=np.float64)

    def intersect(self, o, d):
        ox = o[..., :2] - self.center_xy
        dx = d[..., :2]
        a = np.sum(dx * dx, axis=-1)
        b = np.sum(ox * dx, axis=-1)
        c = np.sum(ox * ox, axis=-1) - self.radius ** 2
        disc = b * b - a * c
        sq = np.sqrt(np.maximum(disc, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            t0 = (-b - sq) / a
            t1 = (-b + sq) / a
        out = np.full(a.shape, np.inf)
        for t in (t1, t0):
            z = o[..., 2] + t * d[..., 2]
            ok = (disc >= 0) & (a > 0) & (t > 0) & (z >= self.z_lo) & (z <= self.z_hi)
            out = np.where(ok, t, out)
        return out

    def distance(self, p):
        r = np.linalg.norm(p[..., :2] - self.center_xy, axis=-1)
        dz = np.maximum(np.maximum(self.z_lo - p[..., 2], p[..., 2] - self.z_hi), 0.0)
        return np.hypot(np.abs(r - self.radius), dz)


@dataclass
class Plane(Primitive):
    point: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        self.point = np.asarray(self.point, dtype=np.float64)
        n = np.asarray(self.normal, dtype=np.float64)
        self.normal = n / np.linalg.norm(n)

    def intersect(self, o, d):
        den = d @ self.normal
        t = _safe_div((self.point - o) @ self.normal, den)
        return np.where(t > 0, t, np.inf)

    def distance(self, p):
        return np.abs((p - self.point) @ self.normal)


@dataclass
class Scene:
    primitives: list = field(default_factory=list)

    def raycast(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        t = np.full(dirs.shape[:-1], np.inf)
        for prim in self.primitives:
            t = np.minimum(t, prim.intersect(origins, dirs))
        return t

    def distance(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        d = np.full(points.shape[:-1], np.inf)
        for prim in self.primitives:
            d = np.minimum(d, prim.distance(points))
        return d


def box_room(size=(10.0, 10.0, 3.0), center=(0.0, 0.0, 1.5)) -> Scene:
    c = np.asarray(center, dtype=np.float64)
    h = np.asarray(size, dtype=np.float64) / 2
    return Scene([BoxRoom(c - h, c + h)])


def corridor(length: float = 200.0, width: float = 4.0, height: float = 3.0) -> Scene:
    """Closed rectangular corridor along +x starting at x = -5."""
    return Scene([BoxRoom([-5.0, -width / 2, 0.0], [length, width / 2, height])])


def loop_world(radius: float = 20.0, width: float = 6.0, height: float = 4.0,
               n_pillars: int = 12, seed: int = 0) -> Scene:
    """Ground plane, ceiling and pillars along a ring of ``radius``."""
    rng = np.random.default_rng(seed)
    prims: list = [Plane([0, 0, 0], [0, 0, 1]), Plane([0, 0, height], [0, 0, -1])]
    for k in range(n_pillars):
        a = 2 * math.pi * (k + 0.5) / n_pillars
        for side in (-1, 1):
            r = radius + side * (width / 2 + 0.5 + rng.uniform(0, 1.0))
            prims.append(Pillar([r * math.cos(a), r * math.sin(a)], 0.4 + 0.2 * rng.uniform(),
                                0.0, height))
    prims.append(Pillar([0.0, 0.0], radius - width / 2 - 1.0, 0.0, height))
    return Scene(prims)


def scan(scene: Scene, T_map_from_lidar: np.ndarray, model: SphericalSensorModel,
         noise_std: float = 0.0, rng: np.random.Generator | None = None) -> np.ndarray:
    """Organised LiDAR-frame cloud (height, width, 3); misses are zero points."""
    dirs_l = ray_directions(model)
    R = T_map_from_lidar[:3, :3]
    o = np.broadcast_to(T_map_from_lidar[:3, 3], dirs_l.shape)
    t = scene.raycast(o, dirs_l @ R.T)
    if noise_std > 0:
        rng = rng or np.random.default_rng(0)
        t = t + rng.normal(0.0, noise_std, t.shape)
    hit = np.isfinite(t) & (t > 0)
    return np.where(hit[..., None], dirs_l * np.where(hit, t, 0.0)[..., None], 0.0)


def circle_trajectory(radius: float, spacing: float, laps: int = 1, z: float = 1.0,
                      center=(0.0, 0.0)) -> list[np.ndarray]:
    """Poses on a horizontal circle, heading tangentially, ``spacing`` metres apart."""
    per_lap = max(3, int(round(2 * math.pi * radius / spacing)))
    poses = []
    for k in range(per_lap * laps + 1):
        a = 2 * math.pi * k / per_lap
        yaw = a + math.pi / 2
        Rz = np.array([[math.cos(yaw), -math.sin(yaw), 0], [math.sin(yaw), math.cos(yaw), 0],
                       [0, 0, 1]])
        t = [center[0] + radius * math.cos(a), center[1] + radius * math.sin(a), z]
        poses.append(geometry.make_transform(Rz, t))
    return poses


def line_trajectory(length: float, spacing: float, z: float = 1.5, y: float = 0.0,
                    start: float = 0.0) -> list[np.ndarray]:
    n = int(math.floor(length / spacing + 1e-9)) + 1
    return [geometry.make_transform(np.eye(3), [start + k * spacing, y, z]) for k in range(n)]


def path_lengths(poses: list[np.ndarray]) -> np.ndarray:
    t = np.array([p[:3, 3] for p in poses])
    step = np.linalg.norm(np.diff(t, axis=0), axis=1) if len(t) > 1 else np.empty(0)
    return np.concatenate([[0.0], np.cumsum(step)])


def add_drift(poses: list[np.ndarray], rate: float = 0.01, direction=(0.0, 1.0, 0.0),
              yaw_rate: float = 0.0) -> list[np.ndarray]:
    """Odometry-like poses whose error grows linearly with distance travelled.

    Position is offset by ``rate`` metres per metre along ``direction`` and the
    heading rotates by ``yaw_rate`` radians per metre about the start point.
    """
    u = np.asarray(direction, dtype=np.float64)
    u = u / np.linalg.norm(u)
    s = path_lengths(poses)
    p0 = poses[0][:3, 3] if poses else np.zeros(3)
    out = []
    for T, dist in zip(poses, s):
        a = yaw_rate * dist
        Rz = np.array([[math.cos(a), -math.sin(a), 0], [math.sin(a), math.cos(a), 0], [0, 0, 1]])
        D = geometry.make_transform(Rz, p0 - Rz @ p0 + rate * dist * u)
        out.append(D @ T)
    return out
