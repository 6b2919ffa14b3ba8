"""Spherical LiDAR camera model and organised-cloud to range-image conversion."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

OS1_64_VFOV_DEG = 33.2
MAX_SCALE = 3


class SensorConfigError(ValueError):
    pass


@dataclass(eq=False)
class SphericalSensorModel:
    """Per-pixel azimuth/elevation tables of a spinning multi-beam LiDAR.

    Row ``r`` of the range image looks along ``elevations[r]`` and column ``c``
    along ``azimuths[c]``. ``min_ray_angle`` overrides the angle used for
    integration-scale selection; by default it is the smallest gap between
    adjacent elevation rows (the sparse direction).
    """

    azimuths: np.ndarray
    elevations: np.ndarray
    min_range: float = 0.5
    max_range: float = 60.0
    min_ray_angle: float | None = None
    _tables: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        self.azimuths = np.asarray(self.azimuths, dtype=np.float64)
        self.elevations = np.asarray(self.elevations, dtype=np.float64)
        el = self.elevations
        if el.ndim != 1 or self.azimuths.ndim != 1 or el.size < 1 or self.azimuths.size < 1:
            raise SensorConfigError("azimuth/elevation tables must be non-empty 1-D arrays")
        if el.size > 1:
            d = np.diff(el)
            if not (np.all(d > 0) or np.all(d < 0)):
                raise SensorConfigError("elevation table must be strictly monotonic")
        if not 0 <= self.min_range < self.max_range:
            raise SensorConfigError("need 0 <= min_range < max_range")
        if self.min_ray_angle is None:
            self.min_ray_angle = self.vertical_gap
        self._build_tables()

    @classmethod
    def os1_64(cls, width: int = 1024, height: int = 64, vfov_deg: float = OS1_64_VFOV_DEG,
               min_range: float = 0.5, max_range: float = 60.0,
               min_ray_angle: float | None = None) -> "SphericalSensorModel":
        """Nominal evenly spaced beam tables (row 0 is the top beam)."""
        half = math.radians(vfov_deg) / 2
        elevations = np.linspace(half, -half, height)
        azimuths = 2 * math.pi * np.arange(width) / width
        return cls(azimuths, elevations, min_range, max_range, min_ray_angle)

    @property
    def width(self) -> int:
        return self.azimuths.size

    @property
    def height(self) -> int:
        return self.elevations.size

    @property
    def vertical_gap(self) -> float:
        if self.height < 2:
            return 2 * math.pi / self.width
        return float(np.min(np.abs(np.diff(self.elevations))))

    @property
    def horizontal_gap(self) -> float:
        a = np.sort(np.mod(self.azimuths, 2 * math.pi))
        gaps = np.diff(np.concatenate([a, [a[0] + 2 * math.pi]]))
        return float(gaps.min())

    @property
    def min_adjacent_angle(self) -> float:
        return min(self.vertical_gap, self.horizontal_gap)

    def _build_tables(self):
        el_order = np.argsort(self.elevations)
        el = self.elevations[el_order]
        if el.size > 1:
            mids = (el[1:] + el[:-1]) / 2
            lo = el[0] - (el[1] - el[0]) / 2
            hi = el[-1] + (el[-1] - el[-2]) / 2
        else:
            mids = np.empty(0)
            lo = el[0] - self.horizontal_gap / 2
            hi = el[0] + self.horizontal_gap / 2
        el_bounds = np.concatenate([[lo], mids, [hi]])

        az = np.mod(self.azimuths, 2 * math.pi)
        az_order = np.argsort(az, kind="stable")
        a = az[az_order]
        if a.size > 1:
            mids = (a[1:] + a[:-1]) / 2
            first = (a[-1] - 2 * math.pi + a[0]) / 2
            az_bounds = np.concatenate([[first], mids])
        else:
            az_bounds = np.array([a[0] - math.pi])
        self._tables = dict(
            el_order=el_order.astype(np.int64), el_bounds=el_bounds,
            az_order=az_order.astype(np.int64), az_bounds=az_bounds,
        )

    @property
    def tables(self) -> dict:
        """Sorted-angle lookup tables shared with the integration kernels."""
        return self._tables

    def project(self, points: np.ndarray):
        """Nearest pixel for sensor-frame points: ``(rows, cols, inside_fov)``."""
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        t = self._tables
        horiz = np.hypot(p[:, 0], p[:, 1])
        elev = np.arctan2(p[:, 2], horiz)
        az = np.mod(np.arctan2(p[:, 1], p[:, 0]), 2 * math.pi)
        ek = np.searchsorted(t["el_bounds"], elev, side="right") - 1
        inside = (ek >= 0) & (ek < self.height)
        b0 = t["az_bounds"][0]
        az = np.where(az < b0, az + 2 * math.pi, az)
        az = np.where(az >= b0 + 2 * math.pi, az - 2 * math.pi, az)
        ak = np.clip(np.searchsorted(t["az_bounds"], az, side="right") - 1, 0, self.width - 1)
        rows = t["el_order"][np.clip(ek, 0, self.height - 1)]
        cols = t["az_order"][ak]
        return rows, cols, inside

    def to_config(self, path: str | Path) -> None:
        save_sensor_config(self, path)


@dataclass(eq=False)
class DepthImage:
    """Along-ray range per pixel.

    ``valid`` marks pixels carrying a measurement. ``clipped`` marks valid pixels
    whose return lay beyond ``max_range``; their range is truncated to it.
    """

    ranges: np.ndarray
    valid: np.ndarray
    clipped: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.ranges.shape


def cloud_to_depth_image(cloud: np.ndarray, model: SphericalSensorModel) -> DepthImage:
    """Range image from an organised (height, width, 3) LiDAR-frame cloud.

    Non-finite, all-zero and below-``min_range`` points are masked invalid.
    """
    cloud = np.asarray(cloud, dtype=np.float64)
    if cloud.shape != (model.height, model.width, 3):
        raise ValueError(
            f"cloud shape {cloud.shape} does not match sensor {model.height}x{model.width}")
    finite = np.all(np.isfinite(cloud), axis=2)
    safe = np.where(finite[..., None], cloud, 0.0)
    r = np.linalg.norm(safe, axis=2)
    valid = finite & (r > 0) & (r >= model.min_range)
    clipped = valid & (r > model.max_range)
    ranges = np.where(valid, np.minimum(r, model.max_range), 0.0)
    return DepthImage(ranges, valid, clipped)


def backproject(row, col, d, model: SphericalSensorModel) -> np.ndarray:
    a = model.azimuths[np.asarray(col)]
    e = model.elevations[np.asarray(row)]
    d = np.asarray(d, dtype=np.float64)
    ce = np.cos(e)
    return np.stack([d * ce * np.cos(a), d * ce * np.sin(a), d * np.sin(e)], axis=-1)


def ray_directions(model: SphericalSensorModel) -> np.ndarray:
    """Unit direction of every pixel, shape (height, width, 3)."""
    rows, cols = np.meshgrid(np.arange(model.height), np.arange(model.width), indexing="ij")
    return backproject(rows, cols, np.ones(rows.shape), model)


def select_integration_scale(d_r: float, min_ray_angle: float, voxel_dim: float) -> int:
    """Coarsest scale whose cell (``voxel_dim * 2**s``) fits inside the ray cone."""
    cone = d_r * min_ray_angle
    s = 0
    while s < MAX_SCALE and voxel_dim * (2 << s) <= cone:
        s += 1
    return s


def select_integration_scales(d_r: np.ndarray, min_ray_angle: float, voxel_dim: float) -> np.ndarray:
    cone = np.asarray(d_r, dtype=np.float64) * min_ray_angle
    s = np.zeros(cone.shape, dtype=np.int64)
    for k in range(1, MAX_SCALE + 1):
        s += voxel_dim * (1 << k) <= cone
    return s


def save_sensor_config(model: SphericalSensorModel, path: str | Path) -> None:
    doc = {
        "width": model.width,
        "height": model.height,
        "min_range": float(model.min_range),
        "max_range": float(model.max_range),
        "min_ray_angle": float(model.min_ray_angle),
        "azimuths_deg": [float(v) for v in np.degrees(model.azimuths)],
        "elevations_deg": [float(v) for v in np.degrees(model.elevations)],
    }
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False))


def load_sensor_config(path: str | Path) -> SphericalSensorModel:
    """Read a YAML key/value sensor description.

    Either explicit ``azimuths_deg``/``elevations_deg`` tables or the nominal
    ``width``/``height``/``vertical_fov_deg`` triple are accepted.
    """
    doc = yaml.safe_load(Path(path).read_text()) or {}
    try:
        min_range = float(doc.get("min_range", 0.5))
        max_range = float(doc.get("max_range", 60.0))
        theta = doc.get("min_ray_angle")
        theta = None if theta is None else float(theta)
        if "elevations_deg" in doc:
            model = SphericalSensorModel(np.radians(doc["azimuths_deg"]),
                                         np.radians(doc["elevations_deg"]),
                                         min_range, max_range, theta)
        else:
            model = SphericalSensorModel.os1_64(
                int(doc.get("width", 1024)), int(doc.get("height", 64)),
                float(doc.get("vertical_fov_deg", OS1_64_VFOV_DEG)), min_range, max_range, theta)
    except (TypeError, KeyError) as exc:
        raise SensorConfigError(f"{path}: {exc}") from exc
    for key in ("width", "height"):
        if key in doc and int(doc[key]) != getattr(model, key):
            raise SensorConfigError(f"{path}: {key} disagrees with beam tables")
    return model
