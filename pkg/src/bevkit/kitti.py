"""KITTI 3D-object-detection file parsing and per-point layer estimation.

Handles the three file kinds of a KITTI sample: velodyne binary scans,
calibration text files and label text files. Labels arrive in the rectified
camera frame and are converted to LiDAR-frame box centers here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .geometry import Calibration, ContractViolation, wrap_angle

CAR, PEDESTRIAN, CYCLIST = 0, 1, 2
CLASS_NAMES = ("Car", "Pedestrian", "Cyclist")

# KITTI label names of interest; Van counts as Car.
_KITTI_NAME_TO_CLASS = {"Car": CAR, "Van": CAR, "Pedestrian": PEDESTRIAN, "Cyclist": CYCLIST}

DEFAULT_NUM_LAYERS = 64


class FormatError(ValueError):
    """A file does not match its expected on-disk format."""


@dataclass(frozen=True)
class PointCloud:
    """N LiDAR points with optional per-point reflectance and layer id."""

    points: np.ndarray                       # (N, 3) float64
    reflectance: np.ndarray | None = None    # (N,) float64 in [0, 1]
    layer_id: np.ndarray | None = None       # (N,) int64
    num_layers: int | None = None

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        object.__setattr__(self, "points", pts)
        n = len(pts)
        for name in ("reflectance", "layer_id"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr)
                if len(arr) != n:
                    raise ValueError(f"{name} length {len(arr)} != point count {n}")
                object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return len(self.points)

    def select(self, indices) -> "PointCloud":
        """Sub-cloud at the given indices (order preserved as given)."""
        return PointCloud(
            self.points[indices],
            None if self.reflectance is None else self.reflectance[indices],
            None if self.layer_id is None else self.layer_id[indices],
            self.num_layers,
        )


@dataclass(frozen=True)
class GroundTruthObject:
    """A labeled object in the LiDAR frame: box center, size and yaw about z."""

    class_id: int
    x: float
    y: float
    z: float
    h: float
    w: float
    l: float
    theta: float

    def __post_init__(self) -> None:
        if min(self.h, self.w, self.l) <= 0:
            raise ValueError("box dimensions must be positive")

    @property
    def center_bev(self) -> tuple[float, float]:
        return (self.x, self.y)

    def bev_aabb(self) -> tuple[float, float, float, float]:
        """Tight axis-aligned hull of the rotated BEV footprint (l along heading)."""
        c, s = abs(math.cos(self.theta)), abs(math.sin(self.theta))
        hx = 0.5 * (self.l * c + self.w * s)
        hy = 0.5 * (self.l * s + self.w * c)
        return (self.x - hx, self.y - hy, self.x + hx, self.y + hy)


def read_velodyne(path) -> PointCloud:
    """Parse a velodyne scan: consecutive little-endian float32 (x, y, z, reflectance)."""
    raw = Path(path).read_bytes()
    if len(raw) % 16 != 0:
        raise FormatError(f"{path}: byte length {len(raw)} not divisible by 16")
    data = np.frombuffer(raw, dtype="<f4").reshape(-1, 4)
    bad = ~np.isfinite(data).all(axis=1)
    if bad.any():
        raise FormatError(f"{path}: non-finite values at point {int(np.argmax(bad))}")
    return PointCloud(data[:, :3].astype(np.float64), data[:, 3].astype(np.float64))


def write_velodyne(cloud: PointCloud, path) -> None:
    """Inverse of read_velodyne; missing reflectance is written as zeros."""
    refl = cloud.reflectance if cloud.reflectance is not None else np.zeros(len(cloud))
    data = np.hstack([cloud.points, np.asarray(refl).reshape(-1, 1)]).astype("<f4")
    Path(path).write_bytes(data.tobytes())


def read_calibration(path, image_width: int = 1242, image_height: int = 375) -> Calibration:
    """Parse a KITTI calibration file (keys P2, R0_rect, Tr_velo_to_cam).

    KITTI stores no image size, so pass the actual one when projections
    matter; the defaults are only typical values and affect nothing but
    projection validity bounds.
    """
    values: dict[str, np.ndarray] = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or ":" not in line:
            continue
        key, rest = line.split(":", 1)
        values[key.strip()] = np.array([float(t) for t in rest.split()])
    try:
        proj = values["P2"].reshape(3, 4)
        rect = np.eye(4)
        rect[:3, :3] = values["R0_rect"].reshape(3, 3)
        velo_to_cam = np.eye(4)
        velo_to_cam[:3, :] = values["Tr_velo_to_cam"].reshape(3, 4)
    except KeyError as exc:
        raise FormatError(f"{path}: missing calibration key {exc}") from exc
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return Calibration(velo_to_cam, rect, proj, image_width, image_height)


def _heading_lidar_to_camera(theta: float, calib: Calibration) -> float:
    rot = (calib.rectification @ calib.velo_to_cam)[:3, :3]
    d = rot @ np.array([math.cos(theta), math.sin(theta), 0.0])
    return math.atan2(-d[2], d[0])


def _heading_camera_to_lidar(rotation_y: float, calib: Calibration) -> float:
    rot = np.linalg.inv((calib.rectification @ calib.velo_to_cam)[:3, :3])
    d = rot @ np.array([math.cos(rotation_y), 0.0, -math.sin(rotation_y)])
    return math.atan2(d[1], d[0])


def object_from_camera_frame(class_id: int, location_cam, h: float, w: float, l: float,
                             rotation_y: float, calib: Calibration) -> GroundTruthObject:
    """Build a LiDAR-frame object from a camera-frame bottom-center label.

    The bottom center is transformed first, then lifted by h/2 along the
    LiDAR z axis (boxes are gravity aligned).
    """
    bottom = calib.camera_to_lidar(np.asarray(location_cam, dtype=np.float64))[0]
    theta = wrap_angle(_heading_camera_to_lidar(rotation_y, calib))
    return GroundTruthObject(class_id, float(bottom[0]), float(bottom[1]),
                             float(bottom[2]) + h / 2.0, h, w, l, theta)


def object_to_camera_frame(obj: GroundTruthObject, calib: Calibration):
    """Inverse of object_from_camera_frame: (location_cam, h, w, l, rotation_y)."""
    bottom = np.array([obj.x, obj.y, obj.z - obj.h / 2.0])
    location = calib.lidar_to_camera(bottom)[0]
    rotation_y = _heading_lidar_to_camera(obj.theta, calib)
    return location, obj.h, obj.w, obj.l, rotation_y


def read_labels(path, calib: Calibration) -> list[GroundTruthObject]:
    """Parse a KITTI label file into LiDAR-frame objects of the studied classes.

    Van maps to Car; DontCare and all other names are dropped.
    """
    objects: list[GroundTruthObject] = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) < 15:
            raise FormatError(f"{path}:{lineno}: expected 15 fields, got {len(fields)}")
        name = fields[0]
        class_id = _KITTI_NAME_TO_CLASS.get(name)
        if class_id is None:
            continue
        try:
            h, w, l = (float(f) for f in fields[8:11])
            location = [float(f) for f in fields[11:14]]
            rotation_y = float(fields[14])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
        objects.append(object_from_camera_frame(class_id, location, h, w, l, rotation_y, calib))
    return objects


def estimate_layers(cloud: PointCloud, num_layers: int = DEFAULT_NUM_LAYERS) -> PointCloud:
    """Assign layer ids by uniform binning of per-point elevation angles.

    KITTI scans carry no ring index, so the [min, max] elevation range of the
    cloud is split into `num_layers` equal bins and each point gets its bin
    index. A degenerate cloud (every point at the origin) has no elevation
    structure and is rejected.
    """
    if num_layers < 1:
        raise ContractViolation("num_layers must be >= 1")
    if len(cloud) == 0:
        raise ContractViolation("cannot estimate layers of an empty cloud")
    pts = cloud.points
    horizontal = np.hypot(pts[:, 0], pts[:, 1])
    if not np.any((horizontal > 0) | (pts[:, 2] != 0)):
        raise ContractViolation("all points at the origin; elevation undefined")
    elevation = np.arctan2(pts[:, 2], horizontal)
    lo, hi = float(elevation.min()), float(elevation.max())
    if hi == lo:
        ids = np.zeros(len(cloud), dtype=np.int64)
    else:
        ids = np.floor((elevation - lo) / (hi - lo) * num_layers).astype(np.int64)
        np.clip(ids, 0, num_layers - 1, out=ids)
    return replace(cloud, layer_id=ids, num_layers=num_layers)


def map_nuscenes_class(name: str, attributes: list[str]) -> int | None:
    """Map a nuScenes category (plus attributes) onto the studied class ids.

    Dotted category paths are matched on their tokens, so both "car" and
    "vehicle.car" resolve. Bicycles count as Cyclist only when ridden.
    """
    tokens = set(name.lower().split("."))
    if "car" in tokens:
        return CAR
    if "pedestrian" in tokens:
        return PEDESTRIAN
    if "bicycle" in tokens:
        normalized = [a.lower().replace("_", " ") for a in attributes]
        if any("with rider" in a for a in normalized):
            return CYCLIST
    return None
