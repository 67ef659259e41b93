"""Coordinate frames, BEV grid arithmetic and camera projection.

LiDAR frame convention: x forward, y left, z up. Image frame: pixel (0, 0)
at the top-left corner, px rightwards, py downwards. All BEV grids are
half-open on their upper bounds so floor-indexing never yields an index
equal to the cell count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class ContractViolation(ValueError):
    """An operation was called outside its documented preconditions."""


class ConfigurationError(ValueError):
    """Invalid geometry configuration (degenerate grid or calibration)."""


@dataclass(frozen=True)
class GridSpec:
    """A BEV grid over [x_min, x_max) x [y_min, y_max) with cell size (s_x, s_y).

    Cell counts are derived: n_x = floor((x_max - x_min) / s_x), same for y.
    The optional z bounds only filter points during indexing; they default to
    unbounded and do not affect the grid shape.
    """

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    s_x: float
    s_y: float
    z_min: float = -math.inf
    z_max: float = math.inf

    def __post_init__(self) -> None:
        if self.s_x <= 0 or self.s_y <= 0:
            raise ConfigurationError(f"cell sizes must be positive, got ({self.s_x}, {self.s_y})")
        if self.x_max <= self.x_min or self.y_max <= self.y_min:
            raise ConfigurationError("grid extents must be nonempty")
        if self.z_max <= self.z_min:
            raise ConfigurationError("z_max must exceed z_min")

    @property
    def n_x(self) -> int:
        return int(math.floor((self.x_max - self.x_min) / self.s_x))

    @property
    def n_y(self) -> int:
        return int(math.floor((self.y_max - self.y_min) / self.s_y))

    @property
    def shape(self) -> tuple[int, int]:
        """(n_y, n_x), the row-major map shape with v (y cell) as the row."""
        return (self.n_y, self.n_x)

    def scaled(self, cell_factor: float) -> "GridSpec":
        """Same extents with cell sizes multiplied by `cell_factor`."""
        return GridSpec(self.x_min, self.x_max, self.y_min, self.y_max,
                        self.s_x * cell_factor, self.s_y * cell_factor,
                        self.z_min, self.z_max)


def default_input_grid() -> GridSpec:
    """Fine grid used for voxelization: 0-50 m x +/-25 m at 0.0625 m (800 x 800)."""
    return GridSpec(0.0, 50.0, -25.0, 25.0, 0.0625, 0.0625)


def default_output_grid() -> GridSpec:
    """Coarse grid of the prediction maps: same extents at 0.25 m (200 x 200)."""
    return GridSpec(0.0, 50.0, -25.0, 25.0, 0.25, 0.25)


def bev_index(point, grid: GridSpec) -> tuple[int, int] | None:
    """Return the (u, v) cell of a point, or None when it is outside the grid.

    u indexes x, v indexes y. Upper bounds are exclusive; the optional z
    bounds of the grid are applied the same way. When the extent is not an
    integer multiple of the cell size, the uncovered remainder strip below
    x_max/y_max counts as out of bounds (the derived cell counts define the
    covered area).
    """
    x, y = float(point[0]), float(point[1])
    z = float(point[2]) if len(point) > 2 else 0.0
    if not (grid.x_min <= x < grid.x_max and grid.y_min <= y < grid.y_max):
        return None
    if not (grid.z_min <= z < grid.z_max):
        return None
    u = int(math.floor((x - grid.x_min) / grid.s_x))
    v = int(math.floor((y - grid.y_min) / grid.s_y))
    if u >= grid.n_x or v >= grid.n_y:
        return None
    return (u, v)


def bev_indices(points: np.ndarray, grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized bev_index: (N,3) points -> (mask of in-bounds, (M,2) int cells).

    The mask has one entry per input point; the cell array covers only the
    masked points, in input order.
    """
    points = np.asarray(points, dtype=np.float64)
    x, y = points[:, 0], points[:, 1]
    z = points[:, 2] if points.shape[1] > 2 else np.zeros(len(points))
    mask = ((x >= grid.x_min) & (x < grid.x_max)
            & (y >= grid.y_min) & (y < grid.y_max)
            & (z >= grid.z_min) & (z < grid.z_max))
    u = np.floor((x - grid.x_min) / grid.s_x).astype(np.int64)
    v = np.floor((y - grid.y_min) / grid.s_y).astype(np.int64)
    mask &= (u < grid.n_x) & (v < grid.n_y)
    return mask, np.stack([u[mask], v[mask]], axis=1)


def voxel_center(u: int, v: int, grid: GridSpec) -> tuple[float, float]:
    """Metric center (x, y) of cell (u, v)."""
    if not (0 <= u < grid.n_x and 0 <= v < grid.n_y):
        raise ContractViolation(f"cell ({u}, {v}) outside grid {grid.n_x}x{grid.n_y}")
    return (grid.x_min + (u + 0.5) * grid.s_x, grid.y_min + (v + 0.5) * grid.s_y)


def _is_rotation(m: np.ndarray, tol: float = 1e-6) -> bool:
    return (np.allclose(m @ m.T, np.eye(3), atol=tol)
            and abs(float(np.linalg.det(m)) - 1.0) <= tol)


# Mirrors used by the horizontal-flip calibration transform.
_MIRROR_LIDAR_Y = np.diag([1.0, -1.0, 1.0, 1.0])
_MIRROR_CAM_X = np.diag([-1.0, 1.0, 1.0, 1.0])


@dataclass(frozen=True)
class Calibration:
    """Rigid LiDAR-to-camera transform plus rectification and projection.

    `velo_to_cam` and `rectification` are 4x4, `projection` is the 3x4 camera
    matrix applied after rectification. Pixel coordinates produced by
    `project_points` are continuous.
    """

    velo_to_cam: np.ndarray
    rectification: np.ndarray
    projection: np.ndarray
    image_width: int
    image_height: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "velo_to_cam", np.asarray(self.velo_to_cam, dtype=np.float64))
        object.__setattr__(self, "rectification", np.asarray(self.rectification, dtype=np.float64))
        object.__setattr__(self, "projection", np.asarray(self.projection, dtype=np.float64))
        if self.velo_to_cam.shape != (4, 4) or self.rectification.shape != (4, 4):
            raise ConfigurationError("extrinsics and rectification must be 4x4")
        if self.projection.shape != (3, 4):
            raise ConfigurationError("projection must be 3x4")
        if not _is_rotation(self.velo_to_cam[:3, :3]):
            raise ConfigurationError("velo_to_cam rotation block is not orthonormal with det 1")
        if abs(float(np.linalg.det(self.projection[:, :3]))) < 1e-12:
            raise ConfigurationError("projection matrix is singular")

    @classmethod
    def identity(cls, fx: float, fy: float, cx: float, cy: float,
                 image_width: int, image_height: int) -> "Calibration":
        """Pinhole camera with identity extrinsics, mostly for tests."""
        proj = np.array([[fx, 0.0, cx, 0.0],
                         [0.0, fy, cy, 0.0],
                         [0.0, 0.0, 1.0, 0.0]])
        return cls(np.eye(4), np.eye(4), proj, image_width, image_height)

    @property
    def combined(self) -> np.ndarray:
        """The full 3x4 LiDAR-to-pixel matrix projection @ rectification @ velo_to_cam."""
        return self.projection @ self.rectification @ self.velo_to_cam

    def lidar_to_camera(self, points: np.ndarray) -> np.ndarray:
        """Transform (N,3) LiDAR points into the rectified camera frame."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        hom = np.hstack([pts, np.ones((len(pts), 1))])
        return (self.rectification @ self.velo_to_cam @ hom.T).T[:, :3]

    def camera_to_lidar(self, points: np.ndarray) -> np.ndarray:
        """Inverse of lidar_to_camera."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        hom = np.hstack([pts, np.ones((len(pts), 1))])
        inv = np.linalg.inv(self.rectification @ self.velo_to_cam)
        return (inv @ hom.T).T[:, :3]

    def project_points(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Project (N,3) LiDAR points to continuous pixels.

        Returns (pixels, valid): pixels is (N,2); valid marks points with
        positive camera-frame depth whose projection lands inside
        [0, image_width) x [0, image_height). Pixels of invalid points are
        still filled where the perspective divide is defined (depth > 0) and
        NaN otherwise.
        """
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        hom = np.hstack([pts, np.ones((len(pts), 1))])
        uvw = (self.combined @ hom.T).T
        depth = uvw[:, 2]
        pixels = np.full((len(pts), 2), np.nan)
        front = depth > 0
        pixels[front] = uvw[front, :2] / depth[front, None]
        valid = (front
                 & (pixels[:, 0] >= 0) & (pixels[:, 0] < self.image_width)
                 & (pixels[:, 1] >= 0) & (pixels[:, 1] < self.image_height))
        return pixels, valid

    def shifted(self, dx: float, dy: float, width: int, height: int) -> "Calibration":
        """Calibration of the image cropped at (-dx, -dy), i.e. pixel p -> p + (dx, dy)."""
        proj = self.projection.copy()
        proj[0] += dx * proj[2]
        proj[1] += dy * proj[2]
        return Calibration(self.velo_to_cam, self.rectification, proj, width, height)

    def flipped_horizontal(self) -> "Calibration":
        """Calibration consistent with a mirrored image and y-negated LiDAR frame.

        Built so that for every point p, projecting diag(1,-1,1) @ p with the
        new calibration gives (image_width - 1 - px, py) of the original
        projection, exactly. Conjugating the extrinsics and rectification by
        the camera-x mirror keeps their rotation blocks proper; the pixel
        mirror is folded into the projection matrix, which for a plain
        pinhole maps cx to image_width - 1 - cx.
        """
        w = float(self.image_width)
        pixel_mirror = np.array([[-1.0, 0.0, w - 1.0],
                                 [0.0, 1.0, 0.0],
                                 [0.0, 0.0, 1.0]])
        mirror_cam = _MIRROR_CAM_X
        velo_to_cam = mirror_cam @ self.velo_to_cam @ _MIRROR_LIDAR_Y
        rectification = mirror_cam @ self.rectification @ mirror_cam
        projection = pixel_mirror @ self.projection @ mirror_cam
        return Calibration(velo_to_cam, rectification, projection,
                           self.image_width, self.image_height)


def project_to_image(points, calib: Calibration) -> list[tuple[float, float] | None]:
    """Project LiDAR points to pixels; None for culled points.

    A point is culled when its camera-frame depth is nonpositive or its
    projection falls outside the image bounds. Surviving coordinates are
    continuous (no rounding).
    """
    pixels, valid = calib.project_points(np.atleast_2d(np.asarray(points, dtype=np.float64)))
    return [(float(p[0]), float(p[1])) if ok else None for p, ok in zip(pixels, valid)]


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    wrapped = math.fmod(theta + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi
