"""Column voxelization and per-voxel statistical features.

Points are grouped into vertical columns on the BEV grid (no z slicing).
Each occupied column is summarized by a 15-dim vector (mean, covariance
upper triangle, coordinate extremes) plus a representative member point
whose image projection ties the BEV frame to the camera frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Calibration, ContractViolation, GridSpec, bev_indices

FEATURE_DIM = 15
FEATURE_LAYOUT = "mean3_cov6_min3_max3"
# Covariance upper triangle is stored in row-major order xx, xy, xz, yy, yz, zz.
_TRIU_ROWS, _TRIU_COLS = np.triu_indices(3)


@dataclass(frozen=True)
class ColumnVoxel:
    """One occupied BEV cell and the indices of its member points."""

    u: int
    v: int
    point_indices: np.ndarray

    def __post_init__(self) -> None:
        idx = np.asarray(self.point_indices, dtype=np.int64)
        if len(idx) == 0:
            raise ContractViolation("empty voxels are never materialized")
        object.__setattr__(self, "point_indices", idx)


@dataclass(frozen=True)
class VoxelFeature:
    """Gaussian summary of a point set: mean, covariance and extremes."""

    mean: np.ndarray       # (3,)
    cov: np.ndarray        # (6,) upper triangle xx, xy, xz, yy, yz, zz
    extremes: np.ndarray   # (6,) min x, y, z then max x, y, z

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.mean, self.cov, self.extremes])

    def cov_matrix(self) -> np.ndarray:
        m = np.zeros((3, 3))
        m[_TRIU_ROWS, _TRIU_COLS] = self.cov
        m[_TRIU_COLS, _TRIU_ROWS] = self.cov
        return m


@dataclass(frozen=True)
class EncodedSample:
    """Per-voxel features and coordinates for one scene, arrays of length M."""

    features: np.ndarray      # (M, 15)
    bev_indices: np.ndarray   # (M, 2) int (u, v)
    image_coords: np.ndarray  # (M, 2) continuous pixels, NaN when unprojectable
    main_points: np.ndarray   # (M, 3)
    grid: GridSpec

    def __len__(self) -> int:
        return len(self.features)


def voxelize(cloud, grid: GridSpec) -> list[ColumnVoxel]:
    """Group in-bounds points into column voxels, sorted by (u, v)."""
    mask, cells = bev_indices(cloud.points, grid)
    source = np.nonzero(mask)[0]
    if len(source) == 0:
        return []
    # Sort by flat cell id with a stable sort so per-voxel point order stays
    # the input order.
    flat = cells[:, 0] * grid.n_y + cells[:, 1]
    order = np.argsort(flat, kind="stable")
    flat, source = flat[order], source[order]
    boundaries = np.nonzero(np.diff(flat))[0] + 1
    groups = np.split(source, boundaries)
    starts = np.concatenate([[0], boundaries])
    return [
        ColumnVoxel(int(flat[s] // grid.n_y), int(flat[s] % grid.n_y), g)
        for s, g in zip(starts, groups)
    ]


def ndt_encode(points: np.ndarray) -> VoxelFeature:
    """Fit the Gaussian summary of a non-empty (n, 3) point set.

    Uses the population covariance (divide by n), which is zero for a single
    point rather than undefined.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ContractViolation("ndt_encode needs at least one point")
    mean = pts.mean(axis=0)
    centered = pts - mean
    cov = (centered.T @ centered) / len(pts)
    return VoxelFeature(mean, cov[_TRIU_ROWS, _TRIU_COLS],
                        np.concatenate([pts.min(axis=0), pts.max(axis=0)]))


def main_point(points: np.ndarray) -> np.ndarray:
    """The member point closest to the set's mean; ties go to the lowest index."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ContractViolation("main_point needs at least one point")
    diff = pts - pts.mean(axis=0)
    # argmin returns the first occurrence, which is the tie-break rule.
    return pts[int(np.argmin(np.einsum("ij,ij->i", diff, diff)))]


def encode_sample(cloud, grid: GridSpec, calib: Calibration,
                  require_in_image: bool = True) -> EncodedSample:
    """Voxelize a cloud and attach features, main points and image coordinates.

    With `require_in_image` (the fusion pipeline), voxels whose main point
    does not project inside the image are dropped, since the image branch
    cannot sample them. The LiDAR-only variant keeps every voxel; coordinates
    of unprojectable main points are NaN there.
    """
    columns = voxelize(cloud, grid)
    if not columns:
        empty = np.zeros((0, 2))
        return EncodedSample(np.zeros((0, FEATURE_DIM)), np.zeros((0, 2), dtype=np.int64),
                             empty, np.zeros((0, 3)), grid)
    mains = np.stack([main_point(cloud.points[col.point_indices]) for col in columns])
    pixels, valid = calib.project_points(mains)
    keep = valid if require_in_image else np.ones(len(columns), dtype=bool)
    if not require_in_image:
        pixels = np.where(valid[:, None], pixels, np.nan)
    kept = np.nonzero(keep)[0]
    features = np.stack([ndt_encode(cloud.points[columns[i].point_indices]).as_vector()
                         for i in kept]) if len(kept) else np.zeros((0, FEATURE_DIM))
    cells = np.array([[columns[i].u, columns[i].v] for i in kept], dtype=np.int64).reshape(-1, 2)
    return EncodedSample(features, cells, pixels[keep], mains[keep], grid)
