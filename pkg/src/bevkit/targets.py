"""Anchor-free ground-truth maps: Gaussian class heatmaps plus offset/side regression.

Each label contributes a peak-1 Gaussian at its center voxel of the output
grid and a 3-channel regression target there: the offset from the voxel
center to the true center (voxel center minus label center on both axes) and
the BEV footprint diagonal as the proposal side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import ContractViolation, GridSpec, bev_index, voxel_center
from .kitti import GroundTruthObject

N_CLASSES = 3
MIN_OVERLAP = 0.5


@dataclass(frozen=True)
class TargetMaps:
    """Ground-truth maps on the output grid, indexed [channel, v, u]."""

    cls: np.ndarray        # (n_classes, n_y, n_x) in [0, 1]
    reg: np.ndarray        # (3, n_y, n_x): dx, dy, side; zero off the positive mask
    pos_mask: np.ndarray   # (n_y, n_x) bool
    num_pos: int           # distinct (class, center voxel) pairs
    skipped: int = 0       # labels outside the grid
    collisions: int = 0    # labels sharing an already-claimed (class, voxel)


def _shift_iou(width_cells: float, length_cells: float, r: int) -> float:
    """IoU between a box and its copy shifted diagonally by r cells."""
    if r >= width_cells or r >= length_cells:
        return 0.0
    inter = (width_cells - r) * (length_cells - r)
    return inter / (2.0 * width_cells * length_cells - inter)


def gaussian_radius(w: float, l: float, grid: GridSpec, min_overlap: float = MIN_OVERLAP) -> int:
    """Largest whole-cell shift keeping a w x l footprint at IoU >= min_overlap.

    The shift is diagonal (the worst case inside the splat window), the box is
    measured in cells of the given grid, and the result is floored at one
    cell. The closed form solves the quadratic IoU bound; the exact predicate
    is re-checked at the integer boundary to be safe against rounding.
    """
    if w <= 0 or l <= 0:
        raise ContractViolation("footprint dimensions must be positive")
    wc, lc = w / grid.s_x, l / grid.s_y
    bound = 2.0 * min_overlap / (1.0 + min_overlap) * wc * lc
    disc = (wc - lc) ** 2 + 4.0 * bound
    r = int(math.floor(((wc + lc) - math.sqrt(disc)) / 2.0))
    r = max(r, 0)
    while _shift_iou(wc, lc, r + 1) >= min_overlap:
        r += 1
    while r > 1 and _shift_iou(wc, lc, r) < min_overlap:
        r -= 1
    return max(r, 1)


def splat_gaussian(heatmap: np.ndarray, u: int, v: int, radius: int) -> None:
    """Max-combine a peak-1 Gaussian of sigma radius/3 into heatmap[v, u], in place.

    The kernel is truncated at 3 sigma, i.e. at the radius.
    """
    sigma = radius / 3.0
    n_y, n_x = heatmap.shape
    du = np.arange(max(u - radius, 0), min(u + radius + 1, n_x)) - u
    dv = np.arange(max(v - radius, 0), min(v + radius + 1, n_y)) - v
    kernel = np.exp(-(du[None, :] ** 2 + dv[:, None] ** 2) / (2.0 * sigma * sigma))
    window = heatmap[v + dv[0]:v + dv[-1] + 1, u + du[0]:u + du[-1] + 1]
    np.maximum(window, kernel, out=window)


def encode_targets(labels: list[GroundTruthObject], grid_out: GridSpec,
                   n_classes: int = N_CLASSES, min_overlap: float = MIN_OVERLAP) -> TargetMaps:
    """Rasterize labels into classification and regression target maps.

    Out-of-grid labels are skipped (counted). When several labels claim the
    same (class, voxel), the one with the larger BEV footprint keeps the
    regression slot and the rest count as collisions; their Gaussians are
    still splatted, which is idempotent at the shared peak. num_pos counts
    distinct (class, voxel) pairs, which equals the positive-mask population
    unless labels of different classes share a cell.
    """
    n_y, n_x = grid_out.shape
    cls = np.zeros((n_classes, n_y, n_x))
    reg = np.zeros((3, n_y, n_x))
    pos_mask = np.zeros((n_y, n_x), dtype=bool)
    claimed: dict[tuple[int, int, int], float] = {}   # (class, u, v) -> footprint area
    cell_owner: dict[tuple[int, int], float] = {}     # (u, v) -> footprint area
    skipped = collisions = 0

    for obj in labels:
        if not 0 <= obj.class_id < n_classes:
            raise ContractViolation(f"class id {obj.class_id} outside [0, {n_classes})")
        cell = bev_index((obj.x, obj.y, 0.0), grid_out)
        if cell is None:
            skipped += 1
            continue
        u, v = cell
        radius = gaussian_radius(obj.w, obj.l, grid_out, min_overlap)
        splat_gaussian(cls[obj.class_id], u, v, radius)
        cls[obj.class_id, v, u] = 1.0
        pos_mask[v, u] = True

        area = obj.w * obj.l
        key = (obj.class_id, u, v)
        if key in claimed:
            collisions += 1
            if area <= claimed[key]:
                continue
        claimed[key] = area
        if cell_owner.get((u, v), -1.0) < area:
            cell_owner[(u, v)] = area
            cx, cy = voxel_center(u, v, grid_out)
            reg[0, v, u] = cx - obj.x
            reg[1, v, u] = cy - obj.y
            reg[2, v, u] = math.hypot(obj.w, obj.l)

    return TargetMaps(cls, reg, pos_mask, num_pos=len(claimed),
                      skipped=skipped, collisions=collisions)
