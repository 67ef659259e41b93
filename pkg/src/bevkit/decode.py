"""Turn predicted maps into scored axis-aligned BEV proposals.

Peaks of the classification map are local window maxima; the regression map
at each peak carries the center correction and the proposal side. There is
no IoU-based NMS: the peak window already suppresses neighbors.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import ContractViolation, GridSpec, voxel_center

NEIGHBORHOOD = 3
TOP_K = 20
SIDE_FLOOR = 0.1


@dataclass(frozen=True)
class Proposal:
    """A scored square BEV region: center (cx, cy) and side in meters."""

    class_id: int
    score: float
    cx: float
    cy: float
    side: float

    def __post_init__(self) -> None:
        if self.side <= 0:
            raise ContractViolation("proposal side must be positive")

    @property
    def aabb(self) -> tuple[float, float, float, float]:
        half = self.side / 2.0
        return (self.cx - half, self.cy - half, self.cx + half, self.cy + half)


def find_peaks(cls_map: np.ndarray, neighborhood: int = NEIGHBORHOOD,
               top_k: int = TOP_K) -> list[tuple[int, int, int, float]]:
    """Locate per-class window maxima and keep the top_k by score.

    A cell is a peak when its score is positive and no cell of its class
    inside the window beats it; on equal scores the lexicographically
    smallest (v, u) wins, so a plateau yields exactly one peak per window.
    Returns (class, u, v, score) tuples sorted by descending score, ties
    broken by (class, v, u).
    """
    if neighborhood < 1 or neighborhood % 2 == 0:
        raise ContractViolation("neighborhood must be odd and >= 1")
    cls_map = np.asarray(cls_map, dtype=np.float64)
    n_classes, n_y, n_x = cls_map.shape
    k = neighborhood // 2
    padded = np.full((n_classes, n_y + 2 * k, n_x + 2 * k), -np.inf)
    padded[:, k:k + n_y, k:k + n_x] = cls_map
    is_peak = cls_map > 0.0
    for dv in range(-k, k + 1):
        for du in range(-k, k + 1):
            if dv == 0 and du == 0:
                continue
            neighbor = padded[:, k + dv:k + dv + n_y, k + du:k + du + n_x]
            if (dv, du) < (0, 0):
                # lexicographically smaller neighbor keeps ties
                is_peak &= cls_map > neighbor
            else:
                is_peak &= cls_map >= neighbor
    classes, vs, us = np.nonzero(is_peak)
    scores = cls_map[classes, vs, us]
    order = np.lexsort((us, vs, classes, -scores))[:top_k]
    return [(int(classes[i]), int(us[i]), int(vs[i]), float(scores[i])) for i in order]


def decode_proposals(peaks, reg_map: np.ndarray, grid_out: GridSpec,
                     side_floor: float = SIDE_FLOOR) -> list[Proposal]:
    """Invert the target encoding at each peak location.

    The regression channels store voxel center minus true center, so decoding
    subtracts them from the voxel center; nonpositive regressed sides are
    clamped to `side_floor`.
    """
    reg_map = np.asarray(reg_map, dtype=np.float64)
    proposals = []
    for class_id, u, v, score in peaks:
        cx_vox, cy_vox = voxel_center(u, v, grid_out)
        proposals.append(Proposal(
            class_id, score,
            cx_vox - float(reg_map[0, v, u]),
            cy_vox - float(reg_map[1, v, u]),
            max(float(reg_map[2, v, u]), side_floor),
        ))
    return proposals


def decode_maps(cls_map: np.ndarray, reg_map: np.ndarray, grid_out: GridSpec,
                neighborhood: int = NEIGHBORHOOD, top_k: int = TOP_K,
                side_floor: float = SIDE_FLOOR) -> list[Proposal]:
    """find_peaks followed by decode_proposals."""
    return decode_proposals(find_peaks(cls_map, neighborhood, top_k),
                            reg_map, grid_out, side_floor)


def format_proposals(proposals: list[Proposal]) -> str:
    """Line-oriented text form: `class score cx cy side`, 9 significant digits."""
    lines = [f"{p.class_id} {p.score:.9g} {p.cx:.9g} {p.cy:.9g} {p.side:.9g}"
             for p in proposals]
    return "".join(line + "\n" for line in lines)


def write_proposals(proposals: list[Proposal], path) -> None:
    Path(path).write_text(format_proposals(proposals))


def read_proposals(path) -> list[Proposal]:
    proposals = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != 5:
            raise ValueError(f"{path}:{lineno}: expected 5 fields, got {len(fields)}")
        proposals.append(Proposal(int(fields[0]), *(float(f) for f in fields[1:])))
    return proposals
