"""Manifest-backed training samples.

Each sample is loaded once into torch tensors: normalized image, continuous
sampling coordinates, voxel feature vectors, BEV cell indices and the target
maps. Positions in the 15-dim feature vector (mean and extremes) are scaled
by the grid's far bound so every input channel is roughly unit range.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .io import Manifest, load_manifest_dir

# feature vector layout: mean(3) | cov upper triangle(6) | min(3) | max(3)
_POSITION_DIMS = [0, 1, 2, 9, 10, 11, 12, 13, 14]


class SampleError(ValueError):
    pass


def load_sample(manifest: Manifest) -> dict:
    grid = manifest.grid
    n_x_in, n_y_in = int(grid["n_x_in"]), int(grid["n_y_in"])
    n_x_out, n_y_out = int(grid["n_x_out"]), int(grid["n_y_out"])
    if (n_x_in, n_y_in) != (4 * n_x_out, 4 * n_y_out):
        raise SampleError(
            f"{manifest.sample_id}: output grid {n_x_out}x{n_y_out} is not a "
            f"quarter of the input grid {n_x_in}x{n_y_in}")

    features = torch.from_numpy(manifest.tensor("features").astype(np.float32))
    scale = float(grid.get("x_max", 50.0))
    features[:, _POSITION_DIMS] /= scale

    cells = torch.from_numpy(manifest.tensor("bev_indices").astype(np.int64))
    if len(torch.unique(cells[:, 1] * n_x_in + cells[:, 0])) != len(cells):
        raise SampleError(f"{manifest.sample_id}: duplicate BEV cells in sample")

    coords = torch.from_numpy(manifest.tensor("image_coords").astype(np.float32))
    cls_target = torch.from_numpy(manifest.tensor("cls_target").astype(np.float32))
    reg_target = torch.from_numpy(manifest.tensor("reg_target").astype(np.float32))
    pos_mask = (cls_target == 1.0).any(dim=0)
    num_pos = int((cls_target == 1.0).sum().item())

    sample = {
        "sample_id": manifest.sample_id,
        "features": features,
        "bev_indices": cells,
        "image_coords": coords,
        "grid_shape": (n_y_in, n_x_in),
        "cls_target": cls_target,
        "reg_target": reg_target,
        "pos_mask": pos_mask,
        "num_pos": num_pos,
        "grid": dict(grid),
    }
    if "image" in manifest.tensors:
        image = manifest.tensor("image").astype(np.float32) / 255.0 - 0.5
        sample["image"] = torch.from_numpy(image).permute(2, 0, 1).contiguous()
    if torch.isnan(coords).any():
        sample["has_unprojected"] = True
    return sample


def load_dataset(manifest_dir) -> list[dict]:
    manifests = load_manifest_dir(Path(manifest_dir))
    if not manifests:
        raise SampleError(f"no manifests under {manifest_dir}")
    return [load_sample(m) for m in manifests]
