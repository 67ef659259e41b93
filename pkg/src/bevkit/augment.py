"""Training-time augmentations for resolution robustness.

All randomness flows through an RngStream derived from (seed, sample index),
so every augmentation is bit-reproducible and samples can be processed
concurrently without coordination. Draw order within each operation is fixed
and documented where it matters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

from .geometry import Calibration, ConfigurationError, ContractViolation, wrap_angle
from .kitti import GroundTruthObject, PointCloud

PATCH_WIDTH = 256
PATCH_HEIGHT = 256
JITTER_RANGE = (0.8, 1.2)

# ITU-R 601 luma weights, used for contrast and saturation.
_LUMA = np.array([0.299, 0.587, 0.114])


class RngStream:
    """Deterministic random stream keyed by (seed, sample_index)."""

    def __init__(self, seed: int, sample_index: int = 0):
        self.seed = int(seed)
        self.sample_index = int(sample_index)
        ss = np.random.SeedSequence(entropy=self.seed & (2**64 - 1),
                                    spawn_key=(self.sample_index,))
        self.gen = np.random.default_rng(ss)


@dataclass(frozen=True)
class CropRect:
    """An axis-aligned pixel rectangle, top-left anchored."""

    x0: int
    y0: int
    width: int
    height: int

    def contains(self, px: float, py: float) -> bool:
        return (self.x0 <= px < self.x0 + self.width
                and self.y0 <= py < self.y0 + self.height)


def load_image(path) -> np.ndarray:
    """Read an 8-bit RGB PNG into an (H, W, 3) uint8 array."""
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def save_image(image: np.ndarray, path) -> None:
    Image.fromarray(np.asarray(image, dtype=np.uint8), mode="RGB").save(path)


def choose_layers(num_layers: int, keep_fraction: float, rng: RngStream) -> np.ndarray:
    """Pick round(keep_fraction * num_layers) distinct layers, sorted ascending."""
    if not 0.0 < keep_fraction <= 1.0:
        raise ContractViolation(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    count = int(round(keep_fraction * num_layers))
    return np.sort(rng.gen.choice(num_layers, size=count, replace=False))


def keep_layers(cloud: PointCloud, layers) -> PointCloud:
    """Exactly the points whose layer id is in `layers`, input order preserved."""
    if cloud.layer_id is None:
        raise ContractViolation("cloud has no layer ids; run estimate_layers first")
    return cloud.select(np.isin(cloud.layer_id, np.asarray(layers)))


def drop_layers(cloud: PointCloud, keep_fraction: float, rng: RngStream) -> PointCloud:
    """Randomly keep a fraction of the cloud's layers (layer-drop augmentation)."""
    if cloud.layer_id is None:
        raise ContractViolation("cloud has no layer ids; run estimate_layers first")
    num_layers = cloud.num_layers or int(cloud.layer_id.max()) + 1
    return keep_layers(cloud, choose_layers(num_layers, keep_fraction, rng))


def stride_layer_subset(cloud: PointCloud, target_count: int) -> tuple[PointCloud, np.ndarray]:
    """Deterministically keep ~target_count layers: indices divisible by the stride.

    The stride is num_layers / target_count, rounded to the nearest integer
    when it does not divide evenly. Returns the reduced cloud and the kept
    layer indices.
    """
    if cloud.layer_id is None:
        raise ContractViolation("cloud has no layer ids; run estimate_layers first")
    num_layers = cloud.num_layers or int(cloud.layer_id.max()) + 1
    if not 1 <= target_count <= num_layers:
        raise ContractViolation(f"target_count must be in [1, {num_layers}]")
    stride = max(1, int(round(num_layers / target_count)))
    layers = np.arange(0, num_layers, stride)
    return keep_layers(cloud, layers), layers


def uniform_subsample(cloud: PointCloud, keep_fraction: float, rng: RngStream) -> PointCloud:
    """Keep a uniformly random subset of exactly round(keep_fraction * N) points."""
    if not 0.0 < keep_fraction <= 1.0:
        raise ContractViolation(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    n = len(cloud)
    count = int(round(keep_fraction * n))
    idx = np.sort(rng.gen.choice(n, size=count, replace=False))
    return cloud.select(idx)


def select_crop(labels: list[GroundTruthObject], calib: Calibration, rng: RngStream,
                patch_width: int = PATCH_WIDTH, patch_height: int = PATCH_HEIGHT) -> CropRect:
    """Choose a patch rectangle focused on scene content.

    When labels project inside the image, one is picked with probability
    proportional to the inverse of its 3D volume (small targets are rare and
    hard, so they get more attention), the rect is centered on its projected
    center, shifted by a uniform offset up to a quarter patch on each axis
    (keeping the center inside), and clamped into the image. Without usable
    labels the rect is uniform over all valid positions.

    Draw order: label choice, x offset, y offset; or x0, y0 for the
    label-free fallback.
    """
    img_w, img_h = calib.image_width, calib.image_height
    if img_w < patch_width or img_h < patch_height:
        raise ConfigurationError(f"image {img_w}x{img_h} smaller than patch")
    candidates: list[tuple[float, float, float]] = []  # (px, py, weight)
    for obj in labels:
        pixels, valid = calib.project_points(np.array([[obj.x, obj.y, obj.z]]))
        if valid[0]:
            candidates.append((pixels[0, 0], pixels[0, 1], 1.0 / (obj.h * obj.w * obj.l)))
    if not candidates:
        x0 = int(rng.gen.integers(0, img_w - patch_width + 1))
        y0 = int(rng.gen.integers(0, img_h - patch_height + 1))
        return CropRect(x0, y0, patch_width, patch_height)
    weights = np.array([c[2] for c in candidates])
    pick = int(rng.gen.choice(len(candidates), p=weights / weights.sum()))
    px, py, _ = candidates[pick]
    off_x = rng.gen.uniform(-patch_width / 4.0, patch_width / 4.0)
    off_y = rng.gen.uniform(-patch_height / 4.0, patch_height / 4.0)
    x0 = int(round(px - patch_width / 2.0 + off_x))
    y0 = int(round(py - patch_height / 2.0 + off_y))
    x0 = min(max(x0, 0), img_w - patch_width)
    y0 = min(max(y0, 0), img_h - patch_height)
    rect = CropRect(x0, y0, patch_width, patch_height)
    assert rect.contains(px, py)
    return rect


def apply_crop(image: np.ndarray, cloud: PointCloud, calib: Calibration,
               rect: CropRect) -> tuple[np.ndarray, PointCloud, Calibration]:
    """Crop the image, discard points projecting outside the rect, fix the calibration.

    The adjusted calibration shifts the principal point by (-x0, -y0) so the
    surviving points reproject into [0, width) x [0, height).
    """
    if not (0 <= rect.x0 and rect.x0 + rect.width <= calib.image_width
            and 0 <= rect.y0 and rect.y0 + rect.height <= calib.image_height):
        raise ContractViolation("crop rect extends outside the image")
    cropped = image[rect.y0:rect.y0 + rect.height, rect.x0:rect.x0 + rect.width]
    pixels, _ = calib.project_points(cloud.points)
    with np.errstate(invalid="ignore"):
        keep = ((pixels[:, 0] >= rect.x0) & (pixels[:, 0] < rect.x0 + rect.width)
                & (pixels[:, 1] >= rect.y0) & (pixels[:, 1] < rect.y0 + rect.height))
    adjusted = calib.shifted(-rect.x0, -rect.y0, rect.width, rect.height)
    return cropped, cloud.select(keep), adjusted


def flip_horizontal(image: np.ndarray, cloud: PointCloud, calib: Calibration,
                    labels: list[GroundTruthObject]):
    """Mirror the full sample: image columns, LiDAR y, label y and heading, calibration."""
    flipped_cloud = PointCloud(cloud.points * np.array([1.0, -1.0, 1.0]),
                               cloud.reflectance, cloud.layer_id, cloud.num_layers)
    flipped_labels = [
        GroundTruthObject(o.class_id, o.x, -o.y, o.z, o.h, o.w, o.l, wrap_angle(-o.theta))
        for o in labels
    ]
    return image[:, ::-1].copy(), flipped_cloud, calib.flipped_horizontal(), flipped_labels


def horizontal_flip(image: np.ndarray, cloud: PointCloud, calib: Calibration,
                    labels: list[GroundTruthObject], rng: RngStream):
    """Apply flip_horizontal with probability one half.

    Returns (image, cloud, calibration, labels, applied).
    """
    if rng.gen.uniform() < 0.5:
        return (*flip_horizontal(image, cloud, calib, labels), True)
    return image, cloud, calib, labels, False


def apply_color_jitter(image: np.ndarray, brightness: float, contrast: float,
                       saturation: float) -> np.ndarray:
    """Scale brightness, contrast and saturation in that order on 8-bit RGB.

    Contrast blends against the mean luma of the image, saturation against
    the per-pixel luma. Values are clamped to [0, 255] after each step.
    """
    img = np.asarray(image, dtype=np.float64)
    img = np.clip(img * brightness, 0.0, 255.0)
    mean_luma = float((img @ _LUMA).mean())
    img = np.clip((img - mean_luma) * contrast + mean_luma, 0.0, 255.0)
    luma = (img @ _LUMA)[..., None]
    img = np.clip((img - luma) * saturation + luma, 0.0, 255.0)
    return np.round(img).astype(np.uint8)


def color_jitter(image: np.ndarray, rng: RngStream) -> tuple[np.ndarray, tuple[float, float, float]]:
    """Randomized apply_color_jitter; returns the image and the drawn factors.

    Draw order: brightness, contrast, saturation, each uniform in [0.8, 1.2].
    """
    lo, hi = JITTER_RANGE
    factors = tuple(float(rng.gen.uniform(lo, hi)) for _ in range(3))
    return apply_color_jitter(image, *factors), factors
