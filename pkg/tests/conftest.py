"""Shared synthetic-scene fixtures: a KITTI-style rig, clouds, labels, files."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pytest

from bevkit.augment import save_image
from bevkit.geometry import Calibration
from bevkit.kitti import (CLASS_NAMES, GroundTruthObject, PointCloud,
                          object_to_camera_frame, write_velodyne)

IMAGE_W, IMAGE_H = 512, 320
FOCAL, CX, CY = 380.0, 256.0, 160.0


def kitti_rotation() -> np.ndarray:
    """Canonical LiDAR->camera axis map: (x, y, z) -> (-y, -z, x)."""
    return np.array([[0.0, -1.0, 0.0],
                     [0.0, 0.0, -1.0],
                     [1.0, 0.0, 0.0]])


def make_calibration(yaw: float = 0.0, tx: float = 0.0,
                     image_w: int = IMAGE_W, image_h: int = IMAGE_H) -> Calibration:
    """KITTI-style rig; `yaw` rotates the rectification about the camera y axis."""
    velo_to_cam = np.eye(4)
    velo_to_cam[:3, :3] = kitti_rotation()
    velo_to_cam[:3, 3] = [-0.06, -0.08, -0.27]
    rect = np.eye(4)
    c, s = math.cos(yaw), math.sin(yaw)
    rect[:3, :3] = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    proj = np.array([[FOCAL, 0.0, CX, tx],
                     [0.0, FOCAL, CY, 0.0],
                     [0.0, 0.0, 1.0, 0.0]])
    return Calibration(velo_to_cam, rect, proj, image_w, image_h)


def random_frustum_cloud(rng: np.random.Generator, n: int = 2000) -> PointCloud:
    """Points roughly inside the camera frustum and the BEV search space."""
    x = rng.uniform(4.0, 45.0, n)
    y = rng.uniform(-0.5, 0.5, n) * x
    z = rng.uniform(-1.5, 1.0, n)
    refl = rng.uniform(0.0, 1.0, n)
    return PointCloud(np.stack([x, y, z], axis=1), refl)


def ring_cloud(num_rings: int = 64, per_ring: int = 40,
               elev_lo: float = -0.42, elev_hi: float = 0.06,
               radius: float = 12.0) -> tuple[PointCloud, np.ndarray]:
    """Cloud on exact elevation rings; returns (cloud, true ring index per point)."""
    elevations = np.linspace(elev_lo, elev_hi, num_rings)
    azimuths = np.linspace(-0.45, 0.45, per_ring)
    pts, rings = [], []
    for i, e in enumerate(elevations):
        for a in azimuths:
            pts.append([radius * math.cos(e) * math.cos(a),
                        radius * math.cos(e) * math.sin(a),
                        radius * math.sin(e)])
            rings.append(i)
    return PointCloud(np.array(pts)), np.array(rings, dtype=np.int64)


_CLASS_DIMS = {0: (1.6, 1.7, 4.0), 1: (1.75, 0.6, 0.8), 2: (1.7, 0.6, 1.8)}


def random_labels(rng: np.random.Generator, n: int,
                  class_ids=None) -> list[GroundTruthObject]:
    labels = []
    for i in range(n):
        class_id = int(rng.integers(0, 3)) if class_ids is None else class_ids[i % len(class_ids)]
        h, w, l = _CLASS_DIMS[class_id]
        scale = rng.uniform(0.9, 1.1)
        x = rng.uniform(8.0, 40.0)
        labels.append(GroundTruthObject(
            class_id, x, float(rng.uniform(-0.35, 0.35) * x), float(rng.uniform(-1.0, 0.3)),
            h * scale, w * scale, l * scale, float(rng.uniform(-math.pi, math.pi))))
    return labels


def object_surface_points(rng: np.random.Generator, obj: GroundTruthObject,
                          n: int = 90) -> np.ndarray:
    """Uniform points inside the oriented box, densest evidence for detectors."""
    local = rng.uniform(-0.5, 0.5, (n, 3)) * np.array([obj.l, obj.w, obj.h])
    c, s = math.cos(obj.theta), math.sin(obj.theta)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return local @ rot.T + np.array([obj.x, obj.y, obj.z])


_CLASS_COLORS = np.array([[220, 60, 40], [40, 200, 70], [60, 120, 230]], dtype=np.uint8)


def scene_image(calib: Calibration, labels: list[GroundTruthObject],
                rng: np.random.Generator) -> np.ndarray:
    """Gradient background plus a colored patch at each label's projection."""
    h, w = calib.image_height, calib.image_width
    yy, xx = np.mgrid[0:h, 0:w]
    image = np.stack([40 + 40 * yy / h, 60 + 50 * xx / w, 90 - 30 * yy / h],
                     axis=-1).astype(np.uint8)
    noise = rng.integers(0, 12, size=image.shape, dtype=np.uint8)
    image = np.clip(image.astype(np.int32) + noise, 0, 255).astype(np.uint8)
    for obj in labels:
        pixels, valid = calib.project_points(np.array([[obj.x, obj.y, obj.z]]))
        if not valid[0]:
            continue
        px, py = pixels[0]
        half = max(4, int(round(calib.projection[0, 0] * obj.l / (2.0 * obj.x))))
        x0, x1 = max(0, int(px) - half), min(w, int(px) + half)
        y0, y1 = max(0, int(py) - half), min(h, int(py) + half)
        image[y0:y1, x0:x1] = _CLASS_COLORS[obj.class_id]
    return image


def format_label_line(obj: GroundTruthObject, calib: Calibration,
                      name: str | None = None) -> str:
    location, h, w, l, ry = object_to_camera_frame(obj, calib)
    name = name or CLASS_NAMES[obj.class_id]
    fields = [name, "0.0", "0", "0.0", "0", "0", "50", "50",
              f"{h:.12g}", f"{w:.12g}", f"{l:.12g}",
              f"{location[0]:.12g}", f"{location[1]:.12g}", f"{location[2]:.12g}",
              f"{ry:.12g}"]
    return " ".join(fields)


def write_calib_file(calib: Calibration, path: Path) -> None:
    def row(m):
        return " ".join(f"{v:.12g}" for v in np.asarray(m).reshape(-1))

    zeros = " ".join(["0"] * 12)
    path.write_text(
        f"P0: {zeros}\nP1: {zeros}\n"
        f"P2: {row(calib.projection)}\n"
        f"P3: {zeros}\n"
        f"R0_rect: {row(calib.rectification[:3, :3])}\n"
        f"Tr_velo_to_cam: {row(calib.velo_to_cam[:3, :])}\n")


def write_kitti_sample(root: Path, sample_id: str, cloud: PointCloud,
                       labels: list[GroundTruthObject], calib: Calibration,
                       image: np.ndarray, extra_label_lines: list[str] | None = None) -> None:
    for sub in ("velodyne", "image_2", "calib", "label_2"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    write_velodyne(cloud, root / "velodyne" / f"{sample_id}.bin")
    save_image(image, root / "image_2" / f"{sample_id}.png")
    write_calib_file(calib, root / "calib" / f"{sample_id}.txt")
    lines = [format_label_line(obj, calib) for obj in labels]
    lines += extra_label_lines or []
    (root / "label_2" / f"{sample_id}.txt").write_text("".join(l + "\n" for l in lines))


def build_fixture_dataset(root: Path, n_samples: int = 5, seed: int = 99,
                          labels_per_sample: int = 3) -> list[list[GroundTruthObject]]:
    """A small deterministic KITTI-layout dataset; returns the labels per sample."""
    rng = np.random.default_rng(seed)
    calib = make_calibration()
    all_labels = []
    for i in range(n_samples):
        labels = random_labels(rng, labels_per_sample)
        cloud = random_frustum_cloud(rng, 2500)
        cluster = np.vstack([object_surface_points(rng, obj) for obj in labels])
        merged = PointCloud(np.vstack([cloud.points, cluster]),
                            np.concatenate([cloud.reflectance,
                                            np.full(len(cluster), 0.5)]))
        image = scene_image(calib, labels, rng)
        extra = ["DontCare -1 -1 -10 0 0 0 0 -1 -1 -1 -1000 -1000 -1000 -10"] if i == 0 else None
        write_kitti_sample(root, f"{i:06d}", merged, labels, calib, image, extra)
        all_labels.append(labels)
    return all_labels


@pytest.fixture
def rig() -> Calibration:
    return make_calibration()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
