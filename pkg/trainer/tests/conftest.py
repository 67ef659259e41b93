"""Test harness: synthetic KITTI-layout scenes and pipeline CLI invocation.

The trainer talks to the pipeline only through files and its command line,
so these helpers write velodyne/calib/label/image files with plain numpy and
PIL and shell out to the pipeline for preprocessing, decoding and scoring.
"""

from __future__ import annotations

import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

IMAGE_W, IMAGE_H = 256, 256
FOCAL, CX, CY = 200.0, 128.0, 128.0

# LiDAR (x fwd, y left, z up) -> camera (x right, y down, z fwd)
ROT_VELO_TO_CAM = np.array([[0.0, -1.0, 0.0],
                            [0.0, 0.0, -1.0],
                            [1.0, 0.0, 0.0]])
T_VELO_TO_CAM = np.array([-0.05, -0.07, -0.25])
PROJECTION = np.array([[FOCAL, 0.0, CX, 0.0],
                       [0.0, FOCAL, CY, 0.0],
                       [0.0, 0.0, 1.0, 0.0]])

CLASS_NAMES = ("Car", "Pedestrian", "Cyclist")
# Oversized square-ish footprints at 45 degree yaw: their axis-aligned hulls
# nearly coincide with the decoded diagonal-sided squares (IoU ~0.9+), and
# footprints this large earn multi-cell Gaussian radii, so the toy targets
# are soft enough to overfit within desk-scale budgets.
CLASS_DIMS = {0: (1.6, 9.4, 9.4), 1: (1.7, 9.2, 9.6), 2: (1.65, 9.6, 9.2)}
CLASS_COLORS = np.array([[235, 60, 40], [40, 220, 70], [60, 130, 240]], dtype=np.uint8)

TOY_CONFIG = {"s_x_in": 0.125, "s_y_in": 0.125, "s_x_out": 0.5, "s_y_out": 0.5}


def run_bevkit(*args: str) -> str:
    result = subprocess.run([sys.executable, "-m", "bevkit.cli", *map(str, args)],
                            capture_output=True, text=True)
    if result.returncode != 0:
        raise RuntimeError(f"bevkit {' '.join(map(str, args))} failed:\n"
                           f"{result.stdout}\n{result.stderr}")
    return result.stdout


def project(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    cam = points @ ROT_VELO_TO_CAM.T + T_VELO_TO_CAM
    depth = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        px = FOCAL * cam[:, 0] / depth + CX
        py = FOCAL * cam[:, 1] / depth + CY
    valid = (depth > 0) & (px >= 0) & (px < IMAGE_W) & (py >= 0) & (py < IMAGE_H)
    return np.stack([px, py], axis=1), valid


def ring_ground(rng: np.random.Generator, n_rings: int = 64,
                per_ring: int = 60) -> np.ndarray:
    """Layered ground-and-wall points inside the camera frustum."""
    elevations = np.linspace(-0.32, 0.04, n_rings)
    pts = []
    for e in elevations:
        azimuths = rng.uniform(-0.55, 0.55, per_ring)
        radius = rng.uniform(4.0, 30.0, per_ring)
        pts.append(np.stack([radius * np.cos(e) * np.cos(azimuths),
                             radius * np.cos(e) * np.sin(azimuths),
                             radius * np.sin(e)], axis=1))
    return np.vstack(pts)


def box_cluster(rng: np.random.Generator, obj: dict, n: int = 250) -> np.ndarray:
    """Compact evidence cluster at the object center.

    The cluster is deliberately tighter than the labeled box so the target
    Gaussian window encloses the network's response blob; the labeled box
    still defines the regression side and the evaluation hull.
    """
    local = np.clip(rng.normal(0.0, 0.35, (n, 3)), -0.8, 0.8)
    local[:, 2] = rng.uniform(-0.6, 0.6, n)
    return local + np.array([obj["x"], obj["y"], obj["z"]])


def make_objects(rng: np.random.Generator, count: int = 3) -> list[dict]:
    objects = []
    while len(objects) < count:
        class_id = len(objects) % 3
        h, w, l = CLASS_DIMS[class_id]
        x = float(rng.uniform(9.0, 24.0))
        y = float(rng.uniform(-0.3, 0.3) * x)
        if any(math.hypot(o["x"] - x, o["y"] - y) < 6.0 for o in objects):
            continue
        _, valid = project(np.array([[x, y, -0.8]]))
        if not valid[0]:
            continue
        scale = float(rng.uniform(0.96, 1.08))
        objects.append({"class_id": class_id, "x": x, "y": y, "z": -0.8,
                        "h": h, "w": w * scale, "l": l * scale,
                        "theta": float(rng.choice([-1.0, 1.0])) * math.pi / 4.0})
    return objects


def scene_image(rng: np.random.Generator, objects: list[dict]) -> np.ndarray:
    yy, xx = np.mgrid[0:IMAGE_H, 0:IMAGE_W]
    image = np.stack([30 + 30 * yy / IMAGE_H, 50 + 40 * xx / IMAGE_W,
                      80 - 25 * yy / IMAGE_H], axis=-1).astype(np.int32)
    image += rng.integers(0, 10, image.shape, dtype=np.int32)
    image = np.clip(image, 0, 255).astype(np.uint8)
    for obj in objects:
        pixels, valid = project(np.array([[obj["x"], obj["y"], obj["z"]]]))
        if not valid[0]:
            continue
        px, py = pixels[0]
        half = int(np.clip(round(FOCAL * obj["l"] / (2.0 * obj["x"])), 5, 42))
        x0, x1 = max(0, int(px) - half), min(IMAGE_W, int(px) + half)
        y0, y1 = max(0, int(py) - half), min(IMAGE_H, int(py) + half)
        image[y0:y1, x0:x1] = CLASS_COLORS[obj["class_id"]]
    return image


def heading_to_rotation_y(theta: float) -> float:
    d = ROT_VELO_TO_CAM @ np.array([math.cos(theta), math.sin(theta), 0.0])
    return math.atan2(-d[2], d[0])


def label_line(obj: dict) -> str:
    bottom = np.array([obj["x"], obj["y"], obj["z"] - obj["h"] / 2.0])
    cam = ROT_VELO_TO_CAM @ bottom + T_VELO_TO_CAM
    ry = heading_to_rotation_y(obj["theta"])
    fields = [CLASS_NAMES[obj["class_id"]], "0.0", "0", "0.0", "0", "0", "40", "40",
              f"{obj['h']:.10g}", f"{obj['w']:.10g}", f"{obj['l']:.10g}",
              f"{cam[0]:.10g}", f"{cam[1]:.10g}", f"{cam[2]:.10g}", f"{ry:.10g}"]
    return " ".join(fields)


def calib_text() -> str:
    def row(m):
        return " ".join(f"{v:.10g}" for v in np.asarray(m).reshape(-1))

    velo = np.hstack([ROT_VELO_TO_CAM, T_VELO_TO_CAM.reshape(3, 1)])
    return (f"P2: {row(PROJECTION)}\n"
            f"R0_rect: {row(np.eye(3))}\n"
            f"Tr_velo_to_cam: {row(velo)}\n")


def build_toy_dataset(root: Path, n_samples: int = 10, seed: int = 2025) -> list[list[dict]]:
    rng = np.random.default_rng(seed)
    for sub in ("velodyne", "image_2", "calib", "label_2"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    all_objects = []
    for i in range(n_samples):
        objects = make_objects(rng)
        cloud = np.vstack([ring_ground(rng)] + [box_cluster(rng, o) for o in objects])
        refl = rng.uniform(0, 1, len(cloud))
        data = np.hstack([cloud, refl[:, None]]).astype("<f4")
        (root / "velodyne" / f"{i:06d}.bin").write_bytes(data.tobytes())
        Image.fromarray(scene_image(rng, objects), "RGB").save(
            root / "image_2" / f"{i:06d}.png")
        (root / "calib" / f"{i:06d}.txt").write_text(calib_text())
        (root / "label_2" / f"{i:06d}.txt").write_text(
            "".join(label_line(o) + "\n" for o in objects))
        all_objects.append(objects)
    return all_objects


@pytest.fixture(scope="session")
def toy_workspace(tmp_path_factory):
    """Dataset + toy-grid preprocessed manifests, shared by the slow tests."""
    root = tmp_path_factory.mktemp("toy")
    dataset = root / "dataset"
    build_toy_dataset(dataset, n_samples=10)
    config = root / "config.json"
    config.write_text(json.dumps(TOY_CONFIG))
    processed = root / "processed"
    run_bevkit("preprocess", "--dataset", dataset, "--out", processed,
               "--config", config, "--seed", "1")
    return {"root": root, "dataset": dataset, "config": config,
            "processed": processed}


@pytest.fixture
def rng():
    return np.random.default_rng(7)
