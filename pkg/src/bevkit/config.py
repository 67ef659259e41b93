"""Pipeline configuration with the global defaults of the method.

Every field has the documented default, so an empty config file (or none at
all) reproduces the reference setup; JSON files and CLI flags override
individual fields. The effective configuration is echoed into output
manifests for provenance.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .geometry import GridSpec

ENV_SEED = "AGNO_SEED"


@dataclass
class PipelineConfig:
    # search space and grids
    x_min: float = 0.0
    x_max: float = 50.0
    y_min: float = -25.0
    y_max: float = 25.0
    s_x_in: float = 0.0625
    s_y_in: float = 0.0625
    s_x_out: float = 0.25
    s_y_out: float = 0.25
    # ingestion
    num_layers: int = 64
    # augmentation
    augment: bool = False
    keep_fraction_range: tuple[float, float] = (0.2, 0.4)
    patch_width: int = 256
    patch_height: int = 256
    jitter_range: tuple[float, float] = (0.8, 1.2)
    # voxel encoding: drop voxels whose main point misses the image (fusion
    # variants); the LiDAR-only variant keeps them
    require_in_image: bool = True
    # losses
    alpha: float = 2.0
    beta: float = 4.0
    gamma_cls: float = 1.0
    gamma_reg: float = 1.0
    # decoding
    top_k: int = 20
    neighborhood: int = 3
    side_floor: float = 0.1
    # evaluation
    iou_thresh: float = 0.5
    # reproducibility and execution
    seed: int = 0
    workers: int = 1

    def grid_in(self) -> GridSpec:
        return GridSpec(self.x_min, self.x_max, self.y_min, self.y_max,
                        self.s_x_in, self.s_y_in)

    def grid_out(self) -> GridSpec:
        return GridSpec(self.x_min, self.x_max, self.y_min, self.y_max,
                        self.s_x_out, self.s_y_out)

    def to_dict(self) -> dict:
        body = dataclasses.asdict(self)
        body["keep_fraction_range"] = list(self.keep_fraction_range)
        body["jitter_range"] = list(self.jitter_range)
        return body

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "PipelineConfig":
        """Defaults, then the JSON file, then explicit overrides, then AGNO_SEED.

        The environment seed applies only when neither file nor overrides set
        one.
        """
        body: dict = {}
        if path is not None:
            body.update(json.loads(Path(path).read_text()))
        if overrides:
            body.update({k: v for k, v in overrides.items() if v is not None})
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(body) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "seed" not in body and ENV_SEED in os.environ:
            body["seed"] = int(os.environ[ENV_SEED])
        for key in ("keep_fraction_range", "jitter_range"):
            if key in body:
                body[key] = tuple(body[key])
        return cls(**body)
