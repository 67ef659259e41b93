"""Network and training configuration."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

VARIANTS = ("cam3d", "cam", "3d")
MERGE_OPS = ("softmax", "max")


@dataclass
class NetworkConfig:
    """Channel plan and wiring of the two-branch proposal network.

    The full-scale plan: ResNet18-style core with base width 64, pyramid
    outputs 256/128/64 channels at 1/16, 1/8 and 1/4 scale, 64-channel image
    feature head, 64-channel per-voxel linear stage. The toy plan divides
    every width by four.
    """

    variant: str = "cam3d"
    merge: str = "softmax"
    base_channels: int = 64
    rgb_feat_channels: int = 64
    head_mid_channels: int = 64
    linear_channels: int = 64
    voxel_feat_dim: int = 15
    n_classes: int = 3
    reg_channels: int = 3
    bilinear_sampling: bool = True

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.merge not in MERGE_OPS:
            raise ValueError(f"merge must be one of {MERGE_OPS}")

    @classmethod
    def toy(cls, **overrides) -> "NetworkConfig":
        body = dict(base_channels=16, rgb_feat_channels=16,
                    head_mid_channels=16, linear_channels=16)
        body.update(overrides)
        return cls(**body)

    @property
    def uses_image(self) -> bool:
        return self.variant in ("cam3d", "cam")

    @property
    def uses_voxel_features(self) -> bool:
        return self.variant in ("cam3d", "3d")

    @property
    def linear_in_dim(self) -> int:
        dim = 0
        if self.uses_image:
            dim += self.rgb_feat_channels
        if self.uses_voxel_features:
            dim += self.voxel_feat_dim
        return dim

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainConfig:
    epochs: int = 100
    max_lr: float = 0.001
    seed: int = 0
    toy: bool = False
    network: NetworkConfig = field(default_factory=NetworkConfig)

    @classmethod
    def toy_default(cls, **overrides) -> "TrainConfig":
        network = overrides.pop("network", NetworkConfig.toy())
        return cls(epochs=overrides.pop("epochs", 60), toy=True,
                   network=network, **overrides)
