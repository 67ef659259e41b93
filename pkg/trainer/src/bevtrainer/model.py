"""Two-branch proposal network: image pyramid, voxel fusion, BEV pyramid.

The image branch extracts a pyramid from the RGB patch, merges it into one
feature map, upsamples by four and samples it at each voxel's main-point
projection. Sampled image features and/or raw voxel statistics pass through
a small per-voxel linear stage, are scattered onto the fine BEV grid, and a
second pyramid with classification and regression heads produces the output
maps at a quarter of the BEV resolution.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .config import NetworkConfig


class BasicBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(c_out)
        self.down = None
        if stride != 1 or c_in != c_out:
            self.down = nn.Sequential(nn.Conv2d(c_in, c_out, 1, stride, bias=False),
                                      nn.BatchNorm2d(c_out))

    def forward(self, x):
        identity = x if self.down is None else self.down(x)
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + identity)


def _res_stage(c_in: int, c_out: int, stride: int) -> nn.Sequential:
    return nn.Sequential(BasicBlock(c_in, c_out, stride), BasicBlock(c_out, c_out))


class FpnCore(nn.Module):
    """Base + four residual stages + top-down concatenation pyramid.

    Returns maps at 1/16, 1/8 and 1/4 of the input with 4C, 2C and C
    channels for base width C.
    """

    def __init__(self, c_in: int, base: int):
        super().__init__()
        self.stem = nn.Sequential(
            nn.Conv2d(c_in, base, 7, 2, 3, bias=False),
            nn.BatchNorm2d(base), nn.ReLU(inplace=True),
            nn.MaxPool2d(3, 2, 1))
        self.res1 = _res_stage(base, base, 1)        # 1/4
        self.res2 = _res_stage(base, 2 * base, 2)    # 1/8
        self.res3 = _res_stage(2 * base, 4 * base, 2)  # 1/16
        self.res4 = _res_stage(4 * base, 8 * base, 2)  # 1/32
        self.lateral16 = nn.Conv2d(12 * base, 4 * base, 1)
        self.lateral8 = nn.Conv2d(6 * base, 2 * base, 1)
        self.lateral4 = nn.Conv2d(3 * base, base, 1)

    @staticmethod
    def _up_to(x, ref):
        # size-targeted so odd intermediate resolutions still align
        return F.interpolate(x, size=ref.shape[-2:], mode="nearest")

    def forward(self, x):
        c4 = self.res1(self.stem(x))
        c8 = self.res2(c4)
        c16 = self.res3(c8)
        c32 = self.res4(c16)
        out16 = self.lateral16(torch.cat([self._up_to(c32, c16), c16], dim=1))
        out8 = self.lateral8(torch.cat([self._up_to(out16, c8), c8], dim=1))
        out4 = self.lateral4(torch.cat([self._up_to(out8, c4), c4], dim=1))
        return out16, out8, out4


class FpnHead(nn.Module):
    """Per-scale conv stacks merged into one map at 1/4 scale."""

    def __init__(self, channels: tuple[int, int, int], mid: int, c_task: int,
                 merge: str):
        super().__init__()
        self.merge = merge
        self.branches = nn.ModuleList([
            nn.Sequential(nn.Conv2d(c, mid, 3, 1, 1),
                          nn.ReLU(inplace=True),
                          nn.Conv2d(mid, c_task, 1))
            for c in channels
        ])

    def forward(self, maps, return_weights: bool = False):
        out16, out8, out4 = maps
        target = out4.shape[-2:]
        scaled = []
        for branch, feature in zip(self.branches, (out16, out8, out4)):
            y = branch(feature)
            if y.shape[-2:] != target:
                y = F.interpolate(y, size=target, mode="nearest")
            scaled.append(y)
        stack = torch.stack(scaled, dim=0)
        if self.merge == "max":
            merged, _ = stack.max(dim=0)
            weights = None
        else:
            weights = torch.softmax(stack, dim=0)
            merged = (weights * stack).sum(dim=0)
        if return_weights:
            return merged, weights
        return merged


def sample_image_features(feature_map: torch.Tensor, coords: torch.Tensor,
                          bilinear: bool = True) -> torch.Tensor:
    """Sample a (C, H, W) map at continuous pixel coordinates (M, 2)."""
    c, h, w = feature_map.shape
    if bilinear:
        norm = torch.empty_like(coords)
        norm[:, 0] = 2.0 * (coords[:, 0] + 0.5) / w - 1.0
        norm[:, 1] = 2.0 * (coords[:, 1] + 0.5) / h - 1.0
        grid = norm.view(1, 1, -1, 2)
        sampled = F.grid_sample(feature_map.unsqueeze(0), grid,
                                mode="bilinear", align_corners=False)
        return sampled.view(c, -1).t()
    px = coords[:, 0].round().long().clamp(0, w - 1)
    py = coords[:, 1].round().long().clamp(0, h - 1)
    return feature_map[:, py, px].t()


def scatter_to_grid(vectors: torch.Tensor, cells: torch.Tensor,
                    n_x: int, n_y: int) -> torch.Tensor:
    """Place per-voxel vectors (M, C) at their (u, v) cells of a dense grid.

    Cells are unique by the encoder contract, so plain index assignment is
    collision free and order independent.
    """
    c = vectors.shape[1]
    grid = vectors.new_zeros((c, n_y, n_x))
    grid[:, cells[:, 1].long(), cells[:, 0].long()] = vectors.t()
    return grid


class ProposalNetwork(nn.Module):
    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        base = cfg.base_channels
        pyramid_channels = (4 * base, 2 * base, base)
        if cfg.uses_image:
            self.image_core = FpnCore(3, base)
            self.image_head = FpnHead(pyramid_channels, cfg.head_mid_channels,
                                      cfg.rgb_feat_channels, cfg.merge)
        self.linear = nn.Sequential(
            nn.Linear(cfg.linear_in_dim, cfg.linear_channels), nn.ReLU(inplace=True),
            nn.Linear(cfg.linear_channels, cfg.linear_channels), nn.ReLU(inplace=True))
        self.bev_core = FpnCore(cfg.linear_channels, base)
        self.cls_head = FpnHead(pyramid_channels, cfg.head_mid_channels,
                                cfg.n_classes, cfg.merge)
        self.reg_head = FpnHead(pyramid_channels, cfg.head_mid_channels,
                                cfg.reg_channels, cfg.merge)
        # positives are rare: start the class logits near p = 0.01 and keep
        # the initial maps flat so the heads grow peaks instead of taming noise
        for head in (self.cls_head, self.reg_head):
            for branch in head.branches:
                nn.init.normal_(branch[-1].weight, std=0.01)
                nn.init.zeros_(branch[-1].bias)
        for branch in self.cls_head.branches:
            nn.init.constant_(branch[-1].bias, -4.595)

    def image_feature_map(self, image: torch.Tensor) -> torch.Tensor:
        """Merged pyramid features upsampled back to full image resolution."""
        pyramid = self.image_core(image.unsqueeze(0))
        merged = self.image_head(pyramid)
        return F.interpolate(merged, scale_factor=4, mode="bilinear",
                             align_corners=False).squeeze(0)

    def voxel_vectors(self, sample: dict) -> torch.Tensor:
        parts = []
        if self.cfg.uses_image:
            feature_map = self.image_feature_map(sample["image"])
            parts.append(sample_image_features(feature_map, sample["image_coords"],
                                               self.cfg.bilinear_sampling))
        if self.cfg.uses_voxel_features:
            parts.append(sample["features"])
        return self.linear(torch.cat(parts, dim=1))

    def bev_input(self, sample: dict) -> torch.Tensor:
        vectors = self.voxel_vectors(sample)
        n_y, n_x = sample["grid_shape"]
        return scatter_to_grid(vectors, sample["bev_indices"], n_x, n_y)

    def forward(self, samples: list[dict]) -> tuple[torch.Tensor, torch.Tensor]:
        """Samples -> (cls logits, reg) maps at a quarter of the BEV grid."""
        bev = torch.stack([self.bev_input(s) for s in samples])
        pyramid = self.bev_core(bev)
        return self.cls_head(pyramid), self.reg_head(pyramid)


def build_network(cfg: NetworkConfig) -> ProposalNetwork:
    return ProposalNetwork(cfg)
