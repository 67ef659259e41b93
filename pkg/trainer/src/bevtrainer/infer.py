"""Inference: write sigmoid class maps and raw regression maps as manifests.

The pipeline's decode and eval commands complete the path from these files
to proposals and average precision.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .data import load_sample
from .io import Manifest, load_manifest_dir, write_tensor
from .model import ProposalNetwork


@torch.no_grad()
def infer_sample(model: ProposalNetwork, sample: dict) -> tuple[np.ndarray, np.ndarray]:
    cls_logits, reg = model([sample])
    cls_probs = torch.sigmoid(cls_logits[0])
    return cls_probs.numpy().astype("<f4"), reg[0].numpy().astype("<f4")


def infer_directory(model: ProposalNetwork, manifest_dir, out_dir,
                    checkpoint_name: str = "", log=print) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for manifest in load_manifest_dir(manifest_dir):
        sample = load_sample(manifest)
        cls_map, reg_map = infer_sample(model, sample)
        sid = manifest.sample_id
        roles = {}
        for role, arr in (("cls_pred", cls_map), ("reg_pred", reg_map)):
            rel = f"{sid}.{role}.tensor"
            write_tensor(role, arr, out_dir / rel)
            roles[role] = rel
        prediction = Manifest(
            sample_id=sid, tensors=roles, grid=dict(manifest.grid),
            provenance={"source_manifest": str(manifest.path),
                        "checkpoint": checkpoint_name,
                        "variant": model.cfg.variant},
        )
        path = out_dir / f"{sid}.json"
        prediction.save(path)
        written.append(path)
    log(f"wrote {len(written)} prediction manifests to {out_dir}")
    return written
