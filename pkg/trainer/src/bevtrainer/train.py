"""Training loop: Adam with a one-cycle schedule over full-batch steps."""

from __future__ import annotations

import json
import math
import time
from pathlib import Path

import torch

from .config import TrainConfig
from .data import load_dataset
from .losses import total_loss
from .model import ProposalNetwork, build_network


class TrainingAborted(RuntimeError):
    pass


def _batch_loss(model: ProposalNetwork, samples: list[dict]):
    cls_logits, reg = model(samples)
    cls_probs = torch.sigmoid(cls_logits)
    total = cls_sum = reg_sum = 0.0
    for i, sample in enumerate(samples):
        loss, cls_part, reg_part = total_loss(
            cls_probs[i], reg[i], sample["cls_target"], sample["reg_target"],
            sample["pos_mask"], sample["num_pos"])
        total = total + loss
        cls_sum = cls_sum + cls_part
        reg_sum = reg_sum + reg_part
    n = len(samples)
    return total / n, cls_sum / n, reg_sum / n


def train(manifest_dir, out_dir, cfg: TrainConfig, batch_size: int | None = None,
          log=print) -> dict:
    """Fit the network on the manifests; writes checkpoint.pt and trace.json.

    Returns the loss trace. Aborts with the offending sample ids if the loss
    goes non-finite.
    """
    torch.manual_seed(cfg.seed)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(manifest_dir)
    if batch_size is None:
        batch_size = len(dataset)
    model = build_network(cfg.network)
    model.train()
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.max_lr / 25.0)
    steps_per_epoch = math.ceil(len(dataset) / batch_size)
    scheduler = torch.optim.lr_scheduler.OneCycleLR(
        optimizer, max_lr=cfg.max_lr, epochs=cfg.epochs,
        steps_per_epoch=steps_per_epoch)

    trace = {"epochs": [], "loss": [], "cls": [], "reg": [], "lr": [],
             "max_lr": cfg.max_lr}
    start = time.time()
    for epoch in range(cfg.epochs):
        epoch_loss = epoch_cls = epoch_reg = 0.0
        for lo in range(0, len(dataset), batch_size):
            batch = dataset[lo:lo + batch_size]
            optimizer.zero_grad()
            loss, cls_part, reg_part = _batch_loss(model, batch)
            if not torch.isfinite(loss):
                ids = [s["sample_id"] for s in batch]
                raise TrainingAborted(f"non-finite loss at epoch {epoch} on {ids}")
            loss.backward()
            optimizer.step()
            scheduler.step()
            epoch_loss += float(loss.detach()) * len(batch)
            epoch_cls += float(cls_part.detach()) * len(batch)
            epoch_reg += float(reg_part.detach()) * len(batch)
        trace["epochs"].append(epoch)
        trace["loss"].append(epoch_loss / len(dataset))
        trace["cls"].append(epoch_cls / len(dataset))
        trace["reg"].append(epoch_reg / len(dataset))
        trace["lr"].append(optimizer.param_groups[0]["lr"])
        if epoch % 10 == 0 or epoch == cfg.epochs - 1:
            log(f"epoch {epoch:4d} | loss {trace['loss'][-1]:.4f}"
                f" (cls {trace['cls'][-1]:.4f} reg {trace['reg'][-1]:.4f})"
                f" | lr {trace['lr'][-1]:.2e} | {time.time() - start:.0f}s")

    recalibrate_batchnorm(model, dataset, batch_size)
    checkpoint = {"state_dict": model.state_dict(),
                  "network": cfg.network.to_dict(),
                  "final_loss": trace["loss"][-1]}
    torch.save(checkpoint, out_dir / "checkpoint.pt")
    (out_dir / "trace.json").write_text(json.dumps(trace, indent=2) + "\n")
    return trace


@torch.no_grad()
def recalibrate_batchnorm(model, dataset, batch_size) -> None:
    """Rebuild BN running statistics from the data so eval matches training.

    Scattered BEV maps are overwhelmingly zero, which makes exponentially
    averaged statistics drift from the final batch statistics; a cumulative
    pass over the dataset pins them down.
    """
    bn_layers = [m for m in model.modules() if isinstance(m, torch.nn.BatchNorm2d)]
    for bn in bn_layers:
        bn.reset_running_stats()
        bn.momentum = None  # cumulative average
    model.train()
    for lo in range(0, len(dataset), batch_size):
        model(dataset[lo:lo + batch_size])
    for bn in bn_layers:
        bn.momentum = 0.1
    model.eval()


def load_checkpoint(path) -> ProposalNetwork:
    from .config import NetworkConfig

    checkpoint = torch.load(path, map_location="cpu", weights_only=False)
    model = build_network(NetworkConfig(**checkpoint["network"]))
    model.load_state_dict(checkpoint["state_dict"])
    model.eval()
    return model
