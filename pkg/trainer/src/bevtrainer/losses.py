"""Torch implementations of the training losses.

Semantics mirror the pipeline's reference losses exactly: focal loss over
probability maps with cells equal to one as positives, smooth L1 over the
positive voxels, both normalized by max(num_pos, 1). Validated against the
reference golden fixtures in the test suite.
"""

from __future__ import annotations

import torch

FOCAL_ALPHA = 2.0
FOCAL_BETA = 4.0
GAMMA_CLS = 1.0
GAMMA_REG = 1.0
PROB_EPS = 1e-7


def focal_loss(pred: torch.Tensor, gt: torch.Tensor, alpha: float = FOCAL_ALPHA,
               beta: float = FOCAL_BETA, num_pos: int = 1) -> torch.Tensor:
    pred = pred.clamp(PROB_EPS, 1.0 - PROB_EPS)
    positive = gt == 1.0
    pos_term = (1.0 - pred) ** alpha * (-torch.log(pred))
    neg_term = (1.0 - gt) ** beta * pred**alpha * (-torch.log1p(-pred))
    return torch.where(positive, pos_term, neg_term).sum() / max(int(num_pos), 1)


def smooth_l1(x: torch.Tensor) -> torch.Tensor:
    absx = x.abs()
    return torch.where(absx < 1.0, 0.5 * x * x, absx - 0.5)


def reg_loss(pred_reg: torch.Tensor, target_reg: torch.Tensor,
             pos_mask: torch.Tensor, num_pos: int) -> torch.Tensor:
    residual = smooth_l1(target_reg - pred_reg)
    masked = residual * pos_mask.to(residual.dtype).unsqueeze(0)
    return masked.sum() / max(int(num_pos), 1)


def total_loss(pred_cls_probs: torch.Tensor, pred_reg: torch.Tensor,
               cls_target: torch.Tensor, reg_target: torch.Tensor,
               pos_mask: torch.Tensor, num_pos: int,
               gamma_cls: float = GAMMA_CLS, gamma_reg: float = GAMMA_REG,
               alpha: float = FOCAL_ALPHA, beta: float = FOCAL_BETA):
    cls = focal_loss(pred_cls_probs, cls_target, alpha, beta, num_pos)
    reg = reg_loss(pred_reg, reg_target, pos_mask, num_pos)
    return gamma_cls * cls + gamma_reg * reg, cls, reg
