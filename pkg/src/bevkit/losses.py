"""Framework-free reference losses with analytic gradients.

These are the golden oracles for any trained implementation: a pixel-wise
focal loss over the class heatmaps and a smooth-L1 regression loss over the
positive voxels, combined as a weighted sum. Probabilities are taken as
inputs; squashing logits is the caller's concern.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exchange import TensorRecord, _atomic_write, write_tensor
from .geometry import ContractViolation
from .targets import TargetMaps

FOCAL_ALPHA = 2.0
FOCAL_BETA = 4.0
GAMMA_CLS = 1.0
GAMMA_REG = 1.0
PROB_EPS = 1e-7


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    cls: float
    reg: float
    gamma_cls: float
    gamma_reg: float
    num_pos: int


def clamp_probabilities(pred: np.ndarray, eps: float = PROB_EPS) -> np.ndarray:
    """Clamp predictions to [eps, 1 - eps] so the focal logs stay finite."""
    return np.clip(pred, eps, 1.0 - eps)


def focal_loss(pred: np.ndarray, gt: np.ndarray, alpha: float = FOCAL_ALPHA,
               beta: float = FOCAL_BETA, num_pos: int = 1) -> tuple[float, np.ndarray]:
    """Pixel-wise focal loss and its gradient with respect to the predictions.

    Cells where the ground truth is exactly 1 are positives; everywhere else
    the Gaussian tail value down-weights the penalty. The sum is normalized
    by max(num_pos, 1).
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ContractViolation(f"shape mismatch: {pred.shape} vs {gt.shape}")
    if np.any(pred <= 0.0) or np.any(pred >= 1.0):
        raise ContractViolation("predictions must lie strictly inside (0, 1)")
    norm = max(int(num_pos), 1)
    positive = gt == 1.0

    log_p = np.log(pred)
    log_not_p = np.log1p(-pred)
    one_minus = 1.0 - pred
    pos_term = one_minus**alpha * (-log_p)
    neg_weight = (1.0 - gt) ** beta
    neg_term = neg_weight * pred**alpha * (-log_not_p)
    value = float(np.where(positive, pos_term, neg_term).sum() / norm)

    pos_grad = alpha * one_minus ** (alpha - 1.0) * log_p - one_minus**alpha / pred
    neg_grad = neg_weight * (alpha * pred ** (alpha - 1.0) * (-log_not_p)
                             + pred**alpha / one_minus)
    grad = np.where(positive, pos_grad, neg_grad) / norm
    return value, grad


def smooth_l1(x):
    """Smooth L1 value and derivative, elementwise: quadratic inside |x| < 1."""
    x = np.asarray(x, dtype=np.float64)
    small = np.abs(x) < 1.0
    value = np.where(small, 0.5 * x * x, np.abs(x) - 0.5)
    deriv = np.where(small, x, np.sign(x))
    if value.ndim == 0:
        return float(value), float(deriv)
    return value, deriv


def reg_loss(pred_reg: np.ndarray, targets: TargetMaps) -> tuple[float, np.ndarray]:
    """Smooth-L1 loss over positive voxels, normalized by their count.

    The gradient is zero off the positive mask, so values predicted there are
    irrelevant.
    """
    pred_reg = np.asarray(pred_reg, dtype=np.float64)
    if pred_reg.shape != targets.reg.shape:
        raise ContractViolation(f"shape mismatch: {pred_reg.shape} vs {targets.reg.shape}")
    norm = max(int(targets.num_pos), 1)
    mask = targets.pos_mask[None, :, :]
    value, deriv = smooth_l1(targets.reg - pred_reg)
    total = float(np.where(mask, value, 0.0).sum() / norm)
    grad = np.where(mask, -deriv, 0.0) / norm
    return total, grad


def total_loss(pred_cls: np.ndarray, pred_reg: np.ndarray, targets: TargetMaps,
               gamma_cls: float = GAMMA_CLS, gamma_reg: float = GAMMA_REG,
               alpha: float = FOCAL_ALPHA, beta: float = FOCAL_BETA,
               ) -> tuple[LossBreakdown, np.ndarray, np.ndarray]:
    """Weighted sum of the two losses; returns the breakdown and both gradients."""
    cls_value, cls_grad = focal_loss(pred_cls, targets.cls, alpha, beta, targets.num_pos)
    reg_value, reg_grad = reg_loss(pred_reg, targets)
    breakdown = LossBreakdown(
        total=gamma_cls * cls_value + gamma_reg * reg_value,
        cls=cls_value, reg=reg_value,
        gamma_cls=gamma_cls, gamma_reg=gamma_reg,
        num_pos=max(int(targets.num_pos), 1),
    )
    return breakdown, gamma_cls * cls_grad, gamma_reg * reg_grad


def random_target_maps(rng: np.random.Generator, n_classes: int = 3,
                       n_y: int = 16, n_x: int = 16, num_peaks: int = 4) -> TargetMaps:
    """Synthetic TargetMaps with exactly-1 peaks, for fixtures and gradient checks."""
    cls = rng.uniform(0.0, 0.95, size=(n_classes, n_y, n_x))
    reg = np.zeros((3, n_y, n_x))
    pos_mask = np.zeros((n_y, n_x), dtype=bool)
    pairs = set()
    while len(pairs) < num_peaks:
        pairs.add((int(rng.integers(n_classes)), int(rng.integers(n_x)),
                   int(rng.integers(n_y))))
    for c, u, v in pairs:
        cls[c, v, u] = 1.0
        pos_mask[v, u] = True
        reg[:, v, u] = rng.uniform(-2.0, 2.0, size=3)
    return TargetMaps(cls, reg, pos_mask, num_pos=len(pairs))


def write_loss_fixtures(out_dir, count: int = 20, seed: int = 7,
                        shape: tuple[int, int, int] = (3, 16, 16)) -> list[Path]:
    """Emit golden (inputs, losses, gradients) fixtures for cross-checking trainers.

    Each fixture is a JSON index naming its tensor files and the expected
    scalar losses; tensors are stored in the exchange container format.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    n_classes, n_y, n_x = shape
    written = []
    for i in range(count):
        targets = random_target_maps(rng, n_classes, n_y, n_x,
                                     num_peaks=int(rng.integers(1, 6)))
        pred_cls = clamp_probabilities(rng.uniform(0.0, 1.0, size=(n_classes, n_y, n_x)))
        pred_reg = rng.uniform(-3.0, 3.0, size=(3, n_y, n_x))
        breakdown, grad_cls, grad_reg = total_loss(pred_cls, pred_reg, targets)

        stem = f"fixture_{i:03d}"
        tensors = {
            "pred_cls": pred_cls, "pred_reg": pred_reg,
            "cls_target": targets.cls, "reg_target": targets.reg,
            "grad_cls": grad_cls, "grad_reg": grad_reg,
        }
        for role, arr in tensors.items():
            write_tensor(TensorRecord(role, arr.astype("<f8")),
                         out_dir / f"{stem}.{role}.tensor")
        index = {
            "tensors": {role: f"{stem}.{role}.tensor" for role in tensors},
            "loss": {"total": breakdown.total, "cls": breakdown.cls, "reg": breakdown.reg},
            "params": {"alpha": FOCAL_ALPHA, "beta": FOCAL_BETA,
                       "gamma_cls": breakdown.gamma_cls, "gamma_reg": breakdown.gamma_reg,
                       "num_pos": breakdown.num_pos},
        }
        path = out_dir / f"{stem}.json"
        _atomic_write(path, (json.dumps(index, sort_keys=True, indent=2) + "\n").encode())
        written.append(path)
    return written
