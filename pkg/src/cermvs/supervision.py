"""Dynamic training loss over the per-iteration disparity predictions.

Two exponentially-weighted terms: an L1 disparity error and a capped L1
depth (inverse disparity) error, mixed by a weight that moves from the
first to the second as training progresses. Gradients with respect to every
prediction are analytic; they exist so the loss surface can be verified by
finite differences and so tiny decoder-only checkpoints can be fitted.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidInputError

# Predictions at or below this disparity would make the depth term explode;
# they contribute the cap value with zero gradient instead.
MIN_PRED_DISPARITY = 1e-6


@dataclass
class LossConfig:
    gamma: float = 0.9
    kappa: float = 100.0
    balance: float = 2.8e-6
    w: float = 0.0
    valid_mask: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise InvalidInputError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.kappa <= 0:
            raise InvalidInputError("kappa must be positive")
        if self.balance <= 0:
            raise InvalidInputError("balance must be positive")
        if not 0.0 <= self.w <= 1.0:
            raise InvalidInputError(f"w must be in [0, 1], got {self.w}")


def iteration_weight(t: int, total: int, gamma: float) -> float:
    """Decay weight of iteration ``t`` (1-based) out of ``total``."""
    return gamma ** (total - t)


def loss(preds, gt, cfg: LossConfig):
    """Weighted disparity + capped depth error over all iterations.

    Args:
        preds: List of (H, W) disparity predictions, one per iteration, in
            iteration order.
        gt: (H, W) ground-truth disparity, positive on the valid mask.
        cfg: Loss configuration. ``cfg.valid_mask`` restricts the per-pixel
            means; None means every pixel counts.

    Returns:
        (value, grads): the scalar loss and a list of (H, W) float64
        gradients, one per prediction. Subgradients are 0 at L1 ties and at
        the depth-error cap; predictions below ``MIN_PRED_DISPARITY``
        contribute the cap with zero gradient.
    """
    if not preds:
        raise InvalidInputError("need at least one prediction")
    gt = np.asarray(gt, dtype=np.float64)
    mask = cfg.valid_mask
    mask = np.ones(gt.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != gt.shape:
        raise InvalidInputError("valid mask must match the disparity grid")
    nv = int(mask.sum())
    if nv == 0:
        raise InvalidInputError("valid mask is empty")
    if (gt[mask] <= 0).any():
        raise InvalidInputError("ground-truth disparity must be positive on the mask")

    total = len(preds)
    gt_inv = np.zeros_like(gt)
    gt_inv[mask] = 1.0 / gt[mask]

    l1 = 0.0
    l2 = 0.0
    grads = []
    for t, pred in enumerate(preds, start=1):
        d = np.asarray(pred, dtype=np.float64)
        if d.shape != gt.shape:
            raise InvalidInputError(f"prediction {t} grid {d.shape} != gt {gt.shape}")
        wt = iteration_weight(t, total, cfg.gamma)

        diff = gt - d
        l1 += wt * float(np.abs(diff[mask]).sum()) / nv

        ok = d > MIN_PRED_DISPARITY
        with np.errstate(divide="ignore"):
            d_inv = np.where(ok, 1.0 / np.where(ok, d, 1.0), 0.0)
        depth_err = np.where(ok, np.abs(gt_inv - d_inv), cfg.kappa)
        capped = depth_err >= cfg.kappa
        l2 += wt * float(np.minimum(depth_err, cfg.kappa)[mask].sum()) / nv

        g = np.zeros_like(gt)
        g[mask] = (1.0 - cfg.w) * -np.sign(diff[mask])
        live = mask & ok & ~capped
        # d(1/d)/dd = -1/d^2, so d|gt_inv - d_inv|/dd = sign(gt_inv - d_inv)/d^2
        g[live] += cfg.w * cfg.balance * np.sign(gt_inv[live] - d_inv[live]) / d[live] ** 2
        grads.append(g * (wt / nv))

    value = (1.0 - cfg.w) * l1 + cfg.w * cfg.balance * l2
    return value, grads


def w_schedule(epoch: float, total_epochs: float) -> float:
    """Linear 0-to-1 ramp of the depth-term weight across training."""
    if total_epochs <= 0:
        raise InvalidInputError("total_epochs must be positive")
    if not 0 <= epoch <= total_epochs:
        raise InvalidInputError(f"epoch {epoch} outside [0, {total_epochs}]")
    return epoch / total_epochs
