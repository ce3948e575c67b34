"""Training/evaluation losses, mirroring the dataset side's metric
definitions so the two components agree through files to float precision.

The training loss is a masked MSE whose per-pixel weight is 1 + k where
the target height exceeds theta (defaults k=10, theta=0.5 m): errors over
trees count 11x, which keeps the model from collapsing to predicting 0.
"""

from __future__ import annotations

import torch


def weighted_masked_mse(pred: torch.Tensor, target: torch.Tensor,
                        mask: torch.Tensor, k: float = 10.0,
                        theta: float = 0.5) -> torch.Tensor:
    """sum(m * w * (pred - target)^2) / sum(m), w = 1 + k*[target > theta].

    Accepts (B, 1, H, W) or (H, W) tensors; masked-out pixels contribute
    nothing to value or gradient.
    """
    mask = mask.to(pred.dtype)
    weight = 1.0 + k * (target > theta).to(pred.dtype)
    num = (mask * weight * (pred - target) ** 2).sum()
    den = mask.sum()
    return num / den


def masked_mse(pred: torch.Tensor, target: torch.Tensor,
               mask: torch.Tensor) -> torch.Tensor:
    return weighted_masked_mse(pred, target, mask, k=0.0)


def masked_mae(pred: torch.Tensor, target: torch.Tensor, mask: torch.Tensor,
               theta: float = 0.5) -> torch.Tensor:
    """Mean absolute error over tree pixels only (mask AND target > theta)."""
    tree = mask.to(pred.dtype) * (target > theta).to(pred.dtype)
    num = (tree * (pred - target).abs()).sum()
    return num / tree.sum()
