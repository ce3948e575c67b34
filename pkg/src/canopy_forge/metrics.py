"""Masked regression metrics and the tree-detection confusion rendering.

The training loss is a masked MSE whose per-pixel weight is 1 + k when the
target height exceeds the tree threshold theta (k=10, theta=0.5 m by
default), so errors over trees count 11x. Test-time metrics are the
unweighted masked MSE and a masked MAE restricted to tree pixels.
All accumulation happens in float64 regardless of input precision.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import EmptyMask, IoFailure, ShapeMismatch


@dataclass(frozen=True)
class LossConfig:
    k: float = 10.0
    theta: float = 0.5

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("amplification k must be >= 0")
        if self.theta < 0:
            raise ValueError("threshold theta must be >= 0")


class Confusion(IntEnum):
    INVALID = 0
    TP = 1
    FP = 2
    FN = 3
    TN = 4


#: Rendering colors: hits green, false alarms red, misses blue, true
#: rejections black, masked-out pixels gray.
CONFUSION_COLORS = {
    Confusion.TP: (0, 255, 0),
    Confusion.FP: (255, 0, 0),
    Confusion.FN: (0, 0, 255),
    Confusion.TN: (0, 0, 0),
    Confusion.INVALID: (128, 128, 128),
}


@dataclass(frozen=True)
class EvalReport:
    wmse: float
    mmse: float
    mmae: float | None
    confusion: np.ndarray
    counts: dict[str, int]


def _check(pred: np.ndarray, target: np.ndarray, mask: np.ndarray):
    if pred.shape != target.shape or pred.shape != mask.shape:
        raise ShapeMismatch(
            f"pred {pred.shape}, target {target.shape}, mask {mask.shape}")


def weighted_masked_mse(pred: np.ndarray, target: np.ndarray, mask: np.ndarray,
                        cfg: LossConfig = LossConfig()) -> float:
    """Sum of m*w*(pred-target)^2 over the sum of m, w = 1 + k*[target > theta]."""
    num, den = weighted_masked_mse_parts(pred, target, mask, cfg)
    if den == 0:
        raise EmptyMask("mask selects no pixels")
    return num / den


def weighted_masked_mse_parts(pred, target, mask, cfg: LossConfig = LossConfig()
                              ) -> tuple[float, float]:
    """(numerator, denominator) form, so per-tile results merge exactly."""
    _check(pred, target, mask)
    mask = mask.astype(bool)
    err = (pred.astype(np.float64) - target.astype(np.float64)) ** 2
    weights = 1.0 + cfg.k * (target.astype(np.float64) > cfg.theta)
    num = float((err * weights)[mask].sum())
    return num, float(mask.sum())


def masked_mse(pred: np.ndarray, target: np.ndarray, mask: np.ndarray) -> float:
    """Unweighted masked MSE (the k=0 case of the training loss)."""
    return weighted_masked_mse(pred, target, mask, LossConfig(k=0.0))


def masked_mae(pred: np.ndarray, target: np.ndarray, mask: np.ndarray,
               theta: float = 0.5) -> float:
    """Mean absolute error over tree pixels only (mask AND target > theta)."""
    num, den = masked_mae_parts(pred, target, mask, theta)
    if den == 0:
        raise EmptyMask("no tree pixels above the threshold")
    return num / den


def masked_mae_parts(pred, target, mask, theta: float = 0.5
                     ) -> tuple[float, float]:
    _check(pred, target, mask)
    tree_mask = mask.astype(bool) & (target.astype(np.float64) > theta)
    err = np.abs(pred.astype(np.float64) - target.astype(np.float64))
    return float(err[tree_mask].sum()), float(tree_mask.sum())


def confusion_map(pred: np.ndarray, target: np.ndarray, mask: np.ndarray,
                  theta: float = 0.5) -> tuple[np.ndarray, dict[str, int]]:
    """Per-pixel tree-detection outcome at threshold theta (strict >),
    applied symmetrically to prediction and target."""
    _check(pred, target, mask)
    mask = mask.astype(bool)
    pred_tree = pred.astype(np.float64) > theta
    target_tree = target.astype(np.float64) > theta

    out = np.full(pred.shape, Confusion.INVALID, dtype=np.uint8)
    out[mask & pred_tree & target_tree] = Confusion.TP
    out[mask & pred_tree & ~target_tree] = Confusion.FP
    out[mask & ~pred_tree & target_tree] = Confusion.FN
    out[mask & ~pred_tree & ~target_tree] = Confusion.TN
    counts = {c.name: int((out == c).sum()) for c in Confusion}
    return out, counts


def render_confusion_png(confusion: np.ndarray, path) -> None:
    """Write the confusion map as an RGB PNG using the standard colors."""
    rgb = np.zeros((*confusion.shape, 3), dtype=np.uint8)
    for code, color in CONFUSION_COLORS.items():
        rgb[confusion == code] = color
    try:
        Image.fromarray(rgb, mode="RGB").save(Path(path), format="PNG")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def evaluate(pred: np.ndarray, target: np.ndarray, mask: np.ndarray,
             cfg: LossConfig = LossConfig()) -> EvalReport:
    """All metrics and the confusion map in one report; the tree MAE is
    None when the tile holds no tree pixels."""
    wmse = weighted_masked_mse(pred, target, mask, cfg)
    mmse = masked_mse(pred, target, mask)
    mae_num, mae_den = masked_mae_parts(pred, target, mask, cfg.theta)
    mmae = mae_num / mae_den if mae_den else None
    conf, counts = confusion_map(pred, target, mask, cfg.theta)
    return EvalReport(wmse, mmse, mmae, conf, counts)
