"""Weighted binary cross-entropy + soft Dice segmentation loss."""

from __future__ import annotations

import torch
import torch.nn.functional as F

from ..errors import ShapeMismatch

POS_WEIGHT_RANGE = (1.0, 100.0)


def _check(pred, gt):
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"prediction {tuple(pred.shape)} vs ground truth {tuple(gt.shape)}")


def _channel_dims(t):
    # reduce over everything except the channel axis of an NCHW tensor
    return (0, 2, 3) if t.dim() == 4 else tuple(range(t.dim()))


def soft_dice(prob: torch.Tensor, gt: torch.Tensor, smooth: float = 1.0) -> torch.Tensor:
    """Soft Dice on probabilities, per channel (NCHW) then averaged."""
    dims = _channel_dims(prob)
    inter = (prob * gt).sum(dim=dims)
    total = prob.sum(dim=dims) + gt.sum(dim=dims)
    return ((2.0 * inter + smooth) / (total + smooth)).mean()


def _pos_weight_tensor(pos_weight, ref):
    pw = torch.as_tensor(pos_weight, dtype=ref.dtype)
    if pw.dim() == 1 and ref.dim() == 4:
        pw = pw.view(1, -1, 1, 1)
    return pw


def seg_loss(
    pred: torch.Tensor,
    gt: torch.Tensor,
    pos_weight=1.0,
    dice_weight: float = 1.0,
    smooth: float = 1.0,
    eps: float = 1e-7,
) -> torch.Tensor:
    """weighted-BCE(pred, gt) + dice_weight * (1 - softDice(pred, gt)) on
    probabilities ``pred`` (clamped to [eps, 1 - eps])."""
    _check(pred, gt)
    p = pred.clamp(eps, 1.0 - eps)
    w = _pos_weight_tensor(pos_weight, p)
    bce = -(w * gt * torch.log(p) + (1.0 - gt) * torch.log(1.0 - p)).mean()
    return bce + dice_weight * (1.0 - soft_dice(p, gt, smooth))


def seg_loss_from_logits(
    logits: torch.Tensor,
    gt: torch.Tensor,
    pos_weight=1.0,
    dice_weight: float = 1.0,
    smooth: float = 1.0,
) -> torch.Tensor:
    """Same objective as :func:`seg_loss` evaluated stably from logits."""
    _check(logits, gt)
    w = _pos_weight_tensor(pos_weight, logits)
    bce = F.binary_cross_entropy_with_logits(logits, gt, pos_weight=w)
    if dice_weight == 0:
        return bce
    return bce + dice_weight * (1.0 - soft_dice(torch.sigmoid(logits), gt, smooth))


def pos_weight_from_masks(masks: torch.Tensor, lo: float = POS_WEIGHT_RANGE[0], hi: float = POS_WEIGHT_RANGE[1]):
    """Negative/positive pixel ratio per channel, clamped to [lo, hi]."""
    dims = _channel_dims(masks)
    pos = masks.sum(dim=dims)
    neg = (1.0 - masks).sum(dim=dims)
    ratio = torch.where(pos > 0, neg / pos.clamp_min(1.0), torch.full_like(pos, hi))
    return ratio.clamp(lo, hi)
