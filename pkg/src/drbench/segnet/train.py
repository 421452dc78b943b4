"""Training, evaluation, mask export and checkpoints for segmentation models."""

from __future__ import annotations

import warnings
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from ..data.tensors import images_tensor, masks_tensor
from ..data.types import LESIONS, Dataset
from ..errors import DataError, InvalidSpec
from ..metrics.core import auc_pr, auc_roc, dice, mae
from ..metrics.report import MetricReport
from ..training import BatchOrder, History, TrainConfig, make_optimizer
from .loss import pos_weight_from_masks, seg_loss_from_logits
from .models import SegModel, SegModelConfig, build_segmentation_model

# overlay colours per lesion (RGB)
LESION_RGB = {
    "MA": (0, 0, 255),
    "HE": (0, 255, 0),
    "SE": (255, 0, 0),
    "EX": (0, 255, 255),
    "IRMA": (128, 0, 128),
    "NV": (128, 128, 0),
}


def lesions_for(lesion) -> tuple[str, ...]:
    if lesion == "all":
        return LESIONS
    if isinstance(lesion, str):
        if lesion not in LESIONS:
            raise InvalidSpec(f"unknown lesion {lesion!r}")
        return (lesion,)
    return tuple(lesion)


def _check_channels(model: SegModel, lesions):
    if model.config.out_channels != len(lesions):
        raise InvalidSpec(f"model has {model.config.out_channels} output channels, task needs {len(lesions)}")


@torch.no_grad()
def predict(model: SegModel, images: torch.Tensor, batch_size: int = 16) -> torch.Tensor:
    was_training = model.training
    model.eval()
    out = torch.cat([model(chunk) for chunk in images.split(batch_size)]) if len(images) else images[:, :0]
    model.train(was_training)
    return out


def train_segmentation(
    model: SegModel,
    train: Dataset,
    lesion="all",
    cfg: TrainConfig = TrainConfig(),
    val: Dataset | None = None,
) -> tuple[SegModel, History]:
    """Train in place with weighted BCE + soft Dice; returns (model, history)."""
    cfg.validate()
    lesions = lesions_for(lesion)
    _check_channels(model, lesions)
    missing = [s.id for s in train if s.lesion_masks is None]
    if missing:
        raise DataError("training samples need lesion masks", missing[0])
    size = model.config.input_size
    x = images_tensor(train.samples, size)
    y = masks_tensor(train.samples, lesions, size)
    if y.sum() == 0:
        warnings.warn(f"no positive pixels for {'/'.join(lesions)} in the training data", stacklevel=2)
    pos_weight = (
        torch.full((len(lesions),), float(cfg.pos_weight)) if cfg.pos_weight is not None else pos_weight_from_masks(y)
    )
    history = History()
    if cfg.epochs == 0:
        return model, history
    opt = make_optimizer(model.parameters(), cfg)
    order = BatchOrder(len(x), cfg.batch_size, cfg.seed, "train/order")
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        total, count = 0.0, 0
        for idx in order.epoch():
            opt.zero_grad(set_to_none=True)
            loss = seg_loss_from_logits(model.forward_logits(x[idx]), y[idx], pos_weight, cfg.dice_weight)
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            count += len(idx)
        val_dice = None
        if val is not None:
            rep = evaluate_segmentation(model, val, lesions, with_auc=False)
            val_dice = float(np.mean([rep.metrics[k]["dice"] for k in lesions]))
        history.append(epoch=epoch, loss=total / count, val_dice=val_dice)
    return model, history


def dataset_predictions(model: SegModel, dataset: Dataset, lesions) -> tuple[np.ndarray, np.ndarray]:
    size = model.config.input_size
    probs = predict(model, images_tensor(dataset.samples, size)).numpy().astype(np.float64)
    gts = masks_tensor(dataset.samples, lesions, size).numpy().astype(bool)
    return probs, gts


def segmentation_report(probs: np.ndarray, gts: np.ndarray, lesions, with_auc: bool = True) -> MetricReport:
    """Per-lesion mean per-image Dice (threshold 0.5), pooled AUC-ROC/AUC-PR, MAE.

    ``probs`` and ``gts`` are [N, C, H, W] with channel c scoring ``lesions[c]``.
    """
    metrics = {}
    for c, lesion in enumerate(lesions):
        p, g = probs[:, c], gts[:, c]
        row = {"dice": float(np.mean([dice(pi, gi) for pi, gi in zip(p, g)]))}
        if with_auc:
            if len(lesions) > 1 and (not g.any() or g.all()):
                # multi-lesion runs skip AUCs that the test split cannot define
                pass
            else:
                row["auc_roc"] = auc_roc(p, g)
                row["auc_pr"] = auc_pr(p, g)
        row["mae"] = float(np.mean([mae(pi, gi) for pi, gi in zip(p, g)]))
        metrics[lesion] = row
    return MetricReport("segmentation", metrics)


def evaluate_segmentation(model: SegModel, test: Dataset, lesion="all", with_auc: bool = True) -> MetricReport:
    lesions = lesions_for(lesion)
    _check_channels(model, lesions)
    probs, gts = dataset_predictions(model, test, lesions)
    return segmentation_report(probs, gts, lesions, with_auc)


def export_masks(model: SegModel, dataset: Dataset, out_dir, lesion="all", threshold: float = 0.25) -> list[Path]:
    """Write ``<out>/<lesion>/<id>.png`` binary masks (0/255) of ``prob > threshold``
    and ``<out>/overlay/<id>.png`` colour overlays on the input image."""
    lesions = lesions_for(lesion)
    _check_channels(model, lesions)
    out_dir = Path(out_dir)
    size = model.config.input_size
    images = images_tensor(dataset.samples, size)
    probs = predict(model, images).numpy()
    written = []
    for lesion_name in lesions:
        (out_dir / lesion_name).mkdir(parents=True, exist_ok=True)
    (out_dir / "overlay").mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(dataset):
        base = (images[i].permute(1, 2, 0).numpy() * 255).round().astype(np.uint8)
        overlay = base.copy()
        for c, lesion_name in enumerate(lesions):
            m = probs[i, c] > threshold
            p = out_dir / lesion_name / f"{s.id}.png"
            Image.fromarray(np.where(m, 255, 0).astype(np.uint8), mode="L").save(p)
            written.append(p)
            overlay[m] = LESION_RGB[lesion_name]
        p = out_dir / "overlay" / f"{s.id}.png"
        Image.fromarray(overlay, mode="RGB").save(p)
        written.append(p)
    return written


def save_checkpoint(path, model: SegModel, **extra) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "kind": "segnet",
            "config": model.config.to_dict(),
            "seed": getattr(model, "seed", 0),
            "state_dict": model.state_dict(),
            **extra,
        },
        path,
    )
    return path


def load_checkpoint(path) -> SegModel:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if blob.get("kind") != "segnet":
        raise InvalidSpec(f"{path} is not a segmentation checkpoint")
    model = build_segmentation_model(SegModelConfig(**blob["config"]), blob["seed"])
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model
