"""Training, evaluation, CAM extraction and checkpoints for grading models."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from ..data.tensors import flags_tensor, grades_tensor, images_tensor
from ..data.types import NUM_GRADES, Dataset
from ..errors import InvalidSpec, MissingLabels, UnsupportedArchitecture
from ..metrics.core import accuracy, confusion_matrix, quadratic_weighted_kappa
from ..metrics.report import MetricReport
from ..segnet.models import SegModelConfig, build_segmentation_model
from ..training import BatchOrder, History, TrainConfig, make_optimizer
from .models import GradeModel, GradeModelConfig, GradePrediction, build_grading_model, to_predictions

DEFAULT_LM_PM_WEIGHT = 0.5


@torch.no_grad()
def _prepare_all(model: GradeModel, images: torch.Tensor, batch: int = 32):
    xs, vs = [], []
    for chunk in images.split(batch):
        x, v = model.prepare(chunk)
        xs.append(x)
        vs.append(v)
    return torch.cat(xs), (torch.cat(vs) if vs[0] is not None else None)


def train_grading(
    model: GradeModel,
    train: Dataset,
    cfg: TrainConfig = TrainConfig(),
    lm_pm_weight: float = DEFAULT_LM_PM_WEIGHT,
) -> tuple[GradeModel, History]:
    """Softmax cross-entropy over 5 grades plus ``lm_pm_weight`` x BCE on the
    LM/PM flags when the model has auxiliary heads."""
    cfg.validate()
    missing = [s.id for s in train if s.grade is None]
    if missing:
        raise MissingLabels("grading needs a grade on every training sample", missing[0])
    use_aux = model.aux is not None and lm_pm_weight != 0
    if use_aux:
        missing = [s.id for s in train if s.lesion_flags is None]
        if missing:
            raise MissingLabels("auxiliary heads need LM/PM flags", missing[0])
    history = History()
    if cfg.epochs == 0:
        return model, history
    x, v = _prepare_all(model, images_tensor(train.samples, model.config.input_size))
    y = grades_tensor(train.samples)
    flags = flags_tensor(train.samples) if use_aux else None
    opt = make_optimizer(model.trainable_parameters(), cfg)
    order = BatchOrder(len(x), cfg.batch_size, cfg.seed, "train/order")
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        total, count = 0.0, 0
        for idx in order.epoch():
            opt.zero_grad(set_to_none=True)
            logits, aux = model.forward_prepared(x[idx], None if v is None else v[idx])
            loss = F.cross_entropy(logits, y[idx])
            if use_aux:
                loss = loss + lm_pm_weight * F.binary_cross_entropy_with_logits(aux, flags[idx])
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            count += len(idx)
        history.append(epoch=epoch, loss=total / count)
    return model, history


@torch.no_grad()
def predict_grades(model: GradeModel, dataset: Dataset, batch: int = 32) -> list[GradePrediction]:
    model.eval()
    images = images_tensor(dataset.samples, model.config.input_size)
    out = []
    for chunk in images.split(batch):
        out += to_predictions(*model(chunk))
    return out


def grading_report(pred_grades, gt_grades) -> MetricReport:
    cm = confusion_matrix(pred_grades, gt_grades, NUM_GRADES)
    return MetricReport(
        "grading",
        {
            "all": {
                "accuracy": accuracy(np.asarray(pred_grades), np.asarray(gt_grades)),
                "qw_kappa": quadratic_weighted_kappa(pred_grades, gt_grades, NUM_GRADES),
            }
        },
        confusion=cm,
    )


def evaluate_grading(model: GradeModel, test: Dataset) -> MetricReport:
    missing = [s.id for s in test if s.grade is None]
    if missing:
        raise MissingLabels("evaluation needs grades", missing[0])
    preds = predict_grades(model, test)
    return grading_report([p.grade for p in preds], [s.grade for s in test])


def write_predictions(path, dataset: Dataset, preds: list[GradePrediction]) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        cols = ["id"] + [f"logit{g}" for g in range(NUM_GRADES)] + ["grade", "LM", "PM"]
        fh.write("\t".join(cols) + "\n")
        for s, p in zip(dataset, preds):
            aux = p.aux or {}
            cells = [s.id] + [repr(float(v)) for v in p.logits] + [str(p.grade)]
            cells += [repr(aux[k]) if k in aux else "-" for k in ("LM", "PM")]
            fh.write("\t".join(cells) + "\n")
    return path


def _minmax(cam: torch.Tensor) -> torch.Tensor:
    lo, hi = cam.min(), cam.max()
    if hi - lo <= 0:
        return torch.zeros_like(cam)
    return (cam - lo) / (hi - lo)


def cam_from_features(features: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    """Class-weighted sum of feature maps [C, h, w], min-max normalised
    (all zeros when the map is flat)."""
    return _minmax(torch.einsum("c,chw->hw", weights, features))


@torch.no_grad()
def class_activation_map(model, image: torch.Tensor, class_index, upsample: bool = True) -> np.ndarray:
    """CAM for one image ([3, H, W] or [1, 3, H, W]).

    ``class_index`` is a grade 0..4, or "LM"/"PM" for the auxiliary heads.
    """
    if not isinstance(model, GradeModel):
        raise UnsupportedArchitecture("CAM needs a global-average-pooling classifier")
    if image.dim() == 3:
        image = image[None]
    model.eval()
    x, _ = model.prepare(image)
    feats = model.features(x)[0]
    if class_index in ("LM", "PM"):
        if model.aux is None:
            raise UnsupportedArchitecture("model has no auxiliary heads")
        w = model.aux.weight[("LM", "PM").index(class_index)]
    else:
        if not 0 <= int(class_index) < NUM_GRADES:
            raise InvalidSpec(f"class index {class_index} outside 0..4")
        w = model.head.weight[int(class_index)]
    cam = cam_from_features(feats, w[: feats.shape[0]])
    if upsample:
        cam = F.interpolate(cam[None, None], size=image.shape[-2:], mode="bilinear", align_corners=False)[0, 0]
        cam = _minmax(cam)
    return cam.numpy()


def save_grading_checkpoint(path, model: GradeModel, **extra) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    seg = model.seg_model
    torch.save(
        {
            "kind": "grading",
            "config": model.config.to_dict(),
            "seed": getattr(model, "seed", 0),
            "seg_config": seg.config.to_dict() if seg is not None else None,
            "state_dict": model.state_dict(),
            **extra,
        },
        path,
    )
    return path


def load_grading_checkpoint(path) -> GradeModel:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if blob.get("kind") != "grading":
        raise InvalidSpec(f"{path} is not a grading checkpoint")
    seg = None
    if blob["seg_config"] is not None:
        seg = build_segmentation_model(SegModelConfig(**blob["seg_config"]))
    model = build_grading_model(GradeModelConfig(**blob["config"]), seg, blob["seed"])
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model
