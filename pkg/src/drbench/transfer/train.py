"""Two-stage training of the source/target/discriminator system, evaluation
and checkpoint bundles."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from ..data.tensors import disease_tensor, images_tensor, masks_tensor
from ..data.types import DISEASES, LESIONS, Dataset
from ..errors import DataError, DegenerateLabels, EmptyDataset, MissingLabels
from ..metrics.core import accuracy, auc_roc, cohens_kappa, f1_score
from ..metrics.report import MetricReport
from ..segnet.loss import pos_weight_from_masks, seg_loss_from_logits
from ..segnet.models import DenseUNet, SegModelConfig
from ..segnet.train import train_segmentation
from ..training import BatchOrder, CyclicBatches, History, TrainConfig, make_optimizer
from .branches import (
    TargetBranch,
    TargetBranchConfig,
    build_source_branch,
    build_target_branch,
    source_pyramid,
)
from .discriminator import DomainDiscriminator, build_discriminator
from .losses import LossWeights, disc_loss, adapt_loss, label_pos_weight, target_loss, total_loss

# stage 1: segmentation pretraining; stage 2: joint optimisation. Adam with
# first-moment decay 0.5 in both stages.
STAGE1 = TrainConfig(epochs=100, batch_size=32, learning_rate=0.01, momentum=0.5)
STAGE2 = TrainConfig(epochs=300, batch_size=64, learning_rate=0.001, momentum=0.5)

StepHook = Callable[[int], None]


def pretrain_source(branch: DenseUNet, source_data: Dataset, cfg: TrainConfig = STAGE1):
    """Stage 1: the segmentation branch alone on all six lesion masks."""
    return train_segmentation(branch, source_data, "all", cfg)


def _target_tensors(target: TargetBranch, data: Dataset):
    if len(data) == 0:
        raise EmptyDataset("target domain has no samples")
    missing = [s.id for s in data if s.disease_labels is None]
    if missing:
        raise MissingLabels("target samples need disease labels", missing[0])
    return images_tensor(data.samples, target.config.input_size), disease_tensor(data.samples)


def _freeze(module: torch.nn.Module) -> None:
    for p in module.parameters():
        p.requires_grad_(False)
    module.eval()


def _transferred(source: DenseUNet | None, target: TargetBranch, x: torch.Tensor):
    if not target.config.transfer:
        return None
    return source_pyramid(source, x)


def train_target(
    target: TargetBranch,
    target_data: Dataset,
    cfg: TrainConfig = STAGE2,
    source: DenseUNet | None = None,
    on_step: StepHook | None = None,
) -> History:
    """Direct training of the Baseline (no transfer) or Baseline+MTC (frozen
    source features concatenated in) with the weighted multi-label BCE."""
    cfg.validate()
    x, y = _target_tensors(target, target_data)
    pw = label_pos_weight(y)
    if target.config.transfer:
        if source is None:
            raise DataError("a transfer-enabled target branch needs the source branch")
        _freeze(source)
    history = History()
    opt = make_optimizer(target.parameters(), cfg)
    order = BatchOrder(len(x), cfg.batch_size, cfg.seed, "train/target")
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        target.train()
        total, count = 0.0, 0
        for idx in order.epoch():
            opt.zero_grad(set_to_none=True)
            logits, _ = target(x[idx], _transferred(source, target, x[idx]))
            loss = target_loss(logits, y[idx], pw)
            loss.backward()
            opt.step()
            step += 1
            if on_step is not None:
                on_step(step)
            total += loss.item() * len(idx)
            count += len(idx)
        history.append(epoch=epoch, loss=total / count)
    return history


@dataclass
class JointResult:
    history: History
    steps: int
    last: dict[str, float] = field(default_factory=dict)


def train_joint(
    source: DenseUNet,
    target: TargetBranch,
    disc: DomainDiscriminator | None,
    source_data: Dataset,
    target_data: Dataset,
    weights: LossWeights = LossWeights(),
    cfg: TrainConfig = STAGE2,
    freeze_source: bool = False,
    on_step: StepHook | None = None,
) -> JointResult:
    """Stage 2. Each step draws one target batch (epochs follow the target
    set) and one cyclic source batch, updates the discriminator on detached
    bottleneck vectors, then updates both branches on
    L_S + lambda * L_T + gamma * L_A with the discriminator frozen.

    With gamma = 0 the discriminator is neither queried nor updated.
    """
    cfg.validate()
    if len(source_data) == 0:
        raise EmptyDataset("source domain has no samples")
    missing = [s.id for s in source_data if s.lesion_masks is None]
    if missing:
        raise MissingLabels("source samples need lesion masks", missing[0])
    xt, yt = _target_tensors(target, target_data)
    size = source.config.input_size
    xs = images_tensor(source_data.samples, size)
    ys = masks_tensor(source_data.samples, LESIONS, size)
    pw_s = (
        torch.full((len(LESIONS),), float(cfg.pos_weight)) if cfg.pos_weight is not None else pos_weight_from_masks(ys)
    )
    pw_t = label_pos_weight(yt)
    adversarial = weights.gamma > 0
    if adversarial and disc is None:
        raise DataError("gamma > 0 needs a discriminator")
    if freeze_source:
        _freeze(source)
    params = list(target.parameters()) + ([] if freeze_source else list(source.parameters()))
    opt = make_optimizer(params, cfg)
    disc_opt = make_optimizer(disc.parameters(), cfg) if adversarial else None
    order = BatchOrder(len(xt), cfg.batch_size, cfg.seed, "train/target")
    source_batches = CyclicBatches(len(xs), cfg.batch_size, cfg.seed, "train/source")
    history = History()
    step = 0
    last = {}
    for epoch in range(1, cfg.epochs + 1):
        target.train()
        if not freeze_source:
            source.train()
        sums = {"loss": 0.0, "L_S": 0.0, "L_T": 0.0, "L_A": 0.0, "D": 0.0}
        n_steps = 0
        for idx_t in order.epoch():
            idx_s = source_batches.next()
            seg_logits, _, vec_s = source.forward_features(xs[idx_s])
            logits_t, vec_t = target(xt[idx_t], _transferred(source, target, xt[idx_t]))
            l_s = seg_loss_from_logits(seg_logits, ys[idx_s], pw_s, cfg.dice_weight)
            l_t = target_loss(logits_t, yt[idx_t], pw_t)
            if adversarial:
                disc.train()
                disc_opt.zero_grad(set_to_none=True)
                d = disc_loss(disc, vec_s, vec_t)
                d.backward()
                disc_opt.step()
                l_a = adapt_loss(disc, vec_t)
            else:
                d = l_a = torch.zeros(())
            loss = total_loss(l_s, l_t, l_a, weights)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            step += 1
            last = {"L_S": l_s.item(), "L_T": l_t.item(), "L_A": l_a.item(), "D": d.item(), "loss": loss.item()}
            weights.values = {k: last[k] for k in ("L_S", "L_T", "L_A")}
            for k in sums:
                sums[k] += last[k]
            n_steps += 1
            if on_step is not None:
                on_step(step)
        history.append(epoch=epoch, **{k: v / n_steps for k, v in sums.items()})
    return JointResult(history, step, last)


@torch.no_grad()
def predict_diseases(target: TargetBranch, data: Dataset, source: DenseUNet | None = None, batch: int = 32):
    """Sigmoid probabilities [N, 8]."""
    target.eval()
    if source is not None:
        source.eval()
    x = images_tensor(data.samples, target.config.input_size)
    out = []
    for chunk in x.split(batch):
        logits, _ = target(chunk, _transferred(source, target, chunk))
        out.append(torch.sigmoid(logits))
    return torch.cat(out).double().numpy()


def multidisease_report(probs: np.ndarray, labels: np.ndarray, threshold: float = 0.5) -> MetricReport:
    """Mean Cohen's kappa, F-1 and AUC-ROC over the labels, plus per-label
    accuracy. Labels whose kappa or AUC is undefined on this split (a
    constant column) are left out of that mean."""
    pred = (probs > threshold).astype(np.int64)
    gt = labels.astype(np.int64)
    kappas, aucs = [], []
    for j in range(gt.shape[1]):
        try:
            kappas.append(cohens_kappa(pred[:, j], gt[:, j]))
        except DegenerateLabels:
            pass
        try:
            aucs.append(auc_roc(probs[:, j], gt[:, j]))
        except DegenerateLabels:
            pass
    metrics = {"f1": f1_score(pred, gt)}
    if kappas:
        metrics["kappa"] = float(np.mean(kappas))
    if aucs:
        metrics["auc_roc"] = float(np.mean(aucs))
    per_label = {name: accuracy(pred[:, j], gt[:, j]) for j, name in enumerate(DISEASES)}
    return MetricReport("multilabel", {"mean": metrics}, per_label_accuracy=per_label)


def evaluate_multidisease(target: TargetBranch, test: Dataset, source: DenseUNet | None = None) -> MetricReport:
    _, y = _target_tensors(target, test)
    return multidisease_report(predict_diseases(target, test, source), y.numpy())


# --------------------------------------------------------------------------- checkpoints


def save_bundle(path, source: DenseUNet, target: TargetBranch, disc: DomainDiscriminator | None,
                weights: LossWeights, stage: str, **extra) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    bundle = {
        "kind": "transfer",
        "stage": stage,
        "weights": {"lam": weights.lam, "gamma": weights.gamma, "values": dict(weights.values)},
        "source_config": source.config.to_dict(),
        "source_state": source.state_dict(),
        "target_config": target.config.to_dict(),
        "target_state": target.state_dict(),
        "disc_config": None
        if disc is None
        else {"in_features": disc.in_features, "hidden": disc.hidden, "domain_specific": disc.domain_specific},
        "disc_state": None if disc is None else disc.state_dict(),
        "extra": extra,
    }
    torch.save(bundle, path)
    return path


@dataclass
class TransferBundle:
    source: DenseUNet
    target: TargetBranch
    disc: DomainDiscriminator | None
    weights: LossWeights
    stage: str
    extra: dict


def load_bundle(path) -> TransferBundle:
    b = torch.load(path, weights_only=False)
    if b.get("kind") != "transfer":
        raise DataError(f"{path} is not a transfer checkpoint")
    source = build_source_branch(SegModelConfig(**b["source_config"]))
    source.load_state_dict(b["source_state"])
    tc = dict(b["target_config"])
    tc["source_channels"] = tuple(tc["source_channels"])
    target = build_target_branch(TargetBranchConfig(**tc))
    target.load_state_dict(b["target_state"])
    disc = None
    if b["disc_config"] is not None:
        disc = build_discriminator(**b["disc_config"])
        disc.load_state_dict(b["disc_state"])
    w = b["weights"]
    return TransferBundle(source, target, disc, LossWeights(w["lam"], w["gamma"], w["values"]), b["stage"], b["extra"])
