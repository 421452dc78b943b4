"""Ablation ladder on the two-domain phantom: B, B+MTC, B+MTC+AA, B+MTC+DSAA."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace

import numpy as np

from ..data.phantom import DiseasePhantomSpec, seg_phantom_spec, synthesize_disease_phantom, synthesize_phantom
from ..data.types import Dataset
from ..metrics.report import MULTI_HEADERS, MULTI_METRICS, MetricReport, _fmt
from ..training import TrainConfig
from .branches import build_source_branch, build_target_branch, source_config, target_config_for
from .discriminator import build_discriminator
from .losses import DEFAULT_GAMMA, DEFAULT_LAMBDA, LossWeights
from .train import evaluate_multidisease, pretrain_source, train_joint, train_target

RUNGS = ("B", "B+MTC", "B+MTC+AA", "B+MTC+DSAA")


@dataclass(frozen=True)
class LadderConfig:
    image_size: int = 64
    source_images: int = 32
    target_images: int = 96
    test_images: int = 256
    depth: int = 3
    base_channels: int = 8
    growth_rate: int = 8
    dense_layers: int = 2
    disc_hidden: int = 32
    lam: float = DEFAULT_LAMBDA
    gamma: float = DEFAULT_GAMMA
    stage1: TrainConfig = TrainConfig(epochs=30, batch_size=16, learning_rate=0.01, momentum=0.5)
    stage2: TrainConfig = TrainConfig(epochs=40, batch_size=16, learning_rate=0.001, momentum=0.5)
    rungs: tuple[str, ...] = RUNGS


@dataclass
class TwoDomainData:
    source: Dataset
    target_train: Dataset
    target_test: Dataset


def two_domain_phantom(cfg: LadderConfig, seed: int) -> TwoDomainData:
    """Plain-coloured lesion phantoms as the source; colour-cast, noisier
    disease composites as the target."""
    source, _ = synthesize_phantom(
        seg_phantom_spec(cfg.source_images, cfg.image_size, seed=10_000 + seed, name="source", id_prefix="src")
    )
    train = synthesize_disease_phantom(
        DiseasePhantomSpec(cfg.target_images, cfg.image_size, seed=20_000 + seed, name="target-train", id_prefix="tr")
    )
    test = synthesize_disease_phantom(
        DiseasePhantomSpec(cfg.test_images, cfg.image_size, seed=30_000 + seed, name="target-test", id_prefix="te")
    )
    return TwoDomainData(source, train, test)


@dataclass
class TrainedRung:
    source: object
    target: object
    disc: object
    weights: LossWeights

    def evaluate(self, test: Dataset) -> MetricReport:
        # the plain classifier never consumes source features
        source = self.source if self.target.config.transfer else None
        return evaluate_multidisease(self.target, test, source)


def train_rung(rung: str, pretrained, data: TwoDomainData, cfg: LadderConfig, seed: int) -> TrainedRung:
    """Train one ablation rung from a copy of the pretrained source branch."""
    if rung not in RUNGS:
        raise ValueError(f"unknown rung {rung!r}")
    source = copy.deepcopy(pretrained)
    target = build_target_branch(target_config_for(source, transfer=rung != "B"), seed)
    stage2 = replace(cfg.stage2, seed=seed)
    if rung == "B":
        # the plain classifier never touches the source domain
        train_target(target, data.target_train, stage2)
        return TrainedRung(source, target, None, LossWeights(cfg.lam, 0.0))
    adversarial = rung in ("B+MTC+AA", "B+MTC+DSAA")
    disc = None
    if adversarial:
        disc = build_discriminator(source.vector_size, cfg.disc_hidden, domain_specific=rung == "B+MTC+DSAA", seed=seed)
    weights = LossWeights(cfg.lam, cfg.gamma if adversarial else 0.0)
    train_joint(source, target, disc, data.source, data.target_train, weights, stage2)
    return TrainedRung(source, target, disc, weights)


def run_rung(rung: str, pretrained, data: TwoDomainData, cfg: LadderConfig, seed: int) -> MetricReport:
    return train_rung(rung, pretrained, data, cfg, seed).evaluate(data.target_test)


@dataclass
class LadderResult:
    reports: dict[str, list[MetricReport]] = field(default_factory=dict)

    def mean(self, rung: str, metric: str) -> float:
        return float(np.mean([r.metrics["mean"][metric] for r in self.reports[rung]]))

    def mean_report(self, rung: str) -> MetricReport:
        runs = self.reports[rung]
        metrics = {m: self.mean(rung, m) for m in MULTI_METRICS if all(m in r.metrics["mean"] for r in runs)}
        labels = runs[0].per_label_accuracy
        per_label = {k: float(np.mean([r.per_label_accuracy[k] for r in runs])) for k in labels}
        return MetricReport("multilabel", {"mean": metrics}, per_label_accuracy=per_label)


def pretrained_source(cfg: LadderConfig, data: TwoDomainData, seed: int):
    src_cfg = source_config(cfg.depth, cfg.base_channels, cfg.growth_rate, cfg.dense_layers, cfg.image_size)
    source = build_source_branch(src_cfg, seed)
    pretrain_source(source, data.source, replace(cfg.stage1, seed=seed))
    return source


def run_ladder(cfg: LadderConfig = LadderConfig(), seeds=(0, 1, 2), progress=None, data_for=None) -> LadderResult:
    """Every rung for every seed. ``data_for(seed)`` supplies the two-domain
    data; by default a fresh phantom per seed."""
    result = LadderResult({r: [] for r in cfg.rungs})
    for seed in seeds:
        data = data_for(seed) if data_for is not None else two_domain_phantom(cfg, seed)
        source = pretrained_source(cfg, data, seed)
        for rung in cfg.rungs:
            rep = run_rung(rung, source, data, cfg, seed)
            result.reports[rung].append(rep)
            if progress is not None:
                progress(seed, rung, rep)
    return result


def ladder_table(result: LadderResult) -> str:
    lines = ["\t".join(("method",) + MULTI_HEADERS)]
    for rung, runs in result.reports.items():
        if runs:
            rep = result.mean_report(rung)
            lines.append("\t".join([rung] + [_fmt(rep.metrics["mean"].get(m, float("nan"))) for m in MULTI_METRICS]))
    return "\n".join(lines) + "\n"
