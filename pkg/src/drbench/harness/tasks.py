"""Task runners behind the CLI subcommands. Each writes its artifacts under
the run directory; the caller adds the manifest."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from ..data import (
    DiseasePhantomSpec,
    compute_statistics,
    grading_phantom_spec,
    load_dataset,
    save_dataset,
    seg_phantom_spec,
    split_dataset,
    synthesize_disease_phantom,
    synthesize_phantom,
    write_phantom,
    write_statistics,
)
from ..data.tensors import disease_tensor, images_tensor
from ..grading import (
    GradeModelConfig,
    build_grading_model,
    class_activation_map,
    evaluate_grading,
    load_grading_checkpoint,
    predict_grades,
    save_grading_checkpoint,
    train_grading,
    write_predictions,
)
from ..metrics import MetricReport, format_per_label_table, precision_recall_curve
from ..rng import substream_seed
from ..segnet import (
    SegModelConfig,
    build_segmentation_model,
    export_masks,
    load_checkpoint,
    save_checkpoint,
    segmentation_report,
    train_segmentation,
)
from ..segnet.train import dataset_predictions, lesions_for
from ..transfer import (
    LadderConfig,
    TwoDomainData,
    ladder_table,
    load_bundle,
    multidisease_report,
    normalized_logit_map,
    predict_diseases,
    pretrained_source,
    run_ladder,
    save_bundle,
    train_rung,
)
from ..transfer.ablation import LadderResult
from . import figures
from .config import DataRef, LoadedConfig, PhantomSection

PR_POINTS = 200
CHECKPOINT = "checkpoint.pt"
BUNDLE = "bundle.pt"


# --------------------------------------------------------------------------- data


def phantom_seed(section: PhantomSection, seed: int, role: str) -> int:
    if section.seed is not None:
        return section.seed
    return substream_seed(seed, f"data/{role}") % 2**31


def synthesize(section: PhantomSection, seed: int, role: str, name: str):
    """Dataset and planting log (None for disease phantoms) for a phantom section."""
    s = phantom_seed(section, seed, role)
    if section.preset == "disease":
        spec = DiseasePhantomSpec(section.num_images, section.image_size, seed=s, name=name,
                                  overlap_budget=section.overlap_budget, noise_std=section.noise_std)
        return synthesize_disease_phantom(spec), None
    kw = dict(overlap_budget=section.overlap_budget, lm_rate=section.lm_rate, pm_rate=section.pm_rate,
              noise_std=section.noise_std, name=name)
    if section.healthy_rate is not None:
        kw["healthy_rate"] = section.healthy_rate
    build = seg_phantom_spec if section.preset == "seg" else grading_phantom_spec
    return synthesize_phantom(build(section.num_images, section.image_size, seed=s, **kw))


def materialize(ref: DataRef, seed: int, role: str):
    if ref.phantom is not None:
        return synthesize(ref.phantom, seed, role, role)[0]
    return load_dataset(ref.root, ref.kind, name=role)


# --------------------------------------------------------------------------- synth / stats


def run_synth(cfg: LoadedConfig, out: Path) -> MetricReport | None:
    exp = cfg.experiment
    dataset, log = synthesize(exp.phantom, exp.seed, "synth", exp.name or "phantom")
    root = out / "dataset"
    if log is not None:
        write_phantom(dataset, log, root)
        write_statistics(compute_statistics(dataset), out / "statistics.tsv")
    else:
        save_dataset(dataset, root)
    return None


def run_stats(cfg: LoadedConfig, out: Path) -> MetricReport | None:
    exp = cfg.experiment
    stats = compute_statistics(materialize(exp.data, exp.seed, "data"))
    write_statistics(stats, out / "statistics.tsv")
    figures.statistics_chart(stats, out / "figures" / "statistics.png")
    return None


# --------------------------------------------------------------------------- segmentation


def _seg_model_config(exp) -> SegModelConfig:
    return SegModelConfig(**exp.model.model_dump())


def write_pr_curves(path: Path, probs, gts, lesions) -> None:
    """Sub-sampled PR curve per lesion for the report figures."""
    with open(path, "w") as fh:
        fh.write("lesion\trecall\tprecision\n")
        for c, lesion in enumerate(lesions):
            if not gts[:, c].any():
                continue
            precision, recall, _ = precision_recall_curve(probs[:, c].ravel(), gts[:, c].ravel())
            idx = np.unique(np.linspace(0, len(recall) - 1, min(PR_POINTS, len(recall))).round().astype(int))
            for i in idx:
                fh.write(f"{lesion}\t{float(recall[i])!r}\t{float(precision[i])!r}\n")


def read_pr_curves(path: Path) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    rows: dict[str, list[tuple[float, float]]] = {}
    for line in path.read_text().splitlines()[1:]:
        lesion, r, p = line.split("\t")
        rows.setdefault(lesion, []).append((float(r), float(p)))
    return {k: (np.array([r for r, _ in v]), np.array([p for _, p in v])) for k, v in rows.items()}


def _evaluate_seg(model, test, exp, out: Path) -> MetricReport:
    lesions = lesions_for(exp.lesion)
    probs, gts = dataset_predictions(model, test, lesions)
    report = segmentation_report(probs, gts, lesions)
    report.save(out)
    write_pr_curves(out / "pr_curves.tsv", probs, gts, lesions)
    if exp.export_masks:
        export_masks(model, test, out / "masks", exp.lesion, exp.export_threshold)
    return report


def mean_segmentation(reports: list[MetricReport]) -> MetricReport:
    """Per-lesion mean over folds of every metric every fold defines."""
    metrics = {}
    for lesion in reports[0].metrics:
        names = [m for m in reports[0].metrics[lesion] if all(m in r.metrics.get(lesion, {}) for r in reports)]
        metrics[lesion] = {m: float(np.mean([r.metrics[lesion][m] for r in reports])) for m in names}
    return MetricReport("segmentation", metrics)


def _train_one_seg(exp, train, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    model = build_segmentation_model(_seg_model_config(exp), exp.seed)
    _, history = train_segmentation(model, train, exp.lesion, exp.train.build(exp.seed))
    history.write(out / "history.tsv")
    save_checkpoint(out / CHECKPOINT, model, lesion=exp.lesion)
    return model


def run_train_seg(cfg: LoadedConfig, out: Path) -> MetricReport:
    """Train and evaluate: on the test set, per cross-validation fold (plus the
    fold mean), or on the training set itself when neither is given."""
    exp = cfg.experiment
    train = materialize(exp.data.train, exp.seed, "train")
    if exp.data.folds is not None:
        reports = []
        for i, (tr, te) in enumerate(split_dataset(train, exp.data.folds, exp.seed)):
            fold_dir = out / f"fold{i}"
            model = _train_one_seg(exp, tr, fold_dir)
            reports.append(_evaluate_seg(model, te, exp, fold_dir))
        report = mean_segmentation(reports)
        report.save(out)
        return report
    model = _train_one_seg(exp, train, out)
    test = materialize(exp.data.test, exp.seed, "test") if exp.data.test is not None else train
    return _evaluate_seg(model, test, exp, out)


def _checkpoint_path(cfg: LoadedConfig) -> Path:
    return cfg.require_path(cfg.experiment.checkpoint, "checkpoint")


def run_eval_seg(cfg: LoadedConfig, out: Path) -> MetricReport:
    exp = cfg.experiment
    model = load_checkpoint(_checkpoint_path(cfg))
    data = exp.data.test if exp.data.test is not None else exp.data.train
    role = "test" if exp.data.test is not None else "train"
    return _evaluate_seg(model, materialize(data, exp.seed, role), exp, out)


# --------------------------------------------------------------------------- grading


def _evaluate_grade(model, test, exp, out: Path) -> MetricReport:
    report = evaluate_grading(model, test)
    report.save(out)
    preds = predict_grades(model, test)
    write_predictions(out / "predictions.tsv", test, preds)
    pct = figures.confusion_heatmap(report.confusion, out / "figures" / "confusion.png", exp.name or "")
    np.savetxt(out / "confusion_percent.tsv", pct, fmt="%.1f", delimiter="\t")
    images = images_tensor(test.samples[: exp.cam_images], model.config.input_size)
    for s, img, p in zip(test.samples, images, preds):
        cam = class_activation_map(model, img, p.grade)
        figures.map_overlay(img.permute(1, 2, 0).numpy(), cam, out / "figures" / f"cam_{s.id}.png",
                            f"grade {p.grade} (true {s.grade})")
    return report


def run_train_grade(cfg: LoadedConfig, out: Path) -> MetricReport:
    exp = cfg.experiment
    train = materialize(exp.data.train, exp.seed, "train")
    test = materialize(exp.data.test, exp.seed, "test")
    seg = load_checkpoint(exp.seg_checkpoint) if exp.model.fusion != "none" else None
    model = build_grading_model(GradeModelConfig(**exp.model.model_dump()), seg, exp.seed)
    _, history = train_grading(model, train, exp.train.build(exp.seed), exp.lm_pm_weight)
    history.write(out / "history.tsv")
    save_grading_checkpoint(out / CHECKPOINT, model)
    return _evaluate_grade(model, test, exp, out)


def run_eval_grade(cfg: LoadedConfig, out: Path) -> MetricReport:
    exp = cfg.experiment
    model = load_grading_checkpoint(_checkpoint_path(cfg))
    return _evaluate_grade(model, materialize(exp.data.test, exp.seed, "test"), exp, out)


# --------------------------------------------------------------------------- transfer


def _ladder_config(exp) -> LadderConfig:
    m = exp.model
    rungs = tuple(exp.ladder.rungs) if exp.ladder is not None else (exp.rung,)
    return LadderConfig(
        image_size=m.input_size, depth=m.depth, base_channels=m.base_channels, growth_rate=m.growth_rate,
        dense_layers=m.dense_layers, disc_hidden=m.disc_hidden, lam=exp.weights.lam, gamma=exp.weights.gamma,
        stage1=exp.stage1.build(exp.seed), stage2=exp.stage2.build(exp.seed), rungs=rungs,
    )


def _two_domain(exp, seed: int) -> TwoDomainData:
    d = exp.data
    return TwoDomainData(
        materialize(d.source, seed, "source"),
        materialize(d.target_train, seed, "target-train"),
        materialize(d.target_test, seed, "target-test"),
    )


def _evaluate_transfer(bundle_source, target, test, exp, out: Path) -> MetricReport:
    source = bundle_source if target.config.transfer else None
    probs = predict_diseases(target, test, source)
    report = multidisease_report(probs, disease_tensor(test.samples).numpy())
    report.save(out)
    (out / "per_label.tsv").write_text(format_per_label_table([("run", report)]))
    images = images_tensor(test.samples[: exp.logit_maps], target.config.input_size)
    for s, img, p in zip(test.samples, images, probs):
        label = int(np.argmax(p))
        heat = normalized_logit_map(target, img, label, source)
        figures.map_overlay(img.permute(1, 2, 0).numpy(), heat, out / "figures" / f"logit_map_{s.id}.png",
                            f"label {label}")
    return report


def run_train_transfer(cfg: LoadedConfig, out: Path) -> MetricReport:
    exp = cfg.experiment
    lcfg = _ladder_config(exp)
    if exp.ladder is not None:
        return _run_ladder(exp, lcfg, out)
    data = _two_domain(exp, exp.seed)
    source = pretrained_source(lcfg, data, exp.seed)
    trained = train_rung(exp.rung, source, data, lcfg, exp.seed)
    save_bundle(out / BUNDLE, trained.source, trained.target, trained.disc, trained.weights, stage="joint",
                rung=exp.rung)
    return _evaluate_transfer(trained.source, trained.target, data.target_test, exp, out)


def _run_ladder(exp, lcfg: LadderConfig, out: Path) -> MetricReport:
    result: LadderResult = run_ladder(lcfg, tuple(exp.ladder.seeds), data_for=lambda s: _two_domain(exp, s))
    (out / "ladder.tsv").write_text(ladder_table(result))
    rows = [(rung, result.mean_report(rung)) for rung in lcfg.rungs]
    (out / "per_label.tsv").write_text(format_per_label_table(rows))
    for rung, runs in result.reports.items():
        for seed, rep in zip(exp.ladder.seeds, runs):
            rep.save(out / "rungs" / rung / f"seed{seed}")
        result.mean_report(rung).save(out / "rungs" / rung)
    figures.ladder_chart([(r, rep.metrics["mean"]) for r, rep in rows], out / "figures" / "ladder.png")
    # the headline report is the last (most complete) rung
    report = rows[-1][1]
    report.save(out)
    return report


def run_eval_transfer(cfg: LoadedConfig, out: Path) -> MetricReport:
    exp = cfg.experiment
    bundle = load_bundle(_checkpoint_path(cfg))
    test = materialize(exp.data.target_test, exp.seed, "target-test")
    return _evaluate_transfer(bundle.source, bundle.target, test, exp, out)


def torch_setup() -> None:
    """Single-threaded deterministic kernels so reruns match bit for bit."""
    torch.use_deterministic_algorithms(True)
    torch.set_num_threads(1)

