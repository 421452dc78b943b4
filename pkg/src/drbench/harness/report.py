"""Merge finished runs into side-by-side tables and comparison figures."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import DataError, IncompatibleReports
from ..metrics import MetricReport, format_per_label_table, format_table
from . import figures
from .manifest import MANIFEST_NAME
from .tasks import read_pr_curves

# metric whose run-to-run difference fills the delta column, per report kind
DELTA_METRIC = {"grading": ("all", "qw_kappa", "Q.W.Kappa"), "multilabel": ("mean", "kappa", "Kappa")}


class Run:
    def __init__(self, directory: Path):
        self.dir = Path(directory)
        manifest = self.dir / MANIFEST_NAME
        if not manifest.is_file():
            raise DataError(f"{self.dir} has no {MANIFEST_NAME}; not a finished run")
        self.manifest = json.loads(manifest.read_text())
        if not (self.dir / "metrics.txt").is_file():
            raise DataError(f"{self.dir} has no metrics.txt; task {self.manifest.get('task')!r} reports no metrics")
        self.report = MetricReport.load(self.dir)
        self.name = self.dir.name


def headline(report: MetricReport) -> tuple[str, float]:
    """(label, value) compared across runs in the delta column."""
    if report.kind in DELTA_METRIC:
        key, metric, label = DELTA_METRIC[report.kind]
        return label, report.metrics[key][metric]
    return "Dice", float(np.mean([v["dice"] for v in report.metrics.values()]))


def comparison_table(runs: list[tuple[str, MetricReport]]) -> str:
    """The paper-layout table for all runs; with two or more runs a final column
    holds each run's headline metric minus the first run's, written exactly."""
    kinds = sorted({r.kind for _, r in runs})
    if len(kinds) != 1:
        raise IncompatibleReports(f"cannot compare report kinds {kinds}")
    text = format_table(runs)
    if len(runs) < 2:
        return text
    lines = text.splitlines()
    label, base = headline(runs[0][1])
    out = [lines[0] + f"\tdelta.{label}"]
    for line, (_, rep) in zip(lines[1:], runs):
        out.append(line + f"\t{headline(rep)[1] - base!r}")
    return "\n".join(out) + "\n"


def _unique_names(runs: list[Run]) -> list[str]:
    names, seen = [], {}
    for r in runs:
        n = r.name
        seen[n] = seen.get(n, 0) + 1
        names.append(n if seen[n] == 1 else f"{n}-{seen[n]}")
    return names


def build_report(run_dirs, out_dir) -> Path:
    if not run_dirs:
        raise DataError("report needs at least one run directory")
    runs = [Run(d) for d in run_dirs]
    named = list(zip(_unique_names(runs), [r.report for r in runs]))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "comparison.tsv").write_text(comparison_table(named))
    kind = named[0][1].kind
    if kind == "multilabel":
        (out / "per_label.tsv").write_text(format_per_label_table(named))
    for (name, rep), run in zip(named, runs):
        if rep.confusion is not None:
            pct = figures.confusion_heatmap(rep.confusion, out / "figures" / f"confusion_{name}.png", name)
            np.savetxt(out / f"confusion_percent_{name}.tsv", pct, fmt="%.1f", delimiter="\t")
        pr = run.dir / "pr_curves.tsv"
        if pr.is_file():
            figures.pr_curves(read_pr_curves(pr), out / "figures" / f"pr_{name}.png", name)
        ladder = run.dir / "ladder.tsv"
        if ladder.is_file():
            rows = [ln.split("\t") for ln in ladder.read_text().splitlines()]
            values = [(r[0], {"kappa": float(r[1]), "f1": float(r[2]), "auc_roc": float(r[3])}) for r in rows[1:]]
            figures.ladder_chart(values, out / "figures" / f"ladder_{name}.png")
    if kind == "multilabel" and len(named) > 1:
        figures.ladder_chart([(n, r.metrics["mean"]) for n, r in named], out / "figures" / "comparison.png")
    return out
