"""MetricReport container and its two text serializations.

``metrics.txt`` holds one ``key/metric<TAB>value`` line per scalar in a fixed
order (floats written with ``repr`` so they round-trip exactly).
``table.tsv`` mirrors the paper-style table layout for the report kind.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DRBenchError

SEG_METRICS = ("dice", "auc_roc", "auc_pr", "mae")
SEG_HEADERS = ("Dice", "ROC", "PR", "MAE")
GRADE_METRICS = ("accuracy", "qw_kappa")
GRADE_HEADERS = ("Acc.", "Q.W.Kappa")
MULTI_METRICS = ("kappa", "f1", "auc_roc")
MULTI_HEADERS = ("Kappa", "F-1", "ROC")

KINDS = {
    "segmentation": SEG_METRICS,
    "grading": GRADE_METRICS,
    "multilabel": MULTI_METRICS,
}


@dataclass
class MetricReport:
    kind: str
    metrics: dict[str, dict[str, float]] = field(default_factory=dict)
    confusion: np.ndarray | None = None
    per_label_accuracy: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DRBenchError(f"unknown report kind {self.kind!r}")
        for key, values in self.metrics.items():
            for name, v in values.items():
                if not math.isfinite(v):
                    raise DRBenchError(f"non-finite metric {key}/{name}")

    def scalar_lines(self) -> list[tuple[str, float]]:
        order = KINDS[self.kind]
        out = []
        for key, values in self.metrics.items():
            names = [m for m in order if m in values] + [m for m in values if m not in order]
            out += [(f"{key}/{m}", float(values[m])) for m in names]
        for label, v in self.per_label_accuracy.items():
            out.append((f"{label}/accuracy", float(v)))
        if self.confusion is not None:
            k = self.confusion.shape[0]
            out += [(f"confusion/{i}/{j}", float(self.confusion[i, j])) for i in range(k) for j in range(k)]
        return out

    def to_text(self) -> str:
        lines = [f"kind\t{self.kind}"]
        lines += [f"{k}\t{v!r}" for k, v in self.scalar_lines()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> MetricReport:
        rows = [ln.split("\t") for ln in text.splitlines() if ln.strip()]
        if not rows or rows[0][0] != "kind":
            raise DRBenchError("metrics text must start with a kind line")
        report = cls(rows[0][1])
        cells = {}
        for key, value in rows[1:]:
            parts = key.split("/")
            v = float(value)
            if parts[0] == "confusion":
                cells[(int(parts[1]), int(parts[2]))] = int(v)
            elif report.kind == "multilabel" and parts[1] == "accuracy" and parts[0] != "mean":
                report.per_label_accuracy[parts[0]] = v
            else:
                report.metrics.setdefault(parts[0], {})[parts[1]] = v
        if cells:
            k = max(i for i, _ in cells) + 1
            report.confusion = np.zeros((k, k), dtype=np.int64)
            for (i, j), v in cells.items():
                report.confusion[i, j] = v
        return report

    def save(self, directory) -> tuple[Path, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        text_path = directory / "metrics.txt"
        text_path.write_text(self.to_text())
        table_path = directory / "table.tsv"
        table_path.write_text(format_table([("run", self)]))
        return text_path, table_path

    @classmethod
    def load(cls, directory) -> MetricReport:
        return cls.from_text((Path(directory) / "metrics.txt").read_text())


def _fmt(v: float) -> str:
    return f"{v:.4f}"


def format_table(rows: list[tuple[str, MetricReport]]) -> str:
    """Tab-separated table: Table II layout for segmentation (Dice/ROC/PR/MAE
    per lesion), Acc./Q.W.Kappa for grading, Kappa/F-1/ROC for multi-label."""
    kinds = {r.kind for _, r in rows}
    if len(kinds) != 1:
        raise DRBenchError(f"cannot tabulate mixed report kinds {sorted(kinds)}")
    kind = kinds.pop()
    if kind == "segmentation":
        keys = list(dict.fromkeys(k for _, r in rows for k in r.metrics))
        header = ["run"] + [f"{k}.{h}" for k in keys for h in SEG_HEADERS]
        body = []
        for name, r in rows:
            cells = [name]
            for k in keys:
                vals = r.metrics.get(k, {})
                cells += [_fmt(vals[m]) if m in vals else "-" for m in SEG_METRICS]
            body.append(cells)
    elif kind == "grading":
        header = ["run", *GRADE_HEADERS]
        body = [[name] + [_fmt(r.metrics["all"][m]) for m in GRADE_METRICS] for name, r in rows]
    else:
        header = ["run", *MULTI_HEADERS]
        body = [[name] + [_fmt(r.metrics["mean"][m]) for m in MULTI_METRICS] for name, r in rows]
    return "\n".join("\t".join(c) for c in [header, *body]) + "\n"


def format_per_label_table(rows: list[tuple[str, MetricReport]]) -> str:
    """Per-disease accuracy, one column per run."""
    labels = list(dict.fromkeys(lbl for _, r in rows for lbl in r.per_label_accuracy))
    lines = ["\t".join(["disease"] + [name for name, _ in rows])]
    for lbl in labels:
        lines.append("\t".join([lbl] + [_fmt(r.per_label_accuracy.get(lbl, float("nan"))) for _, r in rows]))
    return "\n".join(lines) + "\n"
