"""``drbench`` command line.

Exit status: 0 success, 2 invalid configuration, 3 data error, 1 any other
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
from pathlib import Path

import torch

from ..errors import ConfigError, DataError, DRBenchError
from .config import OUTPUT_ROOT_ENV, load_config
from .manifest import MANIFEST_NAME, write_manifest
from .report import build_report
from .tasks import (
    run_eval_grade,
    run_eval_seg,
    run_eval_transfer,
    run_stats,
    run_synth,
    run_train_grade,
    run_train_seg,
    run_train_transfer,
)

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_DATA = 0, 1, 2, 3

# subcommand -> (required task, runner)
COMMANDS = {
    "synth": ("synth", run_synth),
    "stats": ("stats", run_stats),
    "train-seg": ("seg", run_train_seg),
    "eval-seg": ("seg", run_eval_seg),
    "train-grade": ("grade", run_train_grade),
    "eval-grade": ("grade", run_eval_grade),
    "train-transfer": ("transfer", run_train_transfer),
    "eval-transfer": ("transfer", run_eval_transfer),
}
# ``run`` executes a config's task end to end
RUN_FOR_TASK = {"synth": "synth", "stats": "stats", "seg": "train-seg", "grade": "train-grade",
                "transfer": "train-transfer"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drbench", description="DR lesion segmentation, grading and transfer benchmark")
    sub = parser.add_subparsers(dest="command", required=True)

    def experiment(name, help_text, checkpoint=False):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="experiment config (YAML) or a run manifest to re-execute")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key, e.g. train.epochs=5 (repeatable)")
        p.add_argument("--output", help=f"run directory (default: config 'output', else ${OUTPUT_ROOT_ENV}/<name>)")
        p.add_argument("--force", action="store_true", help="replace an existing run directory")
        if checkpoint:
            p.add_argument("--checkpoint", help="checkpoint to evaluate (default: config 'checkpoint')")
        return p

    experiment("run", "run the config's task end to end")
    experiment("synth", "generate a phantom dataset")
    experiment("stats", "dataset statistics tables and figure")
    experiment("train-seg", "train and evaluate a lesion segmentation model")
    experiment("eval-seg", "evaluate a segmentation checkpoint", checkpoint=True)
    experiment("train-grade", "train and evaluate a DR grading model")
    experiment("eval-grade", "evaluate a grading checkpoint", checkpoint=True)
    experiment("train-transfer", "pretrain the source branch, train the target branch (or the ablation ladder)")
    experiment("eval-transfer", "evaluate a transfer bundle", checkpoint=True)

    rep = sub.add_parser("report", help="merge finished runs into comparison tables and figures")
    rep.add_argument("runs", nargs="+", help="run directories")
    rep.add_argument("--out", help=f"report directory (default: ${OUTPUT_ROOT_ENV}/report)")
    return parser


def _prepare_output(out: Path, force: bool) -> None:
    if out.exists() and any(out.iterdir()):
        if not force:
            raise ConfigError(f"output directory {out} is not empty (use --force to replace a previous run)")
        if not (out / MANIFEST_NAME).is_file():
            raise ConfigError(f"refusing to replace {out}: it does not hold a previous run")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)


def execute(args) -> int:
    if args.command == "report":
        out = Path(args.out) if args.out else Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / "report"
        path = build_report([Path(r) for r in args.runs], out)
        print(f"report written to {path}")
        return EXIT_OK
    overrides = list(args.overrides)
    if getattr(args, "checkpoint", None):
        # recorded in the embedded config so the manifest alone re-executes the evaluation
        overrides.append(f"checkpoint={json.dumps(str(Path(args.checkpoint).resolve()))}")
    cfg = load_config(args.config, overrides)
    command = RUN_FOR_TASK[cfg.task] if args.command == "run" else args.command
    task, runner = COMMANDS[command]
    if cfg.task != task:
        where, line = cfg.line_of("task")
        raise ConfigError(f"'{command}' needs a {task!r} config, got task {cfg.task!r}", where, line)
    out = cfg.output_dir(args.output)
    _prepare_output(out, args.force)
    torch.set_num_threads(1)
    report = runner(cfg, out)
    write_manifest(out, cfg, command)
    if report is not None:
        print((out / "table.tsv").read_text(), end="")
    print(f"{command}: artifacts in {out}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return execute(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error [{exc.kind}]: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DRBenchError as exc:
        print(f"error [{exc.kind}]: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
