"""Experiment configuration: YAML files with includes, dotted CLI overrides,
pydantic validation and diagnostics anchored to the line that set a key."""

from __future__ import annotations

import copy
import hashlib
import json
import os
from pathlib import Path
from typing import Annotated, Any, Literal, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, ValidationError, model_validator

from ..errors import ConfigError
from ..training import TrainConfig

OUTPUT_ROOT_ENV = "DRBENCH_OUTPUT_ROOT"
INCLUDE_KEY = "include"
# keys whose string values are filesystem paths, resolved against the file that set them
PATH_KEYS = ("root", "checkpoint", "seg_checkpoint")
BUNDLED = Path(__file__).parent / "configs"


def bundled_config(name: str) -> Path:
    """Path of a config shipped with the package (seg, synth, grade, transfer, ladder)."""
    path = BUNDLED / f"{name}.yaml"
    if not path.is_file():
        raise ConfigError(f"no bundled config named {name!r}")
    return path


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PhantomSection(Section):
    preset: Literal["seg", "grading", "disease"] = "seg"
    num_images: int = Field(8, ge=1)
    image_size: int = Field(128, ge=32)
    # default: derived from the experiment seed and the data role
    seed: int | None = Field(None, ge=0)
    overlap_budget: float = Field(0.0, ge=0.0, le=1.0)
    healthy_rate: float | None = Field(None, ge=0.0, le=1.0)
    lm_rate: float = Field(0.0, ge=0.0, le=1.0)
    pm_rate: float = Field(0.0, ge=0.0, le=1.0)
    noise_std: float = Field(0.0, ge=0.0)


class DataRef(Section):
    """Either a dataset directory or an in-memory phantom."""

    root: str | None = None
    kind: Literal["seg-set", "grade-set", "multi-disease", "phantom"] = "phantom"
    phantom: PhantomSection | None = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.root is None) == (self.phantom is None):
            raise ValueError("give exactly one of 'root' or 'phantom'")
        return self


class TrainSection(Section):
    epochs: int = Field(50, ge=0)
    batch_size: int = Field(8, ge=1)
    learning_rate: float = Field(1e-3, gt=0)
    optimizer: Literal["adam", "sgd-momentum"] = "adam"
    momentum: float = Field(0.9, ge=0, lt=1)
    pos_weight: float | None = Field(None, ge=1)
    dice_weight: float = Field(1.0, ge=0)

    def build(self, seed: int) -> TrainConfig:
        return TrainConfig(seed=seed, **self.model_dump())


class Common(Section):
    seed: int = Field(ge=0)
    name: str | None = None
    output: str | None = None


class SynthConfig(Common):
    task: Literal["synth"]
    phantom: PhantomSection


class StatsConfig(Common):
    task: Literal["stats"]
    data: DataRef


class SegData(Section):
    train: DataRef
    test: DataRef | None = None
    folds: int | None = Field(None, ge=2)

    @model_validator(mode="after")
    def _split(self):
        if self.test is not None and self.folds is not None:
            raise ValueError("use either a test set or cross-validation folds, not both")
        return self


class SegModelSection(Section):
    variant: Literal["plain", "multiclass", "attention", "dense"] = "dense"
    depth: int = Field(3, ge=1)
    base_channels: int = Field(8, ge=1)
    growth_rate: int = Field(8, ge=1)
    dense_layers: int = Field(2, ge=1)
    input_size: int = Field(128, ge=8)
    out_channels: int = Field(6, ge=1)


class SegConfig(Common):
    task: Literal["seg"]
    data: SegData
    model: SegModelSection = SegModelSection()
    train: TrainSection = TrainSection()
    lesion: str = "all"
    export_threshold: float = Field(0.25, ge=0.0, le=1.0)
    export_masks: bool = True
    checkpoint: str | None = None


class GradeData(Section):
    train: DataRef
    test: DataRef


class GradeModelSection(Section):
    backbone: Literal["small-cnn", "dense-backbone"] = "small-cnn"
    num_stages: int = Field(3, ge=1)
    base_channels: int = Field(8, ge=1)
    growth_rate: int = Field(8, ge=1)
    fusion: Literal["none", "lesion-mask-concat", "lesion-feature-concat"] = "none"
    aux_heads: bool = False
    input_size: int = Field(64, ge=8)


class GradeConfig(Common):
    task: Literal["grade"]
    data: GradeData
    model: GradeModelSection = GradeModelSection()
    train: TrainSection = TrainSection()
    lm_pm_weight: float = Field(0.5, ge=0.0)
    seg_checkpoint: str | None = None
    checkpoint: str | None = None
    cam_images: int = Field(4, ge=0)

    @model_validator(mode="after")
    def _fusion_needs_seg(self):
        if self.model.fusion != "none" and self.seg_checkpoint is None:
            raise ValueError(f"fusion {self.model.fusion!r} needs 'seg_checkpoint'")
        return self


class TransferData(Section):
    source: DataRef
    target_train: DataRef
    target_test: DataRef


class TransferModelSection(Section):
    depth: int = Field(3, ge=1)
    base_channels: int = Field(8, ge=1)
    growth_rate: int = Field(8, ge=1)
    dense_layers: int = Field(2, ge=1)
    input_size: int = Field(64, ge=8)
    disc_hidden: int = Field(32, ge=1)


class WeightsSection(Section):
    lam: float = Field(1.0, ge=0.0)
    gamma: float = Field(0.5, ge=0.0)


class LadderSection(Section):
    seeds: list[int] = Field(min_length=1)
    rungs: list[Literal["B", "B+MTC", "B+MTC+AA", "B+MTC+DSAA"]] = ["B", "B+MTC", "B+MTC+AA", "B+MTC+DSAA"]


class TransferConfig(Common):
    task: Literal["transfer"]
    data: TransferData
    model: TransferModelSection = TransferModelSection()
    stage1: TrainSection = TrainSection(epochs=100, batch_size=32, learning_rate=0.01, momentum=0.5)
    stage2: TrainSection = TrainSection(epochs=300, batch_size=64, learning_rate=0.001, momentum=0.5)
    weights: WeightsSection = WeightsSection()
    rung: Literal["B", "B+MTC", "B+MTC+AA", "B+MTC+DSAA"] = "B+MTC+DSAA"
    ladder: LadderSection | None = None
    checkpoint: str | None = None
    logit_maps: int = Field(2, ge=0)


ExperimentConfig = Annotated[
    Union[SynthConfig, StatsConfig, SegConfig, GradeConfig, TransferConfig], Field(discriminator="task")
]
_ADAPTER = TypeAdapter(ExperimentConfig)


# --------------------------------------------------------------------------- loading


class _Loaded:
    """Merged raw mapping plus, for every key path, the file and line that set it."""

    def __init__(self):
        self.data: dict = {}
        self.where: dict[tuple, tuple[str, int | None]] = {}


def _node_lines(node, prefix=()) -> dict[tuple, int]:
    out = {}
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = prefix + (k.value,)
            out[path] = k.start_mark.line + 1
            out.update(_node_lines(v, path))
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            path = prefix + (i,)
            out[path] = v.start_mark.line + 1
            out.update(_node_lines(v, path))
    return out


def _parse_file(path: Path) -> tuple[Any, dict[tuple, int]]:
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(path)) from None
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigError(f"malformed config: {problem}", str(path), line) from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping of keys to values", str(path), 1)
    return data, _node_lines(node) if node is not None else {}


def _resolve_paths(data, path: Path, prefix=()):
    for k, v in list(data.items()):
        if isinstance(v, dict):
            _resolve_paths(v, path, prefix + (k,))
        elif k in PATH_KEYS and isinstance(v, str) and not Path(v).is_absolute():
            data[k] = str((path.parent / v).resolve())


def _merge(dst: dict, src: dict, where: dict, src_where: dict, prefix=()):
    for k, v in src.items():
        p = prefix + (k,)
        if isinstance(v, dict) and isinstance(dst.get(k), dict):
            _merge(dst[k], v, where, src_where, p)
        else:
            dst[k] = copy.deepcopy(v)
            for q in [q for q in where if q[: len(p)] == p]:
                del where[q]
            for q, loc in src_where.items():
                if q[: len(p)] == p:
                    where[q] = loc


def _load_tree(path: Path, stack: tuple[Path, ...]) -> _Loaded:
    path = path.resolve()
    if path in stack:
        raise ConfigError("include cycle", str(path))
    data, lines = _parse_file(path)
    if "config" in data and "config_sha256" in data:
        # a run manifest: re-execute its embedded config
        data = data["config"]
        lines = {}
    out = _Loaded()
    includes = data.pop(INCLUDE_KEY, [])
    if isinstance(includes, str):
        includes = [includes]
    if not isinstance(includes, list) or not all(isinstance(i, str) for i in includes):
        raise ConfigError("'include' must be a file name or a list of file names", str(path), lines.get((INCLUDE_KEY,)))
    for inc in includes:
        inc_path = path.parent / inc
        if not inc_path.is_file():
            raise ConfigError(f"included file {inc!r} not found", str(path), lines.get((INCLUDE_KEY,)))
        sub = _load_tree(inc_path, stack + (path,))
        _merge(out.data, sub.data, out.where, sub.where)
    _resolve_paths(data, path)
    own = {q: (str(path), ln) for q, ln in lines.items() if q[:1] != (INCLUDE_KEY,)}
    _merge(out.data, data, out.where, own)
    return out


def parse_override(text: str) -> tuple[list[str], Any]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like key.path=value", "--set")
    key, value = text.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"override {text!r} has an empty key", "--set")
    try:
        parsed = yaml.safe_load(value) if value.strip() else ""
    except yaml.YAMLError:
        raise ConfigError(f"override {text!r} has an unparsable value", "--set") from None
    return parts, parsed


def _apply_override(loaded: _Loaded, parts: list[str], value):
    node = loaded.data
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            node[p] = {}
        node = node[p]
    node[parts[-1]] = value
    loaded.where[tuple(parts)] = ("--set", None)


def _anchor(loaded: _Loaded, loc: tuple, fallback: str) -> tuple[str, int | None]:
    return _anchor_where(loaded.where, loc, fallback)


def _validation_error(exc: ValidationError, loaded: _Loaded, fallback: str) -> ConfigError:
    task = loaded.data.get("task")

    def located(err):
        loc = list(err["loc"])
        return loc[1:] if loc and loc[0] == task else loc  # drop the discriminator tag

    errors = exc.errors()
    # prefer an error on a key some file actually wrote: it has a line to point at
    err = next((e for e in errors if tuple(located(e)) in loaded.where), errors[0])
    loc = located(err)
    where, line = _anchor(loaded, tuple(loc), fallback)
    key = ".".join(str(p) for p in loc) or "<config>"
    msg = err["msg"]
    if err["type"] == "union_tag_invalid":
        msg = f"must be one of synth, stats, seg, grade, transfer (got {task!r})"
        key = "task"
        where, line = _anchor(loaded, ("task",), fallback)
    elif err["type"] == "union_tag_not_found":
        msg = "missing required key 'task'"
    if line is None and where == fallback:
        line = 1  # a key absent from every file: point at the top-level config
    return ConfigError(f"{key}: {msg}", where, line)


class LoadedConfig:
    """Validated experiment plus the merged raw mapping it came from."""

    def __init__(self, experiment, raw: dict, path: Path, where: dict):
        self.experiment = experiment
        self.raw = raw
        self.path = path
        self.where = where

    @property
    def task(self) -> str:
        return self.experiment.task

    @property
    def seed(self) -> int:
        return self.experiment.seed

    def canonical(self) -> dict:
        """The config content embedded in manifests: everything but the output location."""
        return {k: v for k, v in self.raw.items() if k != "output"}

    def canonical_text(self) -> str:
        return json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))

    def sha256(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()

    def output_dir(self, cli_output: str | None = None) -> Path:
        if cli_output:
            return Path(cli_output)
        if self.experiment.output:
            out = Path(self.experiment.output)
            return out if out.is_absolute() else (self.path.parent / out)
        name = self.experiment.name or self.path.stem
        return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / name

    def line_of(self, *key) -> tuple[str, int | None]:
        return _anchor_where(self.where, key, str(self.path))

    def require_path(self, value: str | None, *key) -> Path:
        """Referenced paths must exist when the run starts."""
        if value is None:
            where, line = self.line_of(*key)
            raise ConfigError(f"{'.'.join(key)}: a path is required for this command", where, line)
        p = Path(value)
        if not p.exists():
            where, line = self.line_of(*key)
            raise ConfigError(f"{'.'.join(key)}: path {value!r} does not exist", where, line)
        return p


def _anchor_where(where: dict, key: tuple, fallback: str):
    key = tuple(key)
    while key:
        if key in where:
            return where[key]
        key = key[:-1]
    return fallback, None


def load_config(path, overrides=()) -> LoadedConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("config file not found", str(path))
    loaded = _load_tree(path, ())
    for text in overrides:
        _apply_override(loaded, *parse_override(text))
    try:
        experiment = _ADAPTER.validate_python(loaded.data)
    except ValidationError as exc:
        raise _validation_error(exc, loaded, str(path.resolve())) from None
    cfg = LoadedConfig(experiment, loaded.data, path.resolve(), loaded.where)
    _check_paths(cfg)
    return cfg


def _data_refs(exp):
    data = getattr(exp, "data", None)
    if data is None:
        return []
    if isinstance(data, DataRef):
        return [(("data",), data)]
    return [(("data", k), v) for k, v in data if isinstance(v, DataRef)]


def _check_paths(cfg: LoadedConfig) -> None:
    exp = cfg.experiment
    for key, ref in _data_refs(exp):
        if ref.root is not None:
            cfg.require_path(ref.root, *key, "root")
    for key in ("seg_checkpoint",):
        value = getattr(exp, key, None)
        if value is not None:
            cfg.require_path(value, key)
