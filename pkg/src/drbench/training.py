"""Training configuration and loop helpers shared by all tasks."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import torch

from .errors import InvalidSpec
from .rng import torch_generator


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 8
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    # first-moment decay for adam, classical momentum for sgd-momentum
    momentum: float = 0.9
    pos_weight: float | None = None  # None: derived from the training data
    dice_weight: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 0 or self.batch_size < 1:
            raise InvalidSpec("epochs must be >= 0 and batch_size >= 1")
        if not self.learning_rate > 0:
            raise InvalidSpec("learning_rate must be > 0")
        if self.optimizer not in ("adam", "sgd-momentum"):
            raise InvalidSpec(f"unknown optimizer {self.optimizer!r}")
        if not 0 <= self.momentum < 1:
            raise InvalidSpec("momentum must lie in [0, 1)")
        if self.pos_weight is not None and self.pos_weight < 1:
            raise InvalidSpec("pos_weight must be >= 1")
        if self.dice_weight < 0:
            raise InvalidSpec("dice_weight must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def make_optimizer(params, cfg: TrainConfig) -> torch.optim.Optimizer:
    params = [p for p in params if p.requires_grad]
    if cfg.optimizer == "adam":
        return torch.optim.Adam(params, lr=cfg.learning_rate, betas=(cfg.momentum, 0.999))
    return torch.optim.SGD(params, lr=cfg.learning_rate, momentum=cfg.momentum)


class BatchOrder:
    """Seed-determined minibatch index stream; each epoch is a fresh permutation."""

    def __init__(self, n: int, batch_size: int, seed: int, name: str):
        self.n = n
        self.batch_size = batch_size
        self.generator = torch_generator(seed, name)

    def epoch(self) -> list[torch.Tensor]:
        perm = torch.randperm(self.n, generator=self.generator)
        return list(perm.split(self.batch_size))

    def steps_per_epoch(self) -> int:
        return math.ceil(self.n / self.batch_size)


class CyclicBatches:
    """Endless batches over ``n`` items, reshuffled every pass."""

    def __init__(self, n: int, batch_size: int, seed: int, name: str):
        self.order = BatchOrder(n, batch_size, seed, name)
        self._pending: list[torch.Tensor] = []

    def next(self) -> torch.Tensor:
        if not self._pending:
            self._pending = self.order.epoch()
        return self._pending.pop(0)


@dataclass
class History:
    rows: list[dict] = field(default_factory=list)

    def append(self, **row) -> None:
        self.rows.append(row)

    @property
    def losses(self) -> list[float]:
        return [r["loss"] for r in self.rows]

    def write(self, path) -> None:
        if not self.rows:
            keys = ["epoch", "loss"]
        else:
            keys = list(self.rows[0])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(keys)
            for r in self.rows:
                w.writerow(["-" if r.get(k) is None else repr(r[k]) if isinstance(r[k], float) else r[k] for k in keys])


def parameter_checksum(module: torch.nn.Module) -> float:
    return float(sum(p.detach().double().abs().sum() for p in module.parameters()))


def state_equal(a: torch.nn.Module, b: torch.nn.Module) -> bool:
    sa, sb = a.state_dict(), b.state_dict()
    return sa.keys() == sb.keys() and all(torch.equal(sa[k], sb[k]) for k in sa)
