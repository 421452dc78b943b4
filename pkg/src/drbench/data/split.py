from __future__ import annotations

from ..errors import InvalidSpec, TooFewSamples
from ..rng import numpy_rng
from .types import Dataset


def split_dataset(dataset: Dataset, folds: int = 2, seed: int = 0) -> list[tuple[Dataset, Dataset]]:
    """K-fold partition, stratified by grade when every sample has one.

    Samples are shuffled within each grade and dealt round-robin across folds,
    continuing the deal from one grade to the next so fold sizes stay within
    one of each other. Returns ``[(train, test), ...]`` with sample order
    preserved inside each part.
    """
    if folds < 2:
        raise InvalidSpec("folds must be >= 2")
    if len(dataset) < folds:
        raise TooFewSamples(f"{len(dataset)} samples cannot fill {folds} folds")
    rng = numpy_rng(seed, "split")
    if dataset.has_grades():
        groups = {}
        for i, s in enumerate(dataset):
            groups.setdefault(s.grade, []).append(i)
        order = []
        for g in sorted(groups):
            idx = groups[g]
            order.extend(idx[j] for j in rng.permutation(len(idx)))
    else:
        order = [int(i) for i in rng.permutation(len(dataset))]
    fold_of = {}
    for pos, i in enumerate(order):
        fold_of[i] = pos % folds
    out = []
    for f in range(folds):
        test = [i for i in range(len(dataset)) if fold_of[i] == f]
        train = [i for i in range(len(dataset)) if fold_of[i] != f]
        out.append((
            dataset.subset(train, f"{dataset.name}-fold{f}-train"),
            dataset.subset(test, f"{dataset.name}-fold{f}-test"),
        ))
    return out
