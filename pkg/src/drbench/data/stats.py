from __future__ import annotations

from ..errors import EmptyDataset, MissingLabels
from .types import FLAGS, LESIONS, NUM_GRADES, Dataset, DatasetStatistics


def compute_statistics(dataset: Dataset) -> DatasetStatistics:
    """Lesion and grade counts behind the dataset overview figures.

    A lesion counts for an image when its mask has at least one positive
    pixel. The per-grade table divides lesion-image counts by the number of
    images at that grade (0.0 for grades with no images).
    """
    if len(dataset) == 0:
        raise EmptyDataset(f"dataset {dataset.name!r} is empty")
    missing = [s.id for s in dataset if s.grade is None]
    if missing:
        raise MissingLabels("compute_statistics needs a grade on every sample", missing[0])

    present = [{k for k in LESIONS if s.mask(k).any()} for s in dataset]
    grade_distribution = {g: 0 for g in range(NUM_GRADES)}
    for s in dataset:
        grade_distribution[s.grade] += 1
    images_per_lesion = {k: sum(k in p for p in present) for k in LESIONS}
    images_per_flag = {
        f: sum(bool(s.lesion_flags and s.lesion_flags.get(f)) for s in dataset) for f in FLAGS
    }
    normalized = {}
    for g in range(NUM_GRADES):
        n = grade_distribution[g]
        for k in LESIONS:
            hits = sum(1 for s, p in zip(dataset, present) if s.grade == g and k in p)
            normalized[(g, k)] = hits / n if n else 0.0
    return DatasetStatistics(images_per_lesion, grade_distribution, normalized, images_per_flag)


def write_statistics(stats: DatasetStatistics, path) -> None:
    with open(path, "w") as fh:
        fh.write("section\tkey\tvalue\n")
        for k, v in stats.images_per_lesion.items():
            fh.write(f"images_per_lesion\t{k}\t{v}\n")
        for k, v in stats.images_per_flag.items():
            fh.write(f"images_per_flag\t{k}\t{v}\n")
        for g, v in stats.grade_distribution.items():
            fh.write(f"grade_distribution\t{g}\t{v}\n")
        for (g, k), v in stats.lesions_per_grade_normalized.items():
            fh.write(f"lesions_per_grade_normalized\t{g}/{k}\t{v!r}\n")
