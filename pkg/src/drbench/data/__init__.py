"""Fundus datasets: types, on-disk layout, phantoms, statistics and splits."""

from .io import load_dataset, save_dataset
from .phantom import (
    DiseasePhantomSpec,
    PlantingLog,
    PlantRecord,
    grade_from_counts,
    grading_phantom_spec,
    seg_phantom_spec,
    synthesize_disease_phantom,
    synthesize_phantom,
    write_phantom,
)
from .split import split_dataset
from .stats import compute_statistics, write_statistics
from .types import (
    DISEASES,
    FLAGS,
    LESIONS,
    NUM_GRADES,
    Dataset,
    DatasetKind,
    DatasetStatistics,
    FundusSample,
    LesionDensity,
    PhantomSpec,
)

__all__ = [
    "DISEASES", "FLAGS", "LESIONS", "NUM_GRADES",
    "Dataset", "DatasetKind", "DatasetStatistics", "DiseasePhantomSpec", "FundusSample",
    "LesionDensity", "PhantomSpec", "PlantRecord", "PlantingLog",
    "compute_statistics", "grade_from_counts", "grading_phantom_spec", "load_dataset",
    "save_dataset", "seg_phantom_spec", "split_dataset", "synthesize_disease_phantom",
    "synthesize_phantom", "write_phantom", "write_statistics",
]
