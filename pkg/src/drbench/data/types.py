from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Mapping

import numpy as np

from ..errors import DataError, DimensionMismatch, GradeOutOfRange, InvalidSpec, UnknownLesionKind

LESIONS = ("MA", "HE", "EX", "SE", "IRMA", "NV")
FLAGS = ("LM", "PM")
DISEASES = ("normal", "diabetes", "glaucoma", "cataract", "AMD", "hypertension", "myopia", "other")
NUM_GRADES = 5


class DatasetKind(str, Enum):
    SEG_SET = "seg-set"
    GRADE_SET = "grade-set"
    MULTI_DISEASE = "multi-disease"
    PHANTOM = "phantom"


@dataclass(eq=False)
class FundusSample:
    """One fundus image with whatever labels are available for it.

    ``image`` is float32 [H, W, 3] in [0, 1]; masks are boolean [H, W].
    """

    id: str
    image: np.ndarray
    lesion_masks: dict[str, np.ndarray] | None = None
    lesion_flags: dict[str, bool] | None = None
    grade: int | None = None
    disease_labels: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.image.shape[:2]

    def validate(self) -> None:
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise DimensionMismatch(f"image must be [H, W, 3], got {self.image.shape}", self.id)
        if self.lesion_masks is not None:
            for kind, mask in self.lesion_masks.items():
                if kind not in LESIONS:
                    raise UnknownLesionKind(f"unknown lesion kind {kind!r}", self.id)
                if mask.shape != self.shape:
                    raise DimensionMismatch(
                        f"{kind} mask is {mask.shape[0]}x{mask.shape[1]}, image is "
                        f"{self.shape[0]}x{self.shape[1]}",
                        self.id,
                    )
        if self.lesion_flags is not None:
            unknown = set(self.lesion_flags) - set(FLAGS)
            if unknown:
                raise DataError(f"unknown lesion flags {sorted(unknown)}", self.id)
        if self.grade is not None and self.grade not in range(NUM_GRADES):
            raise GradeOutOfRange(f"grade {self.grade} outside 0..4", self.id)
        if self.disease_labels is not None:
            labels = np.asarray(self.disease_labels)
            if labels.shape != (len(DISEASES),) or not np.isin(labels, (0, 1)).all():
                raise DataError("disease_labels must be a binary vector of length 8", self.id)
            if labels.sum() == 0:
                raise DataError("disease_labels has no set bit", self.id)

    def mask(self, lesion: str) -> np.ndarray:
        if self.lesion_masks is None or lesion not in self.lesion_masks:
            return np.zeros(self.shape, dtype=bool)
        return self.lesion_masks[lesion]


@dataclass(eq=False)
class Dataset:
    samples: list[FundusSample]
    name: str = "dataset"
    kind: DatasetKind = DatasetKind.PHANTOM

    def __post_init__(self):
        self.kind = DatasetKind(self.kind)
        seen = set()
        for s in self.samples:
            if s.id in seen:
                raise DataError("duplicate sample id", s.id)
            seen.add(s.id)
            s.validate()
            if self.kind is DatasetKind.SEG_SET and (s.lesion_masks is None or s.grade is None):
                raise DataError("seg-set samples need lesion masks and a grade", s.id)
            if self.kind is DatasetKind.GRADE_SET and s.grade is None:
                raise DataError("grade-set samples need a grade", s.id)
            if self.kind is DatasetKind.MULTI_DISEASE and s.disease_labels is None:
                raise DataError("multi-disease samples need disease labels", s.id)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[FundusSample]:
        return iter(self.samples)

    def __getitem__(self, i: int) -> FundusSample:
        return self.samples[i]

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    def subset(self, indices, name: str | None = None) -> Dataset:
        return Dataset([self.samples[i] for i in indices], name or self.name, self.kind)

    def has_grades(self) -> bool:
        return len(self) > 0 and all(s.grade is not None for s in self.samples)


@dataclass
class DatasetStatistics:
    images_per_lesion: dict[str, int]
    grade_distribution: dict[int, int]
    lesions_per_grade_normalized: dict[tuple[int, str], float]
    images_per_flag: dict[str, int] = field(default_factory=dict)


@dataclass(frozen=True)
class LesionDensity:
    """How many lesions of one kind to plant per image, and how large.

    ``prob`` is the chance an image receives this lesion kind at all; when it
    does, the count is drawn uniformly from [min_count, max_count].
    """

    min_count: int
    max_count: int
    min_radius: int
    max_radius: int
    prob: float = 1.0

    def validate(self, kind: str) -> None:
        if not (0 <= self.min_count <= self.max_count):
            raise InvalidSpec(f"{kind}: need 0 <= min_count <= max_count")
        if not (1 <= self.min_radius <= self.max_radius):
            raise InvalidSpec(f"{kind}: need 1 <= min_radius <= max_radius")
        if not (0.0 <= self.prob <= 1.0):
            raise InvalidSpec(f"{kind}: prob must lie in [0, 1]")


@dataclass(frozen=True)
class PhantomSpec:
    num_images: int
    image_size: int = 128
    densities: Mapping[str, LesionDensity] = field(default_factory=dict)
    seed: int = 0
    healthy_rate: float = 0.0
    lm_rate: float = 0.0
    pm_rate: float = 0.0
    # fraction of a new lesion's footprint (plus 1 px margin) allowed to overlap earlier ones
    overlap_budget: float = 0.0
    max_attempts: int = 200
    vessels: bool = True
    color_cast: tuple[float, float, float] = (1.0, 1.0, 1.0)
    noise_std: float = 0.0
    name: str = "phantom"
    id_prefix: str = "ph"

    def validate(self) -> None:
        if self.num_images < 0:
            raise InvalidSpec("num_images must be >= 0")
        if self.image_size < 32:
            raise InvalidSpec("image_size must be at least 32 px")
        if self.seed < 0:
            raise InvalidSpec("seed must be unsigned")
        for kind, d in self.densities.items():
            if kind not in LESIONS:
                raise InvalidSpec(f"unknown lesion kind {kind!r}")
            d.validate(kind)
        for name in ("healthy_rate", "lm_rate", "pm_rate", "overlap_budget"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidSpec(f"{name} must lie in [0, 1]")
        if self.max_attempts < 1:
            raise InvalidSpec("max_attempts must be >= 1")
