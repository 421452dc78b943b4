"""Deterministic synthetic fundus images with planted, logged lesions.

Every image is generated from its own counter-based stream
``(seed, "phantom", index)``, so images can be produced in any order or in
parallel and still come out bit-identical.

Grade rule applied to planted lesion counts (T = MA + HE + EX + SE count):

    ======================  =====
    condition               grade
    ======================  =====
    NV planted              4
    IRMA planted            max(3, rule on T)
    T = 0                   0
    1 <= T <= 3             1
    4 <= T <= 7             2
    T >= 8                  3
    ======================  =====
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
from scipy import ndimage

from ..errors import DataError, LesionOverflow
from ..rng import numpy_rng
from .io import dequantize_image, quantize_image, save_dataset
from .types import (
    DISEASES,
    FLAGS,
    LESIONS,
    Dataset,
    DatasetKind,
    DatasetStatistics,
    FundusSample,
    LesionDensity,
    PhantomSpec,
)

GRADE_THRESHOLDS = ((0, 0), (1, 1), (4, 2), (8, 3))  # (min total count, grade)

LESION_COLORS = {
    "MA": (0.55, 0.03, 0.03),
    "HE": (0.40, 0.04, 0.03),
    "EX": (0.98, 0.93, 0.45),
    "SE": (0.86, 0.85, 0.80),
    "IRMA": (0.52, 0.07, 0.05),
    "NV": (0.62, 0.08, 0.10),
    "LM": (0.90, 0.80, 0.50),
    "PM": (0.82, 0.82, 0.78),
}

_STRUCT8 = np.ones((3, 3), dtype=bool)


def grade_from_counts(counts: Mapping[str, int]) -> int:
    if counts.get("NV", 0) > 0:
        return 4
    total = sum(counts.get(k, 0) for k in ("MA", "HE", "EX", "SE"))
    grade = 0
    for lo, g in GRADE_THRESHOLDS:
        if total >= lo:
            grade = g
    if counts.get("IRMA", 0) > 0:
        grade = max(grade, 3)
    return grade


@dataclass(frozen=True)
class PlantRecord:
    image_id: str
    grade: int | None
    kind: str  # lesion kind, LM/PM, or "-" for an image with nothing planted
    index: int
    cy: int
    cx: int
    radius: int
    pixels: int


LOG_COLUMNS = ("image_id", "grade", "kind", "index", "cy", "cx", "radius", "pixels")


@dataclass
class PlantingLog:
    records: list[PlantRecord] = field(default_factory=list)

    def image_ids(self) -> list[str]:
        return list(dict.fromkeys(r.image_id for r in self.records))

    def for_image(self, image_id: str) -> list[PlantRecord]:
        return [r for r in self.records if r.image_id == image_id]

    def write(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(LOG_COLUMNS)
            for r in self.records:
                w.writerow(
                    [r.image_id, "-" if r.grade is None else r.grade, r.kind, r.index, r.cy, r.cx, r.radius, r.pixels]
                )

    @classmethod
    def read(cls, path) -> PlantingLog:
        out = cls()
        with open(path, newline="") as fh:
            reader = csv.reader(fh, delimiter="\t")
            header = next(reader)
            if tuple(header) != LOG_COLUMNS:
                raise DataError(f"{path}: unexpected planting log header")
            for row in reader:
                grade = None if row[1] == "-" else int(row[1])
                out.records.append(PlantRecord(row[0], grade, row[2], *map(int, row[3:])))
        return out

    def statistics(self) -> DatasetStatistics:
        """Dataset statistics computed from the log alone (no pixels)."""
        grades: dict[str, int | None] = {}
        kinds: dict[str, set[str]] = {}
        for r in self.records:
            grades[r.image_id] = r.grade
            present = kinds.setdefault(r.image_id, set())
            if r.kind != "-" and r.pixels > 0:
                present.add(r.kind)
        if any(g is None for g in grades.values()):
            raise DataError("planting log has images without grades")
        grade_distribution = {g: 0 for g in range(5)}
        for g in grades.values():
            grade_distribution[g] += 1
        images_per_lesion = {k: sum(k in kinds[i] for i in grades) for k in LESIONS}
        images_per_flag = {f: sum(f in kinds[i] for i in grades) for f in FLAGS}
        normalized = {}
        for g in range(5):
            n = grade_distribution[g]
            for k in LESIONS:
                hits = sum(1 for i in grades if grades[i] == g and k in kinds[i])
                normalized[(g, k)] = hits / n if n else 0.0
        return DatasetStatistics(images_per_lesion, grade_distribution, normalized, images_per_flag)


# --------------------------------------------------------------------------- shapes


def _disc(yy, xx, cy, cx, r):
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def _shape_ma(rng, yy, xx, cy, cx, r):
    return _disc(yy, xx, cy, cx, r), None


def _shape_blob(n_lobes, spread):
    def shape(rng, yy, xx, cy, cx, r):
        fp = _disc(yy, xx, cy, cx, r)
        for _ in range(n_lobes):
            ang = rng.uniform(0, 2 * np.pi)
            dist = spread * r
            rr = max(1.0, r * rng.uniform(0.5, 0.8))
            fp |= _disc(yy, xx, cy + dist * np.sin(ang), cx + dist * np.cos(ang), rr)
        return fp, None

    return shape


def _shape_soft_ellipse(rng, yy, xx, cy, cx, r):
    theta = rng.uniform(0, np.pi)
    a, b = float(r), max(1.0, 0.6 * r)
    dy, dx = yy - cy, xx - cx
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    d = np.sqrt((u / a) ** 2 + (v / b) ** 2)
    fp = d <= 1.0
    alpha = np.clip((1.0 - d) * 2.5, 0.0, 1.0) * 0.9
    return fp, np.where(fp, np.maximum(alpha, 0.25), 0.0)


def _walk(rng, size, cy, cx, theta, steps, wiggle, fp):
    y, x = float(cy), float(cx)
    for _ in range(steps):
        theta += rng.normal(0.0, wiggle)
        y += np.sin(theta)
        x += np.cos(theta)
        iy, ix = int(round(y)), int(round(x))
        if not (0 <= iy < size and 0 <= ix < size):
            break
        fp[max(iy - 1, 0) : iy + 1, max(ix - 1, 0) : ix + 1] = True
    return y, x, theta


def _shape_curve(wiggle, branches):
    def shape(rng, yy, xx, cy, cx, r):
        size = yy.shape[0]
        fp = np.zeros(yy.shape, dtype=bool)
        theta = rng.uniform(0, 2 * np.pi)
        steps = max(3, int(2 * r))
        half = steps // 2
        y, x, theta = _walk(rng, size, cy, cx, theta, half, wiggle, fp)
        for _ in range(branches):
            _walk(rng, size, y, x, theta + rng.choice([-1, 1]) * rng.uniform(0.6, 1.2), half, wiggle, fp)
        _walk(rng, size, y, x, theta, steps - half, wiggle, fp)
        return fp, None

    return shape


def _shape_laser(rng, yy, xx, cy, cx, r):
    # a short arc of evenly spaced round burns
    fp = np.zeros(yy.shape, dtype=bool)
    theta = rng.uniform(0, 2 * np.pi)
    for i in range(-2, 3):
        a = theta + i * 0.5
        fp |= _disc(yy, xx, cy + 3 * r * np.sin(a), cx + 3 * r * np.cos(a), max(1, r // 2 + 1))
    return fp, None


def _shape_membrane(rng, yy, xx, cy, cx, r):
    fp, alpha = _shape_soft_ellipse(rng, yy, xx, cy, cx, r)
    stripes = 0.6 + 0.4 * np.sin((yy + xx) * 1.3)
    return fp, np.where(fp, 0.75 * stripes, 0.0)


SHAPES: dict[str, Callable] = {
    "MA": _shape_ma,
    "HE": _shape_blob(3, 0.7),
    "EX": _shape_blob(2, 0.8),
    "SE": _shape_soft_ellipse,
    "IRMA": _shape_curve(0.6, 1),
    "NV": _shape_curve(0.35, 2),
    "LM": _shape_laser,
    "PM": _shape_membrane,
}


# --------------------------------------------------------------------------- canvas


class _Canvas:
    """One image under construction: pixels, occupancy and the plant log."""

    def __init__(self, size, rng, vessels, cup_ratio=0.35):
        self.size = size
        self.rng = rng
        yy, xx = np.mgrid[0:size, 0:size]
        self.yy, self.xx = yy.astype(np.float64), xx.astype(np.float64)
        c = (size - 1) / 2.0
        self.center = (c, c)
        self.field_radius = 0.46 * size
        r = np.sqrt((self.yy - c) ** 2 + (self.xx - c) ** 2)
        self.field = r <= self.field_radius
        self.disc_center = (c + rng.uniform(-0.02, 0.02) * size, c + 0.27 * size)
        self.disc_radius = 0.07 * size
        self.macula = (c, c - 0.08 * size)
        self.image = self._background(r, vessels, cup_ratio)
        self.occupied = ndimage.binary_dilation(
            _disc(self.yy, self.xx, *self.disc_center, self.disc_radius), _STRUCT8
        )
        self.masks = {k: np.zeros((size, size), dtype=bool) for k in LESIONS}
        self.planted: list[tuple[str, int, int, int, int]] = []

    def _background(self, r, vessels, cup_ratio):
        rng, size = self.rng, self.size
        shade = 1.0 - 0.35 * (r / self.field_radius) ** 2
        tex = np.zeros_like(r)
        for _ in range(3):
            fy, fx = rng.uniform(0.02, 0.08, size=2)
            ph = rng.uniform(0, 2 * np.pi)
            tex += 0.02 * np.sin(2 * np.pi * (fy * self.yy + fx * self.xx) + ph)
        base = np.array([0.72, 0.33, 0.14]) * rng.uniform(0.93, 1.07, size=3)
        img = (shade + tex)[..., None] * base
        my, mx = self.macula
        mac = np.exp(-((self.yy - my) ** 2 + (self.xx - mx) ** 2) / (2 * (0.07 * size) ** 2))
        img *= (1.0 - 0.3 * mac)[..., None]
        if vessels:
            self._draw_vessels(img)
        dy, dx = self.disc_center
        dd = np.sqrt((self.yy - dy) ** 2 + (self.xx - dx) ** 2)
        disc_alpha = np.clip((self.disc_radius - dd) / 1.5 + 0.5, 0, 1)
        img = img * (1 - disc_alpha[..., None]) + disc_alpha[..., None] * np.array([0.95, 0.78, 0.50])
        cup_alpha = np.clip((cup_ratio * self.disc_radius - dd) / 1.5 + 0.5, 0, 1)
        img = img * (1 - cup_alpha[..., None]) + cup_alpha[..., None] * np.array([1.0, 0.93, 0.78])
        img[~self.field] = 0.0
        return img

    def _draw_vessels(self, img):
        rng = self.rng
        dy, dx = self.disc_center
        layer = np.zeros(img.shape[:2], dtype=bool)
        for sign in (-1, 1):
            for spread in (0.5, 1.1):
                theta = np.pi + sign * spread + rng.normal(0, 0.1)
                y, x = dy, dx
                for _ in range(int(0.6 * self.size)):
                    theta += rng.normal(0, 0.05) - sign * 0.012
                    y += np.sin(theta)
                    x += np.cos(theta)
                    iy, ix = int(round(y)), int(round(x))
                    if not (0 <= iy < self.size and 0 <= ix < self.size):
                        break
                    layer[iy, ix] = True
        img[layer] = 0.55 * img[layer] + 0.45 * np.array([0.45, 0.10, 0.07])

    def sample_center(self, margin, near=None, ring=None):
        rng = self.rng
        if near is not None:
            lo, hi = ring
            d = rng.uniform(lo, hi)
            a = rng.uniform(0, 2 * np.pi)
            return int(round(near[0] + d * np.sin(a))), int(round(near[1] + d * np.cos(a)))
        rmax = max(1.0, self.field_radius - margin - 2)
        d = rmax * np.sqrt(rng.uniform())
        a = rng.uniform(0, 2 * np.pi)
        return int(round(self.center[0] + d * np.sin(a))), int(round(self.center[1] + d * np.cos(a)))

    def plant(self, kind, radius, budget, attempts, image_id, near=None, ring=None):
        shape = SHAPES[kind]
        extent = 3 * radius + 2 if kind in ("IRMA", "NV", "LM") else radius + 2
        for _ in range(attempts):
            cy, cx = self.sample_center(extent, near, ring)
            fp, alpha = shape(self.rng, self.yy, self.xx, cy, cx, radius)
            n = int(fp.sum())
            if n == 0 or (fp & ~self.field).any():
                continue
            overlap = int((ndimage.binary_dilation(fp, _STRUCT8) & self.occupied).sum())
            if overlap > budget * n:
                continue
            self.occupied |= fp
            if kind in self.masks:
                self.masks[kind] |= fp
            a = np.where(fp, 1.0, 0.0) if alpha is None else alpha
            color = np.array(LESION_COLORS[kind]) * self.rng.uniform(0.95, 1.05)
            self.image = self.image * (1 - a[..., None]) + a[..., None] * np.clip(color, 0, 1)
            self.planted.append((kind, cy, cx, radius, n))
            return
        raise LesionOverflow(f"could not place {kind} of radius {radius} within the overlap budget", image_id)

    def finish(self, cast, noise_std):
        img = self.image * np.asarray(cast, dtype=np.float64)
        if noise_std > 0:
            img = img + self.rng.normal(0.0, noise_std, size=img.shape) * self.field[..., None]
        img[~self.field] = 0.0
        return dequantize_image(quantize_image(img))


def _plant_counts(canvas, counts, radii_of, spec_like, image_id):
    for kind in LESIONS:
        for _ in range(counts.get(kind, 0)):
            radius = radii_of(kind)
            if kind == "NV":
                ring = (canvas.disc_radius + radius, canvas.disc_radius + 2.5 * radius + 4)
                canvas.plant(kind, radius, spec_like.overlap_budget, spec_like.max_attempts, image_id,
                             near=canvas.disc_center, ring=ring)
            else:
                canvas.plant(kind, radius, spec_like.overlap_budget, spec_like.max_attempts, image_id)


def _records(image_id, grade, planted):
    if not planted:
        return [PlantRecord(image_id, grade, "-", -1, -1, -1, 0, 0)]
    out, idx = [], {}
    for kind, cy, cx, r, n in planted:
        i = idx.get(kind, 0)
        idx[kind] = i + 1
        out.append(PlantRecord(image_id, grade, kind, i, cy, cx, r, n))
    return out


def _phantom_image(spec: PhantomSpec, index: int):
    rng = numpy_rng(spec.seed, "phantom", index)
    image_id = f"{spec.id_prefix}{index:04d}"
    canvas = _Canvas(spec.image_size, rng, spec.vessels)
    healthy = rng.uniform() < spec.healthy_rate
    counts = {}
    for kind in LESIONS:
        d = spec.densities.get(kind)
        present = rng.uniform() < (d.prob if d else 0.0)
        n = int(rng.integers(d.min_count, d.max_count + 1)) if d else 0
        counts[kind] = n if (present and not healthy) else 0
    _plant_counts(
        canvas,
        counts,
        lambda k: int(rng.integers(spec.densities[k].min_radius, spec.densities[k].max_radius + 1)),
        spec,
        image_id,
    )
    flags = {}
    for flag, rate, radius in (("LM", spec.lm_rate, max(2, spec.image_size // 40)),
                               ("PM", spec.pm_rate, max(4, spec.image_size // 10))):
        flags[flag] = bool(rng.uniform() < rate) and not healthy
        if flags[flag]:
            canvas.plant(flag, radius, spec.overlap_budget, spec.max_attempts, image_id)
    grade = grade_from_counts(counts)
    image = canvas.finish(spec.color_cast, spec.noise_std)
    sample = FundusSample(
        id=image_id,
        image=image,
        lesion_masks=canvas.masks,
        lesion_flags=flags,
        grade=grade,
    )
    return sample, _records(image_id, grade, canvas.planted)


def synthesize_phantom(spec: PhantomSpec) -> tuple[Dataset, PlantingLog]:
    """Generate a phantom Seg-set-style dataset and the log of what was planted."""
    spec.validate()
    samples, log = [], PlantingLog()
    for i in range(spec.num_images):
        s, recs = _phantom_image(spec, i)
        samples.append(s)
        log.records.extend(recs)
    return Dataset(samples, spec.name, DatasetKind.PHANTOM), log


def write_phantom(dataset: Dataset, log: PlantingLog, root) -> Path:
    root = save_dataset(dataset, root)
    log.write(Path(root) / "planting_log.tsv")
    return root


# --------------------------------------------------------------------------- multi-disease target domain


@dataclass(frozen=True)
class DiseasePhantomSpec:
    """Target-domain phantom: disease labels built from shared lesion composites.

    ``prevalence`` gives each non-normal disease's probability; an image that
    draws no disease is labelled normal.
    """

    num_images: int
    image_size: int = 64
    seed: int = 0
    prevalence: Mapping[str, float] = field(
        default_factory=lambda: {
            "diabetes": 0.35,
            "glaucoma": 0.15,
            "cataract": 0.15,
            "AMD": 0.25,
            "hypertension": 0.25,
            "myopia": 0.15,
            "other": 0.15,
        }
    )
    color_cast: tuple[float, float, float] = (0.9, 1.05, 1.2)
    noise_std: float = 0.02
    overlap_budget: float = 0.0
    max_attempts: int = 200
    vessels: bool = True
    name: str = "disease-phantom"
    id_prefix: str = "dz"


def _small(size):
    return max(1, size // 64)


def _disease_image(spec: DiseasePhantomSpec, index: int):
    rng = numpy_rng(spec.seed, "disease-phantom", index)
    image_id = f"{spec.id_prefix}{index:04d}"
    labels = np.zeros(len(DISEASES), dtype=np.uint8)
    for j, name in enumerate(DISEASES[1:], start=1):
        labels[j] = rng.uniform() < spec.prevalence.get(name, 0.0)
    if labels.sum() == 0:
        labels[0] = 1
    has = {name: bool(labels[j]) for j, name in enumerate(DISEASES)}
    s = spec.image_size
    u = _small(s)
    canvas = _Canvas(s, rng, spec.vessels, cup_ratio=0.75 if has["glaucoma"] else 0.35)

    counts = {k: 0 for k in LESIONS}
    radii = {}
    if has["diabetes"]:
        counts["MA"] += int(rng.integers(3, 7))
        counts["HE"] += int(rng.integers(0, 2))
    if has["hypertension"]:
        counts["EX"] += int(rng.integers(2, 5))
        counts["HE"] += int(rng.integers(1, 3))
    if has["other"]:
        counts["SE"] += int(rng.integers(1, 3))
    radii = {"MA": (u, 2 * u), "HE": (2 * u, 3 * u), "EX": (u, 2 * u), "SE": (2 * u, 4 * u), "NV": (3 * u, 5 * u)}
    _plant_counts(canvas, counts, lambda k: int(rng.integers(radii[k][0], radii[k][1] + 1)), spec, image_id)
    if has["AMD"]:
        # neovascular tuft and bleeding at the macula rather than the disc
        canvas.plant("NV", int(rng.integers(3 * u, 5 * u + 1)), spec.overlap_budget, spec.max_attempts,
                     image_id, near=canvas.macula, ring=(0, 0.08 * s))
        for _ in range(int(rng.integers(1, 3))):
            canvas.plant("HE", int(rng.integers(2 * u, 3 * u + 1)), spec.overlap_budget, spec.max_attempts,
                         image_id, near=canvas.macula, ring=(0.05 * s, 0.16 * s))
    if has["myopia"]:
        dy, dx = canvas.disc_center
        dd = np.sqrt((canvas.yy - dy) ** 2 + (canvas.xx - dx) ** 2)
        crescent = (dd > canvas.disc_radius) & (dd < canvas.disc_radius * 1.6) & (canvas.xx < dx)
        canvas.image[crescent] = 0.4 * canvas.image[crescent] + 0.6 * np.array([0.92, 0.82, 0.68])
        stripes = 0.06 * np.sin((canvas.yy * 0.8 + canvas.xx * 0.35))
        canvas.image += (stripes * canvas.field)[..., None] * np.array([1.0, 0.3, 0.2])
    if has["cataract"]:
        blurred = ndimage.gaussian_filter(canvas.image, sigma=(1.2 * u, 1.2 * u, 0))
        canvas.image = 0.7 * blurred + 0.3 * np.array([0.6, 0.6, 0.6]) * canvas.field[..., None]
    image = canvas.finish(spec.color_cast, spec.noise_std)
    sample = FundusSample(id=image_id, image=image, disease_labels=labels)
    return sample


def synthesize_disease_phantom(spec: DiseasePhantomSpec) -> Dataset:
    samples = [_disease_image(spec, i) for i in range(spec.num_images)]
    return Dataset(samples, spec.name, DatasetKind.MULTI_DISEASE)


# --------------------------------------------------------------------------- presets


def seg_phantom_spec(num_images=8, image_size=128, seed=0, **kw) -> PhantomSpec:
    """All six lesion kinds at sizes that scale with the image."""
    u = max(1, image_size // 64)
    densities = {
        "MA": LesionDensity(3, 8, u, 2 * u),
        "HE": LesionDensity(1, 3, 2 * u, 4 * u, prob=0.8),
        "EX": LesionDensity(2, 5, 2 * u, 3 * u, prob=0.9),
        "SE": LesionDensity(1, 2, 3 * u, 5 * u, prob=0.5),
        "IRMA": LesionDensity(1, 1, 4 * u, 6 * u, prob=0.2),
        "NV": LesionDensity(1, 1, 4 * u, 6 * u, prob=0.2),
    }
    return PhantomSpec(num_images=num_images, image_size=image_size, densities=densities, seed=seed, **kw)


def grading_phantom_spec(num_images=64, image_size=64, seed=0, **kw) -> PhantomSpec:
    """Lesion counts spread so that all five grades occur."""
    u = max(1, image_size // 64)
    densities = {
        "MA": LesionDensity(1, 6, u, 2 * u, prob=0.9),
        "HE": LesionDensity(1, 3, 2 * u, 3 * u, prob=0.5),
        "EX": LesionDensity(1, 3, u, 2 * u, prob=0.45),
        "SE": LesionDensity(1, 2, 2 * u, 3 * u, prob=0.25),
        "IRMA": LesionDensity(1, 1, 3 * u, 5 * u, prob=0.12),
        "NV": LesionDensity(1, 1, 3 * u, 5 * u, prob=0.15),
    }
    kw.setdefault("healthy_rate", 0.2)
    return PhantomSpec(num_images=num_images, image_size=image_size, densities=densities, seed=seed, **kw)
