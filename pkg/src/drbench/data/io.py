"""On-disk dataset layout.

    <root>/images/<id>.png          8-bit RGB
    <root>/masks/<lesion>/<id>.png  8-bit single channel, 0 or 255; absent file = empty mask
    <root>/manifest.tsv             id, grade, LM, PM, then the 8 disease bits; '-' = unknown
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import DataError, DimensionMismatch, GradeOutOfRange, MissingMaskFile, UnknownLesionKind
from .types import DISEASES, FLAGS, LESIONS, NUM_GRADES, Dataset, DatasetKind, FundusSample

MANIFEST_COLUMNS = ("id", "grade", *FLAGS, *DISEASES)


def quantize_image(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def dequantize_image(pixels: np.ndarray) -> np.ndarray:
    return pixels.astype(np.float32) / np.float32(255.0)


def read_image(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return dequantize_image(np.asarray(im.convert("RGB")))


def write_image(path: Path, image: np.ndarray) -> None:
    Image.fromarray(quantize_image(image), mode="RGB").save(path, format="PNG")


def read_mask(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) > 127


def write_mask(path: Path, mask: np.ndarray) -> None:
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L").save(path, format="PNG")


def _fmt_opt(value) -> str:
    return "-" if value is None else str(int(value))


def write_manifest(path: Path, samples) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        for s in samples:
            flags = s.lesion_flags or {}
            row = [s.id, _fmt_opt(s.grade)] + [_fmt_opt(flags.get(f)) for f in FLAGS]
            if s.disease_labels is None:
                row += ["-"] * len(DISEASES)
            else:
                row += [str(int(b)) for b in s.disease_labels]
            w.writerow(row)


def _parse_opt_int(text: str, sample_id: str, column: str):
    if text == "-":
        return None
    try:
        return int(text)
    except ValueError:
        raise DataError(f"manifest column {column!r} has non-integer value {text!r}", sample_id) from None


def read_manifest(path: Path) -> list[dict]:
    if not path.is_file():
        raise MissingMaskFile(f"{path} not found; 0 samples loaded")
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader, None)
        if header is None or tuple(header) != MANIFEST_COLUMNS:
            raise DataError(f"{path}: header must be {' '.join(MANIFEST_COLUMNS)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(MANIFEST_COLUMNS):
                raise DataError(f"{path}:{lineno}: expected {len(MANIFEST_COLUMNS)} columns, got {len(row)}")
            sid = row[0]
            grade = _parse_opt_int(row[1], sid, "grade")
            if grade is not None and grade not in range(NUM_GRADES):
                raise GradeOutOfRange(f"grade {grade} outside 0..4", sid)
            flags = {f: _parse_opt_int(v, sid, f) for f, v in zip(FLAGS, row[2:4])}
            flags = None if all(v is None for v in flags.values()) else {k: bool(v) for k, v in flags.items()}
            bits = row[4:]
            if all(b == "-" for b in bits):
                labels = None
            else:
                labels = np.array([_parse_opt_int(b, sid, "disease") for b in bits], dtype=np.uint8)
            records.append({"id": sid, "grade": grade, "flags": flags, "labels": labels})
    return records


def load_dataset(root, kind, name: str | None = None) -> Dataset:
    """Load and validate a dataset directory."""
    root = Path(root)
    kind = DatasetKind(kind)
    records = read_manifest(root / "manifest.tsv")
    wants_masks = kind in (DatasetKind.SEG_SET, DatasetKind.PHANTOM)
    mask_root = root / "masks"
    if kind is DatasetKind.SEG_SET and not mask_root.is_dir():
        raise MissingMaskFile(f"{mask_root} not found; 0 samples loaded")

    known_ids = {r["id"] for r in records}
    if mask_root.is_dir():
        for lesion_dir in sorted(mask_root.iterdir()):
            if lesion_dir.name not in LESIONS:
                raise UnknownLesionKind(f"unknown lesion directory {lesion_dir.name!r}")
            for f in sorted(lesion_dir.glob("*.png")):
                if f.stem not in known_ids:
                    raise DataError(f"mask {f} has no manifest record", f.stem)

    samples = []
    for rec in records:
        sid = rec["id"]
        img_path = root / "images" / f"{sid}.png"
        if not img_path.is_file():
            raise MissingMaskFile(f"image {img_path} not found; {len(samples)} samples loaded", sid)
        image = read_image(img_path)
        masks = None
        if wants_masks or mask_root.is_dir():
            masks = {}
            for lesion in LESIONS:
                p = mask_root / lesion / f"{sid}.png"
                if p.is_file():
                    m = read_mask(p)
                    if m.shape != image.shape[:2]:
                        raise DimensionMismatch(
                            f"{lesion} mask is {m.shape[0]}x{m.shape[1]}, image is "
                            f"{image.shape[0]}x{image.shape[1]}",
                            sid,
                        )
                    masks[lesion] = m
                else:
                    masks[lesion] = np.zeros(image.shape[:2], dtype=bool)
        samples.append(
            FundusSample(
                id=sid,
                image=image,
                lesion_masks=masks,
                lesion_flags=rec["flags"],
                grade=rec["grade"],
                disease_labels=rec["labels"],
            )
        )
    if not samples:
        raise MissingMaskFile(f"{root}: manifest lists no samples; 0 samples loaded")
    return Dataset(samples, name or root.name, kind)


def save_dataset(dataset: Dataset, root) -> Path:
    """Write ``dataset`` in the directory layout read by :func:`load_dataset`."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    for s in dataset:
        write_image(root / "images" / f"{s.id}.png", s.image)
        if s.lesion_masks:
            for lesion, mask in s.lesion_masks.items():
                if mask.any():
                    d = root / "masks" / lesion
                    d.mkdir(parents=True, exist_ok=True)
                    write_mask(d / f"{s.id}.png", mask)
    if any(s.lesion_masks is not None for s in dataset):
        (root / "masks").mkdir(exist_ok=True)
    write_manifest(root / "manifest.tsv", dataset)
    return root
