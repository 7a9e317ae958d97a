"""Label classes, sample records and the JSON manifest format.

A manifest is a UTF-8 JSON document::

    {
      "name": "synth-real",
      "domain": "target_real",
      "split": "val",
      "class_set": [{"id": 0, "name": "BG", "is_foreground": false}, ...],
      "samples": [
        {"sample_id": "real-0000", "image": "images/real-0000.png",
         "mask": "masks/real-0000.png", "class_histogram": {"0": 3500, ...}},
        ...
      ]
    }

Paths are stored relative to the manifest file. Masks are 8-bit single-channel
PNGs whose pixel value is the class id; images are 8-bit RGB PNGs.
"""

from __future__ import annotations

import json
import os
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image

from ._rounding import largest_remainder


class ManifestError(OSError):
    """A manifest or one of the files it references could not be read."""


class ValidationError(ValueError):
    """Manifest content violates a sample or class-set invariant."""


class Domain(str, Enum):
    SOURCE_SIM = "source_sim"
    TARGET_REAL = "target_real"
    # blended training sets carry both kinds of samples
    MIXED = "mixed"


class Split(str, Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


@dataclass(frozen=True)
class ClassEntry:
    id: int
    name: str
    is_foreground: bool


@dataclass(frozen=True)
class ClassSet:
    entries: tuple[ClassEntry, ...]

    def __post_init__(self):
        if not self.entries:
            raise ValidationError("class set is empty")
        ids = [e.id for e in self.entries]
        if ids != list(range(len(ids))):
            raise ValidationError(f"class ids must be consecutive from 0, got {ids}")
        if self.entries[0].is_foreground:
            raise ValidationError("class 0 must be background (is_foreground=false)")
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            raise ValidationError(f"class names must be unique, got {names}")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def ids(self) -> list[int]:
        return [e.id for e in self.entries]

    @property
    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    @property
    def foreground_ids(self) -> list[int]:
        return [e.id for e in self.entries if e.is_foreground]

    def name_of(self, class_id: int) -> str:
        return self.entries[class_id].name

    def id_of(self, name: str) -> int:
        for e in self.entries:
            if e.name == name:
                return e.id
        raise KeyError(name)

    def to_json(self) -> list[dict]:
        return [{"id": e.id, "name": e.name, "is_foreground": e.is_foreground} for e in self.entries]

    @classmethod
    def from_json(cls, data: Sequence[Mapping]) -> "ClassSet":
        entries = sorted(
            (ClassEntry(int(d["id"]), str(d["name"]), bool(d["is_foreground"])) for d in data),
            key=lambda e: e.id,
        )
        return cls(tuple(entries))


DEFAULT_CLASSES = ClassSet(
    (
        ClassEntry(0, "BG", False),
        ClassEntry(1, "GL", True),
        ClassEntry(2, "EP", True),
        ClassEntry(3, "UV", True),
    )
)


@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    image_path: Path
    mask_path: Path
    domain: Domain
    class_histogram: Mapping[int, int] = field(default_factory=dict)

    @property
    def num_pixels(self) -> int:
        return sum(self.class_histogram.values())


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    domain: Domain
    class_set: ClassSet
    samples: tuple[SampleRecord, ...]
    split: Split = Split.TRAIN

    def __post_init__(self):
        seen = set()
        for s in self.samples:
            if s.sample_id in seen:
                raise ValidationError(f"duplicate sample_id {s.sample_id!r} in manifest {self.name!r}")
            seen.add(s.sample_id)
            if self.domain is not Domain.MIXED and s.domain is not self.domain:
                raise ValidationError(
                    f"sample {s.sample_id!r} has domain {s.domain.value}, manifest is {self.domain.value}"
                )

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def sample_ids(self) -> set[str]:
        return {s.sample_id for s in self.samples}


def read_image(path: str | os.PathLike) -> np.ndarray:
    """Load an image as an ``(H, W, 3)`` uint8 array."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def read_mask(path: str | os.PathLike) -> np.ndarray:
    """Load a label raster as an ``(H, W)`` uint8 array of class ids."""
    with Image.open(path) as im:
        if im.mode not in ("L", "P", "I", "I;16"):
            raise ValidationError(f"mask {path} is not single-channel (mode {im.mode})")
        # palette indices are read raw; no palette semantics
        return np.asarray(im if im.mode in ("L", "P") else im.convert("I"), dtype=np.int64).astype(np.uint8)


def write_image(path: str | os.PathLike, image: np.ndarray) -> None:
    Image.fromarray(np.asarray(image, dtype=np.uint8), mode="RGB").save(path, format="PNG")


def write_mask(path: str | os.PathLike, mask: np.ndarray) -> None:
    Image.fromarray(np.asarray(mask, dtype=np.uint8), mode="L").save(path, format="PNG")


def mask_histogram(mask: np.ndarray, class_set: ClassSet) -> dict[int, int]:
    counts = np.bincount(mask.ravel(), minlength=len(class_set))
    return {k: int(counts[k]) for k in class_set.ids}


def _validate_sample(
    sample_id: str, image_path: Path, mask_path: Path, class_set: ClassSet
) -> dict[int, int]:
    for p in (image_path, mask_path):
        if not p.is_file():
            raise ManifestError(f"sample {sample_id!r}: file not found: {p}")
    try:
        mask = read_mask(mask_path)
        with Image.open(image_path) as im:
            width, height = im.size
    except ValidationError:
        raise
    except Exception as exc:
        raise ManifestError(f"sample {sample_id!r}: cannot read {image_path} / {mask_path}: {exc}") from exc
    if mask.shape != (height, width):
        raise ValidationError(
            f"sample {sample_id!r}: image is {height}x{width} but mask is {mask.shape[0]}x{mask.shape[1]}"
        )
    bad = mask[mask >= len(class_set)]
    if bad.size:
        raise ValidationError(f"sample {sample_id!r}: mask contains invalid class id {int(bad.max())}")
    return mask_histogram(mask, class_set)


def load_manifest(path: str | os.PathLike) -> DatasetManifest:
    """Read and fully validate a manifest; every referenced raster is opened."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot parse manifest {path}: {exc}") from exc

    root = path.parent
    try:
        class_set = ClassSet.from_json(doc["class_set"])
        domain = Domain(doc["domain"])
        split = Split(doc.get("split", "train"))
        name = str(doc["name"])
        raw_samples = doc["samples"]
    except (KeyError, ValueError, TypeError) as exc:
        raise ValidationError(f"malformed manifest {path}: {exc}") from exc

    samples = []
    for entry in raw_samples:
        sid = str(entry["sample_id"])
        image_path = (root / entry["image"]).resolve()
        mask_path = (root / entry["mask"]).resolve()
        hist = _validate_sample(sid, image_path, mask_path, class_set)
        cached = entry.get("class_histogram")
        if cached is not None:
            cached = {int(k): int(v) for k, v in cached.items()}
            full = {k: cached.get(k, 0) for k in class_set.ids}
            if full != hist or set(cached) - set(class_set.ids):
                raise ValidationError(f"sample {sid!r}: cached class_histogram does not match mask pixels")
        sample_domain = Domain(entry.get("domain", domain.value))
        samples.append(SampleRecord(sid, image_path, mask_path, sample_domain, hist))
    return DatasetManifest(name, domain, class_set, tuple(samples), split)


def manifest_to_json(manifest: DatasetManifest, root: str | os.PathLike) -> dict:
    root = Path(root)
    samples = []
    for s in manifest.samples:
        entry = {
            "sample_id": s.sample_id,
            "image": Path(os.path.relpath(s.image_path, root)).as_posix(),
            "mask": Path(os.path.relpath(s.mask_path, root)).as_posix(),
            "class_histogram": {str(k): int(v) for k, v in sorted(s.class_histogram.items())},
        }
        if manifest.domain is Domain.MIXED:
            entry["domain"] = s.domain.value
        samples.append(entry)
    return {
        "name": manifest.name,
        "domain": manifest.domain.value,
        "split": manifest.split.value,
        "class_set": manifest.class_set.to_json(),
        "samples": samples,
    }


def write_manifest(manifest: DatasetManifest, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = manifest_to_json(manifest, path.parent.resolve())
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return path


def dominant_foreground_class(sample: SampleRecord, class_set: ClassSet = DEFAULT_CLASSES) -> int | None:
    """Foreground class with the most pixels; ties go to the smaller id."""
    best, best_count = None, 0
    for k in class_set.foreground_ids:
        count = sample.class_histogram.get(k, 0)
        if count > best_count:
            best, best_count = k, count
    return best


def split_dataset(
    manifest: DatasetManifest, fractions: tuple[float, float, float], seed: int
) -> tuple[DatasetManifest, DatasetManifest, DatasetManifest]:
    """Shuffle with ``seed`` and cut into train/val/test by largest-remainder sizes."""
    if len(fractions) != 3:
        raise ValueError(f"expected three fractions, got {fractions}")
    if any(f < 0 for f in fractions):
        raise ValueError(f"fractions must be non-negative, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)}")

    n = len(manifest.samples)
    sizes = largest_remainder([f * n for f in fractions], n)
    order = np.random.default_rng(seed).permutation(n)
    parts, start = [], 0
    for split, size in zip(Split, sizes):
        picked = tuple(manifest.samples[i] for i in order[start : start + size])
        parts.append(replace(manifest, samples=picked, split=split))
        start += size
    return tuple(parts)


def subset(manifest: DatasetManifest, samples: Sequence[SampleRecord], **changes) -> DatasetManifest:
    return replace(manifest, samples=tuple(samples), **changes)
