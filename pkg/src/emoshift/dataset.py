"""Annotated-image dataset handling: schema, manifests, splits, toy data.

Records follow the object-attribute annotation shape: every image has one
of eight emotion labels, one global adjective, and up to 14
(object, attribute) pairs. Manifests are UTF-8 JSON-lines files with image
paths stored relative to the manifest's directory.
"""

from __future__ import annotations

import enum
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

MAX_PAIRS = 14


class SchemaError(ValueError):
    """A manifest record violates the dataset schema."""


class EmotionLabel(enum.Enum):
    AMUSEMENT = "amusement"
    AWE = "awe"
    CONTENTMENT = "contentment"
    EXCITEMENT = "excitement"
    ANGER = "anger"
    DISGUST = "disgust"
    FEAR = "fear"
    SADNESS = "sadness"

    @classmethod
    def from_string(cls, name: str) -> "EmotionLabel":
        try:
            return cls(name.strip().lower())
        except ValueError:
            known = ", ".join(e.value for e in cls)
            raise SchemaError(f"unknown emotion {name!r} (expected one of: {known})") from None

    @property
    def index(self) -> int:
        return EMOTIONS.index(self)

    @property
    def polarity(self) -> str:
        return POLARITY[self]


EMOTIONS: tuple[EmotionLabel, ...] = tuple(EmotionLabel)

POLARITY: dict[EmotionLabel, str] = {
    EmotionLabel.AMUSEMENT: "positive",
    EmotionLabel.AWE: "positive",
    EmotionLabel.CONTENTMENT: "positive",
    EmotionLabel.EXCITEMENT: "positive",
    EmotionLabel.ANGER: "negative",
    EmotionLabel.DISGUST: "negative",
    EmotionLabel.FEAR: "negative",
    EmotionLabel.SADNESS: "negative",
}


@dataclass(frozen=True)
class ImageRecord:
    """One annotated image: emotion, global adjective, object-attribute pairs."""

    image_id: str
    image_path: str
    emotion: EmotionLabel
    global_attribute: str
    pairs: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple((str(o), str(a)) for o, a in self.pairs))
        self.validate()

    def validate(self) -> None:
        if not self.image_id:
            raise SchemaError("image_id must be nonempty")
        if not isinstance(self.emotion, EmotionLabel):
            raise SchemaError(f"record {self.image_id!r}: emotion must be an EmotionLabel")
        if not self.global_attribute:
            raise SchemaError(f"record {self.image_id!r}: global_attribute must be nonempty")
        if len(self.pairs) > MAX_PAIRS:
            raise SchemaError(
                f"record {self.image_id!r}: pair limit exceeded "
                f"({len(self.pairs)} > {MAX_PAIRS})"
            )
        for obj, attr in self.pairs:
            if not obj or not attr:
                raise SchemaError(
                    f"record {self.image_id!r}: object and attribute strings must be nonempty"
                )


@dataclass
class DatasetSplit:
    """Per-class 95/5 train/test partition of record ids."""

    train: list[str]
    test: list[str]
    seed: int

    def validate(self) -> None:
        if set(self.train) & set(self.test):
            raise ValueError("train and test ids overlap")


def _record_to_obj(record: ImageRecord) -> dict:
    return {
        "image_id": record.image_id,
        "image_path": record.image_path,
        "emotion": record.emotion.value,
        "global_attribute": record.global_attribute,
        "pairs": [{"object": o, "attribute": a} for o, a in record.pairs],
    }


def _record_from_obj(obj: dict, line_no: int) -> ImageRecord:
    try:
        pairs = tuple((p["object"], p["attribute"]) for p in obj.get("pairs", []))
        return ImageRecord(
            image_id=obj["image_id"],
            image_path=obj["image_path"],
            emotion=EmotionLabel.from_string(obj["emotion"]),
            global_attribute=obj["global_attribute"],
            pairs=pairs,
        )
    except KeyError as exc:
        raise SchemaError(f"manifest line {line_no}: missing field {exc.args[0]!r}") from None


def load_manifest(path) -> list[ImageRecord]:
    """Read a JSON-lines manifest, validating every record. Order preserved."""
    path = Path(path)
    records = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"manifest line {line_no}: not valid JSON ({exc})") from None
            records.append(_record_from_obj(obj, line_no))
    return records


def write_manifest(records, path) -> Path:
    """Write records as one JSON object per line (UTF-8)."""
    path = Path(path)
    seen: set[str] = set()
    for r in records:
        if r.image_id in seen:
            raise SchemaError(f"duplicate image_id {r.image_id!r} in manifest")
        seen.add(r.image_id)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(_record_to_obj(r), ensure_ascii=False, sort_keys=True))
            fh.write("\n")
    return path


def resolve_image_path(record: ImageRecord, manifest_path) -> Path:
    """Interpret a record's (relative) image path against the manifest location."""
    p = Path(record.image_path)
    if p.is_absolute():
        return p
    return Path(manifest_path).parent / p


def make_splits(records, seed: int) -> DatasetSplit:
    """Seeded per-class shuffle, then the first 95% of each class trains.

    Classes with fewer than 20 records keep at least one test item (with a
    warning), so every class is represented on the evaluation side.
    """
    if not records:
        raise ValueError("records must be nonempty")
    by_class: dict[EmotionLabel, list[str]] = {e: [] for e in EMOTIONS}
    for r in records:
        by_class[r.emotion].append(r.image_id)

    train: list[str] = []
    test: list[str] = []
    for class_idx, emotion in enumerate(EMOTIONS):
        ids = by_class[emotion]
        n = len(ids)
        if n == 0:
            continue
        rng = np.random.default_rng(np.random.SeedSequence([seed, class_idx]))
        order = rng.permutation(n)
        shuffled = [ids[i] for i in order]
        n_test = round(0.05 * n)
        if n < 20:
            n_test = max(1, n_test)
            warnings.warn(
                f"class {emotion.value!r} has only {n} records; "
                f"test split forced to {n_test} item(s)",
                stacklevel=2,
            )
        train.extend(shuffled[: n - n_test])
        test.extend(shuffled[n - n_test :])
    split = DatasetSplit(train=train, test=test, seed=seed)
    split.validate()
    return split


# -- toy dataset -----------------------------------------------------------------

_TOY_OBJECTS = (
    "tree", "house", "river", "dog", "cloud", "road", "flower", "window",
    "mountain", "lantern",
)

# per-emotion attribute and global-adjective pools
_TOY_ATTRIBUTES: dict[EmotionLabel, tuple[str, ...]] = {
    EmotionLabel.AMUSEMENT: ("playful", "silly", "lively", "cheery"),
    EmotionLabel.AWE: ("vast", "towering", "majestic", "radiant"),
    EmotionLabel.CONTENTMENT: ("calm", "cozy", "soft", "mellow"),
    EmotionLabel.EXCITEMENT: ("vivid", "dazzling", "electric", "bold"),
    EmotionLabel.ANGER: ("harsh", "burning", "violent", "jagged"),
    EmotionLabel.DISGUST: ("murky", "rotten", "slimy", "festering"),
    EmotionLabel.FEAR: ("dark", "looming", "shadowy", "eerie"),
    EmotionLabel.SADNESS: ("gray", "wilted", "lonely", "fading"),
}

_TOY_GLOBALS: dict[EmotionLabel, tuple[str, ...]] = {
    EmotionLabel.AMUSEMENT: ("joyful", "funny"),
    EmotionLabel.AWE: ("grand", "sublime"),
    EmotionLabel.CONTENTMENT: ("peaceful", "serene"),
    EmotionLabel.EXCITEMENT: ("thrilling", "energetic"),
    EmotionLabel.ANGER: ("furious", "hostile"),
    EmotionLabel.DISGUST: ("repulsive", "foul"),
    EmotionLabel.FEAR: ("terrifying", "ominous"),
    EmotionLabel.SADNESS: ("gloomy", "mournful"),
}

# distinguishing base colors (RGB in [0,1]) per class
_TOY_COLORS = {
    EmotionLabel.AMUSEMENT: (0.95, 0.75, 0.20),
    EmotionLabel.AWE: (0.55, 0.35, 0.85),
    EmotionLabel.CONTENTMENT: (0.35, 0.75, 0.45),
    EmotionLabel.EXCITEMENT: (0.95, 0.35, 0.25),
    EmotionLabel.ANGER: (0.70, 0.10, 0.10),
    EmotionLabel.DISGUST: (0.45, 0.50, 0.15),
    EmotionLabel.FEAR: (0.15, 0.15, 0.35),
    EmotionLabel.SADNESS: (0.45, 0.55, 0.65),
}


def _toy_image(emotion: EmotionLabel, size: int, rng: np.random.Generator) -> np.ndarray:
    """Class-coded synthetic image: base color + class texture + seeded jitter."""
    base = np.array(_TOY_COLORS[emotion])
    img = np.ones((size, size, 3)) * base
    yy, xx = np.mgrid[0:size, 0:size]
    style = emotion.index % 4
    if style == 0:  # horizontal stripes
        tex = 0.5 * (1 + np.sin(2 * np.pi * yy / max(4, size // 8)))
    elif style == 1:  # vertical stripes
        tex = 0.5 * (1 + np.sin(2 * np.pi * xx / max(4, size // 8)))
    elif style == 2:  # radial rings
        r = np.hypot(yy - size / 2, xx - size / 2)
        tex = 0.5 * (1 + np.sin(2 * np.pi * r / max(4, size // 6)))
    else:  # diagonal bands
        tex = 0.5 * (1 + np.sin(2 * np.pi * (xx + yy) / max(4, size // 6)))
    img += 0.15 * (tex - 0.5)[:, :, None]
    img += rng.normal(scale=0.05, size=img.shape)
    img += rng.normal(scale=0.04)  # per-image brightness jitter
    return np.clip(img, 0.0, 1.0)


def save_image(array: np.ndarray, path) -> None:
    """Write an H x W x 3 float image in [0,1] as an 8-bit PNG."""
    data = np.clip(np.asarray(array), 0.0, 1.0)
    Image.fromarray((data * 255.0 + 0.5).astype(np.uint8)).save(path)


def load_image(path) -> np.ndarray:
    """Read an image file as an H x W x 3 float array in [0,1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return arr


def generate_toy_dataset(
    out_dir,
    n_per_class: int,
    image_size: int = 32,
    seed: int = 0,
) -> tuple[list[ImageRecord], Path]:
    """Write a small synthetic 8-class dataset and its manifest.

    Each class carries a distinct color/texture program so a small frozen-
    feature classifier can separate the classes well above chance. Returns
    (records, manifest_path); images land under ``out_dir/images/``.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    if image_size < 8:
        raise ValueError("image_size must be >= 8")
    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    image_dir.mkdir(parents=True, exist_ok=True)

    records: list[ImageRecord] = []
    for class_idx, emotion in enumerate(EMOTIONS):
        for k in range(n_per_class):
            rng = np.random.default_rng(np.random.SeedSequence([seed, class_idx, k]))
            image_id = f"{emotion.value}_{k:04d}"
            rel_path = f"images/{image_id}.png"
            save_image(_toy_image(emotion, image_size, rng), out_dir / rel_path)

            n_pairs = int(rng.integers(1, 5))
            objects = rng.choice(len(_TOY_OBJECTS), size=n_pairs, replace=False)
            attrs = _TOY_ATTRIBUTES[emotion]
            pairs = tuple(
                (_TOY_OBJECTS[o], attrs[int(rng.integers(len(attrs)))]) for o in objects
            )
            globals_ = _TOY_GLOBALS[emotion]
            records.append(
                ImageRecord(
                    image_id=image_id,
                    image_path=rel_path,
                    emotion=emotion,
                    global_attribute=globals_[int(rng.integers(len(globals_)))],
                    pairs=pairs,
                )
            )
    manifest_path = write_manifest(records, out_dir / "manifest.jsonl")
    return records, manifest_path
