"""Dataset inventory, per-task train/validation/test splits and synthetic data."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy import ndimage

from .augment import crop_square_resize, load_image, save_png
from .errors import DataError, ParameterError
from .tensor import Tensor

logger = logging.getLogger(__name__)

CLASS_NAMES = ("lung_aca", "lung_scc", "lung_n", "colon_aca", "colon_n")
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}

# label 1 is the positive class of each binary task
TASKS: dict[str, dict[str, int]] = {
    "lung": {"lung_aca": 1, "lung_scc": 1, "lung_n": 0},
    "lung_subtype": {"lung_aca": 1, "lung_scc": 0},
    "colon": {"colon_aca": 1, "colon_n": 0},
}
TASK_TITLES = {"lung": "Lung cancer", "lung_subtype": "Lung cancer subtypes", "colon": "Colon cancer"}
# summary columns: adenocarcinoma/carcinoma, squamous cell, benign
_COLUMN_OF = {"lung_aca": "acc/cc", "colon_aca": "acc/cc", "lung_scc": "scc", "lung_n": "ben", "colon_n": "ben"}
COLUMNS = ("acc/cc", "scc", "ben")
PARTITIONS = ("train", "validation", "test")

Inventory = dict  # class name -> sorted list of paths


@dataclass(eq=False)
class LabeledExample:
    image: Union[str, np.ndarray]
    class_name: str
    label: int


@dataclass
class DatasetSplit:
    task: str
    train: list = field(default_factory=list)
    validation: list = field(default_factory=list)
    test: list = field(default_factory=list)
    seed: int = 0

    def partition(self, name: str) -> list:
        return getattr(self, name)

    def counts(self) -> dict[str, dict[str, int]]:
        out = {}
        for name in PARTITIONS:
            per = {c: 0 for c in TASKS[self.task]}
            for ex in self.partition(name):
                per[ex.class_name] += 1
            out[name] = per
        return out


def _check_task(task: str) -> dict[str, int]:
    if task not in TASKS:
        raise DataError(f"unknown task {task!r}; choose from {sorted(TASKS)}")
    return TASKS[task]


def scan_dataset(root) -> Inventory:
    """Find class-named directories anywhere under ``root`` and list their images.

    Works for a flat layout (root/colon_aca/...) and for the nested layout of
    the public archive (root/lung_image_sets/lung_aca/...).
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} does not exist")
    inventory: dict[str, list[str]] = {}
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        images = sorted(f for f in filenames if Path(f).suffix.lower() in IMAGE_SUFFIXES)
        if not images or Path(dirpath) == root:
            continue
        name = Path(dirpath).name
        if name not in CLASS_NAMES:
            logger.warning("skipping unrecognised directory %s", dirpath)
            continue
        inventory.setdefault(name, []).extend(str(Path(dirpath) / f) for f in images)
    for name in CLASS_NAMES:
        if name in inventory:
            inventory[name] = sorted(inventory[name])
    if not inventory:
        raise DataError(f"no class directories with images under {root}")
    for name, paths in inventory.items():
        logger.info("%s: %d images", name, len(paths))
    return inventory


def missing_classes(inventory: Inventory) -> dict[str, list[str]]:
    """task -> classes absent from the inventory (empty list: task is available)."""
    return {t: [c for c in classes if not inventory.get(c)] for t, classes in TASKS.items()}


def _draw_counts(inventory: Inventory, task: str) -> dict[str, int]:
    sizes = {c: len(inventory[c]) for c in TASKS[task]}
    if task == "lung":
        per_malignant = min(sizes["lung_n"] // 2, sizes["lung_aca"], sizes["lung_scc"])
        return {"lung_aca": per_malignant, "lung_scc": per_malignant, "lung_n": 2 * per_malignant}
    n = min(sizes.values())
    return {c: n for c in sizes}


def build_split(inventory: Inventory, task: str, seed: int = 0) -> DatasetSplit:
    """Per-class seeded shuffle, floor(20%) to test, floor(20%) of the rest to validation."""
    mapping = _check_task(task)
    absent = [c for c in mapping if not inventory.get(c)]
    if absent:
        raise DataError(f"task {task!r} needs classes {absent} which are missing")
    counts = _draw_counts(inventory, task)
    split = DatasetSplit(task=task, seed=seed)
    for cls, label in mapping.items():
        n = counts[cls]
        if n < 5:
            raise DataError(f"class {cls} contributes {n} images; at least 5 are needed for a split")
        paths = sorted(inventory[cls])
        rng = np.random.default_rng([int(seed), CLASS_NAMES.index(cls)])
        drawn = [paths[i] for i in rng.permutation(len(paths))[:n]]
        n_test = n // 5
        n_val = (n - n_test) // 5
        examples = [LabeledExample(p, cls, label) for p in drawn]
        split.test += examples[:n_test]
        split.validation += examples[n_test : n_test + n_val]
        split.train += examples[n_test + n_val :]
    return split


def class_count_table(split: DatasetSplit) -> dict[str, dict[str, Optional[int]]]:
    """Counts in the acc/cc, scc, ben layout; 'train' is before the validation carve-out."""
    counts = split.counts()
    out: dict[str, dict[str, Optional[int]]] = {}
    for part, per in (
        ("train", {c: counts["train"][c] + counts["validation"][c] for c in counts["train"]}),
        ("validation", counts["validation"]),
        ("test", counts["test"]),
    ):
        row: dict[str, Optional[int]] = {col: None for col in COLUMNS}
        for cls, n in per.items():
            row[_COLUMN_OF[cls]] = n
        out[part] = row
    return out


def split_summary(split: DatasetSplit) -> str:
    counts = class_count_table(split)

    def cells(row):
        return [("--" if row[c] is None else str(row[c])).rjust(7) for c in COLUMNS]

    header = "Classification task".ljust(22) + "  Training set (80%)".ljust(21) + "   Test set (20%)"
    sub = "".ljust(22) + "".join(c.rjust(7) for c in COLUMNS) * 2
    row = TASK_TITLES[split.task].ljust(22) + "".join(cells(counts["train"])) + "".join(cells(counts["test"]))
    val = "validation (of train)".ljust(22) + "".join(cells(counts["validation"]))
    return "\n".join([header, sub, row, val]) + "\n"


# -- manifests -------------------------------------------------------------


def to_manifest(split: DatasetSplit, root) -> dict:
    root = Path(root)
    parts = {}
    for name in PARTITIONS:
        parts[name] = [Path(os.path.relpath(ex.image, root)).as_posix() for ex in split.partition(name)]
    return {"task": split.task, "seed": split.seed, "root": str(root), **parts}


def write_manifest(split: DatasetSplit, root, path) -> None:
    Path(path).write_text(json.dumps(to_manifest(split, root), indent=2) + "\n")


def read_manifest(path, root=None) -> DatasetSplit:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read split manifest {path}: {exc}") from exc
    mapping = _check_task(data["task"])
    base = Path(root if root is not None else data["root"])
    split = DatasetSplit(task=data["task"], seed=int(data["seed"]))
    for name in PARTITIONS:
        for rel in data[name]:
            cls = Path(rel).parent.name
            if cls not in mapping:
                raise DataError(f"manifest entry {rel} is not in a class directory of task {data['task']}")
            split.partition(name).append(LabeledExample(str(base / rel), cls, mapping[cls]))
    return split


# -- synthetic textures ----------------------------------------------------

# texture style per class; benign tissue is smooth, malignant classes are busier
_STYLE = {"lung_n": "blob", "colon_n": "blob", "lung_aca": "striated", "colon_aca": "striated", "lung_scc": "nuclei"}
_PALETTE = {
    # (base RGB, per-channel amplitude of the texture field); classes differ in hue, not
    # just brightness, so features are not proportional across classes
    "blob": (np.array([225.0, 140.0, 170.0]), np.array([15.0, 25.0, 15.0])),
    "striated": (np.array([110.0, 110.0, 225.0]), np.array([70.0, 70.0, 25.0])),
    "nuclei": (np.array([200.0, 170.0, 110.0]), np.array([25.0, 25.0, 25.0])),
}


def _ellipses(canvas: np.ndarray, rng, count: int, radius: tuple, color) -> None:
    h, w = canvas.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(count):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        ry, rx = rng.uniform(*radius, size=2)
        phi = rng.uniform(0, np.pi)
        dy, dx = yy - cy, xx - cx
        u = (dx * np.cos(phi) + dy * np.sin(phi)) / rx
        v = (-dx * np.sin(phi) + dy * np.cos(phi)) / ry
        inside = u * u + v * v <= 1.0
        canvas[inside] = 0.35 * canvas[inside] + 0.65 * np.asarray(color)


def synth_image(style: str, size: int, rng: np.random.Generator) -> np.ndarray:
    base, spread = _PALETTE[style]
    if style == "blob":
        field_ = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma=size / 8, mode="wrap")
        field_ /= np.abs(field_).max() + 1e-12
    elif style == "striated":
        yy, xx = np.mgrid[0:size, 0:size]
        freq = rng.uniform(0.18, 0.3)
        phi = rng.uniform(0, np.pi)
        field_ = np.sin(2 * np.pi * freq * (xx * np.cos(phi) + yy * np.sin(phi)) + rng.uniform(0, 2 * np.pi))
    else:
        field_ = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma=1.5)
        field_ /= np.abs(field_).max() + 1e-12
    img = base + field_[..., None] * spread
    if style == "striated":
        _ellipses(img, rng, int(rng.integers(4, 9)), (size / 20, size / 10), (60, 20, 90))
    elif style == "nuclei":
        _ellipses(img, rng, int(rng.integers(20, 35)), (size / 40, size / 22), (70, 30, 110))
    img += rng.normal(0, 6.0, size=img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def synth_generate(out_dir, per_class: int = 200, size: int = 64, seed: int = 0, task: str = "colon") -> Inventory:
    """Write ``per_class`` PNG textures for every class of ``task`` under ``out_dir/<class>/``."""
    if per_class < 10:
        raise ParameterError(f"per_class must be >= 10, got {per_class}")
    if size < 32:
        raise ParameterError(f"size must be >= 32, got {size}")
    mapping = _check_task(task)
    out = Path(out_dir)
    inventory: Inventory = {}
    for cls in mapping:
        cdir = out / cls
        try:
            cdir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OSError(f"cannot create {cdir}: {exc}") from exc
        paths = []
        for i in range(per_class):
            rng = np.random.default_rng([int(seed), CLASS_NAMES.index(cls), i])
            path = cdir / f"{cls}_{i:04d}.png"
            save_png(synth_image(_STYLE[cls], size, rng), path)
            paths.append(str(path))
        inventory[cls] = paths
    return inventory


# -- batch loading ---------------------------------------------------------


def _square_size(input_size) -> int:
    if isinstance(input_size, int):
        return input_size
    h, w = input_size[0], input_size[1]
    if h != w:
        raise ParameterError(f"only square inputs are supported, got {h}x{w}")
    return int(h)


def decode_example(example: LabeledExample, size: int) -> np.ndarray:
    img = example.image if isinstance(example.image, np.ndarray) else load_image(example.image)
    return crop_square_resize(img, size)


def to_chw(images: Sequence[np.ndarray]) -> np.ndarray:
    """uint8 (H, W, 3) images -> float64 [N, 3, H, W] in [0, 1]."""
    return np.stack([img.transpose(2, 0, 1) for img in images]).astype(np.float64) / 255.0


def load_batch(
    examples: Sequence[LabeledExample],
    input_size,
    augmenter=None,
    indices: Optional[Sequence[int]] = None,
    cache: Optional[dict] = None,
) -> tuple[Tensor, np.ndarray]:
    """Decode, center-crop/resize, optionally augment, and stack a batch.

    ``augmenter(img, index)`` is called per image; ``indices`` default to the
    batch positions. ``cache`` maps id(example) to the decoded, resized image.
    """
    size = _square_size(input_size)
    if indices is None:
        indices = range(len(examples))
    imgs = []
    for ex, idx in zip(examples, indices):
        if cache is not None and id(ex) in cache:
            img = cache[id(ex)]
        else:
            img = decode_example(ex, size)
            if cache is not None:
                cache[id(ex)] = img
        if augmenter is not None:
            img = augmenter(img, idx)
        imgs.append(img)
    labels = np.array([ex.label for ex in examples], dtype=np.int64)
    return Tensor(to_chw(imgs)), labels
