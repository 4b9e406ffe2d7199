"""Seeded image augmentation.

Images are ``uint8`` arrays of shape (H, W, 3). A pipeline is an ordered
list of steps, each firing independently with its own probability; all
random draws for one image come from a generator keyed by
``(pipeline.seed, index)`` so results do not depend on call order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

from .errors import DataError, ParameterError

STEP_KINDS = ("rotate", "flip_h", "flip_v", "brightness", "translate", "random_crop")


def load_image(path) -> np.ndarray:
    try:
        with PILImage.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc


def save_png(img: np.ndarray, path) -> None:
    PILImage.fromarray(np.ascontiguousarray(img, dtype=np.uint8), mode="RGB").save(path, format="PNG")


def _check_image(img: np.ndarray) -> None:
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ParameterError(f"expected an (H, W, 3) image, got shape {img.shape}")


def _to_uint8(values: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(values), 0, 255).astype(np.uint8)


def crop_square_resize(img: np.ndarray, target: int = 224) -> np.ndarray:
    """Center square crop to min(H, W), then area-average resample to target x target."""
    if target <= 0:
        raise ParameterError(f"target size must be positive, got {target}")
    _check_image(img)
    h, w = img.shape[:2]
    side = min(h, w)
    top, left = (h - side) // 2, (w - side) // 2
    square = img[top : top + side, left : left + side]
    if side == target:
        return square.copy()
    resized = PILImage.fromarray(np.ascontiguousarray(square)).resize(
        (target, target), resample=PILImage.Resampling.BOX
    )
    return np.asarray(resized, dtype=np.uint8).copy()


def _resample(img: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    src = img.astype(np.float64)
    out = np.empty(img.shape, dtype=np.float64)
    for ch in range(img.shape[2]):
        out[..., ch] = ndimage.map_coordinates(src[..., ch], [rows, cols], order=1, mode="reflect")
    return _to_uint8(out)


def rotate(img: np.ndarray, angle: float) -> np.ndarray:
    """Rotate counter-clockwise by ``angle`` degrees about the center, bilinear, reflect fill."""
    if not -180.0 <= angle <= 180.0:
        raise ParameterError(f"rotation angle must be in [-180, 180], got {angle}")
    _check_image(img)
    if angle == 0:
        return img.copy()
    h, w = img.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = np.deg2rad(angle)
    c, s = np.cos(theta), np.sin(theta)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    # inverse map: where in the source does each output pixel come from
    src_x = cx + c * dx - s * dy
    src_y = cy + s * dx + c * dy
    return _resample(img, src_y, src_x)


def flip(img: np.ndarray, axis: str) -> np.ndarray:
    """Lossless mirror; 'horizontal' swaps left/right, 'vertical' swaps top/bottom."""
    if axis == "horizontal":
        return img[:, ::-1].copy()
    if axis == "vertical":
        return img[::-1, :].copy()
    raise ParameterError(f"flip axis must be 'horizontal' or 'vertical', got {axis!r}")


def adjust_brightness(img: np.ndarray, factor: float) -> np.ndarray:
    if factor < 0:
        raise ParameterError(f"brightness factor must be >= 0, got {factor}")
    return _to_uint8(img.astype(np.float64) * factor)


def translate(img: np.ndarray, dx: float, dy: float) -> np.ndarray:
    """Shift by (dx, dy) pixels with reflect fill."""
    h, w = img.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return _resample(img, yy - dy, xx - dx)


def random_crop(img: np.ndarray, scale: float, u: float, v: float) -> np.ndarray:
    """Crop a square of side scale*min(H, W) at relative offset (u, v), resize back."""
    if not 0 < scale <= 1:
        raise ParameterError(f"crop scale must be in (0, 1], got {scale}")
    h, w = img.shape[:2]
    side = max(1, int(round(scale * min(h, w))))
    top = int(round(u * (h - side)))
    left = int(round(v * (w - side)))
    patch = np.ascontiguousarray(img[top : top + side, left : left + side])
    if patch.shape[:2] == (h, w):
        return patch.copy()
    out = PILImage.fromarray(patch).resize((w, h), resample=PILImage.Resampling.BILINEAR)
    return np.asarray(out, dtype=np.uint8).copy()


@dataclass
class Step:
    kind: str
    params: dict = field(default_factory=dict)
    probability: float = 1.0

    def __post_init__(self):
        if self.kind not in STEP_KINDS:
            raise ParameterError(f"unknown augmentation step {self.kind!r}; choose from {STEP_KINDS}")
        if not 0.0 <= self.probability <= 1.0:
            raise ParameterError(f"step {self.kind}: probability {self.probability} outside [0, 1]")
        if self.kind == "rotate":
            bound = float(self.params.get("max_degrees", 25.0))
            if not 0.0 <= bound < 360.0:
                raise ParameterError(f"rotation bound {bound} outside [0, 360)")


@dataclass
class AugmentPipeline:
    steps: list = field(default_factory=list)
    seed: int = 0

    @classmethod
    def from_dicts(cls, steps, seed: int = 0) -> "AugmentPipeline":
        return cls([s if isinstance(s, Step) else Step(**s) for s in steps], seed)

    def __call__(self, img: np.ndarray, index: int = 0) -> np.ndarray:
        return apply_pipeline(self, img, index)


def default_pipeline(seed: int = 0, extras: bool = False) -> AugmentPipeline:
    """Rotation up to 25 degrees always, each flip with probability 0.5.

    ``extras`` adds brightness +-10% and translation +-5%, each at p=0.5.
    """
    steps = [
        Step("rotate", {"max_degrees": 25.0}, 1.0),
        Step("flip_h", {}, 0.5),
        Step("flip_v", {}, 0.5),
    ]
    if extras:
        steps += [
            Step("brightness", {"max_delta": 0.1}, 0.5),
            Step("translate", {"max_fraction": 0.05}, 0.5),
        ]
    return AugmentPipeline(steps, seed)


def draw_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(index)])


def _apply_step(step: Step, img: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    p = step.params
    if step.kind == "rotate":
        bound = min(float(p.get("max_degrees", 25.0)), 180.0)
        return rotate(img, rng.uniform(-bound, bound))
    if step.kind == "flip_h":
        return flip(img, "horizontal")
    if step.kind == "flip_v":
        return flip(img, "vertical")
    if step.kind == "brightness":
        delta = float(p.get("max_delta", 0.1))
        return adjust_brightness(img, 1.0 + rng.uniform(-delta, delta))
    if step.kind == "translate":
        frac = float(p.get("max_fraction", 0.05))
        h, w = img.shape[:2]
        return translate(img, rng.uniform(-frac, frac) * w, rng.uniform(-frac, frac) * h)
    if step.kind == "random_crop":
        lo = float(p.get("min_scale", 0.8))
        return random_crop(img, rng.uniform(lo, 1.0), rng.random(), rng.random())
    raise ParameterError(f"unknown step {step.kind!r}")


def apply_pipeline(pipeline: AugmentPipeline, img: np.ndarray, index: int = 0, fired: Optional[list] = None) -> np.ndarray:
    """Run every step in order; ``fired`` (if given) collects the kinds that fired."""
    _check_image(img)
    rng = draw_rng(pipeline.seed, index)
    out = img
    for step in pipeline.steps:
        if rng.random() < step.probability:
            out = _apply_step(step, out, rng)
            if fired is not None:
                fired.append(step.kind)
    return out if out is not img else img.copy()


def preview_grid(pipeline: AugmentPipeline, img: np.ndarray, n: int = 8, tile: int = 64, gap: int = 2) -> np.ndarray:
    """n x n mosaic of augmented draws 0..n*n-1, each tile resized to ``tile`` pixels."""
    base = crop_square_resize(img, tile)
    side = n * tile + (n - 1) * gap
    grid = np.full((side, side, 3), 255, dtype=np.uint8)
    for k in range(n * n):
        r, c = divmod(k, n)
        y, x = r * (tile + gap), c * (tile + gap)
        grid[y : y + tile, x : x + tile] = apply_pipeline(pipeline, base, k)
    return grid
