"""GradCAM, vanilla saliency and SmoothGrad for single-logit binary models.

Any object with ``logits(x, mode)`` returning a [N, 1] tensor works as a model;
GradCAM additionally needs ``activations_at(layer_id)`` for the recorded
feature map of the last forward pass. Class 1 scores with the logit ``z``,
class 0 with ``-z``, so the argmax over both equals thresholding the
sigmoid at 0.5.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import tensor as T
from .errors import ContractError, ParameterError
from .tensor import Tensor

N_CLASSES = 2

# blue -> green -> red, evaluated by linear interpolation
_CMAP_STOPS = np.array([0.0, 0.5, 1.0])
_CMAP_COLORS = np.array([[0.0, 0.0, 255.0], [0.0, 255.0, 0.0], [255.0, 0.0, 0.0]])


@dataclass
class Heatmap:
    kind: str
    values: np.ndarray  # (height, width)
    class_index: int
    meta: dict = field(default_factory=dict)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def _batch(image) -> np.ndarray:
    x = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[0] != 1:
        raise ParameterError(f"expected a single image [C,H,W] or [1,C,H,W], got {x.shape}")
    return x


def _check_class(class_index: int) -> int:
    if class_index not in range(N_CLASSES):
        raise ParameterError(f"class index must be 0 or 1, got {class_index}")
    return int(class_index)


def class_scores(z):
    """[S_0, S_1] = [-z, z]."""
    return -z, z


def _score(z: Tensor, class_index: int) -> Tensor:
    zz = T.tsum(z)
    return class_scores(zz)[class_index]


def _zero_grad(model) -> None:
    if hasattr(model, "zero_grad"):
        model.zero_grad()


def logit(model, image) -> float:
    return model.logits(Tensor(_batch(image)), mode="eval").item()


def _predicted_class(z: float) -> int:
    # threshold the probability, not the logit, so predictions agree with the
    # metrics module even where sigmoid(z) rounds to exactly 0.5
    p = T.sigmoid(Tensor(np.array([z]))).data[0]
    return 1 if p >= 0.5 else 0


def classify(model, image) -> int:
    """argmax over {S_0, S_1}; the tie at z == 0 goes to class 1."""
    return _predicted_class(logit(model, image))


def gradcam(model, image, class_index=None, layer_id: str = "features") -> Heatmap:
    """ReLU(sum_k alpha_k A^k) with alpha_k the spatial mean of d(score)/dA^k."""
    x = Tensor(_batch(image), requires_grad=True)
    z = model.logits(x, mode="eval")
    if class_index is None:
        class_index = _predicted_class(z.item())
    class_index = _check_class(class_index)
    acts = model.activations_at(layer_id)
    if acts.ndim != 4:
        raise ContractError(f"layer {layer_id!r} has no spatial dims (shape {acts.shape})")
    score = _score(z, class_index)
    _zero_grad(model)
    T.backward(score)
    grads = acts.grad if acts.grad is not None else np.zeros(acts.shape)
    _zero_grad(model)
    a = acts.data[0]  # (K, u, v)
    alpha = grads[0].mean(axis=(1, 2))
    cam = np.maximum(np.tensordot(alpha, a, axes=1), 0.0)
    return Heatmap("gradcam", cam, class_index, {"layer": layer_id, "score": float(score.item())})


def _input_gradients(model, batch: np.ndarray, class_index: int) -> tuple[np.ndarray, np.ndarray]:
    x = Tensor(batch, requires_grad=True)
    z = model.logits(x, mode="eval")
    score = _score(z, class_index)
    _zero_grad(model)
    T.backward(score)
    _zero_grad(model)
    return x.grad, z.data[:, 0]


def _reduce_channels(g: np.ndarray) -> np.ndarray:
    return np.abs(g).max(axis=0)


def vanilla_saliency(model, image, class_index: int = 1) -> Heatmap:
    """Per-pixel |d S_c / d x|, max over channels."""
    class_index = _check_class(class_index)
    grads, z = _input_gradients(model, _batch(image), class_index)
    score = float(class_scores(z[0])[class_index])
    return Heatmap("vanilla_saliency", _reduce_channels(grads[0]), class_index, {"score": score})


def smoothgrad(
    model,
    image,
    class_index: int = 1,
    n: int = 25,
    sigma: float = 0.15,
    seed: int = 0,
    chunk: int = 16,
) -> Heatmap:
    """Average the signed input gradient over ``n`` Gaussian-perturbed copies.

    Noise is drawn in sample order from one seeded generator and gradients
    are summed in sample order, so the result does not depend on ``chunk``.
    """
    if n <= 0:
        raise ParameterError(f"n must be >= 1, got {n}")
    if sigma < 0:
        raise ParameterError(f"sigma must be >= 0, got {sigma}")
    class_index = _check_class(class_index)
    x = _batch(image)
    rng = np.random.default_rng(seed)
    total = np.zeros(x.shape[1:])
    for start in range(0, n, chunk):
        b = min(chunk, n - start)
        noise = rng.normal(0.0, 1.0, size=(b,) + x.shape[1:]) * sigma
        grads, _ = _input_gradients(model, x + noise, class_index)
        for i in range(b):
            total += grads[i]
    mean = total / n
    score = float(class_scores(logit(model, x))[class_index])
    return Heatmap(
        "smoothgrad",
        _reduce_channels(mean),
        class_index,
        {"n": n, "sigma": sigma, "seed": seed, "score": score},
    )


def normalize(values: np.ndarray) -> np.ndarray:
    """Min-max to [0, 1]; an all-equal map becomes all zeros."""
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return np.zeros_like(values, dtype=np.float64)
    return (values - lo) / (hi - lo)


def upsample(values: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize with pixel-center alignment, edges clamped."""
    h, w = values.shape
    rows = (np.arange(height) + 0.5) * h / height - 0.5
    cols = (np.arange(width) + 0.5) * w / width - 0.5
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return ndimage.map_coordinates(values.astype(np.float64), [rr, cc], order=1, mode="nearest")


def colormap(t: np.ndarray) -> np.ndarray:
    """Values in [0, 1] -> float RGB in [0, 255]."""
    return np.stack([np.interp(t, _CMAP_STOPS, _CMAP_COLORS[:, ch]) for ch in range(3)], axis=-1)


def render_overlay(heatmap: Heatmap, image: np.ndarray, alpha: float = 0.4) -> np.ndarray:
    """Blend the colour-mapped, upsampled heatmap over a uint8 (H, W, 3) image."""
    if not 0.0 <= alpha <= 1.0:
        raise ParameterError(f"alpha must be in [0, 1], got {alpha}")
    h, w = image.shape[:2]
    t = np.clip(upsample(normalize(heatmap.values), h, w), 0.0, 1.0)
    blended = (1.0 - alpha) * image.astype(np.float64) + alpha * colormap(t)
    return np.clip(np.rint(blended), 0, 255).astype(np.uint8)


def image_to_input(image: np.ndarray) -> np.ndarray:
    """uint8 (H, W, 3) -> float [3, H, W] in [0, 1]."""
    return image.transpose(2, 0, 1).astype(np.float64) / 255.0
