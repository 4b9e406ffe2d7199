"""Small hand-analysable models for the explanation tests."""

import numpy as np

from histoxai import tensor as T
from histoxai.tensor import Tensor


class LinearModel:
    """z = w . x + b over the flattened image."""

    def __init__(self, w, b=0.0):
        self.w = np.asarray(w, dtype=np.float64)
        self.b = b

    def logits(self, x, mode="eval", rng=None):
        n = x.shape[0]
        flat = T.reshape(x, (n, -1))
        return T.dense(flat, Tensor(self.w.reshape(-1, 1)), Tensor(np.array([self.b])))


class QuadraticModel:
    """z = x^2 for a single-value image."""

    def logits(self, x, mode="eval", rng=None):
        return T.reshape(T.mul(x, x), (x.shape[0], 1))


class ConvAvgDense:
    """conv (no padding) -> global average -> dense, recording the conv output."""

    def __init__(self, kernel, bias, w, b):
        self.kernel, self.bias, self.w, self.b = kernel, bias, w, b
        self.acts = None

    def logits(self, x, mode="eval", rng=None):
        self.acts = T.conv2d(x, Tensor(self.kernel), Tensor(self.bias))
        pooled = T.global_avg_pool(self.acts)
        return T.dense(pooled, Tensor(self.w.reshape(-1, 1)), Tensor(np.array([self.b])))

    def activations_at(self, layer_id):
        if layer_id != "conv":
            raise KeyError(layer_id)
        return self.acts


class FlatLayerModel(ConvAvgDense):
    def activations_at(self, layer_id):
        return T.flatten(self.acts)


def loop_conv(x, kernel, bias):
    """Valid cross-correlation by explicit loops; x (C,H,W), kernel (K,C,kh,kw)."""
    k, c, kh, kw = kernel.shape
    h, w = x.shape[1] - kh + 1, x.shape[2] - kw + 1
    out = np.zeros((k, h, w))
    for o in range(k):
        for i in range(h):
            for j in range(w):
                total = bias[o]
                for ci in range(c):
                    for a in range(kh):
                        for b in range(kw):
                            total += x[ci, i + a, j + b] * kernel[o, ci, a, b]
                out[o, i, j] = total
    return out
