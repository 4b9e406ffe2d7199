"""CNN assembly: a configurable backbone followed by the concat-pool head.

The head concatenates global max pooling, global average pooling and the
flattened feature map, applies dropout and a single sigmoid unit.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, FormatError
from .tensor import Tensor

FEATURE_ALIASES = ("features", "last_conv")
HEAD_DENSE = "head_dense"

MAGIC = b"HSCW1"
_DTYPE_TAGS = {1: "<f8", 2: "<f4"}


def tiny_vgg(channels=(8, 16, 32)) -> list[dict]:
    """Conv3x3-ReLU-MaxPool2 blocks; each block halves the spatial extent."""
    layers: list[dict] = []
    for ch in channels:
        layers += [
            {"type": "conv", "channels": ch, "kernel": 3, "padding": 1},
            {"type": "relu"},
            {"type": "maxpool", "window": 2},
        ]
    return layers


@dataclass
class ModelConfig:
    backbone: list = field(default_factory=tiny_vgg)
    input_size: tuple = (64, 64, 3)  # (H, W, C)
    frozen_layers: list = field(default_factory=list)
    dropout: float = 0.5
    seed: int = 0


@dataclass
class Layer:
    id: str
    kind: str
    spec: dict
    out_shape: tuple  # (C, H, W) or (D,) for the head


class Model:
    """Layer graph with parameters keyed ``<layer id>.<weight|bias>``."""

    def __init__(self, config: ModelConfig, layers: list[Layer], params: dict[str, Tensor]):
        self.config = config
        self.layers = layers
        self.params = params
        self.frozen: set[str] = set()
        self._acts: dict[str, Tensor] = {}
        self.set_frozen(config.frozen_layers)

    @property
    def layer_ids(self) -> list[str]:
        return [layer.id for layer in self.layers]

    @property
    def backbone_ids(self) -> list[str]:
        return [layer.id for layer in self.layers if layer.id != HEAD_DENSE]

    @property
    def feature_layer(self) -> str:
        """Id of the last backbone layer, whose output feeds the head."""
        return self.backbone_ids[-1]

    @property
    def feature_shape(self) -> tuple:
        return self.layers[len(self.backbone_ids) - 1].out_shape

    def layer_params(self, layer_id: str) -> dict[str, Tensor]:
        prefix = layer_id + "."
        return {k: v for k, v in self.params.items() if k.startswith(prefix)}

    def set_frozen(self, layer_ids) -> None:
        ids = set(layer_ids)
        unknown = ids - set(self.layer_ids)
        if unknown:
            raise KeyError(f"unknown layer ids: {sorted(unknown)}")
        self.frozen = ids
        for key, p in self.params.items():
            p.requires_grad = key.split(".")[0] not in ids

    def trainable(self) -> dict[str, Tensor]:
        return {k: p for k, p in self.params.items() if k.split(".")[0] not in self.frozen}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def logits(self, batch, mode: str = "eval", rng: Optional[np.random.Generator] = None) -> Tensor:
        """Pre-sigmoid score z, shape [N, 1]. Records every layer activation."""
        x = batch if isinstance(batch, Tensor) else Tensor(batch)
        h, w, c = self.config.input_size
        if x.ndim != 4 or x.shape[1:] != (c, h, w):
            raise DimensionError(f"expected batch [N,{c},{h},{w}], got {x.shape}")
        acts: dict[str, Tensor] = {"input": x}
        for layer in self.layers[:-1]:
            if layer.kind == "conv":
                p = self.layer_params(layer.id)
                x = T.conv2d(
                    x, p[layer.id + ".weight"], p[layer.id + ".bias"],
                    stride=layer.spec.get("stride", 1), padding=layer.spec.get("padding", 0),
                )
            elif layer.kind == "relu":
                x = T.relu(x)
            elif layer.kind == "maxpool":
                x = T.max_pool2d(x, layer.spec["window"], layer.spec.get("stride"))
            elif layer.kind == "avgpool":
                x = T.avg_pool2d(x, layer.spec["window"], layer.spec.get("stride"))
            acts[layer.id] = x
        for alias in FEATURE_ALIASES:
            acts[alias] = x
        z = concat_pool_head(
            x,
            self.params[HEAD_DENSE + ".weight"],
            self.params[HEAD_DENSE + ".bias"],
            rate=self.config.dropout,
            mode=mode,
            rng=rng,
        )
        acts["logit"] = z
        self._acts = acts
        return z

    def forward(self, batch, mode: str = "eval", rng: Optional[np.random.Generator] = None) -> Tensor:
        return T.sigmoid(self.logits(batch, mode=mode, rng=rng))

    __call__ = forward

    def activations_at(self, layer_id: str) -> Tensor:
        if layer_id not in self._acts:
            if layer_id in self.layer_ids or layer_id in FEATURE_ALIASES:
                raise KeyError(f"no activation recorded for {layer_id!r}; run a forward pass first")
            raise KeyError(f"unknown layer id {layer_id!r}")
        return self._acts[layer_id]


def head_features(features: Tensor) -> Tensor:
    """[N,K,u,v] -> [N, K + K + K*u*v]: global max, global average, flatten."""
    if features.ndim != 4:
        raise DimensionError(f"head expects [N,K,u,v] features, got {features.shape}")
    return T.concat(
        [T.global_max_pool(features), T.global_avg_pool(features), T.flatten(features)], axis=1
    )


def concat_pool_head(
    features: Tensor,
    weights: Tensor,
    bias: Tensor,
    rate: float = 0.5,
    mode: str = "eval",
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Logit of the modified head; apply ``sigmoid`` for the probability."""
    v = T.dropout(head_features(features), rate=rate, mode=mode, rng=rng)
    return T.dense(v, weights, bias)


def _he_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def build_model(config: ModelConfig) -> Model:
    if len(config.input_size) != 3:
        raise ConfigError(f"input_size must be (H, W, C), got {config.input_size}")
    h, w, c = (int(v) for v in config.input_size)
    rng = np.random.default_rng(config.seed)
    layers: list[Layer] = []
    params: dict[str, Tensor] = {}
    counts: dict[str, int] = {}
    shape = (c, h, w)
    prefixes = {"conv": "conv", "relu": "relu", "maxpool": "pool", "avgpool": "pool"}

    for spec in config.backbone:
        kind = spec.get("type")
        if kind not in prefixes:
            raise ConfigError(f"unknown backbone layer type {kind!r}")
        prefix = prefixes[kind]
        counts[prefix] = counts.get(prefix, 0) + 1
        lid = f"{prefix}{counts[prefix]}"
        ch, hh, ww = shape
        if kind == "conv":
            k = int(spec.get("kernel", 3))
            pad = int(spec.get("padding", 0))
            stride = int(spec.get("stride", 1))
            out_ch = int(spec["channels"])
            if hh + 2 * pad < k or ww + 2 * pad < k:
                raise ConfigError(f"layer {lid}: {k}x{k} kernel does not fit {hh}x{ww} input")
            shape = (out_ch, (hh + 2 * pad - k) // stride + 1, (ww + 2 * pad - k) // stride + 1)
            fan_in = ch * k * k
            params[lid + ".weight"] = Tensor(_he_uniform(rng, (out_ch, ch, k, k), fan_in), requires_grad=True)
            params[lid + ".bias"] = Tensor(np.zeros(out_ch), requires_grad=True)
        elif kind in ("maxpool", "avgpool"):
            win = int(spec.get("window", 2))
            stride = int(spec.get("stride") or win)
            if win > hh or win > ww:
                raise ConfigError(f"layer {lid}: pool window {win} collapses {hh}x{ww} map below 1x1")
            shape = (ch, (hh - win) // stride + 1, (ww - win) // stride + 1)
        layers.append(Layer(lid, kind, dict(spec), shape))

    if not layers:
        raise ConfigError("backbone has no layers")
    k, u, v = shape
    d = k * (2 + u * v)
    params[HEAD_DENSE + ".weight"] = Tensor(_he_uniform(rng, (d, 1), d), requires_grad=True)
    params[HEAD_DENSE + ".bias"] = Tensor(np.zeros(1), requires_grad=True)
    layers.append(Layer(HEAD_DENSE, "dense", {"units": 1}, (1,)))
    return Model(config, layers, params)


# -- weight persistence ----------------------------------------------------


def save_weights(model: Model, path) -> None:
    """Write an HSCW1 file: magic, record count, then records sorted by parameter id."""
    chunks = [MAGIC, struct.pack("<I", len(model.params))]
    for key in sorted(model.params):
        arr = model.params[key].data
        raw_id = key.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw_id)) + raw_id)
        chunks.append(struct.pack("<BB", 1, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    payload = b"".join(chunks)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    with os.fdopen(fd, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def read_weights(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: not an HSCW1 weight file")
    pos = len(MAGIC)

    def _take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"{path}: truncated payload at byte {pos}")
        chunk = buf[pos : pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", _take(4))
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (id_len,) = struct.unpack("<H", _take(2))
        key = _take(id_len).decode("utf-8")
        tag, rank = struct.unpack("<BB", _take(2))
        if tag not in _DTYPE_TAGS:
            raise FormatError(f"{path}: record {key!r} has unknown dtype tag {tag}")
        extents = struct.unpack(f"<{rank}I", _take(4 * rank))
        dt = np.dtype(_DTYPE_TAGS[tag])
        n = int(np.prod(extents)) if rank else 1
        out[key] = np.frombuffer(_take(n * dt.itemsize), dtype=dt).reshape(extents).astype(np.float64)
    if pos != len(buf):
        raise FormatError(f"{path}: {len(buf) - pos} trailing bytes after last record")
    return out


def load_weights(model: Model, path) -> None:
    """Replace model weights from ``path``; the model is untouched on any error."""
    stored = read_weights(path)
    missing = sorted(set(model.params) - set(stored))
    extra = sorted(set(stored) - set(model.params))
    if missing or extra:
        raise FormatError(f"{path}: layer ids differ (missing {missing}, unexpected {extra})")
    for key, arr in stored.items():
        if arr.shape != model.params[key].shape:
            raise FormatError(
                f"{path}: layer {key} has shape {arr.shape} in file but {model.params[key].shape} in model"
            )
    for key, arr in stored.items():
        model.params[key].data = arr.copy()
        model.params[key].grad = None
