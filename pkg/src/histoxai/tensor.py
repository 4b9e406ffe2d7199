"""Reverse-mode automatic differentiation over numpy arrays.

Every op builds its output eagerly and records a closure that maps the
output gradient to input gradients (define-by-run). ``backward`` walks the
recorded graph once in reverse topological order and then releases it.
"""

from __future__ import annotations

import logging
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError, ParameterError

logger = logging.getLogger(__name__)

DTYPE = np.float64

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """An n-dimensional float64 array with an optional gradient buffer."""

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[BackwardFn] = None
        self._consumed = False

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None and not self._consumed

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def backward(self) -> None:
        backward(self)

    # -- arithmetic (same shape or python scalar only) --------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other, self)))

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self) -> "Tensor":
        return tsum(self)

    def mean(self) -> "Tensor":
        return mean(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _as_tensor(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.full(like.shape, value, dtype=DTYPE))


def _make(data: np.ndarray, parents: Iterable[Tensor], backward_fn: BackwardFn, op: str) -> Tensor:
    parents = tuple(parents)
    if not np.all(np.isfinite(data)):
        raise NumericError(f"{op} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data if data.dtype == DTYPE else data.astype(DTYPE)
    out.grad = None
    out.name = op
    out._consumed = False
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


# -- graph traversal -------------------------------------------------------


def tape(loss: Tensor) -> list[Tensor]:
    """Recorded tensors reachable from ``loss`` in topological order (inputs first)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every requires_grad tensor upstream of a scalar loss.

    Leaf gradients accumulate across calls; intermediate tensors keep the
    gradient of this pass so callers can read e.g. d(score)/d(activation).
    The graph is released afterwards, so a second call on the same loss fails.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise ContractError("graph already consumed by an earlier backward; rerun the forward pass")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor with requires_grad")

    order = tape(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=DTYPE)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        node.grad = g
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    for node in order:
        if node._backward is not None:
            node._backward = None
            node._parents = ()
            node._consumed = True


def grad_of(source: Tensor) -> Tensor:
    if source.grad is None:
        raise ContractError("no gradient recorded for this tensor; call backward first")
    return Tensor(source.grad)


# -- elementwise -----------------------------------------------------------


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    _same_shape(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def mul(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


# -- reductions and reshaping ---------------------------------------------


def tsum(a: Tensor) -> Tensor:
    shape = a.shape
    return _make(np.array(a.data.sum()), (a,), lambda g: (np.full(shape, g.reshape(())),), "sum")


def mean(a: Tensor) -> Tensor:
    shape, n = a.shape, a.size
    return _make(np.array(a.data.mean()), (a,), lambda g: (np.full(shape, g.reshape(()) / n),), "mean")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {old} to {tuple(shape)}") from exc
    return _make(out, (a,), lambda g: (g.reshape(old),), "reshape")


def flatten(a: Tensor) -> Tensor:
    """Collapse every axis after the batch axis: [N, ...] -> [N, D]."""
    if a.ndim < 2:
        raise DimensionError(f"flatten needs a batch axis, got shape {a.shape}")
    return reshape(a, (a.shape[0], -1))


def take(a: Tensor, index) -> Tensor:
    shape = a.shape

    def _back(g):
        full = np.zeros(shape, dtype=DTYPE)
        np.add.at(full, index, g)
        return (full,)

    return _make(np.array(a.data[index]), (a,), _back, "take")


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    if not tensors:
        raise DimensionError("concat of an empty list")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise DimensionError(
                f"concat on axis {axis}: shapes {[x.shape for x in tensors]} disagree off-axis"
            )
    splits = np.cumsum([t.shape[ax] for t in tensors])[:-1]
    out = np.concatenate([t.data for t in tensors], axis=ax)
    return _make(out, tensors, lambda g: np.split(g, splits, axis=ax), "concat")


# -- layers ----------------------------------------------------------------


def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """x @ W + b for x [N, D], W [D, M], b [M]."""
    if x.ndim != 2 or weights.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise DimensionError(f"dense: input {x.shape} does not conform to weights {weights.shape}")
    if bias.shape != (weights.shape[1],):
        raise DimensionError(f"dense: bias {bias.shape} does not match weights {weights.shape}")
    xd, wd = x.data, weights.data

    def _back(g):
        return g @ wd.T, xd.T @ g, g.sum(axis=0)

    return _make(xd @ wd + bias.data, (x, weights, bias), _back, "dense")


def _out_extent(size: int, window: int, stride: int, padding: int = 0) -> int:
    return (size + 2 * padding - window) // stride + 1


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation. x [N,C,H,W], kernel [K,C,kh,kw], bias [K] -> [N,K,H',W']."""
    if stride < 1 or padding < 0:
        raise ParameterError(f"conv2d: stride must be >= 1 and padding >= 0, got {stride}, {padding}")
    if x.ndim != 4 or kernel.ndim != 4 or x.shape[1] != kernel.shape[1]:
        raise DimensionError(f"conv2d: input {x.shape} does not conform to kernel {kernel.shape}")
    if bias.shape != (kernel.shape[0],):
        raise DimensionError(f"conv2d: bias {bias.shape} does not match kernel {kernel.shape}")
    n, c, h, w = x.shape
    k, _, kh, kw = kernel.shape
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise DimensionError(f"conv2d: kernel {kernel.shape} larger than padded input {x.shape}")
    oh, ow = _out_extent(h, kh, stride, padding), _out_extent(w, kw, stride, padding)

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :oh, :ow]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    wmat = kernel.data.reshape(k, -1)
    out = (cols @ wmat.T + bias.data).reshape(n, oh, ow, k).transpose(0, 3, 1, 2)

    def _back(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(n * oh * ow, k)
        gkernel = (gmat.T @ cols).reshape(kernel.shape)
        gbias = gmat.sum(axis=0)
        gcols = (gmat @ wmat).reshape(n, oh, ow, c, kh, kw)
        gxp = np.zeros(xp.shape, dtype=DTYPE)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += gcols[
                    :, :, :, :, i, j
                ].transpose(0, 3, 1, 2)
        gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        return gx, gkernel, gbias

    return _make(np.ascontiguousarray(out), (x, kernel, bias), _back, "conv2d")


def _pool_windows(x: Tensor, window: int, stride: int, op: str):
    if x.ndim != 4:
        raise DimensionError(f"{op}: expected [N,C,H,W], got {x.shape}")
    if window < 1 or stride < 1:
        raise ParameterError(f"{op}: window and stride must be >= 1")
    h, w = x.shape[2:]
    if window > h or window > w:
        raise DimensionError(f"{op}: window {window} larger than input {x.shape}")
    oh, ow = _out_extent(h, window, stride), _out_extent(w, window, stride)
    win = np.lib.stride_tricks.sliding_window_view(x.data, (window, window), axis=(2, 3))
    return win[:, :, ::stride, ::stride][:, :, :oh, :ow], oh, ow


def max_pool2d(x: Tensor, window: int = 2, stride: Optional[int] = None) -> Tensor:
    """Max pooling; the gradient goes to the first (row-major) maximum of each window."""
    stride = window if stride is None else stride
    win, oh, ow = _pool_windows(x, window, stride, "max_pool2d")
    flat = win.reshape(*win.shape[:4], window * window)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    shape = x.shape

    def _back(g):
        gx = np.zeros(shape, dtype=DTYPE)
        for i in range(window):
            for j in range(window):
                hit = g * (arg == i * window + j)
                gx[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += hit
        return (gx,)

    return _make(out, (x,), _back, "max_pool2d")


def avg_pool2d(x: Tensor, window: int = 2, stride: Optional[int] = None) -> Tensor:
    stride = window if stride is None else stride
    win, oh, ow = _pool_windows(x, window, stride, "avg_pool2d")
    out = win.mean(axis=(-2, -1))
    shape = x.shape
    share = 1.0 / (window * window)

    def _back(g):
        gx = np.zeros(shape, dtype=DTYPE)
        for i in range(window):
            for j in range(window):
                gx[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += g * share
        return (gx,)

    return _make(out, (x,), _back, "avg_pool2d")


def global_max_pool(x: Tensor) -> Tensor:
    """[N,K,H,W] -> [N,K]; ties resolve to the first row-major maximum."""
    if x.ndim != 4:
        raise DimensionError(f"global_max_pool: expected [N,C,H,W], got {x.shape}")
    n, k, h, w = x.shape
    flat = x.data.reshape(n, k, h * w)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def _back(g):
        gflat = np.zeros((n, k, h * w), dtype=DTYPE)
        np.put_along_axis(gflat, arg[..., None], g[..., None], axis=-1)
        return (gflat.reshape(n, k, h, w),)

    return _make(out, (x,), _back, "global_max_pool")


def global_avg_pool(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise DimensionError(f"global_avg_pool: expected [N,C,H,W], got {x.shape}")
    shape = x.shape
    hw = shape[2] * shape[3]
    return _make(
        x.data.mean(axis=(2, 3)),
        (x,),
        lambda g: (np.broadcast_to(g[:, :, None, None] / hw, shape).copy(),),
        "global_avg_pool",
    )


def dropout(x: Tensor, rate: float = 0.5, mode: str = "train", rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-rate) at train time, eval is identity."""
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    if mode not in ("train", "eval"):
        raise ParameterError(f"dropout mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or rate == 0.0:
        return x
    if rng is None:
        raise ContractError("train-mode dropout needs an explicit rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _make(x.data * mask, (x,), lambda g: (g * mask,), "dropout")
