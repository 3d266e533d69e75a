"""Dense float64 tensors with a small reverse-mode differentiation engine.

Feature maps are laid out channels-first, ``(C, H, W)``. Convolution kernels
are ``(C_out, C_in, k, k)`` and biases are ``(C_out,)``. Only the operations
needed by the fusion, gating and attention layers are provided; there is no
general broadcasting.

Every operation appends a node to an implicit tape: each output gets a
monotonically increasing id, so replaying nodes in descending id order is a
valid reverse topological order.
"""

from __future__ import annotations

import itertools
from typing import Callable, Optional, Sequence, Union

import numpy as np

_node_ids = itertools.count()

ArrayLike = Union[np.ndarray, Sequence, float]
BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "_id", "_parents", "_backward")

    def __init__(self, data: ArrayLike, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.op = "leaf"
        self._id = next(_node_ids)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[BackwardFn] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return np.array(self.data)

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a one-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __add__(self, other: Tensor) -> Tensor:
        return add(self, other)

    def __mul__(self, other: Tensor) -> Tensor:
        return mul(self, other)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag}, op={self.op})"


def as_tensor(x: Union[Tensor, ArrayLike]) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def zeros(*shape: int) -> Tensor:
    return Tensor(np.zeros(shape))


def ones(*shape: int) -> Tensor:
    return Tensor(np.ones(shape))


def apply_op(data: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn, op: str) -> Tensor:
    """Wrap a forward result and record how to push gradients to ``parents``.

    ``backward_fn`` receives the upstream gradient (shaped like ``data``) and
    returns one gradient (or ``None``) per parent.
    """
    out = Tensor(data)
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def backward(output: Tensor) -> None:
    """Accumulate d(output)/d(leaf) into ``leaf.grad`` for every requires_grad leaf."""
    if output.size != 1:
        raise ValueError(f"backward() needs a scalar output, got shape {output.shape}")
    if not output.requires_grad:
        return

    nodes: dict[int, Tensor] = {}
    stack = [output]
    while stack:
        node = stack.pop()
        if node._id in nodes or not node.requires_grad:
            continue
        nodes[node._id] = node
        stack.extend(node._parents)

    grads: dict[int, np.ndarray] = {output._id: np.ones_like(output.data)}
    for node_id in sorted(nodes, reverse=True):
        node = nodes[node_id]
        g = grads.pop(node_id, None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent._id in grads:
                grads[parent._id] = grads[parent._id] + pg
            else:
                grads[parent._id] = pg


def _check_same_shape(a: Tensor, b: Tensor, name: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{name}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    return apply_op(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    return apply_op(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return apply_op(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def emax(a: Tensor, b: Tensor) -> Tensor:
    """Element-wise maximum; on ties the gradient goes to ``a``."""
    _check_same_shape(a, b, "emax")
    take_a = a.data >= b.data
    out = np.where(take_a, a.data, b.data)
    return apply_op(out, (a, b), lambda g: (g * take_a, g * ~take_a), "emax")


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 3 or b.data.ndim != 3:
        raise ValueError(f"concat_channels: expected (C, H, W) inputs, got {a.shape} and {b.shape}")
    if a.shape[1:] != b.shape[1:]:
        raise ValueError(f"concat_channels: spatial mismatch {a.shape} vs {b.shape}")
    ca = a.shape[0]
    out = np.concatenate([a.data, b.data], axis=0)
    return apply_op(out, (a, b), lambda g: (g[:ca], g[ca:]), "concat")


def _shifted(xp: np.ndarray, i: int, j: int, h: int, w: int) -> np.ndarray:
    return xp[:, i : i + h, j : j + w]


def conv2d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Stride-1 cross-correlation with zero "same" padding, ``k`` in {1, 3}."""
    if x.data.ndim != 3:
        raise ValueError(f"conv2d: expected (C, H, W) input, got {x.shape}")
    if w.data.ndim != 4 or w.shape[2] != w.shape[3] or w.shape[2] not in (1, 3):
        raise ValueError(f"conv2d: kernel must be (C_out, C_in, k, k) with k in {{1, 3}}, got {w.shape}")
    c_out, c_in, k, _ = w.shape
    if c_in != x.shape[0]:
        raise ValueError(f"conv2d: kernel expects {c_in} input channels, input {x.shape} has {x.shape[0]}")
    if b.shape != (c_out,):
        raise ValueError(f"conv2d: bias shape {b.shape} does not match {c_out} output channels")

    _, h, wd = x.shape
    pad = (k - 1) // 2
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad))) if pad else x.data
    wdat = w.data
    out = np.zeros((c_out, h, wd))
    for i in range(k):
        for j in range(k):
            out += np.tensordot(wdat[:, :, i, j], _shifted(xp, i, j, h, wd), axes=(1, 0))
    out += b.data[:, None, None]

    def _backward(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(wdat)
        for i in range(k):
            for j in range(k):
                gxp[:, i : i + h, j : j + wd] += np.tensordot(wdat[:, :, i, j], g, axes=(0, 0))
                gw[:, :, i, j] = np.tensordot(g, _shifted(xp, i, j, h, wd), axes=([1, 2], [1, 2]))
        gx = gxp[:, pad : pad + h, pad : pad + wd] if pad else gxp
        return gx, gw, g.sum(axis=(1, 2))

    return apply_op(out, (x, w, b), _backward, "conv2d")


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    xd = x.data
    e = np.exp(-np.abs(xd))
    s = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return apply_op(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return apply_op(t, (x,), lambda g: (g * (1.0 - t * t),), "tanh")


def softmax_spatial(x: Tensor) -> Tensor:
    """Softmax over all H*W locations of a single-channel map."""
    if x.data.ndim != 3 or x.shape[0] != 1:
        raise ValueError(f"softmax_spatial: expected a (1, H, W) map, got {x.shape}")
    e = np.exp(x.data - x.data.max())
    s = e / e.sum()

    def _backward(g):
        return (s * (g - (g * s).sum()),)

    return apply_op(s, (x,), _backward, "softmax_spatial")


def downsample(x: Tensor, factor: int) -> Tensor:
    """Non-overlapping ``factor`` x ``factor`` average pooling."""
    if factor < 1:
        raise ValueError(f"downsample: factor must be positive, got {factor}")
    c, h, w = x.shape
    if h % factor or w % factor:
        raise ValueError(f"downsample: spatial size {h}x{w} not divisible by {factor}")
    if factor == 1:
        return apply_op(x.data, (x,), lambda g: (g,), "downsample")
    out = x.data.reshape(c, h // factor, factor, w // factor, factor).mean(axis=(2, 4))
    scale = 1.0 / (factor * factor)

    def _backward(g):
        return (np.repeat(np.repeat(g, factor, axis=1), factor, axis=2) * scale,)

    return apply_op(out, (x,), _backward, "downsample")


def upsample(x: Tensor, factor: int) -> Tensor:
    """Nearest-neighbour upsampling by an integer factor."""
    if factor < 1:
        raise ValueError(f"upsample: factor must be positive, got {factor}")
    c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=1), factor, axis=2)

    def _backward(g):
        return (g.reshape(c, h, factor, w, factor).sum(axis=(2, 4)),)

    return apply_op(out, (x,), _backward, "upsample")


def broadcast_channels(x: Tensor, channels: int) -> Tensor:
    """Repeat a (1, H, W) map across ``channels`` channels."""
    if x.data.ndim != 3 or x.shape[0] != 1:
        raise ValueError(f"broadcast_channels: expected a (1, H, W) map, got {x.shape}")
    out = np.repeat(x.data, channels, axis=0)
    return apply_op(out, (x,), lambda g: (g.sum(axis=0, keepdims=True),), "broadcast_channels")


def tsum(x: Tensor) -> Tensor:
    return apply_op(np.array(x.data.sum()), (x,), lambda g: (np.full(x.shape, float(g)),), "sum")


def mean(x: Tensor) -> Tensor:
    n = x.size
    return apply_op(np.array(x.data.mean()), (x,), lambda g: (np.full(x.shape, float(g) / n),), "mean")


def finite_diff_grad(f: Callable[[Tensor], Union[Tensor, float]], x: Tensor, eps: float = 1e-5) -> Tensor:
    """Central-difference gradient of scalar ``f`` at ``x``."""
    if eps <= 0:
        raise ValueError(f"finite_diff_grad: eps must be positive, got {eps}")
    base = np.array(x.data)
    flat = base.reshape(-1)
    grad = np.zeros_like(flat)

    def _eval(arr: np.ndarray) -> float:
        val = f(Tensor(arr.reshape(base.shape)))
        return val.item() if isinstance(val, Tensor) else float(val)

    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = _eval(flat)
        flat[i] = orig - eps
        lo = _eval(flat)
        flat[i] = orig
        grad[i] = (hi - lo) / (2.0 * eps)
    return Tensor(grad.reshape(base.shape))


def grad_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |analytic - numeric| / max(1, |analytic|) over elements."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))))


# -- text serialization ------------------------------------------------------


def dumps(t: Union[Tensor, np.ndarray]) -> str:
    """Header line of extents, then row-major values one innermost row per line."""
    data = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)
    header = " ".join(str(n) for n in data.shape)
    if data.ndim == 0:
        rows = [repr(float(data))]
    else:
        rows = [" ".join(repr(float(v)) for v in row) for row in data.reshape(-1, data.shape[-1])]
    return "\n".join([header, *rows]) + "\n"


def loads(text: str) -> Tensor:
    lines = text.splitlines()
    if not lines:
        raise ValueError("tensor text is empty")
    try:
        shape = tuple(int(tok) for tok in lines[0].split())
        values = [float(tok) for line in lines[1:] for tok in line.split()]
    except ValueError as exc:
        raise ValueError(f"malformed tensor text: {exc}") from None
    expected = int(np.prod(shape)) if shape else 1
    if len(values) != expected:
        raise ValueError(f"tensor header {shape} needs {expected} values, found {len(values)}")
    return Tensor(np.array(values).reshape(shape))


def save(t: Tensor, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(t))


def load(path) -> Tensor:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())

