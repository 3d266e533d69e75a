"""Toy-scale bi-stream saliency network and its SGD training loop.

Two five-stage encoders see the same image: a plain chain of 3x3 convolutions
and a residual branch with identity skips. At every stage the plain-chain
features pass through an input gate and are fused into the residual branch by
a learned 1x1 convolution over the concatenation; residual stages 2-5 are also
scaled by an output gate driven by the stage before. Stages 4 and 5 receive
multi-layer attention from stages 1 and 2, then a progressive decoder brings
the deepest map back to full resolution.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .attention import AttentionParams, apply_mla, location_attention
from .fusion import FusionScheme, InputGateParams, OutputGateParams, gated_fuse, output_gate
from .tensor import Tensor

N_STAGES = 5
DEFAULT_WIDTHS = (8, 16, 24, 24, 24)
ATTN_DEEP = (4, 5)
ATTN_SHALLOW = (1, 2)
BCE_EPS = 1e-7
CHECKPOINT_MAGIC = "bistream-checkpoint 1"


def param_shapes(widths: Sequence[int] = DEFAULT_WIDTHS, in_channels: int = 3) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every learnable tensor, in initialization order."""
    if len(widths) != N_STAGES:
        raise ValueError(f"need exactly {N_STAGES} stage widths, got {len(widths)}")
    w = {i + 1: int(c) for i, c in enumerate(widths)}
    shapes: dict[str, tuple[int, ...]] = {}

    def conv(name, c_out, c_in, k):
        shapes[f"{name}.w"] = (c_out, c_in, k, k)
        shapes[f"{name}.b"] = (c_out,)

    for i in range(1, N_STAGES + 1):
        c_prev = in_channels if i == 1 else w[i - 1]
        conv(f"v{i}.conv1", w[i], c_prev, 3)
        conv(f"v{i}.conv2", w[i], w[i], 3)
        conv(f"r{i}.proj", w[i], c_prev, 1)
        conv(f"r{i}.conv1", w[i], w[i], 3)
        conv(f"r{i}.conv2", w[i], w[i], 3)
        conv(f"gate_in{i}.proj", w[i], w[i], 1)
        conv(f"gate_in{i}.gate", w[i], w[i], 1)
        conv(f"fuse{i}", w[i], 2 * w[i], 1)
        if i > 1:
            conv(f"gate_out{i}", w[i], w[i - 1], 1)
    for j in ATTN_DEEP:
        conv(f"mla{j}.beta", 1, w[j], 1)
        for m in ATTN_SHALLOW:
            conv(f"mla{j}.low{m}", w[j], w[m], 1)
    for i in range(N_STAGES - 1, 0, -1):
        conv(f"dec{i}", w[i], w[i + 1] + w[i], 3)
    conv("head", 1, w[1], 3)
    conv("probe_v", 1, w[N_STAGES], 1)
    conv("probe_r", 1, w[N_STAGES], 1)
    return shapes


@dataclass
class BiStreamNet:
    widths: tuple[int, ...]
    in_channels: int
    params: dict[str, Tensor]

    def p(self, name: str) -> Tensor:
        return self.params[name]

    def conv(self, x: Tensor, name: str) -> Tensor:
        return T.conv2d(x, self.params[f"{name}.w"], self.params[f"{name}.b"])

    def input_gate_params(self, i: int) -> InputGateParams:
        return InputGateParams(
            self.p(f"gate_in{i}.proj.w"), self.p(f"gate_in{i}.proj.b"),
            self.p(f"gate_in{i}.gate.w"), self.p(f"gate_in{i}.gate.b"),
        )

    def output_gate_params(self, i: int) -> OutputGateParams:
        return OutputGateParams(self.p(f"gate_out{i}.w"), self.p(f"gate_out{i}.b"))

    def fusion_scheme(self, i: int) -> FusionScheme:
        return FusionScheme.conv(self.p(f"fuse{i}.w"), self.p(f"fuse{i}.b"))

    def attention_params(self, j: int, m: int) -> AttentionParams:
        return AttentionParams(
            self.p(f"mla{j}.beta.w"), self.p(f"mla{j}.beta.b"),
            self.p(f"mla{j}.low{m}.w"), self.p(f"mla{j}.low{m}.b"),
        )

    def n_parameters(self) -> int:
        return sum(t.size for t in self.params.values())

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: np.array(v.data) for k, v in self.params.items()}

    def with_params(self, arrays: dict[str, np.ndarray]) -> BiStreamNet:
        return BiStreamNet(self.widths, self.in_channels, {k: Tensor(arrays[k], requires_grad=True) for k in self.params})


def build(seed: int = 0, widths: Sequence[int] = DEFAULT_WIDTHS, in_channels: int = 3) -> BiStreamNet:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization, fan_in of the owning kernel."""
    rng = np.random.Generator(np.random.PCG64(seed))
    params: dict[str, Tensor] = {}
    bound = 1.0
    for name, shape in param_shapes(widths, in_channels).items():
        if name.endswith(".w"):
            bound = 1.0 / math.sqrt(shape[1] * shape[2] * shape[3])
        params[name] = Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)
    return BiStreamNet(tuple(int(c) for c in widths), in_channels, params)


@dataclass
class EncoderOutput:
    fused: list[Tensor]  # post-fusion residual features, stages 1..5
    plain_last: Tensor  # plain-chain stage-5 features
    residual_last: Tensor  # residual stage-5 features before fusion


def _check_input(net: BiStreamNet, image: Tensor) -> None:
    if image.data.ndim != 3 or image.shape[0] != net.in_channels:
        raise ValueError(f"expected a ({net.in_channels}, H, W) image, got {image.shape}")
    h, w = image.shape[1:]
    div = 2 ** (N_STAGES - 1)
    if h % div or w % div or h == 0 or w == 0:
        raise ValueError(f"image size {h}x{w} must be a positive multiple of {div}")


def encode(net: BiStreamNet, image: Tensor, image_v: Optional[Tensor] = None) -> EncoderOutput:
    """Run both branches; ``image_v`` (default ``image``) feeds the plain chain."""
    _check_input(net, image)
    if image_v is None:
        image_v = image
    elif image_v.shape != image.shape:
        raise ValueError(f"plain-chain input {image_v.shape} differs from {image.shape}")

    v_in, r_in = image_v, image
    fused: list[Tensor] = []
    v = r = None
    for i in range(1, N_STAGES + 1):
        if i > 1:
            v_in = T.downsample(v, 2)
            r_in = T.downsample(fused[-1], 2)
        v = T.tanh(net.conv(T.tanh(net.conv(v_in, f"v{i}.conv1")), f"v{i}.conv2"))
        proj = net.conv(r_in, f"r{i}.proj")
        r = T.tanh(T.add(proj, net.conv(T.tanh(net.conv(proj, f"r{i}.conv1")), f"r{i}.conv2")))
        if i > 1:
            r = output_gate(r, fused[-1], net.output_gate_params(i))
        fused.append(gated_fuse(r, v, net.input_gate_params(i), net.fusion_scheme(i)))
    return EncoderOutput(fused, v, r)


def attend(net: BiStreamNet, fused: Sequence[Tensor]) -> list[Tensor]:
    feats = list(fused)
    for j in ATTN_DEEP:
        alpha = location_attention(fused[j - 1], net.attention_params(j, ATTN_SHALLOW[0]))
        x = fused[j - 1]
        for m in ATTN_SHALLOW:
            x = apply_mla(x, fused[m - 1], alpha, net.attention_params(j, m))
        feats[j - 1] = x
    return feats


def decode(net: BiStreamNet, feats: Sequence[Tensor]) -> Tensor:
    d = feats[-1]
    for i in range(N_STAGES - 1, 0, -1):
        d = T.tanh(net.conv(T.concat_channels(T.upsample(d, 2), feats[i - 1]), f"dec{i}"))
    return T.sigmoid(net.conv(d, "head"))


def forward(net: BiStreamNet, image: Tensor, image_v: Optional[Tensor] = None) -> Tensor:
    """Saliency map as a (1, H, W) tensor with values in (0, 1)."""
    enc = encode(net, image, image_v)
    return decode(net, attend(net, enc.fused))


def infer(net: BiStreamNet, image) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Final (H, W) map plus per-branch stage-5 maps squeezed to one channel."""
    image = T.as_tensor(image)
    enc = encode(net, image)
    final = decode(net, attend(net, enc.fused))
    branches = {
        "plain": T.sigmoid(net.conv(enc.plain_last, "probe_v")).data[0].copy(),
        "residual": T.sigmoid(net.conv(enc.residual_last, "probe_r")).data[0].copy(),
    }
    return final.data[0].copy(), branches


def bce_loss(pred: Tensor, gt) -> Tensor:
    """Mean binary cross entropy with ``pred`` clamped to [1e-7, 1 - 1e-7]."""
    g = np.asarray(gt.data if isinstance(gt, Tensor) else gt, dtype=np.float64)
    if g.shape != pred.shape:
        if g.size == pred.size and g.shape == pred.shape[1:]:
            g = g.reshape(pred.shape)
        else:
            raise ValueError(f"bce_loss: prediction {pred.shape} and mask {g.shape} differ in shape")
    raw = pred.data
    p = np.clip(raw, BCE_EPS, 1.0 - BCE_EPS)
    n = p.size
    loss = -np.mean(g * np.log(p) + (1.0 - g) * np.log1p(-p))
    inside = (raw >= BCE_EPS) & (raw <= 1.0 - BCE_EPS)

    def _backward(up):
        return (float(up) * inside * (-(g / p) + (1.0 - g) / (1.0 - p)) / n,)

    return T.apply_op(np.array(loss), (pred,), _backward, "bce")


# -- training ---------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    momentum: float = 0.99
    weight_decay: float = 5e-4
    batch_size: int = 2
    iterations: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("learning_rate and weight_decay must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.batch_size < 1 or self.iterations < 0:
            raise ValueError("batch_size must be positive and iterations non-negative")


@dataclass
class TrainResult:
    net: BiStreamNet
    losses: list[float] = field(default_factory=list)

    def loss_csv(self) -> str:
        lines = ["iter,loss"] + [f"{i},{loss!r}" for i, loss in enumerate(self.losses)]
        return "\n".join(lines) + "\n"


def batch_schedule(n: int, batch_size: int, iterations: int, seed: int) -> list[list[int]]:
    """Index batches: a fresh seeded permutation per pass over the data."""
    rng = np.random.Generator(np.random.PCG64(seed))
    order: list[int] = []
    batches = []
    for _ in range(iterations):
        batch = []
        while len(batch) < min(batch_size, n):
            if not order:
                order = rng.permutation(n).tolist()
            batch.append(order.pop(0))
        batches.append(batch)
    return batches


def batch_loss(net: BiStreamNet, samples: Sequence[tuple[np.ndarray, np.ndarray]]) -> Tensor:
    total = None
    for image, mask in samples:
        loss = bce_loss(forward(net, Tensor(image)), mask)
        total = loss if total is None else T.add(total, loss)
    return T.apply_op(total.data / len(samples), (total,), lambda g: (g / len(samples),), "scale")


def train(net: BiStreamNet, dataset: Sequence[tuple[np.ndarray, np.ndarray]], cfg: TrainConfig = TrainConfig()) -> TrainResult:
    """SGD with momentum and L2 weight decay (``v = mu v + g + wd p; p -= lr v``).

    The input ``net`` is left untouched; the returned net holds the trained
    parameters. ``losses[t]`` is the minibatch loss before update ``t``.
    """
    if not dataset:
        raise ValueError("train needs a non-empty dataset")
    params = net.snapshot()
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    losses = []
    for batch in batch_schedule(len(dataset), cfg.batch_size, cfg.iterations, cfg.seed):
        current = net.with_params(params)
        loss = batch_loss(current, [dataset[i] for i in batch])
        loss.backward()
        losses.append(loss.item())
        for name, t in current.params.items():
            g = t.grad if t.grad is not None else np.zeros_like(params[name])
            velocity[name] = cfg.momentum * velocity[name] + g + cfg.weight_decay * params[name]
            params[name] = params[name] - cfg.learning_rate * velocity[name]
    return TrainResult(net.with_params(params), losses)


def blob_dataset(n: int = 4, size: int = 64, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Bright disks on a dark, slightly noisy field: (3, size, size) images and (size, size) masks."""
    rng = np.random.Generator(np.random.PCG64(seed))
    yy, xx = np.mgrid[0:size, 0:size]
    data = []
    for _ in range(n):
        radius = rng.uniform(0.15, 0.3) * size
        cy, cx = rng.uniform(radius, size - radius, size=2)
        mask = ((yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2).astype(np.float64)
        tint = rng.uniform(0.7, 1.0, size=3)[:, None, None]
        image = 0.1 + 0.05 * rng.standard_normal((3, size, size)) + mask[None] * tint * 0.8
        data.append((np.clip(image, 0.0, 1.0), mask))
    return data


# -- checkpoints --------------------------------------------------------------


def dumps_checkpoint(net: BiStreamNet) -> str:
    out = io.StringIO()
    out.write(CHECKPOINT_MAGIC + "\n")
    out.write("widths " + " ".join(str(c) for c in net.widths) + "\n")
    out.write(f"in_channels {net.in_channels}\n")
    for name, t in net.params.items():
        out.write(f"param {name}\n")
        out.write(T.dumps(t))
    return out.getvalue()


def loads_checkpoint(text: str) -> BiStreamNet:
    lines = text.splitlines()
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise ValueError("not a bistream checkpoint (bad magic line)")
    try:
        widths = tuple(int(v) for v in lines[1].split()[1:])
        in_channels = int(lines[2].split()[1])
    except (IndexError, ValueError):
        raise ValueError("malformed checkpoint header") from None
    expected = param_shapes(widths, in_channels)
    params: dict[str, Tensor] = {}
    pos = 3
    while pos < len(lines):
        tag, _, name = lines[pos].partition(" ")
        if tag != "param":
            raise ValueError(f"checkpoint line {pos + 1}: expected 'param <name>'")
        shape = tuple(int(v) for v in lines[pos + 1].split())
        n_rows = int(np.prod(shape[:-1])) if len(shape) > 1 else 1
        t = T.loads("\n".join(lines[pos + 1 : pos + 2 + n_rows]))
        if expected.get(name) != t.shape:
            raise ValueError(f"checkpoint parameter {name!r} has unexpected shape {t.shape}")
        params[name] = Tensor(t.data, requires_grad=True)
        pos += 2 + n_rows
    missing = set(expected) - set(params)
    if missing:
        raise ValueError(f"checkpoint is missing parameters: {sorted(missing)}")
    return BiStreamNet(widths, in_channels, {k: params[k] for k in expected})


def save_checkpoint(net: BiStreamNet, path) -> None:
    Path(path).write_text(dumps_checkpoint(net), encoding="utf-8")


def load_checkpoint(path) -> BiStreamNet:
    return loads_checkpoint(Path(path).read_text(encoding="utf-8"))
