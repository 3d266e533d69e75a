"""Bi-stream fusion schemes and the gate control unit.

``x_r`` is the residual-branch feature map, ``x_v`` the plain-chain one.
The input gate modulates a linear projection of ``x_v`` by a sigmoid gate
before it is fused into ``x_r``; the output gate scales a residual stage by a
sigmoid guidance map computed from the stage before it.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .tensor import (
    Tensor,
    add,
    concat_channels,
    conv2d,
    downsample,
    emax,
    mul,
    sigmoid,
    tanh,
    tsum,
)


class FusionKind(str, Enum):
    SUM = "sum"
    MAX = "max"
    CONCAT = "concat"
    CONV = "conv"


@dataclass(frozen=True)
class FusionScheme:
    kind: FusionKind
    weight: Optional[Tensor] = None  # (C, 2C, k, k), Conv only
    bias: Optional[Tensor] = None

    def __post_init__(self):
        if self.kind is FusionKind.CONV:
            if self.weight is None or self.bias is None:
                raise ValueError("conv fusion needs a kernel and a bias")
            c_out, c_in = self.weight.shape[:2]
            if c_in != 2 * c_out:
                raise ValueError(
                    f"conv fusion kernel must map 2C -> C channels, got {c_in} -> {c_out}"
                )

    @classmethod
    def sum(cls) -> FusionScheme:
        return cls(FusionKind.SUM)

    @classmethod
    def max(cls) -> FusionScheme:
        return cls(FusionKind.MAX)

    @classmethod
    def concat(cls) -> FusionScheme:
        return cls(FusionKind.CONCAT)

    @classmethod
    def conv(cls, weight: Tensor, bias: Tensor) -> FusionScheme:
        return cls(FusionKind.CONV, weight, bias)


@dataclass(frozen=True)
class InputGateParams:
    w: Tensor  # projection, (C, C, 1, 1)
    b: Tensor
    v_in: Tensor  # gate, (C, C, 1, 1)
    b_in: Tensor

    def __post_init__(self):
        for name, kern in (("w", self.w), ("v_in", self.v_in)):
            if kern.data.ndim != 4 or kern.shape[0] != kern.shape[1]:
                raise ValueError(f"input gate {name} must be a square (C, C, k, k) kernel, got {kern.shape}")
        if self.w.shape[:2] != self.v_in.shape[:2]:
            raise ValueError(f"input gate kernels disagree on channels: {self.w.shape} vs {self.v_in.shape}")

    @property
    def channels(self) -> int:
        return self.w.shape[0]


@dataclass(frozen=True)
class OutputGateParams:
    v_out: Tensor  # (C_cur, C_prev, 1, 1)
    b_out: Tensor

    @property
    def channels(self) -> int:
        return self.v_out.shape[0]


def fuse(x_r: Tensor, x_v: Tensor, scheme: FusionScheme) -> Tensor:
    if x_r.data.ndim != 3 or x_v.data.ndim != 3:
        raise ValueError(f"fuse: expected (C, H, W) maps, got {x_r.shape} and {x_v.shape}")
    if x_r.shape[1:] != x_v.shape[1:]:
        raise ValueError(f"fuse: spatial mismatch {x_r.shape} vs {x_v.shape}")
    kind = scheme.kind
    if kind is FusionKind.SUM:
        return add(x_r, x_v)
    if kind is FusionKind.MAX:
        return emax(x_r, x_v)
    if x_r.shape[0] != x_v.shape[0]:
        raise ValueError(f"fuse: channel mismatch {x_r.shape} vs {x_v.shape}")
    stacked = concat_channels(x_r, x_v)
    if kind is FusionKind.CONCAT:
        return stacked
    return conv2d(stacked, scheme.weight, scheme.bias)


def input_gate(x_v: Tensor, p: InputGateParams) -> Tensor:
    if x_v.data.ndim != 3 or x_v.shape[0] != p.channels:
        raise ValueError(f"input_gate: params expect {p.channels} channels, got input {x_v.shape}")
    projected = conv2d(x_v, p.w, p.b)
    gate = sigmoid(conv2d(x_v, p.v_in, p.b_in))
    return mul(projected, gate)


def gated_fuse(x_r: Tensor, x_v: Tensor, p: InputGateParams, scheme: FusionScheme) -> Tensor:
    return fuse(x_r, input_gate(x_v, p), scheme)


def output_gate(x_cur: Tensor, x_prev: Tensor, p: OutputGateParams) -> Tensor:
    """Scale ``x_cur`` by a sigmoid map computed from the precedent stage.

    A precedent map at a higher resolution is average-pooled down to the
    current stage's resolution before the 1x1 gate convolution.
    """
    if x_cur.data.ndim != 3 or x_prev.data.ndim != 3:
        raise ValueError(f"output_gate: expected (C, H, W) maps, got {x_cur.shape} and {x_prev.shape}")
    (_, h, w), (_, hp, wp) = x_cur.shape, x_prev.shape
    if hp % h or wp % w or hp // h != wp // w:
        raise ValueError(f"output_gate: cannot reduce precedent {x_prev.shape} to {x_cur.shape}")
    if x_cur.shape[0] != p.channels or x_prev.shape[0] != p.v_out.shape[1]:
        raise ValueError(
            f"output_gate: params map {p.v_out.shape[1]} -> {p.channels} channels, "
            f"got precedent {x_prev.shape} and current {x_cur.shape}"
        )
    guide = downsample(x_prev, hp // h)
    return mul(x_cur, sigmoid(conv2d(guide, p.v_out, p.b_out)))


# -- gradient path comparison -------------------------------------------------


@dataclass(frozen=True)
class GateGradientRow:
    x: float
    grad_proposed: float
    grad_lstm: float
    fd_proposed: float
    fd_lstm: float


def _sig(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x)) if x >= 0 else math.exp(x) / (1.0 + math.exp(x))


def gate_gradient_report(xs: Sequence[float], eps: float = 1e-6) -> list[GateGradientRow]:
    """Gradient of the self-gated path ``sigmoid(x) * x`` (``grad_proposed``)
    against the LSTM-style ``tanh(x) * sigmoid(x)`` (``grad_lstm``), per scalar ``x``.

    The analytic columns come from the autodiff engine; the ``fd_`` columns are
    central differences at ``eps``.
    """
    xs = [float(v) for v in xs]
    if not xs:
        return []
    x = Tensor(np.array(xs), requires_grad=True)
    tsum(mul(sigmoid(x), x)).backward()
    g_prop = x.grad.copy()
    x.zero_grad()
    tsum(mul(tanh(x), sigmoid(x))).backward()
    g_lstm = x.grad.copy()

    rows = []
    for i, v in enumerate(xs):
        fd_p = (_sig(v + eps) * (v + eps) - _sig(v - eps) * (v - eps)) / (2 * eps)
        fd_l = (math.tanh(v + eps) * _sig(v + eps) - math.tanh(v - eps) * _sig(v - eps)) / (2 * eps)
        rows.append(GateGradientRow(v, float(g_prop[i]), float(g_lstm[i]), fd_p, fd_l))
    return rows


def gate_report_csv(rows: Sequence[GateGradientRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["x", "grad_proposed", "grad_lstm", "fd_proposed", "fd_lstm"])
    for r in rows:
        writer.writerow([repr(r.x), repr(r.grad_proposed), repr(r.grad_lstm), repr(r.fd_proposed), repr(r.fd_lstm)])
    return buf.getvalue()

