"""Finite-difference gradient checks for every differentiable path."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import model as M
from . import tensor as T
from .attention import AttentionParams, apply_mla, location_attention
from .fusion import FusionScheme, InputGateParams, OutputGateParams, fuse, input_gate, output_gate
from .tensor import Tensor

OP_TOL = 1e-4
END_TO_END_TOL = 1e-3


@dataclass(frozen=True)
class GradCheckResult:
    name: str
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def check(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], eps: float = 1e-5, seed: int = 0) -> float:
    """Compare backward() with central differences for a random projection of ``fn``.

    The scalar objective is ``sum(fn(*inputs) * r)`` with fixed random ``r``,
    unless ``fn`` already returns a scalar.
    """
    leaves = [Tensor(a, requires_grad=True) for a in inputs]
    out = fn(*leaves)
    if out.size == 1:
        def objective(*xs):
            return fn(*xs)
    else:
        r = Tensor(np.random.Generator(np.random.PCG64(seed)).uniform(-1, 1, size=out.shape))

        def objective(*xs):
            return T.tsum(T.mul(fn(*xs), r))

    objective(*leaves).backward()
    worst = 0.0
    for k, leaf in enumerate(leaves):
        def partial(x, k=k):
            args = [Tensor(a) for a in inputs]
            args[k] = x
            return objective(*args)

        fd = T.finite_diff_grad(partial, Tensor(inputs[k]), eps)
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(inputs[k])
        worst = max(worst, T.grad_rel_error(analytic, fd.data))
    return worst


def _net_check(seed: int) -> float:
    rng = np.random.Generator(np.random.PCG64(seed))
    net = M.build(seed, widths=(2, 2, 2, 2, 2))
    image = rng.uniform(0.0, 1.0, size=(3, 16, 16))
    mask = (rng.uniform(size=(16, 16)) > 0.5).astype(np.float64)
    names = list(net.params)
    snap = net.snapshot()

    def loss(*arrays):
        current = M.BiStreamNet(net.widths, net.in_channels, dict(zip(names, arrays)))
        return M.bce_loss(M.forward(current, Tensor(image)), mask)

    return check(loss, [snap[n] for n in names], seed=seed)


def run_suite(seed: int = 0, include_network: bool = True) -> list[GradCheckResult]:
    rng = np.random.Generator(np.random.PCG64(seed))

    def u(*shape, lo=-2.0, hi=2.0):
        return rng.uniform(lo, hi, size=shape)

    def untied(shape):
        a = u(*shape)
        b = u(*shape)
        close = np.abs(a - b) < 1e-3
        b[close] += 0.5
        return a, b

    c, h, w = 3, 4, 4
    results = []

    def add(name, fn, inputs, tol=OP_TOL):
        results.append(GradCheckResult(name, check(fn, inputs, seed=seed), tol))

    add("add", T.add, [u(c, h, w), u(c, h, w)])
    add("mul", T.mul, [u(c, h, w), u(c, h, w)])
    add("emax", T.emax, list(untied((c, h, w))))
    add("concat_channels", T.concat_channels, [u(2, h, w), u(3, h, w)])
    add("conv2d_3x3", T.conv2d, [u(2, 5, 5), u(2, 2, 3, 3), u(2)])
    add("conv2d_1x1", T.conv2d, [u(3, 5, 5), u(2, 3, 1, 1), u(2)])
    add("sigmoid", T.sigmoid, [u(c, h, w)])
    add("tanh", T.tanh, [u(c, h, w)])
    add("softmax_spatial", T.softmax_spatial, [u(1, h, w)])
    add("downsample", lambda x: T.downsample(x, 2), [u(c, h, w)])
    add("upsample", lambda x: T.upsample(x, 2), [u(c, 2, 2)])
    add("broadcast_channels", lambda x: T.broadcast_channels(x, 3), [u(1, h, w)])

    fw = u(c, 2 * c, 1, 1)
    fb = u(c)
    add("fuse_sum", lambda a, b: fuse(a, b, FusionScheme.sum()), [u(c, h, w), u(c, h, w)])
    add("fuse_max", lambda a, b: fuse(a, b, FusionScheme.max()), list(untied((c, h, w))))
    add("fuse_concat", lambda a, b: fuse(a, b, FusionScheme.concat()), [u(c, h, w), u(c, h, w)])
    add("fuse_conv", lambda a, b, k, bb: fuse(a, b, FusionScheme.conv(k, bb)), [u(c, h, w), u(c, h, w), fw, fb])
    add(
        "input_gate",
        lambda x, w_, b_, v_, bv: input_gate(x, InputGateParams(w_, b_, v_, bv)),
        [u(c, h, w), u(c, c, 1, 1), u(c), u(c, c, 1, 1), u(c)],
    )
    add(
        "output_gate",
        lambda cur, prev, v_, b_: output_gate(cur, prev, OutputGateParams(v_, b_)),
        [u(c, 2, 2), u(2, h, w), u(c, 2, 1, 1), u(c)],
    )

    def mla(xj, xm, wb, bb, wl, bl):
        p = AttentionParams(wb, bb, wl, bl)
        return apply_mla(xj, xm, location_attention(xj, p), p)

    add("mla_path", mla, [u(3, 2, 2), u(2, 4, 4), u(1, 3, 1, 1), u(1), u(3, 2, 1, 1), u(3)])
    add(
        "bce_loss",
        lambda p: M.bce_loss(p, (np.arange(16).reshape(1, 4, 4) % 3 == 0).astype(float)),
        [u(1, 4, 4, lo=0.05, hi=0.95)],
    )
    if include_network:
        results.append(GradCheckResult("network_end_to_end", _net_check(seed), END_TO_END_TOL))
    return results


def results_csv(results: Sequence[GradCheckResult]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["check", "max_rel_error", "tolerance", "passed"])
    for r in results:
        writer.writerow([r.name, repr(r.max_rel_error), repr(r.tolerance), int(r.passed)])
    return buf.getvalue()
