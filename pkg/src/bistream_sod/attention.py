"""Multi-layer attention: deep-stage location maps re-weight shallow features.

A deep map ``x_j`` is squeezed to one channel, passed through ``tanh`` and a
spatial softmax to give ``alpha_j``. A shallow map ``x_m`` is projected to
``x_j``'s channel count, multiplied by ``alpha_j`` (nearest-upsampled to the
shallow resolution), average-pooled back down and added to ``x_j``.
"""

from __future__ import annotations

from dataclasses import dataclass

from .tensor import (
    Tensor,
    add,
    broadcast_channels,
    conv2d,
    downsample,
    mul,
    softmax_spatial,
    tanh,
    upsample,
)


@dataclass(frozen=True)
class AttentionParams:
    w_beta: Tensor  # (1, C_j, 1, 1)
    b_beta: Tensor  # (1,)
    w_low: Tensor  # (C_j, C_m, 1, 1)
    b_low: Tensor  # (C_j,)

    def __post_init__(self):
        if self.w_beta.data.ndim != 4 or self.w_beta.shape[0] != 1:
            raise ValueError(f"w_beta must reduce to exactly one channel, got kernel {self.w_beta.shape}")


def location_attention(x_j: Tensor, p: AttentionParams) -> Tensor:
    """alpha_j: a (1, H_j, W_j) map, non-negative and summing to one."""
    if x_j.data.ndim != 3 or x_j.shape[0] != p.w_beta.shape[1]:
        raise ValueError(f"location_attention: kernel expects {p.w_beta.shape[1]} channels, got {x_j.shape}")
    beta = tanh(conv2d(x_j, p.w_beta, p.b_beta))
    return softmax_spatial(beta)


def apply_mla(x_j: Tensor, x_m: Tensor, alpha: Tensor, p: AttentionParams) -> Tensor:
    if x_m.data.ndim != 3 or x_j.data.ndim != 3:
        raise ValueError(f"apply_mla: expected (C, H, W) maps, got {x_j.shape} and {x_m.shape}")
    (c_j, h_j, w_j), (_, h_m, w_m) = x_j.shape, x_m.shape
    if alpha.shape != (1, h_j, w_j):
        raise ValueError(f"apply_mla: attention map {alpha.shape} does not match deep map {x_j.shape}")
    if h_m % h_j or w_m % w_j or h_m // h_j != w_m // w_j:
        raise ValueError(f"apply_mla: shallow {x_m.shape} is not an integer multiple of deep {x_j.shape}")
    if p.w_low.shape[:2] != (c_j, x_m.shape[0]):
        raise ValueError(
            f"apply_mla: low projection {p.w_low.shape} must map {x_m.shape[0]} -> {c_j} channels"
        )
    factor = h_m // h_j
    projected = conv2d(x_m, p.w_low, p.b_low)
    weights = broadcast_channels(upsample(alpha, factor), c_j)
    return add(x_j, downsample(mul(projected, weights), factor))
