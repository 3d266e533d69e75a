import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bistream_sod import tensor as T
from bistream_sod.fusion import (
    FusionKind,
    FusionScheme,
    InputGateParams,
    OutputGateParams,
    fuse,
    gate_gradient_report,
    gate_report_csv,
    gated_fuse,
    input_gate,
    output_gate,
)
from bistream_sod.gradcheck import check
from bistream_sod.tensor import Tensor

C, H, W = 3, 4, 4


def eye_kernel(c):
    return Tensor(np.eye(c)[:, :, None, None])


def random_gate(rng, c=C, b_in=None, v_in=None, w=None, b=None):
    return InputGateParams(
        w if w is not None else Tensor(rng.normal(size=(c, c, 1, 1))),
        b if b is not None else Tensor(rng.normal(size=c)),
        v_in if v_in is not None else Tensor(rng.normal(size=(c, c, 1, 1))),
        b_in if b_in is not None else Tensor(rng.normal(size=c)),
    )


def all_schemes(rng, c=C):
    return [
        FusionScheme.sum(),
        FusionScheme.max(),
        FusionScheme.concat(),
        FusionScheme.conv(Tensor(rng.normal(size=(c, 2 * c, 1, 1))), Tensor(rng.normal(size=c))),
    ]


def test_sum_with_zero_is_identity(rng):
    x = Tensor(rng.normal(size=(C, H, W)))
    assert np.array_equal(fuse(x, T.zeros(C, H, W), FusionScheme.sum()).data, x.data)


def test_max_scheme_values():
    out = fuse(Tensor([[[1.0, 5.0]]]), Tensor([[[3.0, 2.0]]]), FusionScheme.max())
    assert np.array_equal(out.data, [[[3.0, 5.0]]])


def test_concat_doubles_channels(rng):
    out = fuse(Tensor(rng.normal(size=(C, H, W))), Tensor(rng.normal(size=(C, H, W))), FusionScheme.concat())
    assert out.shape == (2 * C, H, W)


def test_conv_scheme_is_conv_of_concat(rng):
    xr, xv = Tensor(rng.normal(size=(C, H, W))), Tensor(rng.normal(size=(C, H, W)))
    k, b = Tensor(rng.normal(size=(C, 2 * C, 3, 3))), Tensor(rng.normal(size=C))
    direct = T.conv2d(T.concat_channels(xr, xv), k, b).data
    assert fuse(xr, xv, FusionScheme.conv(k, b)).data.tobytes() == direct.tobytes()


def test_conv_scheme_needs_2c_inputs(rng):
    with pytest.raises(ValueError, match="2C"):
        FusionScheme.conv(Tensor(rng.normal(size=(C, C, 1, 1))), Tensor(np.zeros(C)))


@pytest.mark.parametrize("kind", list(FusionKind))
def test_fuse_shape_mismatch(kind, rng):
    scheme = all_schemes(rng)[list(FusionKind).index(kind)]
    with pytest.raises(ValueError):
        fuse(T.zeros(C, H, W), T.zeros(C, H, W + 1), scheme)


def test_input_gate_half_when_gate_is_zero(rng):
    x = Tensor(rng.normal(size=(C, H, W)))
    p = InputGateParams(eye_kernel(C), T.zeros(C), T.zeros(C, C, 1, 1), T.zeros(C))
    assert np.allclose(input_gate(x, p).data, 0.5 * x.data, rtol=0, atol=0)


def test_input_gate_saturated_open(rng):
    x = Tensor(rng.normal(size=(C, H, W)))
    w, b = Tensor(rng.normal(size=(C, C, 1, 1))), Tensor(rng.normal(size=C))
    p = InputGateParams(w, b, T.zeros(C, C, 1, 1), Tensor(np.full(C, 20.0)))
    proj = T.conv2d(x, w, b).data
    assert np.allclose(input_gate(x, p).data, proj, atol=1e-7 * np.abs(proj).max())


def test_input_gate_compositional(rng):
    x = Tensor(rng.normal(size=(C, H, W)))
    p = random_gate(rng)
    manual = T.mul(T.conv2d(x, p.w, p.b), T.sigmoid(T.conv2d(x, p.v_in, p.b_in)))
    assert input_gate(x, p).data.tobytes() == manual.data.tobytes()


def test_input_gate_channel_mismatch(rng):
    with pytest.raises(ValueError, match="channels"):
        input_gate(T.zeros(C + 1, H, W), random_gate(rng))


def test_gated_fuse_closed_and_open_gate(rng):
    xr, xv = Tensor(rng.normal(size=(C, H, W))), Tensor(rng.normal(size=(C, H, W)))
    closed = random_gate(rng, b_in=Tensor(np.full(C, -20.0)), v_in=T.zeros(C, C, 1, 1), b=T.zeros(C))
    assert np.allclose(gated_fuse(xr, xv, closed, FusionScheme.sum()).data, xr.data, atol=1e-7)
    opened = random_gate(rng, b_in=Tensor(np.full(C, 20.0)), v_in=T.zeros(C, C, 1, 1), w=eye_kernel(C), b=T.zeros(C))
    assert np.allclose(gated_fuse(xr, xv, opened, FusionScheme.sum()).data, xr.data + xv.data, atol=1e-8)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_gated_fuse_is_fuse_of_gate(seed):
    r = np.random.Generator(np.random.PCG64(seed))
    xr, xv = Tensor(r.normal(size=(C, H, W))), Tensor(r.normal(size=(C, H, W)))
    p = random_gate(r)
    for scheme in all_schemes(r):
        lhs = gated_fuse(xr, xv, p, scheme).data
        rhs = fuse(xr, input_gate(xv, p), scheme).data
        assert lhs.tobytes() == rhs.tobytes()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_gate_output_bounded_by_projection(seed):
    r = np.random.Generator(np.random.PCG64(seed))
    x = Tensor(r.normal(size=(C, H, W)))
    p = random_gate(r)
    assert np.all(np.abs(input_gate(x, p).data) <= np.abs(T.conv2d(x, p.w, p.b).data))


def test_output_gate_open_closed(rng):
    cur, prev = Tensor(rng.normal(size=(C, 2, 2))), Tensor(rng.normal(size=(2, H, W)))
    open_p = OutputGateParams(T.zeros(C, 2, 1, 1), Tensor(np.full(C, 20.0)))
    assert np.allclose(output_gate(cur, prev, open_p).data, cur.data, atol=1e-8)
    closed_p = OutputGateParams(T.zeros(C, 2, 1, 1), Tensor(np.full(C, -20.0)))
    assert np.abs(output_gate(cur, prev, closed_p).data).max() < 1e-8


def test_output_gate_compositional(rng):
    cur, prev = Tensor(rng.normal(size=(C, 2, 2))), Tensor(rng.normal(size=(2, H, W)))
    p = OutputGateParams(Tensor(rng.normal(size=(C, 2, 1, 1))), Tensor(rng.normal(size=C)))
    manual = T.mul(cur, T.sigmoid(T.conv2d(T.downsample(prev, 2), p.v_out, p.b_out)))
    assert output_gate(cur, prev, p).data.tobytes() == manual.data.tobytes()


def test_output_gate_same_resolution(rng):
    cur, prev = Tensor(rng.normal(size=(C, H, W))), Tensor(rng.normal(size=(2, H, W)))
    p = OutputGateParams(Tensor(rng.normal(size=(C, 2, 1, 1))), Tensor(rng.normal(size=C)))
    assert output_gate(cur, prev, p).shape == (C, H, W)


def test_output_gate_irreconcilable(rng):
    p = OutputGateParams(T.zeros(C, 2, 1, 1), T.zeros(C))
    with pytest.raises(ValueError):
        output_gate(T.zeros(C, 3, 3), T.zeros(2, 4, 4), p)
    with pytest.raises(ValueError):
        output_gate(T.zeros(C, 2, 2), T.zeros(2, 4, 8), p)


@pytest.mark.parametrize("idx", range(4))
def test_fusion_gradients(idx, rng):
    a, b = rng.uniform(-2, 2, (C, H, W)), rng.uniform(-2, 2, (C, H, W))
    b[np.abs(a - b) < 1e-3] += 0.5
    scheme = all_schemes(rng)[idx]
    assert check(lambda x, y: fuse(x, y, scheme), [a, b]) < 1e-4


def test_gate_gradients(rng):
    args = [rng.uniform(-2, 2, (C, H, W)), rng.normal(size=(C, C, 1, 1)), rng.normal(size=C),
            rng.normal(size=(C, C, 1, 1)), rng.normal(size=C)]
    assert check(lambda x, w, b, v, bv: input_gate(x, InputGateParams(w, b, v, bv)), args) < 1e-4
    args = [rng.uniform(-2, 2, (C, 2, 2)), rng.uniform(-2, 2, (2, H, W)), rng.normal(size=(C, 2, 1, 1)), rng.normal(size=C)]
    assert check(lambda c, p, v, b: output_gate(c, p, OutputGateParams(v, b)), args) < 1e-4


# -- gradient path report ------------------------------------------------------


def _sig(x):
    return 1 / (1 + math.exp(-x))


def test_gate_report_at_zero():
    row = gate_gradient_report([0.0])[0]
    assert abs(row.grad_proposed - 0.5) < 1e-9
    assert abs(row.grad_lstm - 0.5) < 1e-9


def test_gate_report_at_two_matches_fd_oracle():
    eps = 1e-6
    fd_p = (_sig(2 + eps) * (2 + eps) - _sig(2 - eps) * (2 - eps)) / (2 * eps)
    fd_l = (math.tanh(2 + eps) * _sig(2 + eps) - math.tanh(2 - eps) * _sig(2 - eps)) / (2 * eps)
    row = gate_gradient_report([2.0])[0]
    assert abs(row.grad_proposed - fd_p) < 1e-6 and abs(row.grad_lstm - fd_l) < 1e-6
    assert round(row.grad_proposed, 4) == 1.0908
    assert round(row.grad_lstm, 4) == 0.1634


def test_gate_report_saturation():
    row = gate_gradient_report([10.0])[0]
    assert row.grad_proposed > 0.99
    assert row.grad_lstm < 1e-3
    # sigma(10) + 10 sigma'(10)
    assert abs(row.grad_proposed - 1.0004085602) < 1e-9


@settings(max_examples=50, deadline=None)
@given(st.floats(-12, 12))
def test_gate_report_matches_closed_forms(x):
    row = gate_gradient_report([x])[0]
    s = _sig(x)
    th = math.tanh(x)
    assert abs(row.grad_proposed - (s + s * (1 - s) * x)) < 1e-12
    assert abs(row.grad_lstm - ((1 - th * th) * s + th * s * (1 - s))) < 1e-12
    assert abs(row.grad_proposed - row.fd_proposed) < 1e-6
    assert abs(row.grad_lstm - row.fd_lstm) < 1e-6


def test_gate_report_csv_header():
    text = gate_report_csv(gate_gradient_report([0.0, 1.0]))
    lines = text.splitlines()
    assert lines[0] == "x,grad_proposed,grad_lstm,fd_proposed,fd_lstm"
    assert len(lines) == 3
