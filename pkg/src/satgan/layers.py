"""Neural layer primitives: convolution, transposed convolution, instance
normalization, and residual blocks.

Convolution comes as a closed trio — forward, data-gradient and
weight-gradient — where each member's backward rule is written in terms of
the other two. That closure is what lets the critic's gradient-norm
penalty be differentiated a second time with respect to the weights.

Transposed convolution is *defined* as the adjoint of ``conv2d`` with the
same kernel/stride/padding, so <conv2d(x), y> == <x, conv_transpose2d(y)>
is an exact executable identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _convkernels as _kern
from .tensor import (
    Tensor,
    _record,
    add,
    expand_batch,
    expand_nhw,
    add_scalar,
    mul,
    pow_const,
    relu,
    replicate_spatial,
    scalar_mul,
    sub,
    sum_spatial,
    xavier_init,
)


@dataclass(frozen=True)
class ConvSpec:
    """kernel/filters/stride/padding of one convolution ("k7n64s1" style)."""

    kernel: int
    filters: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.kernel < 1 or self.filters < 1 or self.stride < 1 or self.padding < 0:
            raise ValueError(f"invalid conv spec {self}")


def conv_out_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv_transpose_out_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size - 1) * stride - 2 * padding + kernel


# ---------------------------------------------------------------------------
# the conv trio (recorded primitives)
# ---------------------------------------------------------------------------

def _check_conv_args(x: Tensor, w: Tensor, op: str) -> None:
    if len(x.shape) != 4 or len(w.shape) != 4:
        raise ValueError(f"{op}: expected 4-d input and weight, got {x.shape}, {w.shape}")
    if x.dtype != w.dtype:
        raise ValueError(f"{op}: dtype mismatch {x.dtype} vs {w.dtype}")


def _prepared_input(data: np.ndarray, stride: int, padding: int):
    """Padded representation consumed by the kernels: a plane for stride 1
    and the generic path, a column-parity pair for stride 2."""
    if stride == 2:
        return _kern.pad_split_parity(data, padding)
    if padding == 0:
        return data
    return _kern.pad_nchw(data, padding)


def conv2d_core(x: Tensor, w: Tensor, stride: int, padding: int) -> Tensor:
    """Cross-correlation of x (N,Ci,H,W) with w (Co,Ci,k,k), no bias."""
    _check_conv_args(x, w, "conv2d")
    co, ci, k, _ = w.shape
    n, cx, h, wdt = x.shape
    if cx != ci:
        raise ValueError(f"conv2d: input has {cx} channels, weight expects {ci}")
    if h + 2 * padding < k or wdt + 2 * padding < k:
        raise ValueError(f"conv2d: kernel {k} larger than padded input")
    ho = conv_out_size(h, k, stride, padding)
    wo = conv_out_size(wdt, k, stride, padding)
    prep = _prepared_input(x.data, stride, padding)
    if stride == 1:
        out = _kern.fwd_s1(prep, w.data, ho, wo)
    elif stride == 2:
        out = _kern.fwd_s2(prep[0], prep[1], w.data, ho, wo)
    else:
        out = _kern.fwd_generic(prep, w.data, stride, ho, wo)

    def bwd(up, need):
        gx = conv_data_grad(up, w, stride, padding, (h, wdt)) if need[0] else None
        gw = conv_weight_grad(x, up, stride, padding, k, _prep=prep) if need[1] else None
        return gx, gw

    return _record(out, (x, w), bwd, "conv2d")


def conv_data_grad(gy: Tensor, w: Tensor, stride: int, padding: int,
                   out_hw: tuple[int, int]) -> Tensor:
    """Adjoint of conv2d_core in its input: maps (N,Co,Ho,Wo) -> (N,Ci,H,W)."""
    _check_conv_args(gy, w, "conv_data_grad")
    co, ci, k, _ = w.shape
    n, cg, ho, wo = gy.shape
    if cg != co:
        raise ValueError(f"conv_data_grad: got {cg} channels, weight produces {co}")
    h, wdt = out_hw
    if conv_out_size(h, k, stride, padding) != ho or conv_out_size(wdt, k, stride, padding) != wo:
        raise ValueError(f"conv_data_grad: geometry mismatch {out_hw} -> ({ho},{wo})")
    if stride == 1:
        out = _kern.dgrad_s1(gy.data, w.data, padding, h, wdt)
    elif stride == 2:
        out = _kern.dgrad_s2(gy.data, w.data, padding, h, wdt)
    else:
        out = _kern.dgrad_generic(gy.data, w.data, stride, padding, h, wdt)

    def bwd(up, need):
        # up has the conv-input shape; see the adjoint identities.
        g_gy = conv2d_core(up, w, stride, padding) if need[0] else None
        g_w = conv_weight_grad(up, gy, stride, padding, k) if need[1] else None
        return g_gy, g_w

    return _record(out, (gy, w), bwd, "conv_data_grad")


def conv_weight_grad(x: Tensor, gy: Tensor, stride: int, padding: int, k: int,
                     _prep=None) -> Tensor:
    """Adjoint of conv2d_core in its weight: maps (x, gy) -> (Co,Ci,k,k)."""
    if len(x.shape) != 4 or len(gy.shape) != 4:
        raise ValueError("conv_weight_grad: expected 4-d tensors")
    n, ci, h, wdt = x.shape
    n2, co, ho, wo = gy.shape
    if n != n2:
        raise ValueError("conv_weight_grad: batch mismatch")
    if conv_out_size(h, k, stride, padding) != ho or conv_out_size(wdt, k, stride, padding) != wo:
        raise ValueError("conv_weight_grad: geometry mismatch")
    prep = _prep if _prep is not None else _prepared_input(x.data, stride, padding)
    if stride == 1:
        gw = _kern.wgrad_s1(prep, gy.data, k)
    elif stride == 2:
        gw = _kern.wgrad_s2(prep[0], prep[1], gy.data, k)
    else:
        gw = _kern.wgrad_generic(prep, gy.data, stride, k)

    def bwd(up, need):
        # up has the weight shape (Co,Ci,k,k)
        g_x = conv_data_grad(gy, up, stride, padding, (h, wdt)) if need[0] else None
        g_gy = conv2d_core(x, up, stride, padding) if need[1] else None
        return g_x, g_gy

    return _record(gw, (x, gy), bwd, "conv_weight_grad")


# ---------------------------------------------------------------------------
# public layers
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    y = conv2d_core(x, weight, stride, padding)
    if bias is not None:
        n, c, h, w = y.shape
        if bias.shape != (c,):
            raise ValueError(f"conv2d: bias shape {bias.shape} does not match {c} filters")
        y = add(y, expand_nhw(bias, n, h, w))
    return y


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
                     stride: int = 1, padding: int = 0) -> Tensor:
    """Adjoint of conv2d with the same spec; weight is (Cin, Cout, k, k)."""
    _check_conv_args(x, weight, "conv_transpose2d")
    cin, cout, k, _ = weight.shape
    n, cx, h, w = x.shape
    if cx != cin:
        raise ValueError(f"conv_transpose2d: input has {cx} channels, weight expects {cin}")
    ho = conv_transpose_out_size(h, k, stride, padding)
    wo = conv_transpose_out_size(w, k, stride, padding)
    if ho < 1 or wo < 1:
        raise ValueError(f"conv_transpose2d: output collapses to {ho}x{wo}")
    y = conv_data_grad(x, weight, stride, padding, (ho, wo))
    if bias is not None:
        if bias.shape != (cout,):
            raise ValueError(f"conv_transpose2d: bias shape {bias.shape} vs {cout} filters")
        y = add(y, expand_nhw(bias, n, ho, wo))
    return y


def instance_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-(sample, channel) standardization over H x W, biased variance."""
    if len(x.shape) != 4:
        raise ValueError(f"instance_norm expects (N,C,H,W), got {x.shape}")
    if eps <= 0:
        raise ValueError("instance_norm: eps must be positive")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"instance_norm: gamma/beta must be ({c},)")
    inv_hw = 1.0 / (h * w)
    mu = scalar_mul(sum_spatial(x), inv_hw)                       # (N,C)
    centered = sub(x, replicate_spatial(mu, h, w))
    var = scalar_mul(sum_spatial(mul(centered, centered)), inv_hw)
    inv_std = pow_const(add_scalar(var, eps), -0.5)               # (N,C)
    normed = mul(centered, replicate_spatial(inv_std, h, w))
    scaled = mul(normed, replicate_spatial(expand_batch(gamma, n), h, w))
    return add(scaled, replicate_spatial(expand_batch(beta, n), h, w))


@dataclass
class ConvParams:
    weight: Tensor
    bias: Tensor | None = None


@dataclass
class NormParams:
    gamma: Tensor
    beta: Tensor


@dataclass
class ResBlockParams:
    """conv(k3,p1) -> IN -> relu -> conv(k3,p1) -> IN, added to the input."""

    conv1: ConvParams
    norm1: NormParams
    conv2: ConvParams
    norm2: NormParams


def conv_params(in_ch: int, out_ch: int, k: int, seed: int, bias: bool = True,
                dtype=np.float32) -> ConvParams:
    w = xavier_conv_weight(in_ch, out_ch, k, seed, dtype)
    b = Tensor(np.zeros(out_ch, dtype), requires_grad=True) if bias else None
    return ConvParams(w, b)


def deconv_params(in_ch: int, out_ch: int, k: int, seed: int, bias: bool = False,
                  dtype=np.float32) -> ConvParams:
    w = xavier_init(in_ch * k * k, out_ch * k * k, (in_ch, out_ch, k, k), seed,
                    dtype, requires_grad=True)
    b = Tensor(np.zeros(out_ch, dtype), requires_grad=True) if bias else None
    return ConvParams(w, b)


def xavier_conv_weight(in_ch: int, out_ch: int, k: int, seed: int, dtype=np.float32) -> Tensor:
    return xavier_init(in_ch * k * k, out_ch * k * k, (out_ch, in_ch, k, k), seed,
                       dtype, requires_grad=True)


def norm_params(channels: int, dtype=np.float32) -> NormParams:
    return NormParams(
        gamma=Tensor(np.ones(channels, dtype), requires_grad=True),
        beta=Tensor(np.zeros(channels, dtype), requires_grad=True),
    )


def res_block_params(channels: int, seed_a: int, seed_b: int, dtype=np.float32) -> ResBlockParams:
    return ResBlockParams(
        conv1=conv_params(channels, channels, 3, seed_a, bias=False, dtype=dtype),
        norm1=norm_params(channels, dtype),
        conv2=conv_params(channels, channels, 3, seed_b, bias=False, dtype=dtype),
        norm2=norm_params(channels, dtype),
    )


def residual_block(x: Tensor, params: ResBlockParams, eps: float = 1e-5) -> Tensor:
    c_in = x.shape[1]
    if params.conv1.weight.shape[1] != c_in or params.conv2.weight.shape[0] != c_in:
        raise ValueError("residual_block: channel mismatch between input and branch")
    y = conv2d(x, params.conv1.weight, params.conv1.bias, stride=1, padding=1)
    y = instance_norm(y, params.norm1.gamma, params.norm1.beta, eps)
    y = relu(y)
    y = conv2d(y, params.conv2.weight, params.conv2.bias, stride=1, padding=1)
    y = instance_norm(y, params.norm2.gamma, params.norm2.beta, eps)
    return add(x, y)
