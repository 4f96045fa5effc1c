"""
Layers Service
Differentiable network layers on (B, C, H, W) tensors and the parameter store
"""
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from trifuse.core.exceptions import ArgumentError, ShapeError
from trifuse.services.autodiff import (
    Tensor,
    add,
    as_tensor,
    default_dtype,
    make_node,
    matmul,
    mul,
    relu,
    reshape,
    softmax,
    swap_last,
    transpose,
)

BN_MOMENTUM = 0.9
BN_EPS = 1e-5
LN_EPS = 1e-5


class ModelParams:
    """
    Named parameters (trainable tensors) and buffers (running statistics)

    Iteration follows insertion order, which is the order layers are built in.
    """

    def __init__(self):
        self.tensors: Dict[str, Tensor] = {}
        self.buffers: Dict[str, np.ndarray] = {}

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self.tensors or name in self.buffers:
            raise ArgumentError(f"duplicate parameter name {name!r}")
        tensor = Tensor(data, requires_grad=True, name=name)
        self.tensors[name] = tensor
        return tensor

    def add_buffer(self, name: str, data: np.ndarray) -> np.ndarray:
        if name in self.tensors or name in self.buffers:
            raise ArgumentError(f"duplicate parameter name {name!r}")
        self.buffers[name] = np.asarray(data, dtype=default_dtype()).copy()
        return self.buffers[name]

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.tensors.values())

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def names(self) -> List[str]:
        return list(self.tensors)

    def zero_grad(self) -> None:
        for tensor in self.tensors.values():
            tensor.zero_grad()

    def num_parameters(self) -> int:
        return int(sum(t.data.size for t in self.tensors.values()))

    def state(self) -> Dict[str, np.ndarray]:
        """Every array, parameters first, in a deterministic order"""
        out = {name: t.data for name, t in self.tensors.items()}
        out.update(self.buffers)
        return out

    def load_state(self, arrays: Dict[str, np.ndarray]) -> None:
        expected = set(self.tensors) | set(self.buffers)
        missing, unexpected = expected - set(arrays), set(arrays) - expected
        if missing or unexpected:
            raise ShapeError(
                f"state mismatch: missing {sorted(missing)[:5]}, unexpected {sorted(unexpected)[:5]}"
            )
        for name, array in arrays.items():
            target = self.tensors[name].data if name in self.tensors else self.buffers[name]
            if target.shape != array.shape:
                raise ShapeError(f"{name}: expected shape {target.shape}, got {array.shape}")
            target[...] = array


# -- initialisers --------------------------------------------------------------

def he_normal(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


def glorot_uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def add_conv(
    params: ModelParams,
    prefix: str,
    rng: np.random.Generator,
    in_ch: int,
    out_ch: int,
    kernel: int = 3,
    groups: int = 1,
    zero: bool = False,
) -> None:
    shape = (out_ch, in_ch // groups, kernel, kernel)
    weight = np.zeros(shape) if zero else he_normal(rng, shape, (in_ch // groups) * kernel * kernel)
    params.add(f"{prefix}.w", weight)
    params.add(f"{prefix}.b", np.zeros(out_ch))


def add_linear(
    params: ModelParams,
    prefix: str,
    rng: np.random.Generator,
    in_features: int,
    out_features: int,
    bias: bool = True,
) -> None:
    params.add(f"{prefix}.w", glorot_uniform(rng, (in_features, out_features), in_features, out_features))
    if bias:
        params.add(f"{prefix}.b", np.zeros(out_features))


def add_norm(params: ModelParams, prefix: str, channels: int, running: bool = False) -> None:
    params.add(f"{prefix}.g", np.ones(channels))
    params.add(f"{prefix}.b", np.zeros(channels))
    if running:
        params.add_buffer(f"{prefix}.running_mean", np.zeros(channels))
        params.add_buffer(f"{prefix}.running_var", np.ones(channels))


# -- convolution ---------------------------------------------------------------

def conv2d(
    x: Tensor,
    w: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    dilation: int = 1,
    groups: int = 1,
) -> Tensor:
    """
    2D cross-correlation with zero "same" padding

    Args:
        x: (B, Cin, H, W)
        w: (Cout, Cin / groups, k, k), k odd
        bias: (Cout,) or None
        stride: Output stride
        dilation: Kernel dilation (>= 1)
        groups: Channel groups; groups == Cin is depthwise

    Returns:
        (B, Cout, ceil(H / stride), ceil(W / stride))
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4D input and weight, got {x.shape} and {w.shape}")
    if dilation < 1 or stride < 1:
        raise ArgumentError("stride and dilation must be >= 1")
    batch, cin, height, width = x.shape
    cout, cin_g, kh, kw = w.shape
    if groups < 1 or cin % groups or cout % groups or cin // groups != cin_g:
        raise ShapeError(f"conv2d: {cin} input channels, weight {w.shape}, groups {groups} are inconsistent")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d needs odd kernels for 'same' padding, got {kh}x{kw}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d bias shape {bias.shape} does not match {cout} outputs")

    ph, pw = dilation * (kh - 1) // 2, dilation * (kw - 1) // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    eh, ew = dilation * (kh - 1) + 1, dilation * (kw - 1) + 1
    windows = sliding_window_view(xp, (eh, ew), axis=(2, 3))[..., ::dilation, ::dilation]
    cols = windows[:, :, ::stride, ::stride]
    hout, wout = cols.shape[2], cols.shape[3]
    cout_g = cout // groups
    cols_g = cols.reshape(batch, groups, cin_g, hout, wout, kh, kw)
    w_g = w.data.reshape(groups, cout_g, cin_g, kh, kw)
    out = np.einsum("bgchwij,gocij->bgohw", cols_g, w_g, optimize=True).reshape(batch, cout, hout, wout)
    if bias is not None:
        out = out + bias.data.reshape(1, cout, 1, 1)
    parents = (x, w) if bias is None else (x, w, bias)

    def backward(g: np.ndarray) -> None:
        g_g = g.reshape(batch, groups, cout_g, hout, wout)
        if w.requires_grad:
            gw = np.einsum("bgohw,bgchwij->gocij", g_g, cols_g, optimize=True)
            w.accumulate(gw.reshape(w.data.shape))
        if bias is not None:
            bias.accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gcols = np.einsum("bgohw,gocij->bgchwij", g_g, w_g, optimize=True).reshape(
                batch, cin, hout, wout, kh, kw
            )
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    r0, c0 = i * dilation, j * dilation
                    gxp[:, :, r0:r0 + stride * (hout - 1) + 1:stride, c0:c0 + stride * (wout - 1) + 1:stride] += (
                        gcols[..., i, j]
                    )
            x.accumulate(gxp[:, :, ph:ph + height, pw:pw + width])

    return make_node(out.astype(x.data.dtype, copy=False), parents, backward, "conv2d")


# -- normalisation ---------------------------------------------------------------

def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tensor:
    """
    Per-channel batch normalisation over (B, H, W)

    In training mode batch statistics are used and the running buffers are
    updated in place as ``r = momentum * r + (1 - momentum) * batch``.
    """
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ShapeError(f"batch_norm: {channels} channels but affine shapes {gamma.shape}, {beta.shape}")
    bshape = (1, channels, 1, 1)
    if training:
        axes = (0, 2, 3)
        count = x.data.size // channels
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        unbiased = var * count / max(count - 1, 1)
        running_mean[...] = momentum * running_mean + (1.0 - momentum) * mean
        running_var[...] = momentum * running_var + (1.0 - momentum) * unbiased
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mean.reshape(bshape)) * inv_std.reshape(bshape)

        def backward(g: np.ndarray) -> None:
            gamma.accumulate((g * xhat).sum(axis=axes))
            beta.accumulate(g.sum(axis=axes))
            if x.requires_grad:
                dxhat = g * gamma.data.reshape(bshape)
                term = (
                    count * dxhat
                    - dxhat.sum(axis=axes, keepdims=True)
                    - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
                )
                x.accumulate(term * (inv_std.reshape(bshape) / count))
    else:
        inv_std = 1.0 / np.sqrt(running_var + eps)
        xhat = (x.data - running_mean.reshape(bshape)) * inv_std.reshape(bshape)

        def backward(g: np.ndarray) -> None:
            gamma.accumulate((g * xhat).sum(axis=(0, 2, 3)))
            beta.accumulate(g.sum(axis=(0, 2, 3)))
            x.accumulate(g * (gamma.data * inv_std).reshape(bshape))

    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)
    return make_node(out.astype(x.data.dtype, copy=False), (x, gamma, beta), backward, "batch_norm")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LN_EPS) -> Tensor:
    """Normalise over the last axis"""
    features = x.shape[-1]
    mean = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv_std
    lead = tuple(range(x.ndim - 1))

    def backward(g: np.ndarray) -> None:
        gamma.accumulate((g * xhat).sum(axis=lead))
        beta.accumulate(g.sum(axis=lead))
        if x.requires_grad:
            dxhat = g * gamma.data
            term = (
                features * dxhat
                - dxhat.sum(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
            )
            x.accumulate(term * (inv_std / features))

    out = xhat * gamma.data + beta.data
    return make_node(out.astype(x.data.dtype, copy=False), (x, gamma, beta), backward, "layer_norm")


# -- dense and attention -----------------------------------------------------------

def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """x @ w + b over the last axis; w is (in, out)"""
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input features {x.shape[-1]} do not match weight {w.shape}")
    out = matmul(x, w)
    return out if b is None else add(out, b)


def attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """
    Softmax(q kᵀ / √d_k) v over the last two axes

    Args:
        q: (..., Nq, d_k)
        k: (..., Nk, d_k)
        v: (..., Nk, d_v)
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    d_k = q.shape[-1]
    if d_k == 0:
        raise ArgumentError("attention needs d_k > 0")
    if k.shape[-1] != d_k:
        raise ShapeError(f"query/key widths differ: {q.shape} vs {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"key/value lengths differ: {k.shape} vs {v.shape}")
    scores = mul(matmul(q, swap_last(k)), 1.0 / np.sqrt(d_k))
    return matmul(softmax(scores, axis=-1), v)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    batch, tokens, width = x.shape
    return transpose(reshape(x, (batch, tokens, heads, width // heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    batch, heads, tokens, width = x.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (batch, tokens, heads * width))


def multi_head_attention(
    x_q: Tensor,
    x_kv: Tensor,
    params: ModelParams,
    prefix: str,
    heads: int,
) -> Tensor:
    """Projected multi-head attention of (B, Nq, D) queries over (B, Nk, D) context"""
    q = _split_heads(linear(x_q, params[f"{prefix}.q.w"], params[f"{prefix}.q.b"]), heads)
    k = _split_heads(linear(x_kv, params[f"{prefix}.k.w"], params[f"{prefix}.k.b"]), heads)
    v = _split_heads(linear(x_kv, params[f"{prefix}.v.w"], params[f"{prefix}.v.b"]), heads)
    merged = _merge_heads(attention(q, k, v))
    return linear(merged, params[f"{prefix}.o.w"], params[f"{prefix}.o.b"])


def add_attention(params: ModelParams, prefix: str, rng: np.random.Generator, width: int) -> None:
    for proj in ("q", "k", "v", "o"):
        add_linear(params, f"{prefix}.{proj}", rng, width, width)


# -- resampling --------------------------------------------------------------------

def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    batch, channels, height, width = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def backward(g: np.ndarray) -> None:
        x.accumulate(g.reshape(batch, channels, height, factor, width, factor).sum(axis=(3, 5)))

    return make_node(out, (x,), backward, "upsample")


def downsample_avg(x: Tensor, factor: int = 2) -> Tensor:
    batch, channels, height, width = x.shape
    if height % factor or width % factor:
        raise ShapeError(f"downsample by {factor} needs divisible dims, got {height}x{width}")
    out = x.data.reshape(batch, channels, height // factor, factor, width // factor, factor).mean(axis=(3, 5))

    def backward(g: np.ndarray) -> None:
        spread = np.repeat(np.repeat(g, factor, axis=2), factor, axis=3)
        x.accumulate(spread / (factor * factor))

    return make_node(out.astype(x.data.dtype, copy=False), (x,), backward, "downsample")


def haar_synthesis(a: Tensor, v: Tensor, h: Tensor, d: Tensor) -> Tensor:
    """
    One inverse Haar level on (B, C, h, w) bands, giving (B, C, 2h, 2w)

    The 2x2 synthesis matrix is orthonormal and symmetric, so the backward
    pass is the matching analysis step.
    """
    a, v, h, d = (as_tensor(t) for t in (a, v, h, d))
    if not (a.shape == v.shape == h.shape == d.shape):
        raise ShapeError(f"haar bands differ in shape: {a.shape}, {v.shape}, {h.shape}, {d.shape}")
    batch, channels, rows, cols = a.shape
    out = np.empty((batch, channels, 2 * rows, 2 * cols), dtype=a.data.dtype)
    out[:, :, 0::2, 0::2] = (a.data + h.data + v.data + d.data) / 2
    out[:, :, 0::2, 1::2] = (a.data - h.data + v.data - d.data) / 2
    out[:, :, 1::2, 0::2] = (a.data + h.data - v.data - d.data) / 2
    out[:, :, 1::2, 1::2] = (a.data - h.data - v.data + d.data) / 2

    def backward(g: np.ndarray) -> None:
        g00, g01 = g[:, :, 0::2, 0::2], g[:, :, 0::2, 1::2]
        g10, g11 = g[:, :, 1::2, 0::2], g[:, :, 1::2, 1::2]
        a.accumulate((g00 + g01 + g10 + g11) / 2)
        h.accumulate((g00 - g01 + g10 - g11) / 2)
        v.accumulate((g00 + g01 - g10 - g11) / 2)
        d.accumulate((g00 - g01 - g10 + g11) / 2)

    return make_node(out, (a, v, h, d), backward, "haar_synthesis")


def tokens_from_map(x: Tensor) -> Tensor:
    """(B, C, H, W) feature map to (B, H*W, C) tokens"""
    batch, channels, height, width = x.shape
    return transpose(reshape(x, (batch, channels, height * width)), (0, 2, 1))


def map_from_tokens(x: Tensor, height: int, width: int) -> Tensor:
    """(B, H*W, C) tokens back to a (B, C, H, W) feature map"""
    batch, tokens, channels = x.shape
    if tokens != height * width:
        raise ShapeError(f"{tokens} tokens cannot form a {height}x{width} map")
    return reshape(transpose(x, (0, 2, 1)), (batch, channels, height, width))


__all__ = [
    "ModelParams",
    "add_attention",
    "add_conv",
    "add_linear",
    "add_norm",
    "attention",
    "batch_norm",
    "conv2d",
    "downsample_avg",
    "haar_synthesis",
    "layer_norm",
    "linear",
    "map_from_tokens",
    "multi_head_attention",
    "relu",
    "tokens_from_map",
    "upsample_nearest",
]
