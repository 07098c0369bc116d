"""Differentiable sequence ops built on the tensor core.

All sequence ops honour the masking contract: invalid positions contribute
zero to every computation and are re-zeroed in the output.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, constant


def relu(x: Tensor) -> Tensor:
    return x.relu()


def sigmoid(x: Tensor) -> Tensor:
    return x.sigmoid()


def gelu(x: Tensor) -> Tensor:
    """GELU with the tanh approximation."""
    return x.gelu()


def softmax_rows(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stabilized softmax along one axis (row-wise by default)."""
    shift = np.max(x.data, axis=axis, keepdims=True)
    e = (x - constant(shift, dtype=x.dtype)).exp()
    return e / e.sum(axis=axis, keepdims=True)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return xc / (var + eps).sqrt() * gain + bias


def _conv_patches(x: Tensor, kernel: int, stride: int) -> Tensor:
    """im2col: [T, C] -> [T_out, k, C] with symmetric zero padding."""
    t_len = x.shape[0]
    pad = kernel // 2
    t_out = -(-t_len // stride)  # ceil(T / stride)
    extra = max(0, (t_out - 1) * stride + kernel - (t_len + 2 * pad))
    xp = x.pad_axis0(pad, pad + extra)
    return xp.unfold(0, kernel, stride)


def conv1d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    mask: np.ndarray | None = None,
) -> Tensor:
    """Masked 1D convolution.

    x: [T, C_in]; weight: [k, C_in, C_out]; output: [ceil(T/stride), C_out].
    Masked input positions are zeroed before the convolution and masked
    output positions are re-zeroed after, so padding never leaks.
    """
    kernel, c_in, c_out = weight.shape
    if kernel % 2 == 0:
        raise ValueError("conv1d requires an odd kernel size")
    if x.shape[1] != c_in:
        raise ValueError(f"conv1d channel mismatch: input {x.shape[1]}, weight {c_in}")
    if mask is not None:
        x = x * constant(mask[:, None].astype(x.dtype.type), dtype=x.dtype)
    patches = _conv_patches(x, kernel, stride)
    t_out = patches.shape[0]
    out = patches.reshape(t_out, kernel * c_in) @ weight.reshape(kernel * c_in, c_out)
    if bias is not None:
        out = out + bias
    if mask is not None:
        out = out * constant(mask[::stride, None].astype(x.dtype.type), dtype=x.dtype)
    return out


def depthwise_conv1d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    mask: np.ndarray | None = None,
) -> Tensor:
    """Per-channel 1D convolution; weight: [k, C], C_in == C_out."""
    kernel, channels = weight.shape
    if kernel % 2 == 0:
        raise ValueError("depthwise_conv1d requires an odd kernel size")
    if x.shape[1] != channels:
        raise ValueError("depthwise_conv1d requires C_in == C_out")
    if mask is not None:
        x = x * constant(mask[:, None].astype(x.dtype.type), dtype=x.dtype)
    patches = _conv_patches(x, kernel, stride)  # [T_out, k, C]
    out = (patches * weight.reshape(1, kernel, channels)).sum(axis=1)
    if bias is not None:
        out = out + bias
    if mask is not None:
        out = out * constant(mask[::stride, None].astype(x.dtype.type), dtype=x.dtype)
    return out


def downsample_mask(mask: np.ndarray, stride: int) -> np.ndarray:
    """Strided subsampling, matching the conv index arithmetic."""
    return mask[::stride]
