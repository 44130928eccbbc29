"""Neural primitives: temporal convolution, batch norm, pooling, linear map.

Functional forms carry the autodiff backward passes; thin layer classes own
the parameters (Kaiming fan-in init for weights, ones/zeros for batch-norm
affine) and the batch-norm running statistics.
"""

from __future__ import annotations

import numpy as np

from .tensor import Parameter, ShapeError, Tensor, _result


class DegenerateBatchError(ValueError):
    """Raised when batch statistics are requested over fewer than 2 samples."""


def temporal_conv2d(x: Tensor, w: Tensor, stride_t: int = 1) -> Tensor:
    """Convolution along the frame axis of a (B, C, T, N) tensor.

    The kernel has shape (C_out, C_in, k, 1) with k odd; (k-1)/2 zero padding
    is applied on the T axis only, so the output has T' = ceil(T / stride_t)
    frames and the joint axis passes through untouched.
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"temporal_conv2d expects 4-d input and kernel, got {x.shape}, {w.shape}")
    batch, c_in, t_in, n = x.shape
    c_out, c_in_w, k, k_joint = w.shape
    if k_joint != 1:
        raise ShapeError(f"kernel joint width must be 1, got {k_joint}")
    if c_in_w != c_in:
        raise ShapeError(f"channel mismatch: input has {c_in}, kernel expects {c_in_w}")
    if k % 2 == 0:
        raise ShapeError(f"temporal kernel size must be odd, got {k}")
    if stride_t < 1:
        raise ShapeError(f"stride must be >= 1, got {stride_t}")

    pad = (k - 1) // 2
    t_out = -(-t_in // stride_t)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (0, 0)))

    # im2col over the temporal window, then one batched GEMM
    cols = np.empty((batch, c_in, k, t_out, n), dtype=x.dtype)
    for dk in range(k):
        cols[:, :, dk] = xp[:, :, dk:dk + stride_t * t_out:stride_t, :]
    cols_flat = cols.reshape(batch, c_in * k, t_out * n)
    w_flat = w.data.reshape(c_out, c_in * k)
    out = np.matmul(w_flat, cols_flat).reshape(batch, c_out, t_out, n)

    def backward(g):
        g_flat = g.reshape(batch, c_out, t_out * n)
        if w.requires_grad:
            dw = np.matmul(g_flat, cols_flat.transpose(0, 2, 1)).sum(axis=0)
            w.accumulate_grad(dw.reshape(w.shape))
        if x.requires_grad:
            dcols = np.matmul(w_flat.T, g_flat).reshape(batch, c_in, k, t_out, n)
            dxp = np.zeros_like(xp)
            for dk in range(k):
                dxp[:, :, dk:dk + stride_t * t_out:stride_t, :] += dcols[:, :, dk]
            x.accumulate_grad(dxp[:, :, pad:pad + t_in, :])

    return _result(out, (x, w), backward)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor,
               running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization of a (B, C, T, N) tensor over the B, T, N axes.

    Training mode normalizes with batch statistics and updates the running
    estimates in place (unbiased variance, torch-style momentum); eval mode
    uses the running estimates and treats them as constants.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"batch_norm expects 4-d input, got {x.shape}")
    batch, channels, t_len, n = x.shape
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ShapeError(f"affine shape mismatch: {gamma.shape} vs {channels} channels")
    count = batch * t_len * n

    if training:
        if count < 2:
            raise DegenerateBatchError(f"batch statistics need >= 2 samples per channel, got {count}")
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * count / (count - 1)
    else:
        mean = running_mean.astype(x.dtype)
        var = running_var.astype(x.dtype)

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def backward(g):
        if gamma.requires_grad:
            gamma.accumulate_grad(np.sum(g * xhat, axis=(0, 2, 3)))
        if beta.requires_grad:
            beta.accumulate_grad(np.sum(g, axis=(0, 2, 3)))
        if x.requires_grad:
            gxhat = g * gamma.data[None, :, None, None]
            if training:
                # mean/var depend on x: full batch-norm backward
                sum_gxhat = np.sum(gxhat, axis=(0, 2, 3))
                sum_gxhat_xhat = np.sum(gxhat * xhat, axis=(0, 2, 3))
                dx = (gxhat
                      - (sum_gxhat[None, :, None, None]
                         + xhat * sum_gxhat_xhat[None, :, None, None]) / count)
                dx *= inv_std[None, :, None, None]
            else:
                dx = gxhat * inv_std[None, :, None, None]
            x.accumulate_grad(dx)

    return _result(out, (x, gamma, beta), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the frame and joint axes: (B, C, T, N) -> (B, C)."""
    if x.data.ndim != 4:
        raise ShapeError(f"global_avg_pool expects 4-d input, got {x.shape}")
    _, _, t_len, n = x.shape

    def backward(g):
        x.accumulate_grad(np.broadcast_to(g[:, :, None, None] / (t_len * n), x.shape).astype(x.dtype))

    return _result(x.data.mean(axis=(2, 3)), (x,), backward)


def linear_map(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map (B, C_in) @ (C_in, C_out) + (C_out,)."""
    if x.data.ndim != 2 or w.data.ndim != 2:
        raise ShapeError(f"linear_map expects 2-d input and weight, got {x.shape}, {w.shape}")
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"input width {x.shape[1]} != weight rows {w.shape[0]}")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"bias shape {b.shape} != ({w.shape[1]},)")

    def backward(g):
        if w.requires_grad:
            w.accumulate_grad(x.data.T @ g)
        if b.requires_grad:
            b.accumulate_grad(g.sum(axis=0))
        if x.requires_grad:
            x.accumulate_grad(g @ w.data.T)

    return _result(x.data @ w.data + b.data, (x, w, b), backward)


def kaiming_normal(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class TemporalConv:
    """Temporal convolution layer; kernel width 1 on the joint axis, no bias."""

    def __init__(self, name: str, in_channels: int, out_channels: int,
                 kernel: int, stride: int, rng: np.random.Generator, dtype=np.float32):
        self.stride = stride
        weight = kaiming_normal(rng, (out_channels, in_channels, kernel, 1),
                                fan_in=in_channels * kernel, dtype=dtype)
        self.weight = Parameter(Tensor(weight), name=f"{name}.weight")

    def __call__(self, x: Tensor) -> Tensor:
        return temporal_conv2d(x, self.weight.tensor, self.stride)

    def parameters(self) -> list[Parameter]:
        return [self.weight]

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        return []


class BatchNorm:
    """Batch normalization layer over (B, T, N) per channel."""

    def __init__(self, name: str, channels: int, dtype=np.float32,
                 momentum: float = 0.1, eps: float = 1e-5):
        self.name = name
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(Tensor(np.ones(channels, dtype=dtype)),
                               name=f"{name}.gamma", weight_decay_exempt=True)
        self.beta = Parameter(Tensor(np.zeros(channels, dtype=dtype)),
                              name=f"{name}.beta", weight_decay_exempt=True)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return batch_norm(x, self.gamma.tensor, self.beta.tensor,
                          self.running_mean, self.running_var,
                          training, self.momentum, self.eps)

    def parameters(self) -> list[Parameter]:
        return [self.gamma, self.beta]

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{self.name}.running_mean", self.running_mean),
                (f"{self.name}.running_var", self.running_var)]


class Linear:
    """Affine layer; bias is weight-decay exempt."""

    def __init__(self, name: str, in_features: int, out_features: int,
                 rng: np.random.Generator, dtype=np.float32):
        weight = kaiming_normal(rng, (in_features, out_features), fan_in=in_features, dtype=dtype)
        self.weight = Parameter(Tensor(weight), name=f"{name}.weight")
        self.bias = Parameter(Tensor(np.zeros(out_features, dtype=dtype)),
                              name=f"{name}.bias", weight_decay_exempt=True)

    def __call__(self, x: Tensor) -> Tensor:
        return linear_map(x, self.weight.tensor, self.bias.tensor)

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        return []
