"""Float64 layer primitives with hand-written backward passes.

The generator is a fixed feed-forward stack, so per-layer forward/backward
functions composed in reverse order replace a tape-based autodiff engine.
Every function here is pure: inputs are never mutated and identical inputs
produce bit-identical outputs. Arrays are float64 throughout.

Convolution layout: inputs are (channels, length) or (batch, channels,
length); kernels are (in_channels, out_channels, width).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ShapeError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class LayerGrad:
    """Gradients of one layer: w.r.t. its input and each learnable parameter."""

    grad_input: np.ndarray
    grad_params: list[np.ndarray]


def _as_batched(x, name: str):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return x[None, :, :], True
    if x.ndim == 3:
        return x, False
    raise ShapeError(
        f"{name} must be (channels, length) or (batch, channels, length), got shape {tuple(x.shape)}"
    )


def _check_conv_args(kernel, stride: int, padding: int):
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 3:
        raise ShapeError(f"kernel must be (in_channels, out_channels, width), got shape {tuple(kernel.shape)}")
    if kernel.shape[2] < 1 or stride < 1 or padding < 0:
        raise ShapeError(f"invalid conv geometry: width={kernel.shape[2]} stride={stride} padding={padding}")
    return kernel


def conv_transpose_length(length: int, width: int, stride: int, padding: int) -> int:
    return (length - 1) * stride - 2 * padding + width


def conv1d_transpose_forward(x, kernel, bias, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Transposed 1-d convolution (the linear adjoint of a strided convolution).

    output[co, j] = bias[co] + sum over (ci, i, k) with i*stride + k - padding == j
    of x[ci, i] * kernel[ci, co, k].
    """
    x, squeeze = _as_batched(x, "input")
    kernel = _check_conv_args(kernel, stride, padding)
    bias = np.asarray(bias, dtype=np.float64)
    batch, c_in, length = x.shape
    if kernel.shape[0] != c_in:
        shown = tuple(x.shape[1:]) if squeeze else tuple(x.shape)
        raise ShapeError(
            f"input has {c_in} channels (shape {shown}) but kernel expects "
            f"{kernel.shape[0]} (shape {tuple(kernel.shape)})"
        )
    c_out, width = kernel.shape[1], kernel.shape[2]
    if bias.shape != (c_out,):
        raise ShapeError(f"bias shape {tuple(bias.shape)} does not match {c_out} output channels")
    l_out = conv_transpose_length(length, width, stride, padding)
    if l_out < 1:
        raise ShapeError(f"output length {l_out} < 1 for input length {length} with "
                         f"width={width} stride={stride} padding={padding}")

    # One GEMM gives every (position, tap) contribution; taps are then
    # scattered onto the strided output grid.
    contrib = x.transpose(0, 2, 1).reshape(batch * length, c_in) @ kernel.reshape(c_in, c_out * width)
    if length == 1 and padding == 0:
        # projection case: the lone input position maps straight onto the taps
        out = contrib.reshape(batch, c_out, width) + bias[:, None]
        return out[0] if squeeze else out
    contrib = contrib.reshape(batch, length, c_out, width)
    l_full = (length - 1) * stride + width
    full = np.zeros((batch, c_out, l_full))
    span = (length - 1) * stride + 1
    for k in range(width):
        full[:, :, k : k + span : stride] += contrib[:, :, :, k].transpose(0, 2, 1)
    out = full[:, :, padding : l_full - padding] + bias[:, None]
    return out[0] if squeeze else out


def conv1d_transpose_backward(x, kernel, stride: int, padding: int, grad_output,
                              inputs_only: bool = False) -> LayerGrad:
    """Chain-rule gradients of conv1d_transpose_forward.

    grad_params holds [grad_kernel, grad_bias]; batch inputs sum parameter
    gradients over the batch. inputs_only skips the parameter gradients
    (grad_params comes back empty), which halves the work when only the
    input gradient is consumed.
    """
    x, squeeze = _as_batched(x, "input")
    kernel = _check_conv_args(kernel, stride, padding)
    g, g_squeeze = _as_batched(grad_output, "grad_output")
    if g_squeeze != squeeze:
        raise ShapeError("input and grad_output must both be batched or both unbatched")
    batch, c_in, length = x.shape
    c_out, width = kernel.shape[1], kernel.shape[2]
    l_out = conv_transpose_length(length, width, stride, padding)
    if g.shape != (batch, c_out, l_out):
        raise ShapeError(
            f"grad_output shape {tuple(grad_output.shape)} does not match forward output "
            f"({c_out}, {l_out}) for input shape {tuple(x.shape)[squeeze:]}"
        )

    l_full = (length - 1) * stride + width
    if length == 1 and padding == 0:
        taps2 = g.reshape(batch, c_out * width)
    else:
        g_full = np.zeros((batch, c_out, l_full))
        g_full[:, :, padding : l_full - padding] = g
        span = (length - 1) * stride + 1
        taps = np.empty((batch, length, c_out, width))
        for k in range(width):
            taps[:, :, :, k] = g_full[:, :, k : k + span : stride].transpose(0, 2, 1)
        taps2 = taps.reshape(batch * length, c_out * width)

    grad_input = (taps2 @ kernel.reshape(c_in, c_out * width).T).reshape(batch, length, c_in)
    grad_input = grad_input.transpose(0, 2, 1)
    if squeeze:
        grad_input = grad_input[0]
    if inputs_only:
        return LayerGrad(grad_input, [])
    grad_kernel = (x.transpose(1, 0, 2).reshape(c_in, batch * length) @ taps2).reshape(c_in, c_out, width)
    grad_bias = g.sum(axis=(0, 2))
    return LayerGrad(grad_input, [grad_kernel, grad_bias])


@dataclass
class BatchNormCache:
    """Forward-pass byproducts: batch statistics plus what backward needs.

    Holds a reference to the raw input; backward works from sufficient
    statistics of (grad, x) instead of materializing normalized copies.
    """

    mode: str
    axes: tuple[int, ...]
    gamma: np.ndarray
    x: np.ndarray
    mean: np.ndarray      # broadcastable against x
    inv_std: np.ndarray   # broadcastable against x
    batch_mean: np.ndarray
    batch_var: np.ndarray
    new_running_mean: np.ndarray
    new_running_var: np.ndarray


def batchnorm_forward(x, gamma, beta, running_mean, running_var, mode: str = "train",
                      momentum: float = 0.1, eps: float = 1e-5,
                      axes: tuple[int, ...] = (0, 2)) -> tuple[np.ndarray, BatchNormCache]:
    """Per-channel normalization of a (batch, channels, length) array.

    Train mode normalizes with statistics of the current input over `axes`
    (default: batch and time) and reports EMA-updated running statistics in
    the cache; the caller decides whether to keep them. With axes=(2,) each
    sample is normalized independently, which equals batch-of-one calls.
    Eval mode uses the running statistics only. Pure: running stats are not
    mutated in place.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"batchnorm expects (batch, channels, length), got shape {tuple(x.shape)}")
    gamma = np.asarray(gamma, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    running_mean = np.asarray(running_mean, dtype=np.float64)
    running_var = np.asarray(running_var, dtype=np.float64)
    c = x.shape[1]
    g3 = gamma.reshape(1, c, 1)
    b3 = beta.reshape(1, c, 1)

    axes = tuple(axes)
    if mode == "train":
        mean_flat, var_flat = _moments(x, axes)
        mean = _rebroadcast(mean_flat, axes)
        var = _rebroadcast(var_flat, axes)
        inv_std = 1.0 / np.sqrt(var + eps)
        # Per-channel statistics for the EMA: average over whatever sample
        # axes were not normalized over.
        batch_mean = mean_flat.mean(axis=0) if 0 not in axes else mean_flat
        batch_var = var_flat.mean(axis=0) if 0 not in axes else var_flat
        new_rm = (1.0 - momentum) * running_mean + momentum * batch_mean
        new_rv = (1.0 - momentum) * running_var + momentum * batch_var
    elif mode == "eval":
        mean = running_mean.reshape(1, c, 1)
        inv_std = (1.0 / np.sqrt(running_var + eps)).reshape(1, c, 1)
        batch_mean = running_mean.copy()
        batch_var = running_var.copy()
        new_rm = running_mean.copy()
        new_rv = running_var.copy()
    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")

    scale = g3 * inv_std
    out = x * scale + (b3 - mean * scale)
    cache = BatchNormCache(mode, axes, gamma, x, mean, inv_std,
                           batch_mean, batch_var, new_rm, new_rv)
    return out, cache


def _moments(x, axes):
    """Single-pass sufficient statistics; variance clipped at 0 against
    cancellation roundoff."""
    if axes == (2,):
        n = x.shape[2]
        s1 = x.sum(axis=2)
        s2 = np.einsum("bcl,bcl->bc", x, x)
    elif axes == (0, 2):
        n = x.shape[0] * x.shape[2]
        s1 = x.sum(axis=(0, 2))
        s2 = np.einsum("bcl,bcl->c", x, x)
    else:
        raise ValueError(f"unsupported normalization axes {axes}")
    mean = s1 / n
    return mean, np.maximum(s2 / n - mean * mean, 0.0)


def _rebroadcast(stat, axes):
    return stat[:, :, None] if axes == (2,) else stat[None, :, None]


def _grad_sums(g, x, axes):
    if axes == (2,):
        sg = g.sum(axis=2)
        sgx = np.einsum("bcl,bcl->bc", g, x)
    else:
        sg = g.sum(axis=(0, 2))
        sgx = np.einsum("bcl,bcl->c", g, x)
    return sg, sgx


def batchnorm_backward(grad_output, cache: BatchNormCache) -> LayerGrad:
    """Gradients of batchnorm_forward; grad_params holds [grad_gamma, grad_beta].

    Works from the sums of g and g*x: with x_hat = (x - mean) * inv_std,
    sum(g * x_hat) = (sum(g x) - mean * sum(g)) * inv_std, so the normalized
    input never has to be materialized.
    """
    g = np.asarray(grad_output, dtype=np.float64)
    if g.shape != cache.x.shape:
        raise ShapeError(f"grad_output shape {tuple(g.shape)} does not match forward "
                         f"output shape {tuple(cache.x.shape)}")
    c = g.shape[1]
    g3 = cache.gamma.reshape(1, c, 1)
    if cache.mode == "eval":
        sg, sgx = _grad_sums(g, cache.x, (0, 2))
        grad_beta = sg
        grad_gamma = (sgx - cache.mean.ravel() * sg) * cache.inv_std.ravel()
        grad_input = g * (g3 * cache.inv_std)
        return LayerGrad(grad_input, [grad_gamma, grad_beta])

    axes = cache.axes
    n = g.shape[2] if axes == (2,) else g.shape[0] * g.shape[2]
    sg, sgx = _grad_sums(g, cache.x, axes)
    sg_b = _rebroadcast(sg, axes)
    # sum over the normalization axes of g * x_hat
    sghat_b = (_rebroadcast(sgx, axes) - cache.mean * sg_b) * cache.inv_std
    if axes == (2,):
        grad_beta = sg.sum(axis=0)
        grad_gamma = sghat_b[:, :, 0].sum(axis=0)
    else:
        grad_beta = sg
        grad_gamma = sghat_b.ravel().copy()
    scale = g3 * cache.inv_std
    # grad = scale * (g - sg/n - x_hat * sghat/n), expanded onto raw x
    coef_x = scale * cache.inv_std * (sghat_b / n)
    const = scale * (cache.mean * cache.inv_std * (sghat_b / n) - sg_b / n)
    grad_input = g * scale
    grad_input -= cache.x * coef_x
    grad_input += const
    return LayerGrad(grad_input, [grad_gamma, grad_beta])


def relu_forward(x) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(x, grad_output) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(grad_output, dtype=np.float64)
    if x.shape != g.shape:
        raise ShapeError(f"input shape {tuple(x.shape)} does not match grad_output shape {tuple(g.shape)}")
    return np.where(x > 0.0, g, 0.0)


@dataclass
class AdamState:
    """Optimizer moments, one entry per named parameter."""

    first_moment: dict[str, np.ndarray]
    second_moment: dict[str, np.ndarray]
    step_count: int = 0


def adam_init(params: dict[str, np.ndarray]) -> AdamState:
    return AdamState(
        {name: np.zeros_like(p) for name, p in params.items()},
        {name: np.zeros_like(p) for name, p in params.items()},
        0,
    )


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, lr: float) -> tuple[dict[str, np.ndarray], AdamState]:
    """One Adam update with bias correction (beta1=0.9, beta2=0.999, eps=1e-8).

    Pure: returns fresh parameter and state dicts.
    """
    if set(params) != set(grads) or set(params) != set(state.first_moment):
        raise ShapeError("params, grads and optimizer state must share the same parameter names")
    t = state.step_count + 1
    bc1 = 1.0 - ADAM_BETA1 ** t
    bc2 = 1.0 - ADAM_BETA2 ** t
    new_params: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {tuple(g.shape)} does not match parameter "
                             f"'{name}' shape {tuple(p.shape)}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter '{name}'")
        m = ADAM_BETA1 * state.first_moment[name] + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * state.second_moment[name] + (1.0 - ADAM_BETA2) * (g * g)
        new_m[name] = m
        new_v[name] = v
        new_params[name] = p - lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
    return new_params, AdamState(new_m, new_v, t)
