"""Top-down transposed-convolution generator.

A state vector is treated as a stack of channels at a single timestamp and
expanded to an (n_features, sub_window_len) block: a projection layer
(kernel 4, stride 1, no padding) brings the temporal axis to 4, then each
upsampling layer (kernel 4, stride 2, padding 1) doubles it while halving
the filter count; the last layer is linear and outputs n_features channels.
Batchnorm + ReLU sit between convolutions.

Each sub-window is generated independently from its own state vector, so in
train mode normalization statistics are per sample (batch-of-one semantics);
this keeps sub-window locality exact even when sub-windows are evaluated as
one batch. A whole window is the temporal concatenation of its sub-windows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ShapeError, ValidationError
from .hierarchy import HierarchySpec, latent_layout, scatter_states, state_matrix

KERNEL_WIDTH = 4
BASE_LEN = 4
WEIGHT_STD = 0.02


@dataclass(frozen=True)
class GeneratorArch:
    """Network shape: feature count, block length, filter schedule, input dim."""

    n_features: int
    sub_window_len: int
    filter_multiplier: int
    max_filters: int
    state_dim: int

    def __post_init__(self):
        if self.n_features < 1 or self.state_dim < 1:
            raise ValidationError(f"n_features and state_dim must be >= 1, got "
                                  f"{self.n_features} and {self.state_dim}")
        if self.filter_multiplier < 1 or self.max_filters < 1:
            raise ValidationError(f"filter_multiplier and max_filters must be >= 1, got "
                                  f"{self.filter_multiplier} and {self.max_filters}")
        n, k = self.sub_window_len, 0
        while n > BASE_LEN and n % 2 == 0:
            n //= 2
            k += 1
        if n != BASE_LEN or k < 1:
            raise ValidationError(
                f"sub_window_len must be {BASE_LEN} * 2**K with K >= 1, got {self.sub_window_len}")

    @property
    def n_upsample(self) -> int:
        return (self.sub_window_len // BASE_LEN).bit_length() - 1

    def layer_filters(self) -> list[int]:
        """Output channels of each conv layer, projection first, data last."""
        k = self.n_upsample
        filters = [min(self.filter_multiplier * 2 ** (k - 1 - i), self.max_filters)
                   for i in range(k)]
        filters.append(self.n_features)
        return filters


@dataclass
class ConvParams:
    kernel: np.ndarray  # (in_channels, out_channels, KERNEL_WIDTH)
    bias: np.ndarray


@dataclass
class NormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray


@dataclass
class GeneratorParams:
    arch: GeneratorArch
    convs: list[ConvParams]
    norms: list[NormParams]  # one per conv except the last


def _conv_geometry(i: int) -> tuple[int, int]:
    return (1, 0) if i == 0 else (2, 1)


def build_generator(arch: GeneratorArch, rng) -> GeneratorParams:
    """Fresh parameters: weights N(0, 0.02^2), biases 0, identity batchnorm."""
    rng = np.random.default_rng(rng)
    filters = arch.layer_filters()
    convs, norms = [], []
    c_in = arch.state_dim
    for i, c_out in enumerate(filters):
        kernel = rng.normal(0.0, WEIGHT_STD, size=(c_in, c_out, KERNEL_WIDTH))
        convs.append(ConvParams(kernel, np.zeros(c_out)))
        if i < len(filters) - 1:
            norms.append(NormParams(np.ones(c_out), np.zeros(c_out),
                                    np.zeros(c_out), np.ones(c_out)))
        c_in = c_out
    return GeneratorParams(arch, convs, norms)


def learnable_params(params: GeneratorParams) -> dict[str, np.ndarray]:
    """Named view of every parameter the optimizer updates (running stats excluded)."""
    out: dict[str, np.ndarray] = {}
    for i, conv in enumerate(params.convs):
        out[f"conv{i}.kernel"] = conv.kernel
        out[f"conv{i}.bias"] = conv.bias
    for i, norm in enumerate(params.norms):
        out[f"norm{i}.gamma"] = norm.gamma
        out[f"norm{i}.beta"] = norm.beta
    return out


def with_params(params: GeneratorParams, values: dict[str, np.ndarray]) -> GeneratorParams:
    """New GeneratorParams with learnables replaced; running stats carried over."""
    convs = [ConvParams(values[f"conv{i}.kernel"], values[f"conv{i}.bias"])
             for i in range(len(params.convs))]
    norms = [NormParams(values[f"norm{i}.gamma"], values[f"norm{i}.beta"],
                        norm.running_mean, norm.running_var)
             for i, norm in enumerate(params.norms)]
    return GeneratorParams(params.arch, convs, norms)


def commit_running_stats(params: GeneratorParams, caches) -> GeneratorParams:
    """New GeneratorParams with running statistics taken from forward caches."""
    norms = []
    for i, norm in enumerate(params.norms):
        bn = caches[i][1]
        norms.append(NormParams(norm.gamma, norm.beta, bn.new_running_mean, bn.new_running_var))
    return GeneratorParams(params.arch, list(params.convs), norms)


def generator_forward(states, params: GeneratorParams, mode: str = "eval",
                      with_cache: bool = False):
    """Map (batch, state_dim) state vectors to (batch, n_features, sub_window_len)."""
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 2 or states.shape[1] != params.arch.state_dim:
        raise ShapeError(f"states must be (batch, {params.arch.state_dim}), got shape "
                         f"{tuple(states.shape)}")
    x = states[:, :, None]
    caches = []
    last = len(params.convs) - 1
    for i, conv in enumerate(params.convs):
        stride, padding = _conv_geometry(i)
        conv_in = x
        x = ops.conv1d_transpose_forward(x, conv.kernel, conv.bias, stride, padding)
        if i < last:
            norm = params.norms[i]
            x, bn = ops.batchnorm_forward(x, norm.gamma, norm.beta, norm.running_mean,
                                          norm.running_var, mode=mode, axes=(2,))
            caches.append((conv_in, bn, x))
            x = ops.relu_forward(x)
        else:
            caches.append((conv_in, None, None))
    return (x, caches) if with_cache else x


def generator_backward_cached(params: GeneratorParams, caches, grad_output,
                              want_params: bool = True):
    """Backward through a cached forward pass.

    Returns (grad_states, grad_params) where grad_params is keyed like
    learnable_params and summed over the batch. want_params=False skips the
    parameter gradients (grad_params comes back empty); the latent sampler
    only consumes the input gradient.
    """
    g = np.asarray(grad_output, dtype=np.float64)
    grads: dict[str, np.ndarray] = {}
    for i in range(len(params.convs) - 1, -1, -1):
        conv_in, bn, bn_out = caches[i]
        if bn is not None:
            g = ops.relu_backward(bn_out, g)
            lg = ops.batchnorm_backward(g, bn)
            if want_params:
                grads[f"norm{i}.gamma"], grads[f"norm{i}.beta"] = lg.grad_params
            g = lg.grad_input
        stride, padding = _conv_geometry(i)
        lg = ops.conv1d_transpose_backward(conv_in, params.convs[i].kernel, stride, padding,
                                           g, inputs_only=not want_params)
        if want_params:
            grads[f"conv{i}.kernel"], grads[f"conv{i}.bias"] = lg.grad_params
        g = lg.grad_input
    return g[:, :, 0], grads


def generate_sub_window(s_j, params: GeneratorParams, mode: str = "eval") -> np.ndarray:
    """One sub-window block from one state vector. The observation-noise term
    of the probability model is never added at generation time."""
    s_j = np.asarray(s_j, dtype=np.float64)
    if s_j.shape != (params.arch.state_dim,):
        raise ShapeError(f"state vector has shape {tuple(s_j.shape)}, expected "
                         f"({params.arch.state_dim},)")
    return generator_forward(s_j[None], params, mode=mode)[0]


def generate_window(z, params: GeneratorParams, spec: HierarchySpec,
                    mode: str = "eval") -> np.ndarray:
    """Whole window: sub-window blocks concatenated along time."""
    _check_compat(params, spec)
    out = generator_forward(state_matrix(z, spec), params, mode=mode)
    m = params.arch.n_features
    return out.transpose(1, 0, 2).reshape(m, spec.window_len)


def generator_backward(z, params: GeneratorParams, spec: HierarchySpec, grad_output,
                       mode: str = "eval", want_params: bool = True):
    """Gradients of generate_window w.r.t. the flat latent state and parameters.

    Tied latent vectors receive the sum of the gradients of every sub-window
    sharing them; parameter gradients are summed over sub-windows.
    """
    _check_compat(params, spec)
    m = params.arch.n_features
    grad_output = np.asarray(grad_output, dtype=np.float64)
    if grad_output.shape != (m, spec.window_len):
        raise ShapeError(f"grad_output has shape {tuple(grad_output.shape)}, expected "
                         f"({m}, {spec.window_len})")
    states = state_matrix(z, spec)
    _, caches = generator_forward(states, params, mode=mode, with_cache=True)
    g = grad_output.reshape(m, spec.n_sub_windows, spec.sub_window_len).transpose(1, 0, 2)
    grad_states, grad_params = generator_backward_cached(params, caches, g, want_params)
    return scatter_states(grad_states, spec), grad_params


def _check_compat(params: GeneratorParams, spec: HierarchySpec):
    layout = latent_layout(spec)
    if layout.state_dim != params.arch.state_dim:
        raise ShapeError(f"hierarchy state dim {layout.state_dim} does not match "
                         f"generator state dim {params.arch.state_dim}")
    if spec.sub_window_len != params.arch.sub_window_len:
        raise ShapeError(f"hierarchy sub_window_len {spec.sub_window_len} does not match "
                         f"generator sub_window_len {params.arch.sub_window_len}")
