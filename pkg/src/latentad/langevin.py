"""Short-run Langevin dynamics over the latent space.

The chain ascends the log-posterior of the latent state given an observed
window under a Gaussian observation model with scale sigma_z and a standard
normal prior:

    grad log p(Z | Y) = (1/sigma_z^2) * J^T [(Y - f(Z)) masked to observed] - Z
    Z <- Z + step_size * grad + sqrt(2 * step_size) * eps,   eps ~ N(0, I)

Residuals are computed on observed entries only, so occluded values never
influence the chain. With noise disabled the iteration is plain gradient
ascent and converges to the posterior mode (used at detection time). The
chain runs a fixed number of steps with no rejection step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ShapeError, ValidationError
from .generator import GeneratorParams, generate_window, generator_backward
from .hierarchy import HierarchySpec


@dataclass(frozen=True)
class LangevinConfig:
    n_steps: int
    step_size: float
    sigma_z: float
    noise_enabled: bool

    def __post_init__(self):
        if self.n_steps < 1 or self.step_size <= 0 or self.sigma_z <= 0:
            raise ValidationError(
                f"need n_steps >= 1, step_size > 0, sigma_z > 0; got "
                f"n_steps={self.n_steps} step_size={self.step_size} sigma_z={self.sigma_z}")


def masked_residual(y, y_hat, mask) -> np.ndarray:
    """(Y - Yhat) with occluded entries set to zero."""
    y = np.asarray(y)
    mask = np.asarray(mask, dtype=bool)
    if y.shape != y_hat.shape or mask.shape != y.shape:
        raise ShapeError(f"window {tuple(y.shape)}, reconstruction {tuple(y_hat.shape)} and "
                         f"mask {tuple(mask.shape)} must share one shape")
    return np.where(mask, y - y_hat, 0.0)


def run_chain(y, mask, generate, vjp, cfg: LangevinConfig, z_init, rng=None) -> np.ndarray:
    """Generic chain over callables: generate(z) -> Yhat, vjp(z, g) -> J^T g."""
    if cfg.noise_enabled and rng is None:
        raise ValidationError("noise_enabled requires an rng")
    z = np.asarray(z_init, dtype=np.float64).copy()
    inv_var = 1.0 / (cfg.sigma_z * cfg.sigma_z)
    noise_scale = np.sqrt(2.0 * cfg.step_size)
    for step in range(cfg.n_steps):
        resid = masked_residual(y, generate(z), mask)
        grad = inv_var * vjp(z, resid) - z
        z = z + cfg.step_size * grad
        if cfg.noise_enabled:
            z = z + noise_scale * rng.standard_normal(z.shape)
        if not np.all(np.isfinite(z)):
            raise NumericError(f"latent state became non-finite at Langevin step {step}")
    return z


def posterior_grad(z, y, mask, params: GeneratorParams, spec: HierarchySpec,
                   cfg: LangevinConfig, mode: str = "eval") -> np.ndarray:
    """grad log p(Z | Y) at z, with residuals restricted to observed entries."""
    resid = masked_residual(y, generate_window(z, params, spec, mode=mode), mask)
    grad_z, _ = generator_backward(z, params, spec, resid, mode=mode, want_params=False)
    return grad_z / (cfg.sigma_z * cfg.sigma_z) - np.asarray(z, dtype=np.float64)


def langevin_infer(y, mask, params: GeneratorParams, spec: HierarchySpec,
                   cfg: LangevinConfig, z_init, rng=None, mode: str = "eval") -> np.ndarray:
    """Run the chain against the generator for exactly cfg.n_steps iterations."""
    def generate(z):
        return generate_window(z, params, spec, mode=mode)

    def vjp(z, g):
        grad_z, _ = generator_backward(z, params, spec, g, mode=mode, want_params=False)
        return grad_z

    return run_chain(y, mask, generate, vjp, cfg, z_init, rng=rng)
