"""Mini-batch alternating back-propagation training.

Each training window keeps a persistent latent chain, initialized once from
the prior. Every iteration draws a uniform mini-batch (with replacement),
advances the selected windows' chains by a fixed number of noisy Langevin
steps warm-started from their previous values (inferential step), then takes
one Adam step on the generator parameters against the masked reconstruction
gradient averaged over the batch (learning step). The learning rate decays
by a fixed factor at the quarter points of training.

Per-window noise streams are derived from (seed, window index), so advancing
the selected chains in one batched pass is exactly equivalent to advancing
them one window at a time.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import ops
from .data import SeriesFrame
from .errors import DataError, NumericError, ValidationError
from .generator import (GeneratorArch, GeneratorParams, build_generator,
                        commit_running_stats, generator_backward_cached,
                        generator_forward, learnable_params, with_params)
from .hierarchy import (HierarchySpec, init_latents, latent_layout,
                        scatter_states, state_matrix)
from .langevin import LangevinConfig
from .rng import stream_rng


@dataclass
class Window:
    """One training/detection window; offset maps column 0 to a series timestamp
    (negative when the window is left-padded)."""

    values: np.ndarray  # (n_features, window_len)
    mask: np.ndarray    # (n_features, window_len) bool; padding is unobserved
    offset: int
    index: int


@dataclass(frozen=True)
class TrainConfig:
    iterations: int
    batch_size: int
    lr: float
    lr_decay: float
    langevin: LangevinConfig
    n_decays: int = 3
    masks_enabled: bool = True
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.iterations < 1 or self.batch_size < 1:
            raise ValidationError(f"iterations and batch_size must be >= 1, got "
                                  f"{self.iterations} and {self.batch_size}")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValidationError(f"lr_decay must be in (0, 1], got {self.lr_decay}")


@dataclass
class TrainingRun:
    params: GeneratorParams
    latents: list[np.ndarray]
    loss_history: list[float]          # masked reconstruction MSE / (2 sigma^2)
    joint_history: list[float]         # + ||Z||^2 / 2, for sanity monitoring
    lr_history: list[float]
    iter_seconds: list[float]
    wall_clock: dict[str, float] = field(default_factory=dict)


def make_windows(series: SeriesFrame, window_len: int, step: int) -> list[Window]:
    """Rolling windows starting at 0, step, 2*step, ...

    A series shorter than one window yields a single left-padded window; a
    trailing remainder gets one extra right-padded window. Padding is
    zero-valued and marked unobserved.
    """
    if step < 1 or window_len < 1:
        raise ValidationError(f"need step >= 1 and window_len >= 1, got {step} and {window_len}")
    m, t = series.n_features, series.n_timestamps
    if t == 0:
        raise DataError(f"entity {series.entity_id!r} is empty")
    windows: list[Window] = []
    if t < window_len:
        pad = window_len - t
        values = np.zeros((m, window_len))
        mask = np.zeros((m, window_len), dtype=bool)
        values[:, pad:] = series.values
        mask[:, pad:] = series.mask
        return [Window(values, mask, -pad, 0)]
    starts = list(range(0, t - window_len + 1, step))
    if starts[-1] + window_len < t and starts[-1] + step < t:
        starts.append(starts[-1] + step)
    for i, s0 in enumerate(starts):
        hi = min(s0 + window_len, t)
        values = np.zeros((m, window_len))
        mask = np.zeros((m, window_len), dtype=bool)
        values[:, : hi - s0] = series.values[:, s0:hi]
        mask[:, : hi - s0] = series.mask[:, s0:hi]
        windows.append(Window(values, mask, s0, i))
    return windows


def _forward_windows(z_rows, params, spec, mode, with_cache=False):
    states = np.concatenate([state_matrix(z, spec) for z in z_rows], axis=0)
    out = generator_forward(states, params, mode=mode, with_cache=with_cache)
    out, caches = out if with_cache else (out, None)
    n, a_l, m, ls = len(z_rows), spec.n_sub_windows, params.arch.n_features, spec.sub_window_len
    windows = out.reshape(n, a_l, m, ls).transpose(0, 2, 1, 3).reshape(n, m, a_l * ls)
    return windows, caches


def _backward_windows(caches, grad_windows, params, spec, want_params=True):
    n, m, _ = grad_windows.shape
    a_l, ls = spec.n_sub_windows, spec.sub_window_len
    g = grad_windows.reshape(n, m, a_l, ls).transpose(0, 2, 1, 3).reshape(n * a_l, m, ls)
    grad_states, grad_params = generator_backward_cached(params, caches, g, want_params)
    state_dim = latent_layout(spec).state_dim
    per_window = grad_states.reshape(n, a_l, state_dim)
    grad_z = np.stack([scatter_states(per_window[i], spec) for i in range(n)])
    return grad_z, grad_params


def _decay_points(iterations: int, n_decays: int) -> list[int]:
    return [-(-k * iterations // (n_decays + 1)) for k in range(1, n_decays + 1)]


def abp_train(windows: list[Window], spec: HierarchySpec, arch: GeneratorArch,
              cfg: TrainConfig, checkpoint_dir=None,
              resume_from=None) -> TrainingRun:
    """Run alternating back-propagation over a window set."""
    if not windows:
        raise DataError("cannot train on an empty window set")
    if arch.n_features != windows[0].values.shape[0]:
        raise ValidationError(f"architecture expects {arch.n_features} features but windows "
                              f"have {windows[0].values.shape[0]}")
    n = len(windows)
    sw = spec.window_len
    inv_var = 1.0 / (cfg.langevin.sigma_z ** 2)
    noise_scale = np.sqrt(2.0 * cfg.langevin.step_size)

    ys = np.stack([w.values for w in windows])
    if cfg.masks_enabled:
        masks = np.stack([w.mask for w in windows])
    else:
        masks = np.ones_like(ys, dtype=bool)

    if resume_from is None:
        params = build_generator(arch, stream_rng(cfg.seed, "param-init"))
        latents = init_latents(spec, n, stream_rng(cfg.seed, "latent-init"))
        adam = ops.adam_init(learnable_params(params))
        batch_rng = stream_rng(cfg.seed, "batch")
        chain_rngs = [stream_rng(cfg.seed, "chain", i) for i in range(n)]
        start_iter = 1
        loss_hist: list[float] = []
        joint_hist: list[float] = []
        lr_hist: list[float] = []
        sec_hist: list[float] = []
    else:
        state = load_train_state(resume_from)
        if state["n_windows"] != n:
            raise DataError(f"checkpoint has {state['n_windows']} windows, dataset has {n}")
        params, latents, adam = state["params"], state["latents"], state["adam"]
        batch_rng, chain_rngs = state["batch_rng"], state["chain_rngs"]
        start_iter = state["iteration"] + 1
        loss_hist = state["loss_history"]
        joint_hist = state["joint_history"]
        lr_hist = state["lr_history"]
        sec_hist = [0.0] * len(loss_hist)

    decay_at = _decay_points(cfg.iterations, cfg.n_decays)
    t_inference = t_learning = 0.0
    total_start = time.perf_counter()

    for it in range(start_iter, cfg.iterations + 1):
        iter_start = time.perf_counter()
        lr = cfg.lr * cfg.lr_decay ** sum(1 for p in decay_at if it >= p)
        idx = batch_rng.integers(0, n, size=cfg.batch_size)
        uniq = np.unique(idx)

        # Inferential back-propagation: advance the selected persistent
        # chains in lockstep (per-window noise streams keep this equivalent
        # to sequential per-window updates).
        t0 = time.perf_counter()
        z_batch = np.stack([latents[i] for i in uniq])
        y_batch = ys[uniq]
        m_batch = masks[uniq]
        for step in range(cfg.langevin.n_steps):
            y_hat, caches = _forward_windows(z_batch, params, spec, "train", with_cache=True)
            resid = np.where(m_batch, y_batch - y_hat, 0.0)
            grad_z, _ = _backward_windows(caches, resid, params, spec, want_params=False)
            z_batch = z_batch + cfg.langevin.step_size * (inv_var * grad_z - z_batch)
            if cfg.langevin.noise_enabled:
                for row, w in enumerate(uniq):
                    z_batch[row] += noise_scale * chain_rngs[w].standard_normal(z_batch.shape[1])
            bad = ~np.isfinite(z_batch).all(axis=1)
            if bad.any():
                raise NumericError(f"latent chain for window {uniq[np.argmax(bad)]} became "
                                   f"non-finite at Langevin step {step} of iteration {it}")
        for row, w in enumerate(uniq):
            latents[w] = z_batch[row]
        t_inference += time.perf_counter() - t0

        # Learning back-propagation: one Adam step on the batch as drawn.
        t0 = time.perf_counter()
        z_drawn = np.stack([latents[i] for i in idx])
        y_hat, caches = _forward_windows(z_drawn, params, spec, "train", with_cache=True)
        resid = np.where(masks[idx], ys[idx] - y_hat, 0.0)

        recon = np.empty(cfg.batch_size)
        joint = np.empty(cfg.batch_size)
        for row, w in enumerate(idx):
            n_obs = masks[w].sum()
            sse = float((resid[row] * resid[row]).sum())
            recon[row] = 0.5 * inv_var * sse / n_obs if n_obs else 0.0
            joint[row] = recon[row] + 0.5 * float(latents[w] @ latents[w])
            if not np.isfinite(joint[row]):
                raise NumericError(f"non-finite loss at iteration {it} for window {w}")
        loss_hist.append(float(recon.mean()))
        joint_hist.append(float(joint.mean()))
        lr_hist.append(lr)

        grad_out = -(inv_var / cfg.batch_size) * resid
        _, grads = _backward_windows(caches, grad_out, params, spec)
        new_values, adam = ops.adam_step(learnable_params(params), grads, adam, lr)
        params = commit_running_stats(with_params(params, new_values), caches)
        t_learning += time.perf_counter() - t0
        sec_hist.append(time.perf_counter() - iter_start)

        if cfg.checkpoint_every and checkpoint_dir and it % cfg.checkpoint_every == 0:
            save_train_state(Path(checkpoint_dir) / f"state_{it:06d}.ckpt", params, spec,
                             latents, adam, batch_rng, chain_rngs, it,
                             loss_hist, joint_hist, lr_hist, cfg.seed)

    run = TrainingRun(params, latents, loss_hist, joint_hist, lr_hist, sec_hist)
    run.wall_clock = {"inference": t_inference, "learning": t_learning,
                      "total": time.perf_counter() - total_start}
    return run


def save_train_state(path, params, spec, latents, adam: ops.AdamState, batch_rng,
                     chain_rngs, iteration: int, loss_history, joint_history,
                     lr_history, seed: int) -> None:
    """Full resumable snapshot: parameters, chains, optimizer and rng states."""
    extra = {"latents": np.stack(latents)}
    for name, arr in adam.first_moment.items():
        extra[f"adam.m.{name}"] = arr
    for name, arr in adam.second_moment.items():
        extra[f"adam.v.{name}"] = arr
    extra["history.loss"] = np.array(loss_history)
    extra["history.joint"] = np.array(joint_history)
    extra["history.lr"] = np.array(lr_history)
    meta = {
        "kind": "train-state",
        "iteration": iteration,
        "adam_step_count": adam.step_count,
        "seed": seed,
        "rng": {"batch": batch_rng.bit_generator.state,
                "chains": [r.bit_generator.state for r in chain_rngs]},
    }
    ckpt.save_model(path, params, spec, stats=None, extra_arrays=extra, extra_meta=meta)


def load_train_state(path) -> dict:
    params, spec, _, meta = ckpt.load_model(path)
    arrays, _ = ckpt.load_archive(path)
    if meta.get("kind") != "train-state":
        raise DataError(f"{path}: not a training checkpoint")
    latents = [row.copy() for row in arrays["latents"]]
    names = sorted(learnable_params(params))
    adam = ops.AdamState({n: arrays[f"adam.m.{n}"] for n in names},
                         {n: arrays[f"adam.v.{n}"] for n in names},
                         meta["adam_step_count"])
    batch_rng = np.random.default_rng()
    batch_rng.bit_generator.state = meta["rng"]["batch"]
    chain_rngs = []
    for state in meta["rng"]["chains"]:
        r = np.random.default_rng()
        r.bit_generator.state = state
        chain_rngs.append(r)
    return {
        "params": params, "spec": spec, "latents": latents, "adam": adam,
        "batch_rng": batch_rng, "chain_rngs": chain_rngs,
        "iteration": meta["iteration"], "n_windows": len(latents),
        "loss_history": list(arrays["history.loss"]),
        "joint_history": list(arrays["history.joint"]),
        "lr_history": list(arrays["history.lr"]),
        "seed": meta["seed"],
    }
