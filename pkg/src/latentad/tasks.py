"""Occlusion experiments, mask-based forecasting, latent interpolation, and
the synthetic labeled benchmark generator.

The synthetic generator draws base signals and anomaly placements from
separate random streams, so regenerating with the anomaly counts set to zero
yields the bit-identical clean twin of a corrupted dataset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import SeriesFrame
from .errors import ValidationError
from .generator import GeneratorParams, generate_window
from .hierarchy import HierarchySpec
from .langevin import LangevinConfig, langevin_infer
from .rng import stream_rng
from .training import Window


@dataclass(frozen=True)
class OcclusionSpec:
    """r equal segments; each (feature, segment) cell is dropped with prob p."""

    r: int
    p: float
    seed: int = 0

    def __post_init__(self):
        if self.r < 1 or not 0.0 <= self.p <= 1.0:
            raise ValidationError(f"need r >= 1 and p in [0, 1], got r={self.r} p={self.p}")


def make_occlusion_mask(m: int, t: int, spec: OcclusionSpec, index: int = 0) -> np.ndarray:
    """Boolean (m, t) mask, False = occluded. The last segment absorbs the
    remainder of t // r; index selects an independent stream per entity."""
    if t < spec.r:
        raise ValidationError(f"series length {t} shorter than r={spec.r} segments")
    rng = stream_rng(spec.seed, "occlude", index)
    occluded = rng.uniform(size=(m, spec.r)) < spec.p
    seg_len = t // spec.r
    mask = np.ones((m, t), dtype=bool)
    for s in range(spec.r):
        lo = s * seg_len
        hi = t if s == spec.r - 1 else (s + 1) * seg_len
        mask[:, lo:hi] = ~occluded[:, s : s + 1]
    return mask


def occlude_series(frame: SeriesFrame, spec: OcclusionSpec, index: int = 0) -> SeriesFrame:
    """Apply an occlusion mask on top of the frame's own observation mask."""
    mask = frame.mask & make_occlusion_mask(frame.n_features, frame.n_timestamps, spec, index)
    labels = None if frame.labels is None else frame.labels.copy()
    return SeriesFrame(frame.values.copy(), mask, labels, frame.entity_id, frame.feature_names)


def forecast(window: Window, observed_len: int, params: GeneratorParams,
             spec: HierarchySpec, cfg: LangevinConfig, rng) -> np.ndarray:
    """Generate a full window with only its first observed_len columns visible.

    Columns [observed_len, window_len) of the result are the forecasts. With
    observed_len = window_len this is exactly the detection reconstruction
    path: same prior draw, same chain, same generation.
    """
    if not 0 < observed_len <= spec.window_len:
        raise ValidationError(f"observed_len must be in (0, {spec.window_len}], got {observed_len}")
    if cfg.noise_enabled:
        raise ValidationError("forecasting uses noiseless (MAP) inference")
    mask = window.mask.copy()
    mask[:, observed_len:] = False
    from .detect import infer_window  # shared path keeps the two bit-identical
    _, out = infer_window(Window(window.values, mask, window.offset, window.index),
                          params, spec, cfg, rng)
    return out


def interpolate_latents(z_a, z_b, alphas, params: GeneratorParams,
                        spec: HierarchySpec, mode: str = "train") -> list[np.ndarray]:
    """Windows generated from (1 - alpha) * z_a + alpha * z_b; alphas outside
    [0, 1] extrapolate. Generation defaults to batch-of-one normalization
    statistics, matching how the endpoint latents are inferred."""
    z_a = np.asarray(z_a, dtype=np.float64)
    z_b = np.asarray(z_b, dtype=np.float64)
    if z_a.shape != z_b.shape:
        raise ValidationError(f"latent states differ in shape: {z_a.shape} vs {z_b.shape}")
    return [generate_window((1.0 - a) * z_a + a * z_b, params, spec, mode=mode)
            for a in alphas]


@dataclass(frozen=True)
class SynthSpec:
    """Multi-sinusoid benchmark with injected spike / level-shift anomalies."""

    m: int = 5
    t_train: int = 10_000
    t_test: int = 5_000
    n_components: int = 3
    period_range: tuple[float, float] = (24.0, 200.0)
    amp_range: tuple[float, float] = (0.5, 1.5)
    noise_std: float = 0.1
    n_spikes: int = 10
    n_level_shifts: int = 10
    # magnitudes are in units of the feature's train std; shifts sit below the
    # signal's own peak range so they stay contextual (plain deviation from
    # the mean does not expose them) while reconstruction error does
    spike_magnitude: float = 6.0
    shift_magnitude: float = 2.0
    spike_len: tuple[int, int] = (1, 4)
    shift_len: tuple[int, int] = (30, 80)
    seed: int = 0

    def __post_init__(self):
        if self.m < 1 or self.t_train < 1 or self.t_test < 1:
            raise ValidationError("m, t_train and t_test must be >= 1")
        if self.n_spikes < 0 or self.n_level_shifts < 0:
            raise ValidationError("anomaly counts must be >= 0")


def synth_generate(spec: SynthSpec) -> tuple[SeriesFrame, SeriesFrame]:
    """Returns (train, test); the test frame carries ground-truth labels.

    Anomaly intervals are disjoint: the test span is split into one slot per
    anomaly and each interval is placed within its slot.
    """
    base_rng = stream_rng(spec.seed, "synth-base")
    t_total = spec.t_train + spec.t_test
    t_axis = np.arange(t_total, dtype=np.float64)
    values = np.zeros((spec.m, t_total))
    for i in range(spec.m):
        for _ in range(spec.n_components):
            period = base_rng.uniform(*spec.period_range)
            amp = base_rng.uniform(*spec.amp_range)
            phase = base_rng.uniform(0.0, 2.0 * np.pi)
            values[i] += amp * np.sin(2.0 * np.pi * t_axis / period + phase)
        values[i] += spec.noise_std * base_rng.standard_normal(t_total)

    labels = np.zeros(spec.t_test, dtype=bool)
    n_anom = spec.n_spikes + spec.n_level_shifts
    if n_anom > 0:
        anom_rng = stream_rng(spec.seed, "synth-anomaly")
        feature_std = values[:, : spec.t_train].std(axis=1)
        kinds = np.array(["spike"] * spec.n_spikes + ["shift"] * spec.n_level_shifts)
        anom_rng.shuffle(kinds)
        slot = spec.t_test // n_anom
        longest = max(spec.spike_len[1] if spec.n_spikes else 1,
                      spec.shift_len[1] if spec.n_level_shifts else 1)
        if slot < longest + 2:
            raise ValidationError(f"test split too short for {n_anom} disjoint anomalies")
        for a, kind in enumerate(kinds):
            lo_range, hi_range = (spec.spike_len if kind == "spike" else spec.shift_len)
            length = int(anom_rng.integers(lo_range, hi_range + 1))
            start = a * slot + int(anom_rng.integers(1, slot - length))
            feat = int(anom_rng.integers(0, spec.m))
            sign = 1.0 if anom_rng.uniform() < 0.5 else -1.0
            mag = spec.spike_magnitude if kind == "spike" else spec.shift_magnitude
            values[feat, spec.t_train + start : spec.t_train + start + length] += (
                sign * mag * feature_std[feat])
            labels[start : start + length] = True

    mask = np.ones_like(values, dtype=bool)
    train = SeriesFrame(values[:, : spec.t_train], mask[:, : spec.t_train],
                        None, "synthetic")
    test = SeriesFrame(values[:, spec.t_train :], mask[:, spec.t_train :],
                       labels, "synthetic")
    return train, test
