"""Online anomaly detection and evaluation.

Test data is cut into the same rolling windows as training. Each window's
latent state is inferred by noiseless Langevin iteration (posterior mode)
from a fresh prior draw, the window is regenerated, and overlapping windows'
reconstructions are averaged. The per-timestamp score is the mean squared
reconstruction error over the scored, observed features; it disaggregates
exactly into per-feature contributions.

For thresholding across entities, scores are scaled causally: the scores a
window contributes are divided by the standard deviation of all raw scores
that were final before that window (the first window uses its own).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import SeriesFrame
from .errors import ShapeError, ValidationError
from .generator import GeneratorParams, generate_window
from .hierarchy import HierarchySpec, latent_layout
from .langevin import LangevinConfig, langevin_infer
from .rng import stream_rng
from .training import Window, make_windows

NORMALIZE_FLOOR = 1e-8

# Normalization statistics for test-time inference come from the window being
# processed (batch-of-one), exactly as during training-phase sampling: the
# chain then descends against the operator it was trained on. Frozen running
# statistics leave the generator's sensitivity unbounded and make the long
# noiseless chain diverge on heavily occluded models.
INFERENCE_MODE = "train"


@dataclass
class ScoreSeries:
    """Per-timestamp anomaly scores with their per-feature decomposition.

    scores[t] is the mean of per_feature[scored & observed, t]; coverage
    counts reconstruction windows covering t; observed_counts counts the
    scored features observed at t (0 means the timestamp was unscorable and
    its score is 0 by convention).
    """

    scores: np.ndarray
    per_feature: np.ndarray
    coverage: np.ndarray
    observed_counts: np.ndarray


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    threshold: float
    adjusted: bool


def detection_rng(seed: int, window_index: int) -> np.random.Generator:
    """The stream used for a window's fresh prior draw at inference time."""
    return stream_rng(seed, "detect", window_index)


def infer_window(window: Window, params: GeneratorParams, spec: HierarchySpec,
                 cfg: LangevinConfig, rng, mode: str = INFERENCE_MODE):
    """MAP latent state and reconstruction of one window from a prior draw."""
    z0 = rng.standard_normal(latent_layout(spec).total_dim)
    z = langevin_infer(window.values, window.mask, params, spec, cfg, z0, mode=mode)
    return z, generate_window(z, params, spec, mode=mode)


def reconstruct_stream(series: SeriesFrame, params: GeneratorParams, spec: HierarchySpec,
                       step: int, cfg: LangevinConfig,
                       channel_select: tuple[int, ...] | None = None,
                       seed: int = 0, mode: str = INFERENCE_MODE):
    """Reconstruct a test stream window by window; returns (reconstruction, scores)."""
    if series.n_features != params.arch.n_features:
        raise ShapeError(f"series has {series.n_features} features but the model expects "
                         f"{params.arch.n_features}")
    if cfg.noise_enabled:
        raise ValidationError("detection-time inference must be noiseless (MAP)")
    m, t_total = series.n_features, series.n_timestamps
    scored = _scored_features(channel_select, m)

    recon_sum = np.zeros((m, t_total))
    coverage = np.zeros(t_total, dtype=np.int64)
    for window in make_windows(series, spec.window_len, step):
        _, out = infer_window(window, params, spec, cfg,
                              detection_rng(seed, window.index), mode=mode)
        lo = max(0, -window.offset)
        hi = min(spec.window_len, t_total - window.offset)
        recon_sum[:, window.offset + lo : window.offset + hi] += out[:, lo:hi]
        coverage[window.offset + lo : window.offset + hi] += 1

    covered = coverage > 0
    recon = np.zeros((m, t_total))
    recon[:, covered] = recon_sum[:, covered] / coverage[covered]
    scores = _score_from_residuals(series, recon, covered, scored)
    return recon, ScoreSeries(scores[0], scores[1], coverage, scores[2])


def _scored_features(channel_select, m: int) -> np.ndarray:
    if channel_select is None:
        return np.arange(m)
    scored = np.asarray(channel_select, dtype=np.int64)
    if scored.size == 0 or scored.min() < 0 or scored.max() >= m:
        raise ValidationError(f"channel selection {tuple(channel_select)} out of range for "
                              f"{m} features")
    return scored


def _score_from_residuals(series: SeriesFrame, recon, covered, scored):
    sq = np.where(series.mask & covered[None, :], (series.values - recon) ** 2, 0.0)
    observed_counts = (series.mask[scored] & covered[None, :]).sum(axis=0)
    sums = sq[scored].sum(axis=0)
    scores = np.divide(sums, observed_counts, out=np.zeros_like(sums),
                       where=observed_counts > 0)
    return scores, sq, observed_counts


def window_owner_bounds(t_total: int, window_len: int, step: int) -> list[tuple[int, int]]:
    """Timestamp block each window finalizes: [k*step, (k+1)*step), the last
    window taking everything to the end of the stream."""
    if t_total < window_len:
        return [(0, t_total)]
    n = len(make_windows_starts(t_total, window_len, step))
    bounds = []
    for k in range(n):
        lo = k * step
        hi = t_total if k == n - 1 else min((k + 1) * step, t_total)
        bounds.append((lo, hi))
    return bounds


def make_windows_starts(t_total: int, window_len: int, step: int) -> list[int]:
    if t_total < window_len:
        return [0]
    starts = list(range(0, t_total - window_len + 1, step))
    if starts[-1] + window_len < t_total and starts[-1] + step < t_total:
        starts.append(starts[-1] + step)
    return starts


def normalize_scores(scores: ScoreSeries, window_len: int, step: int) -> ScoreSeries:
    """Causal scaling by the accumulated standard deviation of raw scores.

    Window k's block is divided by the std of raw scores finalized before
    window k (the first window by its own std); divisors are floored. The
    per-feature matrix is scaled identically so the disaggregation invariant
    is preserved.
    """
    raw = scores.scores
    t_total = raw.shape[0]
    out = np.empty_like(raw)
    per_feature = scores.per_feature.copy()
    count = 0
    mean = 0.0
    m2 = 0.0
    for k, (lo, hi) in enumerate(window_owner_bounds(t_total, window_len, step)):
        block = raw[lo:hi]
        if k == 0:
            div = float(block.std()) if block.size else 0.0
        else:
            div = float(np.sqrt(m2 / count)) if count else 0.0
        div = max(div, NORMALIZE_FLOOR)
        out[lo:hi] = block / div
        per_feature[:, lo:hi] /= div
        for x in block:  # Welford accumulation of raw scores
            count += 1
            delta = x - mean
            mean += delta / count
            m2 += delta * (x - mean)
    return ScoreSeries(out, per_feature, scores.coverage.copy(),
                       scores.observed_counts.copy())


def point_adjust(pred, labels) -> np.ndarray:
    """Spread a hit over its whole labeled segment.

    Within each maximal run of true labels, one true prediction marks the
    entire run; predictions outside runs are untouched. Never flips a true
    prediction to false.
    """
    pred = np.asarray(pred, dtype=bool)
    labels = np.asarray(labels, dtype=bool)
    if pred.shape != labels.shape:
        raise ShapeError(f"pred length {pred.shape} does not match labels length {labels.shape}")
    out = pred.copy()
    for lo, hi in _label_runs(labels):
        if pred[lo:hi].any():
            out[lo:hi] = True
    return out


def _label_runs(labels: np.ndarray) -> list[tuple[int, int]]:
    padded = np.concatenate(([False], labels, [False]))
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    return [(edges[i], edges[i + 1]) for i in range(0, len(edges), 2)]


def best_f1(scores, labels, adjusted: bool) -> EvalReport:
    """Best F1 over all thresholds (prediction: score >= threshold).

    The sweep is exact: candidate thresholds are the distinct score values,
    and with point adjustment a labeled segment counts as fully detected as
    soon as its maximum score clears the threshold.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ShapeError(f"scores {tuple(scores.shape)} and labels {tuple(labels.shape)} must "
                         f"be equal-length vectors")
    n_pos = int(labels.sum())
    if n_pos == 0:
        return EvalReport(0.0, 0.0, 0.0, float("inf"), adjusted)

    if adjusted:
        runs = _label_runs(labels)
        unit_scores = np.array([scores[lo:hi].max() for lo, hi in runs])
        unit_sizes = np.array([hi - lo for lo, hi in runs], dtype=np.float64)
    else:
        unit_scores = scores[labels]
        unit_sizes = np.ones(n_pos)
    order = np.argsort(unit_scores, kind="stable")
    unit_scores = unit_scores[order]
    unit_sizes = unit_sizes[order]
    # tp_at[i] = labeled timestamps detected at threshold just above unit_scores[i-1]
    tp_suffix = np.concatenate((np.cumsum(unit_sizes[::-1])[::-1], [0.0]))
    outside = np.sort(scores[~labels])

    thresholds = np.unique(scores)
    tp = tp_suffix[np.searchsorted(unit_scores, thresholds, side="left")]
    fp = outside.size - np.searchsorted(outside, thresholds, side="left")
    denom = tp + fp
    precision = np.divide(tp, denom, out=np.zeros_like(tp), where=denom > 0)
    recall = tp / n_pos
    pr = precision + recall
    f1 = np.divide(2.0 * precision * recall, pr, out=np.zeros_like(tp), where=pr > 0)
    best = int(np.argmax(f1))
    return EvalReport(float(precision[best]), float(recall[best]), float(f1[best]),
                      float(thresholds[best]), adjusted)


def report_at_threshold(scores, labels, threshold: float, adjusted: bool) -> EvalReport:
    """Precision/recall/F1 of `score >= threshold`, optionally point-adjusted."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    pred = scores >= threshold
    if adjusted:
        pred = point_adjust(pred, labels)
    tp = float((pred & labels).sum())
    fp = float((pred & ~labels).sum())
    fn = float((~pred & labels).sum())
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return EvalReport(precision, recall, f1, float(threshold), adjusted)
