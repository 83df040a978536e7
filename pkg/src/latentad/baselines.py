"""Two deliberately simple anomaly scorers used as reference points."""

from __future__ import annotations

import numpy as np

from .data import SeriesFrame
from .detect import ScoreSeries
from .errors import ShapeError, ValidationError
from .training import Window


def baseline_mean_deviation(train: SeriesFrame, test: SeriesFrame) -> ScoreSeries:
    """Score = mean absolute deviation from the train-split feature means.

    Occluded test entries are skipped; the mean runs over observed features.
    A feature with no observed train values falls back to a zero mean.
    """
    if train.n_features != test.n_features:
        raise ShapeError(f"train has {train.n_features} features, test has {test.n_features}")
    mean = np.zeros(train.n_features)
    for i in range(train.n_features):
        observed = train.values[i, train.mask[i]]
        if observed.size > 0:
            mean[i] = observed.mean()
    dev = np.where(test.mask, np.abs(test.values - mean[:, None]), 0.0)
    counts = test.mask.sum(axis=0)
    scores = np.divide(dev.sum(axis=0), counts, out=np.zeros(test.n_timestamps),
                       where=counts > 0)
    return ScoreSeries(scores, dev, np.ones(test.n_timestamps, dtype=np.int64), counts)


def baseline_knn(train_windows: list[Window], test_windows: list[Window], k: int,
                 n_timestamps: int) -> ScoreSeries:
    """Score = mean Euclidean distance of a test window to its k nearest
    training windows (flattened), broadcast to the window's timestamps and
    averaged where windows overlap."""
    if k < 1 or k > len(train_windows):
        raise ValidationError(f"k must be in [1, {len(train_windows)}], got {k}")
    x = np.stack([w.values.ravel() for w in train_windows])
    q = np.stack([w.values.ravel() for w in test_windows])
    sq = np.maximum(
        (q * q).sum(axis=1)[:, None] + (x * x).sum(axis=1)[None, :] - 2.0 * q @ x.T, 0.0)
    dists = np.sqrt(sq)
    if k < dists.shape[1]:
        nearest = np.partition(dists, k - 1, axis=1)[:, :k]
    else:
        nearest = dists
    window_scores = np.sort(nearest, axis=1).mean(axis=1)

    m = test_windows[0].values.shape[0]
    window_len = test_windows[0].values.shape[1]
    acc = np.zeros(n_timestamps)
    coverage = np.zeros(n_timestamps, dtype=np.int64)
    for w, score in zip(test_windows, window_scores):
        lo = max(0, -w.offset)
        hi = min(window_len, n_timestamps - w.offset)
        acc[w.offset + lo : w.offset + hi] += score
        coverage[w.offset + lo : w.offset + hi] += 1
    scores = np.divide(acc, coverage, out=np.zeros_like(acc), where=coverage > 0)
    # window distance has no per-feature split; attribute it uniformly
    per_feature = np.repeat(scores[None, :], m, axis=0)
    return ScoreSeries(scores, per_feature, coverage,
                       np.full(n_timestamps, m, dtype=np.int64))
