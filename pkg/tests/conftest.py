"""Shared numeric oracles for the test suite."""

import numpy as np


def brute_force_point_adjust(pred, labels):
    """Segment scanner: literal translation of the adjustment rule."""
    pred = list(pred)
    n = len(labels)
    i = 0
    while i < n:
        if labels[i]:
            j = i
            while j < n and labels[j]:
                j += 1
            if any(pred[i:j]):
                for k in range(i, j):
                    pred[k] = True
            i = j
        else:
            i += 1
    return np.array(pred, dtype=bool)


def brute_force_best_f1(scores, labels, adjusted):
    """Exhaustive threshold sweep; returns (precision, recall, f1, threshold)."""
    from latentad.detect import point_adjust

    best = (0.0, 0.0, 0.0, float("inf"))
    for thr in np.unique(scores):
        pred = scores >= thr
        if adjusted:
            pred = point_adjust(pred, labels)
        tp = float((pred & labels).sum())
        fp = float((pred & ~labels).sum())
        fn = float((~pred & labels).sum())
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * p * r / (p + r) if p + r else 0.0
        if f1 > best[2]:
            best = (p, r, f1, float(thr))
    return best


def fd_grad(f, x, h=1e-5):
    """Central finite differences of a scalar function at array x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.ravel()
    xf = x.ravel()
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + h
        hi = f(x)
        xf[i] = orig - h
        lo = f(x)
        xf[i] = orig
        flat[i] = (hi - lo) / (2.0 * h)
    return grad


def max_rel_err(analytic, numeric, floor=1e-8):
    """Largest elementwise |a - n| / max(floor, |a| + |n|)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(floor, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))


def conv1d_strided_direct(y, kernel, stride, padding):
    """Direct-sum strided convolution; the adjoint partner of the transposed
    convolution under the standard inner product."""
    y = np.asarray(y, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    c_in, c_out, width = kernel.shape
    l_out = y.shape[1]
    length = (l_out + 2 * padding - width) // stride + 1
    out = np.zeros((c_in, length))
    for ci in range(c_in):
        for i in range(length):
            for co in range(c_out):
                for k in range(width):
                    j = i * stride + k - padding
                    if 0 <= j < l_out:
                        out[ci, i] += y[co, j] * kernel[ci, co, k]
    return out


def conv1d_transpose_direct(x, kernel, bias, stride, padding):
    """Direct-sum transposed convolution used as an independent oracle."""
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    c_in, c_out, width = kernel.shape
    length = x.shape[1]
    l_out = (length - 1) * stride - 2 * padding + width
    out = np.zeros((c_out, l_out))
    for co in range(c_out):
        out[co] += bias[co]
        for ci in range(c_in):
            for i in range(length):
                for k in range(width):
                    j = i * stride + k - padding
                    if 0 <= j < l_out:
                        out[co, j] += x[ci, i] * kernel[ci, co, k]
    return out
