"""Slow, obviously-correct reference implementations used by the tests."""
import math

import numpy as np


def conv_direct(x, w, b, stride, padding):
    """Direct-sum cross-correlation in float64.

    For every kernel tap ``(i, j)`` the input index of each output cell is
    computed explicitly as ``y * stride - padding + i``; taps that land
    outside the input contribute nothing.
    """
    x = np.asarray(x, np.float64)
    w = np.asarray(w, np.float64)
    c, h, wd = x.shape
    n_out, _, kh, kw = w.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n_out, ho, wo)) + np.asarray(b, np.float64)[:, None, None]
    ys, xs = np.arange(ho), np.arange(wo)
    for i in range(kh):
        iy = ys * stride - padding + i
        vy = (iy >= 0) & (iy < h)
        for j in range(kw):
            ix = xs * stride - padding + j
            vx = (ix >= 0) & (ix < wd)
            if not vy.any() or not vx.any():
                continue
            taps = x[:, iy[vy]][:, :, ix[vx]]  # (c, ny, nx)
            contrib = np.tensordot(w[:, :, i, j], taps, axes=(1, 0))
            out[np.ix_(np.arange(n_out), np.nonzero(vy)[0], np.nonzero(vx)[0])] += contrib
    return out


def lrn_direct(x, n=5, alpha=1e-4, beta=0.75, k=2.0):
    x = np.asarray(x, np.float64)
    out = np.empty_like(x)
    ch = x.shape[0]
    for c in range(ch):
        lo, hi = max(0, c - n // 2), min(ch, c + n // 2 + 1)
        s = (x[lo:hi] ** 2).sum(axis=0)
        out[c] = x[c] / (k + alpha / n * s) ** beta
    return out


def select_reference(candidates, width, height, a):
    """Quadratic-time selection: keep a candidate unless its center pixel
    lies within ``a * r`` of an already kept circle."""
    kept = []
    for c in candidates:
        x, y = int(round(c.cx)), int(round(c.cy))
        blocked = 0 <= x < width and 0 <= y < height and any(
            (x - k.cx) ** 2 + (y - k.cy) ** 2 <= (a * k.r) ** 2 for k in kept
        )
        if not blocked:
            kept.append(c)
    return kept


def f1_from(recall, precision):
    return 2 * recall * precision / (recall + precision)


def mean_std_population(values):
    m = math.fsum(values) / len(values)
    return m, math.sqrt(math.fsum((v - m) ** 2 for v in values) / len(values))
