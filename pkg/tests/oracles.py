"""Slow, literal reference implementations used only by the tests."""

import math

import numpy as np


def loop_contrastive(z, labels, tau, kind, view_of=None):
    """Per-anchor loops over the definition; ``kind`` in schane/supcon/simclr."""
    m = len(z)
    total = 0.0
    for i in range(m):
        others = [k for k in range(m) if k != i]
        if kind == "simclr":
            pos = [k for k in others if view_of[k] == view_of[i]]
            neg = [k for k in others if view_of[k] != view_of[i]]
        else:
            pos = [k for k in others if labels[k] == labels[i]]
            neg = [k for k in others if labels[k] != labels[i]]
        e = {k: math.exp(float(z[i] @ z[k]) / tau) for k in others}
        if kind == "schane":
            norm = sum(e[k] for k in neg)
            beta = {k: e[k] * len(neg) / norm for k in neg}
        else:
            beta = {k: 1.0 for k in neg}
        denom = sum(e[p] for p in pos) + sum(beta[k] * e[k] for k in neg)
        total += -sum(math.log(e[p] / denom) for p in pos) / len(pos)
    return total / m


def central_diff(f, x, h=1e-5):
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        up = f(x)
        x[idx] = old - h
        down = f(x)
        x[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


def rel_err(a, b):
    return float(np.max(np.abs(a - b)) / max(1e-8, np.max(np.abs(a)), np.max(np.abs(b))))
