import numpy as np

from schane.framework import backprop, encode, head_logits
from schane.objectives import EmbeddingBatch, objective_loss


def network_value(params, x1, x2, y, objective):
    emb, _ = encode(params, np.vstack([x1, x2]))
    batch = EmbeddingBatch.from_views(emb[: len(y)], emb[len(y):], y, check=False)
    return objective_loss(objective, batch, head_logits(params, emb)).value


def network_loss(params, x1, x2, y, objective):
    """Loss and parameter gradients for fixed views (no augmentation, eval-mode forward)."""
    emb, cache = encode(params, np.vstack([x1, x2]))
    batch = EmbeddingBatch.from_views(emb[: len(y)], emb[len(y):], y, check=False)
    loss = objective_loss(objective, batch, head_logits(params, emb))
    return loss, backprop(params, cache, loss.grad_embeddings, loss.grad_logits), cache


def param_fd(params, f, h=1e-5):
    """Central differences of ``f(params)``; each entry is nudged in place and restored."""
    grads = {}
    for key, a in params.named():
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            old = a[idx]
            a[idx] = old + h
            up = f(params)
            a[idx] = old - h
            down = f(params)
            a[idx] = old
            g[idx] = (up - down) / (2 * h)
        grads[key] = g
    return grads


def max_rel_err(analytic, numeric):
    a = np.concatenate([analytic[k].ravel() for k in numeric])
    n = np.concatenate([numeric[k].ravel() for k in numeric])
    return float(np.max(np.abs(a - n)) / max(1e-8, np.max(np.abs(a)), np.max(np.abs(n))))
