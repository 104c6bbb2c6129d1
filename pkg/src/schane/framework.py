"""Augmentation, MLP encoder with L2-normalised output, linear head, manual backprop and AdamW.

The network is ``input -> hidden (ReLU, dropout) ... -> embedding -> L2 norm``
with a linear classification head on top of the normalised embedding.
Contrastive losses see the normalised embedding; cross-entropy sees the head
logits.
"""

import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CacheMismatch, ConfigError, FormatError, NonFiniteError, ShapeError
from .numerics import normalize_rows
from .objectives import EmbeddingBatch, objective_loss

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "schane-checkpoint"
CHECKPOINT_VERSION = 1


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class AugmentPolicy:
    noise_sigma: float = 0.0
    scale_jitter: tuple = (1.0, 1.0)
    mask_fraction: float = 0.0

    def __post_init__(self):
        lo, hi = self.scale_jitter
        if self.noise_sigma < 0:
            raise ConfigError("must be >= 0", field="noise_sigma")
        if not (0 < lo <= hi <= 2):
            raise ConfigError(f"range must lie within (0, 2], got {self.scale_jitter}", field="scale_jitter")
        if not 0 <= self.mask_fraction < 1:
            raise ConfigError("must lie in [0, 1)", field="mask_fraction")
        object.__setattr__(self, "scale_jitter", (float(lo), float(hi)))

    @property
    def is_identity(self):
        return self.noise_sigma == 0 and self.scale_jitter == (1.0, 1.0) and self.mask_fraction == 0


DEFAULT_AUGMENT = AugmentPolicy(noise_sigma=0.5, scale_jitter=(0.8, 1.2), mask_fraction=0.1)


def augment(x, policy, rng):
    """One stochastic view of every row of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    out = x.copy()
    lo, hi = policy.scale_jitter
    if lo != hi:
        out *= rng.uniform(lo, hi, size=(x.shape[0], 1))
    if policy.mask_fraction > 0:
        out *= rng.random(x.shape) >= policy.mask_fraction
    if policy.noise_sigma > 0:
        out += policy.noise_sigma * rng.standard_normal(x.shape)
    return out


def make_views(x, policy, seed):
    rng = _rng(seed)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    v1, v2 = augment(x, policy, rng), augment(x, policy, rng)
    if v1.shape[0] == 1:
        return v1[0], v2[0]
    return v1, v2


@dataclass(eq=False)
class EncoderParams:
    """MLP layers plus linear head. ``weights[i]`` has shape (fan_in, fan_out)."""

    weights: list
    biases: list
    head_w: np.ndarray
    head_b: np.ndarray
    dropout_rate: float = 0.1
    output_relu: bool = True

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("need one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (w.shape[1],):
                raise ShapeError(f"layer {i}: bias {b.shape} does not match weight {w.shape}")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeError(f"layer {i}: input dim {w.shape[0]} != previous output")
        if self.head_w.shape[0] != self.embed_dim or self.head_b.shape != (self.head_w.shape[1],):
            raise ShapeError("head shape does not match embedding dim")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError("must lie in [0, 1)", field="dropout_rate")

    @property
    def input_dim(self):
        return self.weights[0].shape[0]

    @property
    def embed_dim(self):
        return self.weights[-1].shape[1]

    @property
    def n_classes(self):
        return self.head_w.shape[1]

    def named(self):
        out = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out += [(f"layer{i}.w", w), (f"layer{i}.b", b)]
        return out + [("head.w", self.head_w), ("head.b", self.head_b)]

    @classmethod
    def from_named(cls, arrays, dropout_rate, output_relu=True):
        n_layers = sum(1 for k in arrays if k.endswith(".w") and k.startswith("layer"))
        return cls(
            [arrays[f"layer{i}.w"] for i in range(n_layers)],
            [arrays[f"layer{i}.b"] for i in range(n_layers)],
            arrays["head.w"],
            arrays["head.b"],
            dropout_rate,
            output_relu,
        )

    def map(self, fn, other=None):
        """New params with ``fn`` applied arraywise (pairwise with ``other`` if given)."""
        if other is None:
            arrays = {k: fn(a) for k, a in self.named()}
        else:
            theirs = dict(other.named())
            arrays = {k: fn(a, theirs[k]) for k, a in self.named()}
        return EncoderParams.from_named(arrays, self.dropout_rate, self.output_relu)

    def copy(self):
        return self.map(np.copy)

    def with_head(self, head_w, head_b):
        return replace(self, head_w=np.asarray(head_w, float), head_b=np.asarray(head_b, float))

    def flat(self):
        return np.concatenate([a.ravel() for _, a in self.named()])

    def all_finite(self):
        return all(np.all(np.isfinite(a)) for _, a in self.named())


def glorot(fan_in, fan_out, rng):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(input_dim, n_classes, hidden=(128,), embed_dim=64, dropout_rate=0.1, seed=0, output_relu=True):
    rng = _rng(seed)
    dims = [input_dim, *hidden, embed_dim]
    weights = [glorot(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]
    biases = [np.zeros(b) for b in dims[1:]]
    head = glorot(embed_dim, n_classes, rng)
    return EncoderParams(weights, biases, head, np.zeros(n_classes), dropout_rate, output_relu)


@dataclass(eq=False)
class ForwardCache:
    inputs: list
    pre: list
    masks: list
    raw: np.ndarray
    norms: np.ndarray
    guarded: np.ndarray
    embeddings: np.ndarray
    weight_ids: tuple

    @property
    def any_guarded(self):
        return bool(np.any(self.guarded))


def encode(params, batch, train_mode=False, seed=None):
    """Forward pass to unit-norm embeddings.

    Dropout (inverted, hidden layers only) is drawn from ``seed`` in train
    mode; in eval mode the seed is ignored.
    """
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ShapeError(f"batch shape {x.shape} does not match input dim {params.input_dim}")
    rng = _rng(seed) if train_mode and params.dropout_rate > 0 else None
    keep = 1.0 - params.dropout_rate
    inputs, pres, masks = [], [], []
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ w + b
        pres.append(z)
        if i == last:
            h = np.maximum(z, 0.0) if params.output_relu else z
            break
        h = np.maximum(z, 0.0)
        if rng is not None:
            mask = (rng.random(h.shape) < keep) / keep
            h = h * mask
        else:
            mask = None
        masks.append(mask)
    emb, norms, guarded = normalize_rows(h)
    cache = ForwardCache(
        inputs, pres, masks, h, norms, guarded, emb, tuple(id(w) for w in params.weights)
    )
    return emb, cache


def head_logits(params, embeddings):
    e = np.asarray(embeddings, dtype=np.float64)
    if e.ndim != 2 or e.shape[1] != params.embed_dim:
        raise ShapeError(f"embeddings {e.shape} do not match head input dim {params.embed_dim}")
    return e @ params.head_w + params.head_b


def backprop(params, cache, grad_embeddings=None, grad_logits=None):
    """Gradients of the upstream loss for every parameter array.

    ``grad_embeddings`` is dL/d(normalised embedding) from the contrastive
    path, ``grad_logits`` is dL/d(logits) from the head path. Either may be
    None. Returns an :class:`EncoderParams` holding gradients.
    """
    if cache.weight_ids != tuple(id(w) for w in params.weights):
        raise CacheMismatch("forward cache was produced with different parameters")
    emb = cache.embeddings
    g = np.zeros_like(emb) if grad_embeddings is None else np.asarray(grad_embeddings, float)
    if g.shape != emb.shape:
        raise CacheMismatch(f"grad_embeddings {g.shape} vs embeddings {emb.shape}")
    if grad_logits is not None:
        grad_logits = np.asarray(grad_logits, float)
        if grad_logits.shape != (emb.shape[0], params.n_classes):
            raise CacheMismatch(f"grad_logits {grad_logits.shape} vs logits ({emb.shape[0]}, {params.n_classes})")
        head_w = emb.T @ grad_logits
        head_b = grad_logits.sum(axis=0)
        g = g + grad_logits @ params.head_w.T
    else:
        head_w = np.zeros_like(params.head_w)
        head_b = np.zeros_like(params.head_b)

    # d(v/|v|)/dv = (I - v_hat v_hat^T) / |v|; guarded rows were passed through
    radial = np.einsum("ij,ij->i", g, emb)
    norms = np.where(cache.guarded, 1.0, cache.norms)
    g = np.where(cache.guarded[:, None], g, (g - emb * radial[:, None]) / norms[:, None])

    n_layers = len(params.weights)
    gw, gb = [None] * n_layers, [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        if i < n_layers - 1:
            if cache.masks[i] is not None:
                g = g * cache.masks[i]
            g = g * (cache.pre[i] > 0)
        elif params.output_relu:
            g = g * (cache.pre[i] > 0)
        gw[i] = cache.inputs[i].T @ g
        gb[i] = g.sum(axis=0)
        if i:
            g = g @ params.weights[i].T
    return EncoderParams(gw, gb, head_w, head_b, params.dropout_rate, params.output_relu)


@dataclass(eq=False)
class AdamState:
    m: dict
    v: dict
    step: int = 0
    learning_rate: float = 1e-4
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(params, learning_rate=1e-4, weight_decay=0.05, beta1=0.9, beta2=0.999, eps=1e-8):
    zeros = {k: np.zeros_like(a) for k, a in params.named()}
    return AdamState(zeros, {k: z.copy() for k, z in zeros.items()}, 0, learning_rate, weight_decay, beta1, beta2, eps)


def adam_step(state, params, grads):
    """One AdamW step; returns fresh ``(params, state)`` and leaves the inputs untouched."""
    t = state.step + 1
    lr, wd = state.learning_rate, state.weight_decay
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    gd = dict(grads.named())
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.named():
        g = gd[k]
        if g.shape != p.shape:
            raise ShapeError(f"{k}: gradient {g.shape} vs parameter {p.shape}")
        m = b1 * state.m[k] + (1.0 - b1) * g
        v = b2 * state.v[k] + (1.0 - b2) * g * g
        new_p[k] = p - lr * wd * p - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new_m[k], new_v[k] = m, v
    new_state = replace(state, m=new_m, v=new_v, step=t)
    return EncoderParams.from_named(new_p, params.dropout_rate, params.output_relu), new_state


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    learning_rate: float = 1e-3
    weight_decay: float = 0.05
    hidden: tuple = (128,)
    embed_dim: int = 64
    dropout: float = 0.1
    output_relu: bool = True
    augment: AugmentPolicy = DEFAULT_AUGMENT


@dataclass
class TrainingTrace:
    loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    guarded_rows: list = field(default_factory=list)
    steps: int = 0

    def as_dict(self):
        return {
            "loss": list(self.loss),
            "val_accuracy": list(self.val_accuracy),
            "guarded_rows": list(self.guarded_rows),
            "steps": self.steps,
        }


def train_step(params, state, x, y, objective, policy, rng, strict_guard=False):
    """Two views, forward, loss, backprop and one AdamW step on a mini-batch.

    Returns ``(params, state, loss, guarded_rows)``. A ReLU embedding layer can
    emit an all-zero row; such rows are counted (or rejected when
    ``strict_guard``) rather than normalised.
    """
    v1 = augment(x, policy, rng)
    v2 = augment(x, policy, rng)
    emb, cache = encode(params, np.vstack([v1, v2]), train_mode=True, seed=rng)
    if cache.any_guarded and strict_guard:
        raise NonFiniteError("zero-norm embedding encountered during training")
    batch = EmbeddingBatch.from_views(emb[: len(y)], emb[len(y):], y, check=False)
    logits = head_logits(params, emb)
    loss = objective_loss(objective, batch, logits)
    if not np.isfinite(loss.value):
        raise NonFiniteError(f"non-finite loss {loss.value}")
    grads = backprop(params, cache, loss.grad_embeddings, loss.grad_logits)
    params, state = adam_step(state, params, grads)
    return params, state, loss, int(np.count_nonzero(cache.guarded))


def predict(params, x):
    emb, _ = encode(params, x, train_mode=False)
    return head_logits(params, emb)


def train(config, dataset, objective, seed=0, val=None, params=None, state=None, start_epoch=0, strict_guard=False):
    """Mini-batch training loop.

    Each epoch draws from its own generator seeded by ``(seed, epoch)``, so
    resuming from a checkpoint at epoch ``k`` continues exactly as an
    uninterrupted run would. Returns ``(params, state, trace)``.
    """
    from .metrics import top1_accuracy

    if params is None:
        params = init_params(
            dataset.feature_dim, dataset.class_count, config.hidden, config.embed_dim, config.dropout, seed,
            config.output_relu,
        )
    if state is None:
        state = init_adam(params, config.learning_rate, config.weight_decay)
    trace = TrainingTrace()
    n = len(dataset)
    n_batches = max(1, -(-n // config.batch_size))
    for epoch in range(start_epoch, config.epochs):
        rng = np.random.default_rng([seed, epoch])
        order = rng.permutation(n)
        total, guarded = 0.0, 0
        for idx in np.array_split(order, n_batches):
            params, state, loss, g = train_step(
                params, state, dataset.features[idx], dataset.labels[idx], objective, config.augment, rng,
                strict_guard,
            )
            total += loss.value * idx.size
            guarded += g
        trace.loss.append(total / n)
        trace.guarded_rows.append(guarded)
        if guarded:
            log.warning("epoch %d: %d all-zero embedding rows", epoch, guarded)
        if val is not None:
            trace.val_accuracy.append(top1_accuracy(predict(params, val.features), val.labels))
        log.debug("epoch %d loss %.6f", epoch, trace.loss[-1])
    trace.steps = state.step
    if not params.all_finite():
        raise NonFiniteError("parameters became non-finite")
    return params, state, trace


@dataclass(frozen=True)
class FinetuneConfig:
    steps: int = 20
    learning_rate: float = 1e-2
    weight_decay: float = 0.05
    augment: AugmentPolicy = DEFAULT_AUGMENT
    head_init: str = "zero"
    head_scale: float = 1.0

    def __post_init__(self):
        if self.head_init not in ("zero", "prototype"):
            raise ConfigError(f"expected 'zero' or 'prototype', got {self.head_init!r}", field="head_init")


def episode_head(params, support_x, support_y, way, config):
    """Fresh ``way``-class head: zeros, or scaled unit prototypes of the support embeddings."""
    if config.head_init == "zero":
        return np.zeros((params.embed_dim, way)), np.zeros(way)
    emb, _ = encode(params, support_x)
    protos = np.stack([emb[support_y == c].mean(axis=0) for c in range(way)], axis=1)
    protos /= np.linalg.norm(protos, axis=0, keepdims=True)
    return config.head_scale * protos, np.zeros(way)


def finetune_episode(params, support_x, support_y, way, objective, config, seed):
    """Fine-tune a copy of ``params`` on an episode's support set.

    The pretrained head is replaced by a fresh ``way``-class head (see
    :func:`episode_head`).
    Every step uses the full support set with two fresh views per sample.
    """
    rng = np.random.default_rng(seed)
    tuned = params.with_head(*episode_head(params, support_x, support_y, way, config)).copy()
    state = init_adam(tuned, config.learning_rate, config.weight_decay)
    for _ in range(config.steps):
        tuned, state, _, _ = train_step(tuned, state, support_x, support_y, objective, config.augment, rng)
    return tuned


def save_checkpoint(path, params, state=None, seed=0, epoch=0, extra=None):
    """Write a JSON checkpoint. Floats are stored with ``repr`` precision, so reloads are exact."""

    def pack(arrays):
        return {k: {"shape": list(a.shape), "data": a.ravel().tolist()} for k, a in arrays}

    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "seed": seed,
        "epoch": epoch,
        "dropout_rate": params.dropout_rate,
        "output_relu": params.output_relu,
        "params": pack(params.named()),
        "adam": None,
        "extra": extra or {},
    }
    if state is not None:
        doc["adam"] = {
            "step": state.step,
            "learning_rate": state.learning_rate,
            "weight_decay": state.weight_decay,
            "beta1": state.beta1,
            "beta2": state.beta2,
            "eps": state.eps,
            "m": pack(state.m.items()),
            "v": pack(state.v.items()),
        }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_checkpoint(path):
    """Returns ``(params, state_or_None, meta)`` where meta has seed, epoch and extra."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"{path}: not a checkpoint file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {doc.get('version')}")

    def unpack(d):
        return {k: np.array(e["data"], dtype=np.float64).reshape(e["shape"]) for k, e in d.items()}

    params = EncoderParams.from_named(unpack(doc["params"]), doc["dropout_rate"], doc["output_relu"])
    state = None
    if doc["adam"] is not None:
        a = doc["adam"]
        state = AdamState(
            unpack(a["m"]), unpack(a["v"]), a["step"], a["learning_rate"], a["weight_decay"],
            a["beta1"], a["beta2"], a["eps"],
        )
    meta = {"seed": doc["seed"], "epoch": doc["epoch"], "extra": doc["extra"]}
    return params, state, meta
