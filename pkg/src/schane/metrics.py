"""Accuracy, confidence intervals, embedding geometry (isotropy, cosine separation) and few-shot evaluation."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from .data import DEFAULT_QUERY_SHOT, sample_episode
from .errors import DegenerateInput, EmptyInput, InsufficientSamples, ShapeError
from .framework import FinetuneConfig, finetune_episode, predict
from .numerics import as_matrix, logsumexp_rows, normalize_rows, symmetric_eigen


def top1_accuracy(logits, labels):
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.size == 0 or labels.size == 0:
        raise EmptyInput("top1_accuracy of an empty batch")
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise ShapeError(f"logits {logits.shape} vs labels {labels.shape}")
    # np.argmax returns the first maximum, i.e. the lowest class index on ties
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def isotropy_directions(v):
    """Unit eigenvectors of V^T V, each oriented so it does not point away from the data mean."""
    _, vecs = symmetric_eigen(v.T @ v)
    proj = v.sum(axis=0) @ vecs
    flip = proj < -1e-12 * max(1.0, np.abs(proj).max())
    return np.where(flip, -vecs, vecs)


def isotropy_score(v):
    """min_c Z(c) / max_c Z(c) with Z(c) = sum_v exp(c . v) over the eigenvectors c of V^T V.

    Lies in (0, 1]; 1 means the cloud looks the same along every principal direction.
    """
    v = as_matrix(v)
    if v.shape[0] < 2 or v.shape[1] < 2:
        raise ShapeError("isotropy_score needs >= 2 rows and >= 2 dimensions")
    if not np.any(v):
        raise DegenerateInput("all embeddings are zero")
    dirs = isotropy_directions(v)
    log_z = logsumexp_rows((v @ dirs).T)
    return float(np.exp(np.min(log_z) - np.max(log_z)))


@dataclass
class CosineStats:
    edges: np.ndarray
    positive: np.ndarray
    negative: np.ndarray
    positive_mean: float
    negative_mean: float
    overlap: float
    n_positive: int
    n_negative: int

    def as_dict(self):
        return {
            "edges": self.edges.tolist(),
            "positive": self.positive.tolist(),
            "negative": self.negative.tolist(),
            "positive_mean": self.positive_mean,
            "negative_mean": self.negative_mean,
            "overlap": self.overlap,
            "n_positive": self.n_positive,
            "n_negative": self.n_negative,
        }


def _cap(values, max_pairs, rng):
    if max_pairs is None or values.size <= max_pairs:
        return values
    return values[np.sort(rng.choice(values.size, size=max_pairs, replace=False))]


def cosine_stats(embeddings, labels=None, class_a=0, class_b=1, bins=40, max_pairs=None, seed=0):
    """Histograms of intra-class (positive) and cross-class (negative) cosine similarity.

    ``embeddings`` may be an EmbeddingBatch, in which case its labels are used.
    Positive pairs are all unordered pairs inside class a and inside class b;
    negative pairs are every (a, b) combination. ``max_pairs`` optionally
    subsamples each side.
    """
    if labels is None:
        embeddings, labels = embeddings.embeddings, embeddings.labels
    z = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    if bins < 2:
        raise ShapeError("bins must be >= 2")
    za, zb = z[labels == class_a], z[labels == class_b]
    for name, part in ((class_a, za), (class_b, zb)):
        if part.shape[0] < 2:
            raise InsufficientSamples(f"class {name} has {part.shape[0]} samples, need >= 2")
    # all-zero rows (dead ReLU embeddings) stay zero and score cosine 0
    za = normalize_rows(za)[0]
    zb = normalize_rows(zb)[0]

    def upper(m):
        return m[np.triu_indices(m.shape[0], k=1)]

    rng = np.random.default_rng(seed)
    pos = np.concatenate([upper(za @ za.T), upper(zb @ zb.T)])
    neg = (za @ zb.T).ravel()
    pos = np.clip(_cap(pos, max_pairs, rng), -1.0, 1.0)
    neg = np.clip(_cap(neg, max_pairs, rng), -1.0, 1.0)
    edges = np.linspace(-1.0, 1.0, bins + 1)
    hp = np.histogram(pos, bins=edges)[0] / pos.size
    hn = np.histogram(neg, bins=edges)[0] / neg.size
    return CosineStats(
        edges, hp, hn, float(pos.mean()), float(neg.mean()), float(np.minimum(hp, hn).sum()), pos.size, neg.size
    )


def mean_ci(values, level=0.95):
    """Normal-approximation interval: returns (mean, z * s / sqrt(n))."""
    x = np.asarray(values, dtype=np.float64)
    if x.size < 2:
        raise InsufficientSamples("mean_ci needs at least 2 values")
    z = 1.96 if level == 0.95 else NormalDist().inv_cdf(0.5 + level / 2)
    return float(x.mean()), float(z * x.std(ddof=1) / np.sqrt(x.size))


@dataclass
class EpisodeResult:
    episode: int
    accuracy: float
    per_class: list


@dataclass
class FewShotSummary:
    mean: float
    halfwidth: float
    median: float
    episodes: list = field(default_factory=list)

    @property
    def accuracies(self):
        return np.array([e.accuracy for e in self.episodes])


def run_episode(params, dataset, way, shot, objective, episode, seed, query_shot, finetune):
    ep_seed = seed + episode
    ep = sample_episode(dataset, way, shot, query_shot, seed=ep_seed)
    tuned = finetune_episode(params, ep.support_x, ep.support_y, way, objective, finetune, seed=[ep_seed, 1])
    pred = np.argmax(predict(tuned, ep.query_x), axis=1)
    per_class = [float(np.mean(pred[ep.query_y == c] == c)) for c in range(way)]
    return EpisodeResult(episode, float(np.mean(pred == ep.query_y)), per_class)


def evaluate_fewshot(
    params,
    dataset,
    way,
    shot,
    episodes,
    objective,
    seed=0,
    query_shot=DEFAULT_QUERY_SHOT,
    finetune=None,
    threads=1,
):
    """Fine-tune on each episode's support set and score its query set.

    Episode ``i`` uses seed ``seed + i`` for both sampling and fine-tuning, so
    runs with different objectives see identical tasks and augmentations.
    ``halfwidth`` is None when fewer than two episodes were run.
    """
    finetune = finetune or FinetuneConfig()

    def one(i):
        return run_episode(params, dataset, way, shot, objective, i, seed, query_shot, finetune)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(episodes)))
    else:
        results = [one(i) for i in range(episodes)]
    acc = np.array([r.accuracy for r in results])
    if acc.size >= 2:
        mean, half = mean_ci(acc)
    else:
        mean, half = float(acc.mean()), None
    return FewShotSummary(mean, half, float(np.median(acc)), results)
