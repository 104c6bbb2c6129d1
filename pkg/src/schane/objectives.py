"""Loss functions with analytic gradients.

Every loss returns a :class:`LossResult` holding the scalar value and the
exact gradient with respect to its inputs (embeddings and/or logits), so the
encoder can be trained without an autodiff framework.

Contrastive losses work on the similarity matrix ``S = Z Z^T / tau``. Each
computes ``dL/dS`` row by row (one row per anchor) and maps it back with
``dL/dZ = (G + G^T) Z / tau``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, LabelError, NoNegatives, ShapeError, ViewPairingError
from .numerics import logsumexp_rows, softmax_rows

KINDS = ("ce", "simclr", "supcon", "schane", "combined")
REDUCTIONS = ("mean_log", "log_mean")


@dataclass(frozen=True, eq=False)
class EmbeddingBatch:
    """Two views per original sample, one row per view.

    ``view_of[r]`` names the original sample row ``r`` came from. Pass
    ``check=False`` to skip the unit-norm test (finite-difference probes
    perturb rows off the sphere).
    """

    embeddings: np.ndarray
    labels: np.ndarray
    view_of: np.ndarray
    check: bool = True

    def __post_init__(self):
        z = np.asarray(self.embeddings, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        view_of = np.asarray(self.view_of, dtype=np.int64)
        if z.ndim != 2 or labels.shape != (z.shape[0],) or view_of.shape != (z.shape[0],):
            raise ShapeError("embeddings, labels and view_of disagree on row count")
        if self.check:
            norms = np.linalg.norm(z, axis=1)
            if np.max(np.abs(norms - 1.0)) > 1e-9:
                raise ShapeError("embedding rows must be unit-norm")
        ids = np.sort(view_of)
        if ids.size % 2 or np.any(ids[0::2] != ids[1::2]) or np.any(ids[2::2] == ids[1:-1:2]):
            raise ViewPairingError("every original sample needs exactly two views")
        object.__setattr__(self, "embeddings", z)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "view_of", view_of)

    def __len__(self):
        return self.embeddings.shape[0]

    @classmethod
    def from_views(cls, z1, z2, labels, check=True):
        """Stack two aligned view matrices (row i of each is sample i)."""
        labels = np.asarray(labels)
        n = labels.shape[0]
        return cls(
            np.vstack([z1, z2]),
            np.concatenate([labels, labels]),
            np.concatenate([np.arange(n), np.arange(n)]),
            check=check,
        )

    def sibling(self):
        """Row index of each row's other view."""
        order = np.argsort(self.view_of, kind="stable")
        sib = np.empty_like(order)
        sib[order[0::2]] = order[1::2]
        sib[order[1::2]] = order[0::2]
        return sib


@dataclass(frozen=True)
class ObjectiveConfig:
    """Loss selector and hyperparameters.

    ``kind="ce"`` is plain cross-entropy. Any contrastive kind mixes in
    cross-entropy as ``(1 - lam) * CE + lam * contrastive``; ``"combined"``
    is an alias of ``"schane"``.
    """

    kind: str = "combined"
    tau: float = 0.5
    lam: float = 0.9
    stop_grad_beta: bool = False
    reduction: str = "mean_log"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown objective {self.kind!r}; expected one of {KINDS}", field="kind")
        if not self.tau > 0:
            raise ConfigError(f"must be > 0, got {self.tau}", field="tau")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"must lie in [0, 1], got {self.lam}", field="lambda")
        if self.reduction not in REDUCTIONS:
            raise ConfigError(f"expected one of {REDUCTIONS}", field="reduction")

    @property
    def contrastive(self):
        return "schane" if self.kind == "combined" else self.kind


@dataclass
class LossResult:
    value: float
    grad_embeddings: np.ndarray = None
    grad_logits: np.ndarray = None
    diagnostics: dict = field(default_factory=dict)


def cross_entropy(logits, labels):
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"{n} logit rows but {labels.shape[0]} labels")
    if np.any(labels < 0) or np.any(labels >= c):
        raise LabelError(f"labels must lie in [0, {c})")
    rows = np.arange(n)
    lse = logsumexp_rows(logits)
    value = float(np.mean(lse - logits[rows, labels]))
    grad = softmax_rows(logits)
    grad[rows, labels] -= 1.0
    return LossResult(value, grad_logits=grad / n)


def _masks(batch):
    same = batch.labels[:, None] == batch.labels[None, :]
    not_self = ~np.eye(len(batch), dtype=bool)
    return same & not_self, ~same


def beta_weights(batch, anchor, tau):
    """Hard-negative weights of ``anchor``'s negatives, in row order.

    The weights are a softmax over negative similarities scaled by the
    number of negatives, so they average to exactly 1.
    """
    z = batch.embeddings
    neg = np.flatnonzero(batch.labels != batch.labels[anchor])
    if neg.size == 0:
        raise NoNegatives(f"anchor {anchor} has no negatives (single-class batch)")
    sims = z[neg] @ z[anchor] / tau
    w = np.exp(sims - np.max(sims))
    return w * (neg.size / np.sum(w))


def masked_contrastive(z, pos, neg, tau, hard_negatives, stop_grad_beta=False, reduction="mean_log"):
    """Shared engine for SCHaNe / SupCon / SimCLR on explicit boolean masks.

    ``pos[i, k]`` / ``neg[i, k]`` mark row k as a positive / negative of anchor i.
    The batch-level losses build these masks from labels or view pairing; calling
    this directly allows positive/negative sets no two-view batch can produce.

    Per anchor i the denominator is ``sum_P e_ip + negterm_i`` where
    ``negterm_i = sum_N beta_k e_ik`` (hard) or ``sum_N e_ik`` (uniform).
    With ``beta_k = |N| e_ik / sum_N e`` the hard term is
    ``|N| * sum_N e^2 / sum_N e``, which is what gets evaluated in log space.
    """
    m = z.shape[0]
    pos, neg = np.asarray(pos, dtype=bool), np.asarray(neg, dtype=bool)
    if pos.shape != (m, m) or neg.shape != (m, m):
        raise ShapeError(f"masks must be {m}x{m}")
    if np.any(pos & neg) or np.any(np.diag(pos | neg)):
        raise ShapeError("a row cannot be both positive and negative, or pair with itself")
    n_pos = pos.sum(axis=1)
    n_neg = neg.sum(axis=1)
    if np.any(n_neg == 0):
        raise NoNegatives(f"anchor {int(np.argmax(n_neg == 0))} has no negatives (single-class batch)")
    if np.any(n_pos == 0):
        raise ViewPairingError(f"anchor {int(np.argmax(n_pos == 0))} has no positives")

    s = z @ z.T / tau
    lse_neg = logsumexp_rows(s, neg)
    if hard_negatives:
        lse_neg2 = logsumexp_rows(2.0 * s, neg)
        log_negterm = np.log(n_neg) + lse_neg2 - lse_neg
    else:
        log_negterm = lse_neg
    lse_pos = logsumexp_rows(s, pos)
    log_denom = np.logaddexp(lse_pos, log_negterm)

    if reduction == "mean_log":
        per_anchor = log_denom - np.where(pos, s, 0.0).sum(axis=1) / n_pos
        d_pos = -1.0 / n_pos[:, None]
    else:
        per_anchor = log_denom - (lse_pos - np.log(n_pos))
        d_pos = -np.exp(s - lse_pos[:, None])

    ds = np.where(pos, d_pos + np.exp(s - log_denom[:, None]), 0.0)
    neg_share = np.exp(log_negterm - log_denom)[:, None]
    r = np.exp(s - lse_neg[:, None])
    if hard_negatives:
        q = np.exp(2.0 * s - lse_neg2[:, None])
        d_neg = q if stop_grad_beta else 2.0 * q - r
    else:
        d_neg = r
    ds = ds + np.where(neg, neg_share * d_neg, 0.0)

    g = ds / m
    grad = (g + g.T) @ z / tau
    diagnostics = {"positives_per_anchor": n_pos, "negatives_per_anchor": n_neg, "per_anchor": per_anchor}
    if hard_negatives:
        beta = (r * n_neg[:, None])[neg]
        diagnostics.update(beta_min=float(beta.min()), beta_max=float(beta.max()), beta_mean=float(beta.mean()))
    return LossResult(float(np.mean(per_anchor)), grad_embeddings=grad, diagnostics=diagnostics)


def schane_loss(batch, tau, stop_grad_beta=False, reduction="mean_log"):
    pos, neg = _masks(batch)
    return masked_contrastive(batch.embeddings, pos, neg, tau, True, stop_grad_beta, reduction)


def supcon_loss(batch, tau, reduction="mean_log"):
    pos, neg = _masks(batch)
    return masked_contrastive(batch.embeddings, pos, neg, tau, False, reduction=reduction)


def simclr_loss(batch, tau):
    m = len(batch)
    if m < 4:
        raise ViewPairingError("SimCLR needs at least two samples (four views)")
    pos = np.zeros((m, m), dtype=bool)
    pos[np.arange(m), batch.sibling()] = True
    neg = ~pos & ~np.eye(m, dtype=bool)
    return masked_contrastive(batch.embeddings, pos, neg, tau, False)


def combined_loss(ce, con, lam):
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"must lie in [0, 1], got {lam}", field="lambda")
    grad_emb = lam * con.grad_embeddings
    if ce.grad_embeddings is not None:
        grad_emb = grad_emb + (1.0 - lam) * ce.grad_embeddings
    grad_logits = None if ce.grad_logits is None else (1.0 - lam) * ce.grad_logits
    diagnostics = dict(con.diagnostics)
    diagnostics.update(ce_value=ce.value, contrastive_value=con.value)
    return LossResult(
        (1.0 - lam) * ce.value + lam * con.value,
        grad_embeddings=grad_emb,
        grad_logits=grad_logits,
        diagnostics=diagnostics,
    )


def contrastive_loss(cfg, batch):
    kind = cfg.contrastive
    if kind == "schane":
        return schane_loss(batch, cfg.tau, cfg.stop_grad_beta, cfg.reduction)
    if kind == "supcon":
        return supcon_loss(batch, cfg.tau, cfg.reduction)
    if kind == "simclr":
        return simclr_loss(batch, cfg.tau)
    raise ConfigError(f"{kind!r} is not a contrastive objective", field="kind")


def objective_loss(cfg, batch, logits):
    """Total training loss for ``cfg`` on a two-view batch and its head logits.

    Cross-entropy always covers every view row (both views, averaged).
    """
    ce = cross_entropy(logits, batch.labels)
    if cfg.kind == "ce" or cfg.lam == 0.0:
        ce.grad_embeddings = np.zeros_like(batch.embeddings)
        ce.diagnostics["ce_value"] = ce.value
        return ce
    return combined_loss(ce, contrastive_loss(cfg, batch), cfg.lam)
