"""End-to-end experiment pipeline shared by the command line and the demo scripts.

Every function takes a validated :class:`~schane.config.RunConfig` and returns
plain Python data (dicts / lists of rows) so callers decide how to persist it.
"""

import logging

import numpy as np

from .data import generate_synthetic, load_csv, load_idx, split, split_classes
from .framework import encode, load_checkpoint, predict, train
from .metrics import cosine_stats, evaluate_fewshot, isotropy_score, mean_ci, top1_accuracy
from .numerics import pca_project

log = logging.getLogger(__name__)

ABLATION = (("CE", "ce"), ("CE+SimCLR", "simclr"), ("CE+SupCon", "supcon"), ("CE+SCHaNe", "schane"))
ALL_OBJECTIVES = ("ce", "simclr", "supcon", "schane")


def load_dataset(cfg):
    if cfg.source == "synthetic":
        return generate_synthetic(cfg.synthetic_spec())
    if cfg.source == "csv":
        return load_csv(cfg.csv_path)
    return load_idx(cfg.idx_images, cfg.idx_labels)


def prepare_splits(cfg, ds=None):
    """Class split into base/novel, then a stratified train/val/test split of the base classes."""
    ds = ds if ds is not None else load_dataset(cfg)
    base, novel = split_classes(ds, cfg.base_fraction, seed=cfg.seed)
    train_ds, val_ds, test_ds = split(base, cfg.fractions, seed=cfg.seed)
    return {"full": ds, "base": base, "novel": novel, "train": train_ds, "val": val_ds, "test": test_ds}


def pretrain(cfg, splits, params=None, state=None, start_epoch=0):
    objective = cfg.objective_config(cfg.pretrain_objective)
    return train(
        cfg.train_config(), splits["train"], objective, seed=cfg.seed, val=splits["val"],
        params=params, state=state, start_epoch=start_epoch,
    )


def fewshot_row(cfg, label, objective, summary):
    return {
        "objective": label,
        "lambda": objective.lam if objective.kind != "ce" else 0.0,
        "tau": objective.tau,
        "way": cfg.way,
        "shot": cfg.shot,
        "query_shot": cfg.query_shot,
        "mean": summary.mean,
        "median": summary.median,
        "ci": summary.halfwidth,
        "episodes": cfg.episodes,
        "seed": cfg.seed,
    }


def _evaluate(cfg, params, novel, objective):
    return evaluate_fewshot(
        params, novel, cfg.way, cfg.shot, cfg.episodes, objective,
        seed=cfg.seed, query_shot=cfg.query_shot, finetune=cfg.finetune_config(), threads=cfg.threads,
    )


def run_fewshot(cfg, params, novel):
    """Returns ``(rows, per_episode)``; ``objective="all"`` evaluates CE and the three contrastive mixes."""
    kinds = ALL_OBJECTIVES if cfg.objective == "all" else (cfg.objective,)
    rows, per_episode = [], {}
    for kind in kinds:
        obj = cfg.objective_config(kind)
        summary = _evaluate(cfg, params, novel, obj)
        rows.append(fewshot_row(cfg, kind, obj, summary))
        per_episode[kind] = summary.accuracies
    return rows, per_episode


def sweep_lambda(cfg, params, novel):
    """Accuracy at every lambda in the grid; episode i is the same task for every lambda."""
    kind = "schane" if cfg.objective in ("all", "ce", "combined") else cfg.objective
    rows, per_episode = [], {}
    for lam in cfg.lambda_grid:
        obj = cfg.objective_config(kind, lam=lam)
        summary = _evaluate(cfg, params, novel, obj)
        rows.append(fewshot_row(cfg, kind, obj, summary))
        per_episode[lam] = summary.accuracies
    return rows, per_episode


def paired_difference(a, b):
    """Mean of a - b over paired episodes with its 95% half-width (None below 2 episodes)."""
    d = np.asarray(a) - np.asarray(b)
    if d.size < 2:
        return float(d.mean()), None
    return mean_ci(d)


def ablation(cfg, params, novel):
    rows, per_episode = [], {}
    for label, kind in ABLATION:
        obj = cfg.objective_config(kind)
        summary = _evaluate(cfg, params, novel, obj)
        per_episode[label] = summary.accuracies
        diff, diff_ci = paired_difference(summary.accuracies, per_episode["CE"])
        row = fewshot_row(cfg, label, obj, summary)
        row.update(diff_vs_ce=diff, diff_ci=diff_ci)
        rows.append(row)
    return rows, per_episode


def analyze(cfg, params, test):
    """Isotropy, cosine separation and a 2-D PCA dump for ``test`` embeddings."""
    emb, _ = encode(params, test.features)
    a, b = cfg.analyze_classes
    pair = cosine_stats(emb, test.labels, a, b, bins=cfg.bins, max_pairs=cfg.max_pairs, seed=cfg.seed)
    overlaps = [
        cosine_stats(emb, test.labels, i, j, bins=cfg.bins).overlap
        for i in range(test.class_count)
        for j in range(i + 1, test.class_count)
    ]
    proj = pca_project(emb, 2)
    summary = {
        "isotropy_score": isotropy_score(emb),
        "cosine_pair": [a, b],
        "cosine_overlap": pair.overlap,
        "positive_mean": pair.positive_mean,
        "negative_mean": pair.negative_mean,
        "mean_overlap_all_pairs": float(np.mean(overlaps)),
        "test_accuracy": top1_accuracy(predict(params, test.features), test.labels),
        "zero_rows": int(np.count_nonzero(~np.any(emb, axis=1))),
        "samples": len(test),
    }
    projection = [
        {"sample_id": i, "x": float(x), "y": float(y), "label": int(test.labels[i])}
        for i, (x, y) in enumerate(proj)
    ]
    return summary, pair, projection


def load_params(path):
    params, _, meta = load_checkpoint(path)
    return params, meta
