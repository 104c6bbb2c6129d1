"""Pretrain on base classes, then compare fine-tuning objectives on novel-class episodes.

A shortened version of `schane ablation --preset synthetic-fewshot`; pass an
episode count to change the length (default 40).

Run: python3 demos/fewshot_ablation.py [episodes]
"""

import sys
import time

from schane import experiments
from schane.config import build_config

episodes = int(sys.argv[1]) if len(sys.argv) > 1 else 40
cfg = build_config(preset="synthetic-fewshot", overrides={"episodes": episodes})

t0 = time.perf_counter()
splits = experiments.prepare_splits(cfg)
print(f"{splits['base'].class_count} base classes, {splits['novel'].class_count} novel classes")

params, _, trace = experiments.pretrain(cfg, splits)
print(f"CE pretraining: final loss {trace.loss[-1]:.4f}, base validation accuracy {trace.val_accuracy[-1]:.3f}")

rows, per_episode = experiments.ablation(cfg, params, splits["novel"])
print(f"\n{cfg.way}-way {cfg.shot}-shot, {episodes} paired episodes (tau={cfg.tau}, lambda={cfg.lam})")
for row in rows:
    ci = "n/a" if row["ci"] is None else f"{row['ci']:.4f}"
    diff_ci = "n/a" if row["diff_ci"] is None else f"{row['diff_ci']:.4f}"
    print(f"  {row['objective']:10s} mean {row['mean']:.4f} +/- {ci}   vs CE {row['diff_vs_ce']:+.4f} +/- {diff_ci}")

# 1-shot support sets hold a single sample per class, so the supervised loss
# sees the same positives as SimCLR
same = (per_episode["CE+SupCon"] == per_episode["CE+SimCLR"]).all()
print(f"\nCE+SupCon and CE+SimCLR identical on every episode: {same}")
print(f"{time.perf_counter() - t0:.1f} s")
