"""Isotropy and positive/negative cosine overlap of CE versus SCHaNe-trained embeddings.

Run: python3 demos/embedding_geometry.py
"""

from schane import experiments
from schane.config import build_config

base = build_config(preset="synthetic-fewshot")
splits = experiments.prepare_splits(base)

summaries = {}
for label, objective in [("CE", "ce"), ("CE+SCHaNe", "combined")]:
    cfg = build_config(preset="synthetic-fewshot", overrides={"pretrain_objective": objective})
    params, _, _ = experiments.pretrain(cfg, splits)
    summary, pair, projection = experiments.analyze(cfg, params, splits["test"])
    summaries[label] = summary
    print(f"{label}")
    print(f"  isotropy score       {summary['isotropy_score']:.4f}")
    print(f"  classes {pair.n_positive} positive / {pair.n_negative} negative pairs")
    print(f"  mean cos  positive {pair.positive_mean:+.4f}  negative {pair.negative_mean:+.4f}")
    print(f"  histogram overlap    {pair.overlap:.4f}  (all class pairs: {summary['mean_overlap_all_pairs']:.4f})")
    print(f"  test accuracy        {summary['test_accuracy']:.4f}")
    print(f"  first PCA points     {[(round(p['x'], 3), round(p['y'], 3)) for p in projection[:3]]}")

gain = summaries["CE+SCHaNe"]["isotropy_score"] - summaries["CE"]["isotropy_score"]
print(f"\nisotropy gain from the contrastive term: {gain:+.4f}")
