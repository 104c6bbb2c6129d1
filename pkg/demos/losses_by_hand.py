"""Hard-negative weighting on a batch small enough to check on paper.

Run: python3 demos/losses_by_hand.py
"""

import math

import numpy as np

from schane import EmbeddingBatch, beta_weights, schane_loss, simclr_loss, supcon_loss

TAU = 0.5

# Two classes, two samples each, two views per sample. The class-1 sample at
# index 2 sits close to the class-0 anchors, which makes it a hard negative.
angles = np.array([0.0, 0.2, 0.5, 2.0])
views = np.stack([np.cos(angles), np.sin(angles)], axis=1)
batch = EmbeddingBatch.from_views(views, views, labels=[0, 0, 1, 1])

print("cosine similarity of anchor 0 to every row:")
print(np.round(batch.embeddings @ batch.embeddings[0], 4))

beta = beta_weights(batch, anchor=0, tau=TAU)
negatives = np.flatnonzero(batch.labels != batch.labels[0])
for row, b in zip(negatives, beta):
    print(f"  negative row {row}: beta = {b:.4f}")
print(f"beta sums to {beta.sum():.12f} (number of negatives: {negatives.size})")

res = {name: fn(batch, TAU).value for name, fn in
       [("SCHaNe", schane_loss), ("SupCon", supcon_loss), ("SimCLR", simclr_loss)]}
for name, value in res.items():
    print(f"{name:7s} loss {value:.6f}")
# up-weighting the close negative can only make the denominator larger here
assert res["SCHaNe"] > res["SupCon"]

# With one sample per class, the only same-label row is the other view, so the
# supervised and self-supervised losses coincide. This is what a 1-shot episode
# looks like during fine-tuning.
one_shot = EmbeddingBatch.from_views(views, views[::-1].copy(), labels=[0, 1, 2, 3])
print("\none sample per class:")
print(f"  SupCon {supcon_loss(one_shot, TAU).value:.12f}")
print(f"  SimCLR {simclr_loss(one_shot, TAU).value:.12f}")

# ln(1 + e^-1): one positive at similarity 1, one negative at similarity 0, tau 1
print(f"\nreference single-anchor value ln(1 + 1/e) = {math.log(1 + math.exp(-1)):.6f}")
