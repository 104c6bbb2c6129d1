"""Supervised contrastive learning with hard-negative weighting (SCHaNe) in numpy."""

__version__ = "0.1.0"

from .data import Dataset, Episode, SyntheticSpec, generate_synthetic, load_csv, load_idx, sample_episode, split, split_classes
from .framework import (
    AugmentPolicy,
    FinetuneConfig,
    TrainConfig,
    encode,
    finetune_episode,
    init_params,
    load_checkpoint,
    predict,
    save_checkpoint,
    train,
)
from .metrics import cosine_stats, evaluate_fewshot, isotropy_score, mean_ci, top1_accuracy
from .objectives import (
    EmbeddingBatch,
    ObjectiveConfig,
    beta_weights,
    combined_loss,
    cross_entropy,
    objective_loss,
    schane_loss,
    simclr_loss,
    supcon_loss,
)
