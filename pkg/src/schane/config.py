"""Run configuration: JSON schema, presets, validation and conversion to library configs.

Precedence, lowest first: built-in defaults, ``--preset``, ``--config`` file,
command-line flags. Unknown keys are rejected everywhere.
"""

import copy
import json
from dataclasses import asdict, dataclass, field, fields

from .data import SyntheticSpec
from .errors import ConfigError
from .framework import AugmentPolicy, FinetuneConfig, TrainConfig
from .objectives import KINDS, REDUCTIONS, ObjectiveConfig

MANIFEST_VERSION = 1
PAPER_LAMBDA_GRID = (0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0)
SOURCES = ("synthetic", "csv", "idx")

# JSON key -> attribute name where they differ
_ALIASES = {"lambda": "lam"}


@dataclass
class RunConfig:
    source: str = "synthetic"
    synthetic: dict = field(default_factory=lambda: asdict(SyntheticSpec()))
    csv_path: str = None
    idx_images: str = None
    idx_labels: str = None
    fractions: list = field(default_factory=lambda: [0.8, 0.1, 0.1])
    base_fraction: float = 0.5

    pretrain_objective: str = "ce"
    objective: str = "combined"
    tau: float = 0.5
    lam: float = 0.9
    stop_grad_beta: bool = False
    reduction: str = "mean_log"

    epochs: int = 30
    batch_size: int = 128
    learning_rate: float = 1e-3
    weight_decay: float = 0.05
    dropout: float = 0.1
    hidden: list = field(default_factory=lambda: [128])
    embed_dim: int = 64
    output_relu: bool = True
    augment: dict = field(
        default_factory=lambda: {"noise_sigma": 0.5, "scale_jitter": [0.8, 1.2], "mask_fraction": 0.1}
    )

    way: int = 5
    shot: int = 1
    query_shot: int = 15
    episodes: int = 200
    finetune_steps: int = 20
    finetune_lr: float = 1e-2
    finetune_weight_decay: float = 0.05
    head_init: str = "zero"
    lambda_grid: list = field(default_factory=lambda: list(PAPER_LAMBDA_GRID))

    checkpoint: str = None
    analyze_classes: list = field(default_factory=lambda: [0, 1])
    bins: int = 40
    max_pairs: int = None

    seed: int = 0
    out: str = "runs/default"
    threads: int = 1

    def to_dict(self):
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    def validate(self):
        if self.source not in SOURCES:
            raise ConfigError(f"expected one of {SOURCES}, got {self.source!r}", field="source")
        if self.source == "csv" and not self.csv_path:
            raise ConfigError("source 'csv' needs csv_path", field="csv_path")
        if self.source == "idx" and not (self.idx_images and self.idx_labels):
            raise ConfigError("source 'idx' needs idx_images and idx_labels", field="idx_images")
        self.synthetic_spec()
        if len(self.fractions) != 3 or any(f <= 0 for f in self.fractions) or abs(sum(self.fractions) - 1) > 1e-9:
            raise ConfigError(f"need three positive fractions summing to 1, got {self.fractions}", field="fractions")
        if not 0 < self.base_fraction < 1:
            raise ConfigError("must lie in (0, 1)", field="base_fraction")
        for key in ("pretrain_objective",):
            if getattr(self, key) not in KINDS:
                raise ConfigError(f"expected one of {KINDS}", field=key)
        if self.objective not in KINDS + ("all",):
            raise ConfigError(f"expected one of {KINDS + ('all',)}", field="objective")
        if self.reduction not in REDUCTIONS:
            raise ConfigError(f"expected one of {REDUCTIONS}", field="reduction")
        self.objective_config("ce")
        for key in ("epochs",):
            if getattr(self, key) < 0:
                raise ConfigError("must be >= 0", field=key)
        for key in ("batch_size", "embed_dim", "way", "shot", "episodes", "bins", "threads"):
            if getattr(self, key) < 1:
                raise ConfigError("must be >= 1", field=key)
        if self.query_shot < 1:
            raise ConfigError("must be >= 1", field="query_shot")
        if self.finetune_steps < 0:
            raise ConfigError("must be >= 0", field="finetune_steps")
        for key in ("learning_rate", "finetune_lr"):
            if not getattr(self, key) > 0:
                raise ConfigError("must be > 0", field=key)
        if any(not 0 <= v <= 1 for v in self.lambda_grid) or not self.lambda_grid:
            raise ConfigError("values must lie in [0, 1]", field="lambda_grid")
        if len(self.analyze_classes) != 2 or self.analyze_classes[0] == self.analyze_classes[1]:
            raise ConfigError("need two distinct class ids", field="analyze_classes")
        self.train_config()
        self.finetune_config()
        return self

    def synthetic_spec(self):
        unknown = set(self.synthetic) - {f.name for f in fields(SyntheticSpec)}
        if unknown:
            raise ConfigError(f"unknown synthetic keys {sorted(unknown)}", field="synthetic." + sorted(unknown)[0])
        try:
            return SyntheticSpec(**self.synthetic)
        except ConfigError as exc:
            raise ConfigError(str(exc), field="synthetic." + (exc.field or "")) from None

    def augment_policy(self):
        unknown = set(self.augment) - {f.name for f in fields(AugmentPolicy)}
        if unknown:
            raise ConfigError(f"unknown augment keys {sorted(unknown)}", field="augment." + sorted(unknown)[0])
        a = dict(self.augment)
        if "scale_jitter" in a:
            a["scale_jitter"] = tuple(a["scale_jitter"])
        return AugmentPolicy(**a)

    def objective_config(self, kind=None, lam=None):
        return ObjectiveConfig(
            kind=kind or self.objective,
            tau=self.tau,
            lam=self.lam if lam is None else lam,
            stop_grad_beta=self.stop_grad_beta,
            reduction=self.reduction,
        )

    def train_config(self):
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            hidden=tuple(self.hidden),
            embed_dim=self.embed_dim,
            dropout=self.dropout,
            output_relu=self.output_relu,
            augment=self.augment_policy(),
        )

    def finetune_config(self):
        return FinetuneConfig(
            steps=self.finetune_steps,
            learning_rate=self.finetune_lr,
            weight_decay=self.finetune_weight_decay,
            augment=self.augment_policy(),
            head_init=self.head_init,
        )


PRESETS = {
    # pins every value the desk-scale acceptance checks rely on
    "synthetic-fewshot": RunConfig().to_dict(),
}


def _attr(key):
    return _ALIASES.get(key, key)


def apply_overrides(cfg, overrides, origin):
    names = {f.name for f in fields(RunConfig)}
    for key, value in overrides.items():
        attr = _attr(key)
        if attr not in names or key == "lam":
            raise ConfigError(f"unknown config key {key!r} in {origin}", field=key)
        if attr in ("synthetic", "augment") and isinstance(value, dict):
            merged = dict(getattr(cfg, attr))
            merged.update(value)
            value = merged
        setattr(cfg, attr, copy.deepcopy(value))
    return cfg


def read_config_file(path):
    """Load a config JSON, or the ``config`` section of a run manifest."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})", field="config") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a JSON object", field="config")
    if "manifest_version" in doc:
        return doc["config"]
    return doc


def build_config(preset=None, config_path=None, overrides=None):
    cfg = RunConfig()
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; have {sorted(PRESETS)}", field="preset")
        apply_overrides(cfg, PRESETS[preset], f"preset {preset}")
    if config_path is not None:
        apply_overrides(cfg, read_config_file(config_path), config_path)
    if overrides:
        apply_overrides(cfg, overrides, "command line")
    return cfg.validate()
