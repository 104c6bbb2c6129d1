"""Command line: ``schane {generate,pretrain,fewshot,sweep-lambda,ablation,analyze}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
Every command writes ``<command>-manifest.json`` into ``--out``; passing that
file back through ``--config`` re-runs the command with the same settings.
"""

import argparse
import csv
import json
import logging
import os
import platform
import sys
import time

import numpy as np

from . import __version__, experiments
from .config import MANIFEST_VERSION, PRESETS, build_config
from .data import save_csv
from .errors import (
    ConfigError,
    CountMismatch,
    EmptyDataset,
    FormatError,
    InsufficientClasses,
    InsufficientSamples,
    LabelError,
    NonFiniteError,
    SchaneError,
)
from .framework import load_checkpoint, save_checkpoint

log = logging.getLogger("schane")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
CSV_SCHEMA_VERSION = 1
FEWSHOT_HEADER = ["objective", "lambda", "tau", "way", "shot", "query_shot", "mean", "median", "ci", "episodes", "seed"]
ABLATION_HEADER = FEWSHOT_HEADER + ["diff_vs_ce", "diff_ci"]
EPISODE_HEADER = ["key", "episode", "accuracy"]
TRACE_HEADER = ["epoch", "loss", "val_accuracy", "guarded_rows"]
PROJECTION_HEADER = ["sample_id", "x", "y", "label"]
HISTOGRAM_HEADER = ["bin_lo", "bin_hi", "positive", "negative"]
CI_MISSING = "NA"

_DATA_ERRORS = (FormatError, EmptyDataset, CountMismatch, InsufficientSamples, InsufficientClasses, LabelError, OSError)


def _cell(value):
    if value is None:
        return CI_MISSING
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return value


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(row[k]) for k in header])


def _episode_rows(per_episode):
    return [
        {"key": key, "episode": i, "accuracy": float(acc)}
        for key, accs in per_episode.items()
        for i, acc in enumerate(accs)
    ]


def _fmt(x):
    return CI_MISSING if x is None else f"{x:.6g}"


class Run:
    """Bookkeeping for one command invocation: output dir, timings, manifest."""

    def __init__(self, command, cfg):
        self.command = command
        self.cfg = cfg
        self.timings = {}
        self.metrics = {}
        self.outputs = {}
        self._t0 = time.perf_counter()
        try:
            os.makedirs(cfg.out, exist_ok=True)
        except OSError as exc:
            raise OSError(f"cannot create output directory {cfg.out}: {exc}") from exc

    def path(self, name):
        return os.path.join(self.cfg.out, name)

    def output(self, key, name):
        self.outputs[key] = self.path(name)
        return self.outputs[key]

    def timed(self, phase, fn, *args, **kwargs):
        t = time.perf_counter()
        result = fn(*args, **kwargs)
        self.timings[phase] = time.perf_counter() - t
        return result

    def finish(self, extra=None):
        self.timings["total"] = time.perf_counter() - self._t0
        manifest = {
            "manifest_version": MANIFEST_VERSION,
            "tool": "schane",
            "tool_version": __version__,
            "csv_schema_version": CSV_SCHEMA_VERSION,
            "command": self.command,
            "argv": sys.argv[1:],
            "python": platform.python_version(),
            "numpy": np.__version__,
            "config": self.cfg.to_dict(),
            "seeds": {
                "data": self.cfg.synthetic.get("seed") if self.cfg.source == "synthetic" else None,
                "split": self.cfg.seed,
                "train": self.cfg.seed,
                "episodes": self.cfg.seed,
            },
            "timings": self.timings,
            "metrics": self.metrics,
            "outputs": self.outputs,
        }
        if extra:
            manifest.update(extra)
        path = self.output("manifest", f"{self.command}-manifest.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2)
        return manifest


def cmd_generate(cfg):
    if cfg.source != "synthetic":
        raise ConfigError("generate needs source 'synthetic'", field="source")
    run = Run("generate", cfg)
    ds = experiments.load_dataset(cfg)
    save_csv(ds, run.output("dataset", "dataset.csv"))
    with open(run.output("spec", "synthetic-spec.json"), "w", encoding="utf-8") as fh:
        json.dump(cfg.synthetic, fh, indent=2)
    run.metrics = {"classes": ds.class_count, "samples": len(ds), "feature_dim": ds.feature_dim,
                   "fingerprint": ds.fingerprint()}
    print(f"wrote {len(ds)} samples, {ds.class_count} classes, dim {ds.feature_dim} -> {run.outputs['dataset']}")
    return run.finish()


def cmd_pretrain(cfg, resume=None):
    run = Run("pretrain", cfg)
    splits = run.timed("data", experiments.prepare_splits, cfg)
    params = state = None
    start = 0
    if resume:
        params, state, meta = load_checkpoint(resume)
        start = meta["epoch"]
        log.info("resuming from %s at epoch %d", resume, start)
    params, state, trace = run.timed("train", experiments.pretrain, cfg, splits, params, state, start)
    epochs = range(start, cfg.epochs)
    write_csv(run.output("trace", "pretrain-trace.csv"), TRACE_HEADER, [
        {"epoch": e, "loss": l, "val_accuracy": a, "guarded_rows": g}
        for e, l, a, g in zip(epochs, trace.loss, trace.val_accuracy, trace.guarded_rows)
    ])
    ckpt = run.output("checkpoint", "checkpoint.json")
    save_checkpoint(ckpt, params, state, seed=cfg.seed, epoch=cfg.epochs, extra={
        "objective": cfg.pretrain_objective,
        "dataset_fingerprint": splits["full"].fingerprint(),
        "base_classes": splits["base"].class_ids.tolist(),
    })
    run.metrics = {
        "final_loss": trace.loss[-1] if trace.loss else None,
        "final_val_accuracy": trace.val_accuracy[-1] if trace.val_accuracy else None,
        "loss": trace.loss,
        "val_accuracy": trace.val_accuracy,
        "guarded_rows": int(sum(trace.guarded_rows)),
    }
    for e, l, a in zip(epochs, trace.loss, trace.val_accuracy):
        log.info("epoch %d loss %.6g val_acc %.6g", e, l, a)
    print(f"pretrained {cfg.pretrain_objective} for {cfg.epochs} epochs; "
          f"val accuracy {_fmt(run.metrics['final_val_accuracy'])} -> {ckpt}")
    return run.finish({"resumed_from": resume})


def _checkpoint_and_novel(run):
    cfg = run.cfg
    if not cfg.checkpoint:
        raise ConfigError(f"{run.command} needs a checkpoint", field="checkpoint")
    params, meta = experiments.load_params(cfg.checkpoint)
    splits = run.timed("data", experiments.prepare_splits, cfg)
    fp = meta["extra"].get("dataset_fingerprint")
    if fp and fp != splits["full"].fingerprint():
        log.warning("checkpoint was trained on a different dataset (fingerprint %s)", fp)
    return params, splits


def _report(rows, keys):
    for row in rows:
        print("  ".join(f"{k}={_fmt(row[k]) if isinstance(row[k], float) or row[k] is None else row[k]}" for k in keys))


def cmd_fewshot(cfg):
    run = Run("fewshot", cfg)
    params, splits = _checkpoint_and_novel(run)
    rows, per_episode = run.timed("evaluate", experiments.run_fewshot, cfg, params, splits["novel"])
    write_csv(run.output("metrics", "fewshot.csv"), FEWSHOT_HEADER, rows)
    write_csv(run.output("episodes", "fewshot-episodes.csv"), EPISODE_HEADER, _episode_rows(per_episode))
    run.metrics = {"rows": rows}
    _report(rows, ["objective", "mean", "median", "ci"])
    return run.finish()


def cmd_sweep_lambda(cfg):
    run = Run("sweep-lambda", cfg)
    params, splits = _checkpoint_and_novel(run)
    rows, per_episode = run.timed("evaluate", experiments.sweep_lambda, cfg, params, splits["novel"])
    write_csv(run.output("metrics", "sweep-lambda.csv"), FEWSHOT_HEADER, rows)
    write_csv(run.output("episodes", "sweep-lambda-episodes.csv"), EPISODE_HEADER, _episode_rows(per_episode))
    best = max(rows, key=lambda r: r["mean"])
    run.metrics = {"rows": rows, "best_lambda": best["lambda"]}
    _report(rows, ["lambda", "mean", "median", "ci"])
    return run.finish()


def cmd_ablation(cfg):
    run = Run("ablation", cfg)
    params, splits = _checkpoint_and_novel(run)
    rows, per_episode = run.timed("evaluate", experiments.ablation, cfg, params, splits["novel"])
    write_csv(run.output("metrics", "ablation.csv"), ABLATION_HEADER, rows)
    write_csv(run.output("episodes", "ablation-episodes.csv"), EPISODE_HEADER, _episode_rows(per_episode))
    run.metrics = {"rows": rows}
    _report(rows, ["objective", "mean", "ci", "diff_vs_ce", "diff_ci"])
    return run.finish()


def cmd_analyze(cfg):
    run = Run("analyze", cfg)
    params, splits = _checkpoint_and_novel(run)
    summary, pair, projection = run.timed("analyze", experiments.analyze, cfg, params, splits["test"])
    with open(run.output("summary", "analysis.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    write_csv(run.output("histogram", "cosine-histogram.csv"), HISTOGRAM_HEADER, [
        {"bin_lo": lo, "bin_hi": hi, "positive": p, "negative": n}
        for lo, hi, p, n in zip(pair.edges[:-1], pair.edges[1:], pair.positive, pair.negative)
    ])
    write_csv(run.output("projection", "projection.csv"), PROJECTION_HEADER, projection)
    run.metrics = summary
    print(f"isotropy {_fmt(summary['isotropy_score'])}  overlap {_fmt(summary['cosine_overlap'])}  "
          f"mean overlap {_fmt(summary['mean_overlap_all_pairs'])}  samples {summary['samples']}")
    return run.finish()


COMMANDS = {
    "generate": cmd_generate,
    "pretrain": cmd_pretrain,
    "fewshot": cmd_fewshot,
    "sweep-lambda": cmd_sweep_lambda,
    "ablation": cmd_ablation,
    "analyze": cmd_analyze,
}


def _parse_set(text):
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    try:
        return key, json.loads(value)
    except json.JSONDecodeError:
        return key, value


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--config", metavar="PATH", help="JSON config file or a run manifest")
    g.add_argument("--preset", choices=sorted(PRESETS))
    g.add_argument("--seed", type=int)
    g.add_argument("--out", metavar="DIR")
    g.add_argument("--threads", type=int)
    g.add_argument("--set", dest="sets", action="append", default=[], type=_parse_set, metavar="KEY=VALUE",
                   help="override any config key (value parsed as JSON when possible)")
    g.add_argument("--log-level", default="WARNING")

    o = common.add_argument_group("experiment options")
    o.add_argument("--checkpoint", metavar="PATH")
    o.add_argument("--objective")
    o.add_argument("--pretrain-objective")
    o.add_argument("--tau", type=float)
    o.add_argument("--lambda", dest="lam", type=float)
    o.add_argument("--lambda-grid", type=lambda s: [float(v) for v in s.split(",")])
    o.add_argument("--epochs", type=int)
    o.add_argument("--episodes", type=int)
    o.add_argument("--way", type=int)
    o.add_argument("--shot", type=int)
    o.add_argument("--csv", dest="csv_path", metavar="PATH")

    parser = argparse.ArgumentParser(prog="schane", description="Contrastive fine-tuning with hard-negative weighting for few-shot classification.")
    parser.add_argument("--version", action="version", version=f"schane {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "pretrain":
            p.add_argument("--resume", metavar="CHECKPOINT")
    return parser


_FLAG_KEYS = ("seed", "out", "threads", "checkpoint", "objective", "pretrain_objective", "tau", "lam",
              "lambda_grid", "epochs", "episodes", "way", "shot", "csv_path")


def config_from_args(args):
    overrides = dict(args.sets)
    for key in _FLAG_KEYS:
        value = getattr(args, key)
        if value is not None:
            overrides["lambda" if key == "lam" else key] = value
    if args.csv_path is not None:
        overrides.setdefault("source", "csv")
    return build_config(args.preset, args.config, overrides)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        if args.command == "pretrain":
            cmd_pretrain(cfg, resume=args.resume)
        else:
            COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SchaneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
