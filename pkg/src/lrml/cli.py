"""Command-line pipeline: prepare, train, evaluate, analyze.

Every subcommand reads an optional JSON run config (``--config``); flags
override its values. Exit codes: 0 success, 1 internal error, 2 user or
configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import analysis, data, dispatch, optim, snapshot
from .errors import ConfigError, DataError, LRMLError
from .evaluation import OracleScorer, config_digest, evaluate

logger = logging.getLogger("lrml")


@dataclass
class RunConfig:
    dataset_path: Optional[str] = None
    dataset_format: str = "uirt-doublecolon"
    min_interactions: int = 20
    num_negatives: int = data.DEFAULT_NUM_NEGATIVES
    split_seed: int = 0
    output_dir: str = "runs"
    train: optim.TrainConfig = field(default_factory=optim.TrainConfig)

    @property
    def model_kind(self) -> str:
        return self.train.model_kind

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        train = d.pop("train", {}) or {}
        if "model_kind" in d:
            train = {**train, "model_kind": d.pop("model_kind")}
        known = {"dataset_path", "dataset_format", "min_interactions", "num_negatives",
                 "split_seed", "output_dir"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**d, train=optim.TrainConfig.from_dict(train))
        cfg.validate()
        return cfg

    def validate(self):
        if self.dataset_format not in data.FORMATS:
            raise ConfigError(f"dataset_format must be one of {sorted(data.FORMATS)}")
        if self.min_interactions < 1:
            raise ConfigError("min_interactions must be >= 1")
        if self.num_negatives < 1:
            raise ConfigError("num_negatives must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model_kind"] = self.model_kind
        return d


def _load_config(args) -> RunConfig:
    raw = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return RunConfig.from_dict(raw)


_TRAIN_FLAGS = {
    "model": "model_kind",
    "dim": "dim",
    "memory_slices": "num_slices",
    "margin": "margin",
    "lr": "learning_rate",
    "batches": "num_batches",
    "max_epochs": "max_epochs",
    "patience": "patience_epochs",
    "checkpoint_every": "checkpoint_every",
    "seed": "seed",
}


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    train = cfg.train.to_dict()
    for flag, name in _TRAIN_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            train[name] = value
    for flag, name in (("input", "dataset_path"), ("format", "dataset_format"),
                       ("min_interactions", "min_interactions"),
                       ("num_negatives", "num_negatives")):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(cfg, name, value)
    if getattr(args, "command", None) == "prepare" and args.seed is not None:
        cfg.split_seed = args.seed
    cfg.train = optim.TrainConfig.from_dict(train)
    cfg.validate()
    return cfg


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _require_file(path, what):
    if path is None:
        raise ConfigError(f"no {what} given")
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


# ---------------------------------------------------------------------------
# subcommands


def dataset_stats(ds, cfg: RunConfig) -> dict:
    return {
        "num_users": ds.num_users,
        "num_items": ds.num_items,
        "num_interactions": ds.num_interactions,
        "density": ds.density,
        "density_pct": 100.0 * ds.density,
        "ill_posedness_ratio": analysis.ill_posedness_ratio(ds),
        "min_interactions": cfg.min_interactions,
        "num_negatives": cfg.num_negatives,
        "split_seed": cfg.split_seed,
        "has_ratings": ds.has_ratings,
        "has_timestamps": ds.has_timestamps,
    }


def cmd_prepare(args) -> int:
    cfg = _apply_overrides(_load_config(args), args)
    src = _require_file(cfg.dataset_path, "input file")
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    events = data.load_events(src, cfg.dataset_format)
    ds = data.build_dataset(events, cfg.min_interactions)
    split = data.leave_one_out_split(ds, cfg.split_seed, cfg.num_negatives)
    snapshot.save_split(out / "split.snap", split)
    stats = dataset_stats(ds, cfg)
    stats["source"] = str(src)
    _write_json(out / "stats.json", stats)
    print(json.dumps(stats, sort_keys=True))
    return 0


def _latest_checkpoint(directory: Path) -> Optional[Path]:
    found = sorted(directory.glob("epoch_*.ckpt"))
    return found[-1] if found else None


def cmd_train(args) -> int:
    cfg = _apply_overrides(_load_config(args), args)
    split_path = _require_file(args.split, "split snapshot")
    run_dir = Path(args.out) if args.out else Path(cfg.output_dir) / cfg.model_kind
    ckpt_dir = run_dir / "checkpoints"
    stored = run_dir / "config.json"
    if args.resume and not args.config and stored.is_file():
        raw = json.loads(stored.read_text(encoding="utf-8"))
        raw.pop("split_path", None)
        cfg = _apply_overrides(RunConfig.from_dict(raw), args)

    resume = None
    if args.resume:
        latest = _latest_checkpoint(ckpt_dir)
        if latest is None:
            raise ConfigError(f"--resume given but no checkpoint in {ckpt_dir}")
        resume = optim.load_checkpoint(latest)
        logger.info("resuming from %s (epoch %d)", latest, resume.epoch)

    split = snapshot.load_split(split_path)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    resolved = cfg.to_dict()
    resolved["split_path"] = str(split_path)
    _write_json(run_dir / "config.json", resolved)

    log_path = run_dir / "train_log.csv"
    seen: List[optim.EpochLog] = list(resume.log) if resume else []

    def on_epoch(row):
        seen.append(row)
        optim.write_log_csv(log_path, seen)

    result = optim.train(split, cfg.train, checkpoint_dir=ckpt_dir, resume=resume, on_epoch=on_epoch)
    optim.write_log_csv(log_path, result.log)
    snapshot.save_params(run_dir / "best.snap", result.params,
                         extra_header={"epoch": result.best_epoch, "config_digest": config_digest(resolved)})
    snapshot.save_params(run_dir / "last.snap", result.last_params,
                         extra_header={"epoch": result.log[-1].epoch if result.log else 0})
    summary = {
        "model_kind": cfg.model_kind,
        "epochs_run": len(result.log),
        "best_epoch": result.best_epoch,
        "best_dev_ndcg10": result.best_dev_ndcg,
        "stopped_early": result.stopped_early,
    }
    _write_json(run_dir / "summary.json", summary)
    print(json.dumps(summary, sort_keys=True))
    return 0


def _run_digest(checkpoint: Path) -> str:
    cfg = checkpoint.parent / "config.json"
    if cfg.is_file():
        return config_digest(json.loads(cfg.read_text(encoding="utf-8")))
    header, _ = snapshot.read_container(checkpoint)
    return config_digest(header)


def cmd_evaluate(args) -> int:
    split = snapshot.load_split(_require_file(args.split, "split snapshot"))
    if args.oracle:
        model, kind, digest = OracleScorer(split, args.which), "oracle", ""
    else:
        ckpt = _require_file(args.checkpoint, "checkpoint")
        model = snapshot.load_params(ckpt)
        if (model.num_users, model.num_items) != (split.num_users, split.num_items):
            raise ConfigError(
                f"checkpoint has {model.num_users} users x {model.num_items} items, "
                f"split has {split.num_users} x {split.num_items}")
        kind, digest = model.kind, _run_digest(ckpt)
    report = evaluate(split, model, args.which, workers=args.workers)
    out = report.to_json_dict(model=kind, dataset=Path(args.split).parent.name or Path(args.split).stem,
                              config_digest=digest, which=args.which)
    text = json.dumps(out, indent=2, sort_keys=True)
    print(text)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    if args.per_user_csv:
        report.write_per_user_csv(args.per_user_csv)
    return 0


def _per_pair_labels(keys, idx, table):
    return np.array([table.get(keys[i], "") for i in idx], dtype=object)


def cmd_analyze(args) -> int:
    split = snapshot.load_split(_require_file(args.split, "split snapshot"))
    ckpt = _require_file(args.checkpoint, "checkpoint")
    params = snapshot.load_params(ckpt)
    if (params.num_users, params.num_items) != (split.num_users, split.num_items):
        raise ConfigError("checkpoint and split dimensions differ")
    out = Path(args.out) if args.out else ckpt.parent / "analysis"
    out.mkdir(parents=True, exist_ok=True)
    ran, skipped = [], {}

    n_inter = split.train.num_interactions + 2 * split.num_users
    ratio = analysis.ill_posedness_from_counts(n_inter, split.num_users, split.num_items, params.dim)
    _write_json(out / "ill_posedness.json", {
        "num_interactions": n_inter, "num_users": split.num_users,
        "num_items": split.num_items, "d": params.dim, "ratio": ratio})
    ran.append("ill_posedness")

    def skip(name, why):
        logger.warning("%s analysis skipped: %s", name, why)
        skipped[name] = why

    summary = {}
    if params.kind != "lrml":
        why = f"model kind {params.kind!r} has no memory module"
        for name in ("attention_rating", "attention_time", "relation_matches"):
            skip(name, why)
    else:
        users, items, ratings, ts = split.all_pairs()
        if ratings is None:
            skip("attention_rating", "dataset has no ratings")
        else:
            labels = np.rint(ratings).astype(np.int64)
            prof = analysis.attention_profile(users, items, labels, params, "rating")
            prof.write_csv(out / "attention_rating.csv")
            ran.append("attention_rating")
        if ts is None:
            skip("attention_time", "dataset has no timestamps")
        else:
            try:
                bins = analysis.bin_timestamps(ts, args.time_bins)
            except DataError as exc:
                skip("attention_time", str(exc))
            else:
                prof = analysis.attention_profile(users, items, bins, params, "time_bin",
                                                  classes=list(range(args.time_bins)))
                prof.write_csv(out / "attention_time.csv")
                ran.append("attention_time")
        if not args.user_attrs and not args.item_attrs:
            skip("relation_matches", "no attribute tables given")
        else:
            tu = np.arange(split.num_users)
            ti = split.test_item
            attrs = {}
            if args.user_attrs:
                table = data.load_attribute_table(args.user_attrs, args.attrs_format, "user")
                for name, mapping in table.items():
                    attrs[name] = _per_pair_labels(split.train.user_keys, tu, mapping)
            if args.item_attrs:
                table = data.load_attribute_table(args.item_attrs, args.attrs_format, "item")
                for name, mapping in table.items():
                    attrs[name] = _per_pair_labels(split.train.item_keys, ti, mapping)
            conj = [c.split("+") for c in args.conjunction] if args.conjunction else []
            conj = conj or ([["category", "job"]] if {"category", "job"} <= set(attrs) else [])
            for group in conj:
                missing = set(group) - set(attrs)
                if missing:
                    raise ConfigError(f"conjunction names unknown attributes: {sorted(missing)}")
            reports = analysis.relation_similarity_matches(
                tu, ti, params, attrs, rng=np.random.default_rng(args.seed), conjunctions=conj)
            analysis.write_match_csv(out / "relation_matches.csv", reports)
            summary["relation_matches"] = [asdict(r) for r in reports]
            ran.append("relation_matches")

    summary.update({"ran": ran, "skipped": skipped, "model_kind": params.kind})
    _write_json(out / "analysis_summary.json", summary)
    print(json.dumps({"ran": ran, "skipped": skipped}, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lrml", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run config")
        p.add_argument("--out", help="output path or directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("prepare", help="load, filter and split a rating log")
    common(p)
    p.add_argument("--input", help="rating log (user, item[, rating[, timestamp]])")
    p.add_argument("--format", choices=sorted(data.FORMATS))
    p.add_argument("--min-interactions", type=int)
    p.add_argument("--num-negatives", type=int)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a model on a prepared split")
    common(p)
    p.add_argument("--split", required=True, help="split snapshot written by 'prepare'")
    p.add_argument("--model", choices=dispatch.MODEL_KINDS)
    p.add_argument("--dim", type=int)
    p.add_argument("--memory-slices", type=int)
    p.add_argument("--margin", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--batches", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--resume", action="store_true", help="continue from the latest checkpoint in --out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="HR@10 / nDCG@10 of a checkpoint")
    common(p)
    p.add_argument("--split", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--which", choices=("dev", "test"), default="test")
    p.add_argument("--oracle", action="store_true", help="debug: score with a perfect oracle")
    p.add_argument("--per-user-csv")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze", help="attention profiles and relation-vector matches")
    common(p)
    p.add_argument("--split", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--user-attrs")
    p.add_argument("--item-attrs")
    p.add_argument("--attrs-format", choices=("tsv", "ml1m"), default="tsv")
    p.add_argument("--conjunction", action="append",
                   help="attributes that must match jointly, joined by '+', e.g. category+job")
    p.add_argument("--time-bins", type=int, default=10)
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "analyze" and args.seed is None:
        args.seed = 0
    try:
        return args.func(args)
    except (LRMLError, FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception:  # pragma: no cover - reported as an internal error
        logger.exception("internal error")
        return 1


if __name__ == "__main__":
    sys.exit(main())
