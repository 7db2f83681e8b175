"""Command-line entry point.

Subcommands: gen-data, train, eval, ccd, dump-features, sweep. Configs are
flat JSON validated strictly (any unknown key aborts before compute), and
every output directory gets the exact resolved config so runs replay from
their artifacts alone. Exit codes: 0 success, 1 validation error,
2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
from pathlib import Path

from . import analysis, trainer
from .datagen import Dataset, load_csv_dataset, save_csv_dataset
from .errors import ClassalignError, ConfigError
from .nets import load_checkpoint, save_checkpoint
from .trainer import TrainConfig


def _parse_override(item: str) -> tuple[str, object]:
    key, sep, raw = item.partition("=")
    if not sep or not key:
        raise ConfigError(f"--set expects key=value, got {item!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def resolve_config(args) -> TrainConfig:
    doc: dict = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            loaded = json.load(fh)
        if not isinstance(loaded, dict):
            raise ConfigError(f"{args.config} must hold a JSON object")
        doc.update(loaded)
    for item in args.set or []:
        key, value = _parse_override(item)
        doc[key] = value
    if "seeds" in doc and "seed" not in doc:
        doc["seed"] = doc["seeds"][0]
    if getattr(args, "strategy", None):
        doc["strategy"] = args.strategy
    if getattr(args, "seed", None) is not None:
        doc["seed"] = args.seed
    return TrainConfig.from_dict(doc)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, doc: dict):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _write_resolved_config(out: Path, cfg: TrainConfig):
    _write_json(out / "resolved_config.json", cfg.to_dict())


def cmd_gen_data(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(args)
    source, target = trainer.dataset_from_config(cfg)
    save_csv_dataset(Dataset.concatenate([source, target]), out / "dataset.csv")
    _write_resolved_config(out, cfg)
    print(f"[gen-data] wrote {len(source)}+{len(target)} samples to {out / 'dataset.csv'}")
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(args)
    source, target = trainer.dataset_from_config(cfg)
    ckpt_dir = out / "checkpoints" if cfg.checkpoint_every > 0 else None
    report, bundles = trainer.run_experiment(cfg, source, target,
                                             checkpoint_dir=ckpt_dir)
    _write_json(out / "report.json", report.to_dict())
    save_checkpoint(bundles["final"], out / "checkpoint.json")
    if bundles["final"] is not bundles["teacher"]:
        save_checkpoint(bundles["teacher"], out / "teacher_checkpoint.json")
    _write_resolved_config(out, cfg)
    print(f"[train] seed {cfg.seed} strategy {cfg.strategy}: "
          f"target mean accuracy {report.metrics['target']['mean_accuracy']:.4f}, "
          f"mean CCD {report.mean_ccd:.4f} "
          f"({report.wall_clock_sec:.1f}s, {report.skipped_iterations} skipped)")
    return 0


def _load_domains(args) -> tuple[Dataset, Dataset]:
    data = load_csv_dataset(args.data)
    return data.domain_split()


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(args)
    bundle = load_checkpoint(args.checkpoint)
    source, target = _load_domains(args)
    metrics = {}
    if len(source):
        metrics["source"] = trainer.evaluate(bundle, source)
    if len(target):
        metrics["target"] = trainer.evaluate(bundle, target)
    _write_json(out / "metrics.json", metrics)
    _write_resolved_config(out, cfg)
    for domain, m in metrics.items():
        print(f"[eval] {domain}: mean accuracy {m['mean_accuracy']:.4f} "
              f"over {m['count']} samples")
    return 0


def cmd_ccd(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(args)
    if args.features:
        dump = analysis.load_feature_dump(args.features)
        report = analysis.ccd(dump.x, dump.y)
    else:
        bundle = load_checkpoint(args.checkpoint)
        source, target = _load_domains(args)
        report = analysis.ccd_for_model(
            bundle, source, target, domain=args.domain, cap=cfg.ccd_cap,
            seed=trainer.derive_seed(cfg.seed, trainer.STREAM_CCD))
    _write_json(out / "ccd.json", {
        "mean_ccd": report.mean,
        "per_class_ccd": report.per_class,
        "counts": report.counts,
        "feature_dim": report.feature_dim,
    })
    _write_resolved_config(out, cfg)
    print(f"[ccd] mean CCD {report.mean:.4f}")
    return 0


def cmd_dump_features(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(args)
    bundle = load_checkpoint(args.checkpoint)
    data = load_csv_dataset(args.data)
    analysis.dump_features(bundle, data, out / "features.csv", cap=args.cap,
                           seed=trainer.derive_seed(cfg.seed, trainer.STREAM_CCD))
    _write_resolved_config(out, cfg)
    print(f"[dump-features] wrote {out / 'features.csv'}")
    return 0


def cmd_sweep(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(args)
    values = []
    for raw in args.values.split(","):
        try:
            values.append(json.loads(raw))
        except json.JSONDecodeError:
            values.append(raw)
    if not values:
        raise ConfigError("sweep needs at least one value")

    runs = []
    worst = 0
    for value in values:
        for seed in cfg.seeds:
            run_dir = out / f"{args.param}={value}" / f"seed{seed}"
            run_dir.mkdir(parents=True, exist_ok=True)
            doc = cfg.to_dict()
            doc[args.param] = value
            doc["seed"] = seed
            record = {"param": args.param, "value": value, "seed": seed}
            try:
                run_cfg = TrainConfig.from_dict(doc)
                source, target = trainer.dataset_from_config(run_cfg)
                report, bundles = trainer.run_experiment(run_cfg, source, target)
                _write_json(run_dir / "report.json", report.to_dict())
                save_checkpoint(bundles["final"], run_dir / "checkpoint.json")
                _write_json(run_dir / "resolved_config.json", run_cfg.to_dict())
                record.update(
                    status="ok",
                    target_mean_accuracy=report.metrics["target"]["mean_accuracy"],
                    source_mean_accuracy=report.metrics["source"]["mean_accuracy"],
                    mean_ccd=report.mean_ccd)
                print(f"[sweep] {args.param}={value} seed={seed}: "
                      f"target {record['target_mean_accuracy']:.4f}, "
                      f"ccd {record['mean_ccd']:.4f}")
            except (ClassalignError, OSError) as exc:
                record.update(status="failed", error=str(exc))
                worst = 2
                print(f"[sweep] {args.param}={value} seed={seed}: FAILED ({exc})",
                      file=sys.stderr)
            runs.append(record)

    medians = {}
    for value in values:
        ok = [r for r in runs if r["value"] == value and r["status"] == "ok"]
        if ok:
            medians[str(value)] = {
                "target_mean_accuracy": statistics.median(
                    r["target_mean_accuracy"] for r in ok),
                "mean_ccd": statistics.median(r["mean_ccd"] for r in ok),
                "runs": len(ok),
            }
    _write_json(out / "summary.json",
                {"param": args.param, "values": values, "runs": runs,
                 "medians": medians})
    with open(out / "summary.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("param,value,seed,status,target_mean_accuracy,"
                 "source_mean_accuracy,mean_ccd\n")
        for r in runs:
            fh.write(f"{r['param']},{r['value']},{r['seed']},{r['status']},"
                     f"{r.get('target_mean_accuracy', '')},"
                     f"{r.get('source_mean_accuracy', '')},{r.get('mean_ccd', '')}\n")
    _write_resolved_config(out, cfg)
    return worst


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _add_common(sub):
    sub.add_argument("--config", help="JSON config file")
    sub.add_argument("--out", required=True, help="output directory")
    sub.add_argument("--seed", type=int, help="override the run seed")
    sub.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override a config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="classalign",
                     description="class-aware adversarial domain adaptation lab")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("gen-data", help="generate the synthetic two-domain dataset")
    _add_common(p)
    p.set_defaults(func=cmd_gen_data)

    p = subs.add_parser("train", help="run pretrain/adapt/distill per the config")
    _add_common(p)
    p.add_argument("--strategy", choices=["binary", "hard", "soft"])
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("eval", help="evaluate a checkpoint on a dataset CSV")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("ccd", help="class center distance of extracted features")
    _add_common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--features", help="precomputed feature dump CSV")
    p.add_argument("--domain", choices=["both", "source", "target"], default="both")
    p.set_defaults(func=cmd_ccd)

    p = subs.add_parser("dump-features", help="write extracted features to CSV")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--cap", type=int, help="subsample cap")
    p.set_defaults(func=cmd_dump_features)

    p = subs.add_parser("sweep", help="one training run per value per seed")
    _add_common(p)
    p.add_argument("--param", required=True, help="config key to sweep")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "ccd" and not args.features \
                and not (args.checkpoint and args.data):
            raise ConfigError("ccd needs either --features or --checkpoint with --data")
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ClassalignError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
