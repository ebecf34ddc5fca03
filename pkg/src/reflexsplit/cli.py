"""Command-line entry point.

Settings resolve as built-in defaults, then ``--config`` file, then ``--set``
and ``--seed`` flags (later wins).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ATTENTION_LEVELS, ConfigError, RunConfig, ShapeError, dump_run_config, load_run_config

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("reflexsplit")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _overrides(args) -> dict[str, str]:
    out = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise UsageError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = value.strip()
    if args.seed is not None:
        out["seed"] = str(args.seed)
    return out


def _run_config(args) -> RunConfig:
    return load_run_config(args.config, _overrides(args))


def _synthetic_sources(args, cfg: RunConfig):
    from .dataset import load_source_pairs
    from .synth import procedural_sources

    size = cfg.model.image_size
    if args.sources:
        return load_source_pairs(args.sources, size)
    return procedural_sources(args.procedural, size, cfg.seed)


def cmd_synth(args) -> int:
    from .dataset import write_triplets
    from .synth import EpochSampler, build_epoch

    cfg = _run_config(args)
    count = cfg.synth.pairs_per_epoch if args.count is None else args.count
    sources = {"synthetic": _synthetic_sources(args, cfg)} if count else {}
    sampler = EpochSampler(count, (1.0, 0.0, 0.0), cfg.seed, cfg.synth.augment, cfg.synth.reflection_blur)
    triplets = build_epoch(sampler, sources, 0)
    try:
        path = write_triplets(args.out, triplets)
    except OSError as exc:
        from .dataset import DataError
        raise DataError(f"cannot write dataset to {args.out}: {exc}") from exc
    print(f"wrote {len(triplets)} triplets, manifest {path}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .dataset import load_triplets
    from .losses import StubPerceptualExtractor, VGGPerceptualExtractor
    from .model import ReflexSplitNet
    from .training import train

    cfg = _run_config(args)
    size = cfg.model.image_size
    sources = {"synthetic": _synthetic_sources(args, cfg)}
    if args.real:
        sources["real"] = load_triplets(args.real, size, "real")
    if args.nature:
        sources["nature"] = load_triplets(args.nature, size, "nature")
    if not (args.real or args.nature):
        cfg = dataclasses.replace(cfg, synth=dataclasses.replace(cfg.synth, ratio=(1.0, 0.0, 0.0)))
        log.info("no real/nature data given; training on synthetic pairs only")
    validation = load_triplets(args.val, size, "real") if args.val else None
    extractor = None
    if cfg.loss.weights.vgg:
        extractor = VGGPerceptualExtractor("DEFAULT") if args.vgg else StubPerceptualExtractor()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_run_config(cfg, out / "run_config.txt")
    net = ReflexSplitNet(cfg.model)
    result = train(net, sources, cfg, out, epochs=args.epochs, extractor=extractor,
                   validation=validation, max_steps=args.max_steps)
    print(f"trained {len(result.history)} steps; checkpoints: {', '.join(p.name for p in result.checkpoints)}")
    print(f"log: {result.log_path}")
    return EXIT_OK


def _variance_curves(separator, benchmark_dir, size, limit=4096):
    import torch

    from .dataset import iter_triplets
    from .metrics import pca_cumulative_variance

    feats = {}
    for _, item in iter_triplets(benchmark_dir, size):
        if isinstance(item, Exception):
            continue
        out = separator(item.mixed)
        for level, pair in out.streams.items():
            for name, fmap in zip("TR", pair):
                tokens = fmap[0].flatten(1).T  # pixels x channels
                feats.setdefault(f"level {level} {name}", []).append(tokens)
    curves = {}
    for key, chunks in sorted(feats.items()):
        samples = torch.cat(chunks).double().numpy()
        if len(samples) > limit:
            samples = samples[np.linspace(0, len(samples) - 1, limit).astype(int)]
        curves[key] = pca_cumulative_variance(samples)
    return curves


def cmd_eval(args) -> int:
    from .evaluation import NetSeparator, evaluate
    from .plotting import plot_variance_curves
    from .training import load_checkpoint

    net, payload = load_checkpoint(args.checkpoint)
    size = net.config.image_size
    separator = NetSeparator(net, args.lambda_diff)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = evaluate(separator, args.data, size, net.config.window_size, out / "metrics.csv")
    for image_id, reason in report.failures:
        print(f"skipped {image_id}: {reason}", file=sys.stderr)
    means = report.means()
    print(f"{len(report.rows)} images  " + "  ".join(f"{k}={v:.4f}" for k, v in means.items()))
    if args.pca:
        curves = _variance_curves(separator, args.data, size)
        with (out / "variance.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["series", "components", "cumulative_fraction", "components_for_95"])
            for key, curve in curves.items():
                need = curve.components_for(0.95)
                for k, v in curve.rows():
                    w.writerow([key, k, f"{v:.6f}", need])
        plot_variance_curves(curves, out / "variance.svg")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .ablation import run_ablation
    from .plotting import plot_loss_traces

    cfg = _run_config(args)
    table = run_ablation(args.axis, cfg, epochs=args.epochs, train_pairs=args.pairs,
                         val_pairs=args.val_pairs, dry_run=args.dry_run)
    print(table.format())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        table.write_csv(out / f"ablation_{args.axis}.csv")
        if not args.dry_run:
            plot_loss_traces({r.variant: r.losses for r in table.rows}, out / f"ablation_{args.axis}.svg",
                             title=f"{args.axis} ablation")
    return EXIT_OK


def cmd_schedule_dump(args) -> int:
    from .curriculum import lambda_init, lambda_warmup
    from .plotting import plot_schedule
    from .training import cosine_lr

    cfg = _run_config(args)
    epochs = args.epochs or cfg.model.total_epochs
    warmup = cfg.model.warmup_epochs
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    with (out / "schedule.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "level", "lambda_init", "lambda_diff", "lambda_effective", "lr"])
        for e in range(epochs):
            lr = cosine_lr(e, cfg.train)
            for level in ATTENTION_LEVELS:
                eff = lambda_init(level) * lambda_warmup(e, warmup)
                rows.append((e, level, eff))
                w.writerow([e, level, repr(lambda_init(level)), repr(lambda_warmup(e, warmup)), repr(eff), repr(lr)])
    plot_schedule(rows, out / "schedule.svg")
    print(f"wrote {out / 'schedule.csv'} and {out / 'schedule.svg'}")
    return EXIT_OK


def cmd_selfcheck(args) -> int:
    from .selfcheck import run_selfcheck

    results = run_selfcheck()
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_OK if not failed else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value settings file")
    common.add_argument("--seed", type=int)
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one setting (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="reflexsplit", description="Dual-stream reflection separation toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="blend synthetic triplets into a dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, help="number of triplets (default synth.pairs_per_epoch)")
    p.add_argument("--sources", help="directory with a T/R pair manifest")
    p.add_argument("--procedural", type=int, default=16, help="procedural source pairs when --sources is absent")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--out", required=True)
    p.add_argument("--sources", help="directory with a T/R pair manifest for synthesis")
    p.add_argument("--procedural", type=int, default=16)
    p.add_argument("--real", help="triplet directory for the real share")
    p.add_argument("--nature", help="triplet directory for the nature share")
    p.add_argument("--val", help="triplet directory for best-PSNR checkpointing")
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--vgg", action="store_true", help="use pretrained VGG-19 for the perceptual term")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="score a checkpoint on a triplet directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lambda-diff", type=float, default=1.0)
    p.add_argument("--pca", action="store_true", help="also write decoder-stream variance curves")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", parents=[common], help="train and tabulate one ablation axis")
    p.add_argument("--axis", required=True, choices=("fusion", "lfsb", "schedule"))
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--pairs", type=int, default=4)
    p.add_argument("--val-pairs", type=int, default=2)
    p.add_argument("--dry-run", action="store_true", help="emit the table rows without training")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("schedule-dump", parents=[common], help="write the lambda and lr schedules")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_schedule_dump)

    p = sub.add_parser("selfcheck", parents=[common], help="run the built-in oracle checks")
    p.set_defaults(func=cmd_selfcheck)
    return parser


def main(argv=None) -> int:
    from .dataset import DataError
    from .losses import NumericalError
    from .training import CheckpointError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, ShapeError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
