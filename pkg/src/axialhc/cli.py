"""Command-line entry point: train, eval, count, bench and verify."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import analysis
from .blocks import ArchConfig, build_network, named_arch, parse_config
from .errors import ConfigurationError, FormatError


def parse_size(text: str) -> tuple[int, int]:
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None


def resolve_arch(spec: str, input_size=None) -> tuple[str, ArchConfig]:
    """A named architecture (``axial-26``) or a key=value config file."""
    path = Path(spec)
    if path.is_file():
        cfg = ArchConfig.from_mapping(parse_config(path.read_text()))
        label = path.stem
    else:
        cfg = named_arch(spec)
        label = spec
    if input_size is not None:
        cfg.input_size = tuple(input_size)
    return label, cfg


def cmd_train(args) -> int:
    from .pipeline.training import TrainConfig, read_metrics, train
    from .plotting import plot_training_history

    cfg = TrainConfig.from_text(Path(args.config).read_text())
    out = Path(args.out)
    result = train(cfg, args.data, out, log=None if args.quiet else print)
    plot_training_history(read_metrics(out / "metrics.csv"), out / "training.png")
    last = result.history[-1]
    print(f"final train loss {last.train_loss:.4f}, val acc {last.val_acc:.4f}, "
          f"train acc (eval mode) {result.final_train_acc:.4f}")
    print(f"wrote {out / 'metrics.csv'}, {out / 'checkpoint.bin'}, {out / 'training.png'}")
    return 0


def cmd_eval(args) -> int:
    from .pipeline.data import load_cifar
    from .pipeline.training import TrainConfig, evaluate, load_network

    net, meta = load_network(args.checkpoint)
    dataset = args.dataset
    side = net.config.input_size[0]
    if dataset is None:
        dataset = TrainConfig.from_text(meta["train_config"]).dataset if "train_config" in meta else "cifar10"
    splits = load_cifar(args.data, dataset, side=side, num_classes=net.config.num_classes)
    data = splits.train if args.split == "train" else splits.test
    acc = evaluate(net, data, meta["mean"], meta["std"])
    print(f"{args.split} accuracy {acc:.4f} over {len(data)} images")
    return 0


def cmd_count(args) -> int:
    from .plotting import plot_cost_report, plot_family_comparison

    reports = {}
    for spec in args.arch:
        label, cfg = resolve_arch(spec, args.input)
        net = build_network(cfg, seed=None)
        report = analysis.cost_report(net, (3,) + tuple(cfg.input_size), args.convention)
        report.title = label
        reports[label] = report
        if args.out:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            (out / f"{label}.csv").write_text(report.to_csv())
            plot_cost_report(report, out / f"{label}.png")
        if args.table:
            print(report.pretty())
            print()
        else:
            if len(args.arch) > 1:
                print(f"# {label}")
            sys.stdout.write(report.to_csv())
    if args.out and len(reports) > 1:
        plot_family_comparison(reports, Path(args.out) / "comparison.png")
    return 0


def cmd_bench(args) -> int:
    label, cfg = resolve_arch(args.arch, args.input)
    net = build_network(cfg, seed=0)
    stats = analysis.bench_latency(net, (3,) + tuple(cfg.input_size), args.runs, args.warmup)
    print(f"{label}: {len(stats.samples)} runs, mean {stats.mean * 1e3:.2f} ms, "
          f"p50 {stats.p50 * 1e3:.2f} ms, p95 {stats.p95 * 1e3:.2f} ms")
    if args.out:
        from .plotting import plot_latency

        path = plot_latency(stats, Path(args.out) / f"{label}_latency.png", label)
        print(f"wrote {path}")
    return 0


def cmd_verify(args) -> int:
    from .verify import run_checks

    results = run_checks(args.trials, args.seed)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<24} {r.detail}")
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} properties hold")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="axialhc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a network from a key=value config")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="directory for metrics, checkpoint and figure")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="top-1 accuracy of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--dataset", choices=("cifar10", "cifar100", "generic-dir"),
                   help="defaults to the dataset the checkpoint was trained on")
    p.add_argument("--split", choices=("test", "train"), default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("count", help="per-layer parameter and FLOP report (CSV on stdout)")
    p.add_argument("--arch", required=True, nargs="+", help="named architecture or config file")
    p.add_argument("--input", type=parse_size, help="input HxW (default from the architecture)")
    p.add_argument("--convention", choices=analysis.CONVENTIONS, default="executed")
    p.add_argument("--out", help="also write <arch>.csv and <arch>.png here")
    p.add_argument("--table", action="store_true", help="print a per-stage summary instead of CSV")
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("bench", help="single-image forward latency")
    p.add_argument("--arch", required=True)
    p.add_argument("--runs", type=int, default=30)
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--input", type=parse_size)
    p.add_argument("--out", help="write a latency histogram here")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("verify", help="run the algebraic and structural property checks")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, FormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
