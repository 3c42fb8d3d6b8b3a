"""Command-line entry point: ``hetskel <command> [options] [section.key=value ...]``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, config_from_text, load_config
from .errors import HetskelError
from .hskl import SkeletonDataset, read_dataset, write_dataset
from .lift import lift
from .topology import C17, SkeletonSequence, interpolate_spine

SNAPSHOT = "config.ini"
METRICS = "metrics.json"
CHECKPOINT = "model.ckpt"
HISTORY = "loss_history.csv"


def _add_common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--config", type=Path, help="INI config file (sections data, model, loss, train, eval)")
    p.add_argument("--out", type=Path, required=out_required, help="output directory")
    p.add_argument("--seed", type=int, help="shorthand for train.seed=<seed>")
    p.add_argument("overrides", nargs="*", metavar="section.key=value", help="config overrides, applied last")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hetskel", description="Heterogeneous-skeleton representation learning.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("generate", help="write synthetic train/test splits as HSKL files")
    _add_common(p)

    p = sub.add_parser("pretrain", help="self-supervised pretraining; writes a checkpoint and loss history")
    _add_common(p)

    for name, text in (
        ("probe", "linear probe on frozen features"),
        ("retrieve", "cosine 1-NN retrieval (test queries against the train gallery)"),
        ("semi", "fine-tune on a stratified labelled fraction (eval.fraction)"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("--checkpoint", type=Path, required=True, help="checkpoint written by pretrain")
        _add_common(p)

    p = sub.add_parser("convert", help="lift a 2D C17 HSKL file to 3D with a checkpoint's lifter")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--input", type=Path, required=True, help="C17 HSKL file")
    p.add_argument("--output", type=Path, required=True, help="lifted C20 3D HSKL file")

    p = sub.add_parser("gradcheck", help="run every finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _resolve(args, base: RunConfig | None = None) -> RunConfig:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"train.seed={args.seed}")
    if base is not None and args.config is None:
        return config_from_text(base.to_text(), overrides)
    return load_config(args.config, overrides)


def _prepare_out(out: Path, cfg: RunConfig) -> None:
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / SNAPSHOT)


def _write_metrics(out: Path, task: str, top1, n_test: int, cfg: RunConfig, **extra) -> dict:
    metrics = {"task": task, "top1": top1, "n_test": n_test, "seed": cfg.train.seed, "config_hash": cfg.hash()}
    metrics.update(extra)
    (out / METRICS).write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    return metrics


def cmd_generate(args) -> int:
    from .synthetic import make_splits
    from .train import save_paired

    cfg = _resolve(args)
    _prepare_out(args.out, cfg)
    train, test = make_splits(cfg.data.generator())
    for split, ds in (("train", train), ("test", test)):
        for path in save_paired(args.out, split, ds):
            print(f"wrote {path}")
    return 0


def cmd_pretrain(args) -> int:
    from .train import datasets, pretrain, write_history_csv

    cfg = _resolve(args)
    _prepare_out(args.out, cfg)
    train, _ = datasets(cfg)

    def report(epoch, rec, _model):
        print(f"epoch {epoch + 1}/{cfg.train.epochs} " + " ".join(f"{k}={v:.5f}" for k, v in rec.items()), flush=True)

    ckpt = pretrain(cfg, train, on_epoch=report)
    ckpt.save(args.out / CHECKPOINT)
    write_history_csv(args.out / HISTORY, ckpt.history)
    final = ckpt.history[-1]["L"] if ckpt.history else None
    _write_metrics(args.out, "pretrain", None, 0, cfg, final_loss=final)
    print(f"wrote {args.out / CHECKPOINT}")
    return 0


def _evaluate(args, task: str) -> int:
    from .evaluate import linear_probe, retrieve, semi_supervised
    from .train import datasets, load_checkpoint

    ckpt = load_checkpoint(args.checkpoint)
    cfg = _resolve(args, ckpt.config)
    _prepare_out(args.out, cfg)
    train, test = datasets(cfg)
    streams = ckpt.config.streams
    ev = cfg.eval
    if task == "probe":
        top1 = linear_probe(
            ckpt.model, train, test, streams, ev.feature, ev.probe_epochs, ev.probe_lr, ev.probe_batch, cfg.train.seed
        )
    elif task == "retrieve":
        top1 = retrieve(ckpt.model, test, train, streams, ev.feature)
    else:
        top1 = semi_supervised(
            ckpt.model,
            train,
            test,
            streams,
            ev.fraction,
            ev.finetune_epochs,
            ev.finetune_lr,
            cfg.train.batch_size,
            cfg.train.seed,
            ev.feature,
            cfg.train.crop_min,
        )
    extra = {"fraction": ev.fraction} if task == "semi" else {}
    metrics = _write_metrics(args.out, task, top1, len(test), cfg, **extra)
    print(json.dumps(metrics, sort_keys=True))
    return 0


def cmd_convert(args) -> int:
    from .train import load_checkpoint

    if not args.input.is_file():
        raise FileNotFoundError(f"input file not found: {args.input}")
    ckpt = load_checkpoint(args.checkpoint)
    ds = read_dataset(args.input)
    if ds.topology != "C17":
        raise HetskelError(f"{args.input}: convert expects a C17 file, got {ds.topology}")
    seq = interpolate_spine(SkeletonSequence(C17, ds.data.astype(np.float64)))
    lifted = lift(seq, ckpt.model.lifter, mode="eval")
    write_dataset(args.output, SkeletonDataset("C20", lifted.array, ds.labels))
    print(f"wrote {args.output}")
    return 0


def cmd_gradcheck(args) -> int:
    from .checks import TOLERANCE, all_suites

    failed = 0
    for r in all_suites(args.seed):
        status = "PASS" if r.passed else "FAIL"
        failed += not r.passed
        print(f"{status} {r.name:28s} max_rel_err={r.error:.3e} tol={TOLERANCE:.0e} ({r.seconds:.2f}s)")
    print("all suites passed" if not failed else f"{failed} suite(s) failed")
    return 1 if failed else 0


COMMANDS = {
    "generate": cmd_generate,
    "pretrain": cmd_pretrain,
    "probe": lambda a: _evaluate(a, "probe"),
    "retrieve": lambda a: _evaluate(a, "retrieve"),
    "semi": lambda a: _evaluate(a, "semi"),
    "convert": cmd_convert,
    "gradcheck": cmd_gradcheck,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (HetskelError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
