"""Command-line entry point: ``orderalign {train,eval,gradcheck,paramcount,synth-data}``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import yaml

from . import checkpoint as ckpt_io
from .data import load_dataset, make_synthetic
from .gradcheck import TOLERANCE, kernel_suite, pipeline_check
from .text import ARCHITECTURES, build_ctt, count_params, layer_param_counts
from .train import RunConfig, evaluate, train


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON or YAML file of RunConfig keys")
    for f in dataclasses.fields(RunConfig):
        kind = {"int": int, "float": float, "bool": _bool}.get(str(f.type), str)
        p.add_argument(_flag(f.name), dest=f.name, type=kind, default=None)


def build_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, overridden by the config file, overridden by explicit flags."""
    values: dict = {}
    if args.config:
        loaded = yaml.safe_load(Path(args.config).read_text(encoding="utf-8")) or {}
        values.update({k.replace("-", "_"): v for k, v in loaded.items()})
    for f in dataclasses.fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    return RunConfig.from_dict(values)


def cmd_train(args) -> int:
    config = build_config(args)
    result = train(config, resume=args.resume,
                   resume_best=config.checkpoint_path if args.resume else None)
    for e in result.history:
        print(f"epoch {e.epoch:4d}  train {e.train_loss:.6f}  val {e.val_loss:.6f}  lr {e.lr:.2e}")
    if config.checkpoint_path:
        print(f"best checkpoint: {config.checkpoint_path}")
    return 0


def cmd_eval(args) -> int:
    config = build_config(args)
    if not config.checkpoint_path:
        print("eval needs --checkpoint-path", file=sys.stderr)
        return 2
    ckpt = ckpt_io.load(config.checkpoint_path)
    data = load_dataset(config.features_path, config.captions_path, config.splits_path)
    rep = evaluate(ckpt, data, args.split, folds=args.folds)
    print(rep.to_table())
    if args.json:
        rep.write_json(args.json)
    return 0


def cmd_gradcheck(args) -> int:
    results = kernel_suite(args.seed, args.coords)
    results += pipeline_check(args.arch_id, args.d, args.seed, args.coords)
    ok = True
    for r in results:
        ok &= r.passed
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<32} coords={r.coords:4d}  "
              f"max rel err={r.max_rel_error:.3e}  (tol {TOLERANCE:g})")
    return 0 if ok else 1


def cmd_paramcount(args) -> int:
    archs = [args.arch_id] if args.arch_id else sorted(ARCHITECTURES)
    for arch in archs:
        counts = layer_param_counts(arch)
        for i, ((f, l), n) in enumerate(zip(ARCHITECTURES[arch], counts), start=1):
            print(f"{arch}  MaxConv_{i}  filters={f:<4d} length={l}  params={n:,}")
        line = f"{arch}  total (conv stack)  {sum(counts):,}"
        if args.include_projection:
            line += f"   with W_t (d={args.d}): {count_params(build_ctt(arch, args.d), True):,}"
        print(line)
    return 0


def cmd_synth(args) -> int:
    corpus = make_synthetic(n_train=args.n_train, n_val=args.n_val, n_test=args.n_test,
                            captions_per_image=args.captions_per_image,
                            vocab_size=args.vocab_size, noise=args.noise, seed=args.seed)
    paths = corpus.write(args.out)
    ds = corpus.dataset
    print(f"wrote {len(ds.images)} images, {len(ds.captions)} captions")
    for k, p in paths.items():
        print(f"  {k}: {p}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    parser = argparse.ArgumentParser(prog="orderalign", parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train both encoders")
    _add_config_flags(p)
    p.add_argument("--resume", help="continue from a .last checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="bidirectional retrieval report for a split")
    _add_config_flags(p)
    p.add_argument("--split", default="test")
    p.add_argument("--folds", type=int, default=1)
    p.add_argument("--json", help="also write the report as JSON records")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    p.add_argument("--arch-id", default="A", choices=sorted(ARCHITECTURES))
    p.add_argument("--d", type=int, default=1024)
    p.add_argument("--coords", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("paramcount", parents=[common], help="parameter counts of the text encoders")
    p.add_argument("--arch-id", choices=sorted(ARCHITECTURES))
    p.add_argument("--include-projection", action="store_true")
    p.add_argument("--d", type=int, default=1024)
    p.set_defaults(func=cmd_paramcount)

    p = sub.add_parser("synth-data", parents=[common], help="write a seeded synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n-train", type=int, default=20)
    p.add_argument("--n-val", type=int, default=0)
    p.add_argument("--n-test", type=int, default=0)
    p.add_argument("--captions-per-image", type=int, default=1)
    p.add_argument("--vocab-size", type=int, default=8)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
