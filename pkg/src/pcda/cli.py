"""Command-line entry point: ``pcda <verb> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 check failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness, network, oracles, training
from .errors import DataError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("-c", "--config", help="key=value config file")
    p.add_argument("-s", "--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="pcda", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    p = sub.add_parser("prepare-data", help="sample source/target/test clouds into a cache file")
    _common(p)
    p.add_argument("--root", help="ModelNet10 root (overrides dataset.root)")
    p.add_argument("-o", "--out", required=True, help="output .npz cache")

    p = sub.add_parser("pretrain", help="supervised training on labelled dense clouds")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("-o", "--out", required=True, help="output checkpoint .npz")
    p.add_argument("--log", help="per-epoch CSV log")

    p = sub.add_parser("adapt", help="frozen-encoder adaptation to the sparse target set")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True, help="pretrained checkpoint")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--log")

    p = sub.add_parser("eval", help="accuracy across point counts")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--variant", default="")

    p = sub.add_parser("sweep", help="adapt + evaluate over one hyperparameter axis")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True, help="pretrained checkpoint shared by all cells")
    p.add_argument("--axis", required=True, choices=["alpha", "beta", "lambda", "loss_variant"])
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("oracle-check", help="run the self-check suite")
    p.add_argument("-o", "--out", help="write the JSON report here as well")
    p.add_argument("-v", "--verbose", action="store_true")
    return ap


def _points(cfg, data: harness.PreparedData) -> list[int]:
    wanted = harness.eval_counts(cfg)
    have = harness.available_counts(data.test, wanted)
    if not have:
        raise DataError(f"no requested point count fits test clouds of {data.test[0].n} points")
    return have


def _cmd_prepare(args, cfg):
    if args.root:
        cfg["dataset.root"] = args.root
    data = harness.prepare_from_config(cfg)
    data.save(args.out)
    print(json.dumps({"source": len(data.source), "target": len(data.target),
                      "test": len(data.test), "classes": data.classes}))


def _cmd_pretrain(args, cfg):
    data = harness.PreparedData.load(args.data)
    tc = harness.train_config(cfg)
    enc, head = harness.network_widths(cfg)
    res = training.pretrain(data.source, tc, num_classes=len(data.classes),
                            encoder_widths=enc, head_widths=head)
    network.save_checkpoint(args.out, res.params, res.state, cfg)
    if args.log:
        training.write_log(args.log, res.epochs)
    last = res.epochs[-1] if res.epochs else {}
    print(json.dumps({"checkpoint": args.out, "epochs": len(res.epochs), **last}))


def _cmd_adapt(args, cfg):
    data = harness.PreparedData.load(args.data)
    params, _, _ = network.load_checkpoint(args.checkpoint)
    res = training.adapt(params, data.source, data.target, harness.train_config(cfg))
    network.save_checkpoint(args.out, res.params, res.state, cfg)
    if args.log:
        training.write_log(args.log, res.epochs)
    last = res.epochs[-1] if res.epochs else {}
    print(json.dumps({"checkpoint": args.out, "epochs": len(res.epochs), **last}))


def _cmd_eval(args, cfg):
    data = harness.PreparedData.load(args.data)
    params, _, meta = network.load_checkpoint(args.checkpoint)
    mcfg = meta.get("config", {})
    md = {
        "variant": args.variant or Path(args.checkpoint).stem,
        "alpha": mcfg.get("loss.alpha", ""),
        "beta": mcfg.get("loss.beta", ""),
        "lambda": mcfg.get("loss.lambda", ""),
        "checkpoint": meta.get("fingerprint", ""),
    }
    table = harness.evaluate(params, data.test, _points(cfg, data), int(cfg["seed"]), md)
    paths = harness.write_results(args.out_dir, [table], "eval")
    for row in table.rows():
        print(f"{row['points']:>5d}  {row['accuracy']:.4f}")
    print(json.dumps({k: str(v) for k, v in paths.items()}))


def _cmd_sweep(args, cfg):
    data = harness.PreparedData.load(args.data)
    params, _, _ = network.load_checkpoint(args.checkpoint)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if args.axis != "loss_variant":
        values = [float(v) for v in values]
    tables = harness.sweep(args.axis, values, harness.train_config(cfg), params, data,
                           _points(cfg, data), jobs=args.jobs)
    paths = harness.write_results(args.out_dir, tables, f"sweep_{args.axis}")
    print(harness.grid_csv(tables), end="")
    print(json.dumps({k: str(v) for k, v in paths.items()}))


def _cmd_oracle(args):
    records = oracles.oracle_check()
    report = json.dumps([r.as_dict() for r in records], indent=2)
    if args.out:
        harness._atomic_write_text(args.out, report + "\n")
    print(report)
    return EXIT_OK if all(r.passed for r in records) else EXIT_CHECK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.verb == "oracle-check":
        return _cmd_oracle(args)
    try:
        cfg = harness.load_config(args.config, args.set)
    except (OSError, ValueError) as exc:
        print(f"pcda: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    handlers = {
        "prepare-data": _cmd_prepare,
        "pretrain": _cmd_pretrain,
        "adapt": _cmd_adapt,
        "eval": _cmd_eval,
        "sweep": _cmd_sweep,
    }
    try:
        handlers[args.verb](args, cfg)
    except (DataError, OSError, KeyError) as exc:
        print(f"pcda: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"pcda: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
