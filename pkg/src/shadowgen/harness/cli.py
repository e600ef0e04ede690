"""Command-line entry point: ``shadowgen <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..errors import (
    ConfigError,
    CorruptDataset,
    DatasetEmpty,
    EmptyForeground,
    EmptyMask,
    NonFiniteLoss,
    SchemaMismatch,
    ShapeMismatch,
)
from ..network import load_checkpoint, network_from_checkpoint
from ..synthdata import GeneratorConfig, generate_tuples, write_dataset
from .config import RunConfig
from .data import load_tuples
from .evaluate import evaluate, write_eval, write_report
from .infer import infer, load_image, write_infer
from .train import finetune, train

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("shadowgen")


def cmd_gen_data(args) -> int:
    cfg = GeneratorConfig(resolution=args.resolution, domain=args.domain)
    tuples = generate_tuples(args.count, cfg, seed=args.seed)
    ids = write_dataset(tuples, args.out, domain=args.domain)
    print(f"wrote {len(ids)} tuples to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = RunConfig.load(args.config)
    res = train(cfg, resume=args.resume)
    print(f"trained {res.state.step} steps, final loss {res.losses[-1]:.4f}; checkpoint {res.checkpoint}")
    return EXIT_OK


def cmd_finetune(args) -> int:
    cfg = RunConfig.load(args.config)
    res = finetune(cfg, args.base)
    final = f"{res.losses[-1]:.4f}" if res.losses else "n/a"
    print(f"finetuned {res.state.step} steps, final loss {final}; checkpoint {res.checkpoint}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    overrides = {}
    if args.no_refine:
        overrides["refine"] = False
    net = network_from_checkpoint(ckpt, **overrides)
    tuples = load_tuples(args.data)
    label = args.label or Path(args.out).name
    config = {"checkpoint": str(args.ckpt), "data_dir": str(args.data), "refine": net.cfg.refine,
              "network": net.cfg.to_dict()}
    report, preds = evaluate(net, tuples, config=config, label=label)
    write_eval(args.out, report, preds, tuples)
    print(json.dumps({"label": label, **{k: report.aggregate[k] for k in ("rmse", "s_rmse", "ber", "s_ber")}}))
    return EXIT_OK


def cmd_infer(args) -> int:
    net = network_from_checkpoint(load_checkpoint(args.ckpt))
    comp = load_image(args.comp, "RGB")
    m_fos = [load_image(p, "L") for p in args.m_fo]
    m_bo = load_image(args.m_bo, "L") if args.m_bo else None
    m_bs = load_image(args.m_bs, "L") if args.m_bs else None
    res = infer(net, comp, m_fos, m_bo, m_bs, refine=False if args.no_refine else None)
    write_infer(args.out, res)
    print(f"wrote {args.out} ({len(res.masks)} pass(es))")
    return EXIT_OK


def cmd_report(args) -> int:
    files = write_report(args.eval, args.out, grid_rows=args.grid_rows, title=args.title)
    print(Path(args.out, "table.txt").read_text())
    print(f"wrote {len(files)} files to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shadowgen", description="Two-stage shadow generation toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="render a synthetic tuple dataset")
    g.add_argument("--domain", choices=["A", "B"], required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--resolution", type=int, default=128)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train from scratch")
    t.add_argument("--config", required=True)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.set_defaults(func=cmd_train)

    f = sub.add_parser("finetune", help="continue from a base checkpoint with a fresh optimizer")
    f.add_argument("--config", required=True)
    f.add_argument("--base", required=True)
    f.set_defaults(func=cmd_finetune)

    e = sub.add_parser("eval", help="predict and score a dataset")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--label", default="")
    e.add_argument("--no-refine", action="store_true", help="bypass the refinement decoder")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="generate shadows for a composite")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--comp", required=True)
    i.add_argument("--m-fo", required=True, nargs="+", help="one mask per foreground object, processed in order")
    i.add_argument("--m-bo")
    i.add_argument("--m-bs")
    i.add_argument("--no-refine", action="store_true")
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_infer)

    r = sub.add_parser("report", help="tabulate eval directories and draw qualitative grids")
    r.add_argument("--eval", required=True, nargs="+")
    r.add_argument("--out", required=True)
    r.add_argument("--grid-rows", type=int, default=4)
    r.add_argument("--title", default="")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonFiniteLoss, EmptyForeground) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CorruptDataset, DatasetEmpty, EmptyMask, ShapeMismatch, SchemaMismatch, FileNotFoundError,
            ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
