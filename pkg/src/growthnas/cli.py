"""Command line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import Config, ConfigError, load_config
from .engine import Search, build_data, build_space
from .evaluators import (
    SurrogateEvaluator,
    assess_scratch,
    brute_force_landscape,
    enumerate_blocks,
    top_fraction_threshold,
)
from .genome import NetworkGenome, SkeletonSpec, canonical_hash, dumps_genome, export_dot, loads_genome
from .space import OpSet, Widths, param_count
from .study import rank_study
from .supernet import evaluate_path, restore_supernet

log = logging.getLogger("growthnas")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _common(p: argparse.ArgumentParser, out_dir: bool = True) -> None:
    p.add_argument("--config", type=Path, help="key-value config file (section.key = value)")
    p.add_argument("--seed", type=int, help="override search.seed")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    if out_dir:
        p.add_argument("--out-dir", type=Path, help="directory for reports, logs and checkpoints")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="growthnas", description="Growth-based evolutionary architecture search")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("search", help="run the growth search")
    _common(p)

    p = sub.add_parser("resume", help="continue a search from its checkpoint")
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, help="defaults to OUT_DIR/checkpoint.bin")

    p = sub.add_parser("rank-study", help="ranking fidelity of pruned vs one-shot supernets")
    _common(p)

    p = sub.add_parser("bruteforce", help="enumerate the surrogate landscape of a tiny space")
    p.add_argument("--blocks", type=int, required=True)
    p.add_argument("--ops", type=int, required=True)
    p.add_argument("--opset", default="conv5")
    p.add_argument("--seed", type=int, default=0, help="surrogate seed")
    p.add_argument("--out-dir", type=Path)

    p = sub.add_parser("eval", help="assess one genome file")
    p.add_argument("genome", type=Path)
    p.add_argument("--evaluator", choices=["surrogate", "scratch", "shared"], default="surrogate")
    p.add_argument("--supernet", type=Path, help="supernet snapshot (shared evaluator)")
    _common(p, out_dir=False)

    p = sub.add_parser("export-dot", help="render a genome file as Graphviz DOT")
    p.add_argument("genome", type=Path)
    p.add_argument("--opset", default="conv5")
    p.add_argument("-o", "--output", type=Path, help="write here instead of stdout")
    return parser


def _config(args) -> Config:
    cfg = load_config(args.config) if getattr(args, "config", None) else Config()
    if getattr(args, "seed", None) is not None:
        cfg.search.seed = args.seed
    for item in getattr(args, "set", []):
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        cfg.set(key.strip(), value)
    return cfg.validate()


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def _write_outputs(search: Search, report, out_dir: Path) -> None:
    if report.pareto:
        best = report.pareto[0]
        genome = next(i.genome for i in search.state.population if i.id == best["id"])
        (out_dir / "best.genome").write_text(f"# {best['id']}\n" + dumps_genome(genome))


def cmd_search(args) -> int:
    cfg = _config(args)
    out = args.out_dir or Path("runs") / f"seed{cfg.search.seed}"
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(cfg.dumps())
    train, val = build_data(cfg)
    search = Search(cfg, train, val, out)
    report = search.run()
    _write_outputs(search, report, out)
    _emit({"out_dir": str(out), "report_digest": report.digest(), "pareto": [p["id"] for p in report.pareto]})
    return 0


def cmd_resume(args) -> int:
    ckpt = args.checkpoint or args.out_dir / "checkpoint.bin"
    search = Search.resume(ckpt, out_dir=args.out_dir)
    report = search.run()
    _write_outputs(search, report, args.out_dir)
    _emit({"out_dir": str(args.out_dir), "report_digest": report.digest(), "pareto": [p["id"] for p in report.pareto]})
    return 0


def cmd_rank_study(args) -> int:
    cfg = _config(args)
    report = rank_study(cfg)
    if args.out_dir:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        (args.out_dir / "study.csv").write_text(report.to_csv())
    print(report.summary())
    return 0


def cmd_bruteforce(args) -> int:
    if args.blocks < 1 or args.ops < 1:
        raise UsageError("--blocks and --ops must be positive")
    opset = OpSet.named(args.opset, args.ops)
    skeleton = SkeletonSpec(args.blocks)
    ev = SurrogateEvaluator(skeleton, opset, Widths(), args.seed)
    blocks = enumerate_blocks(opset)
    scores = brute_force_landscape(ev, blocks)
    idx = np.unravel_index(int(np.argmax(scores)), scores.shape)
    best = NetworkGenome(tuple(blocks[i] for i in idx), skeleton)
    result = {
        "n_networks": int(scores.size),
        "best_score": float(scores[idx]),
        "best_id": canonical_hash(best),
        "target_id": canonical_hash(ev.target),
        "argmax_is_target": best == ev.target,
        "top1pct_threshold": top_fraction_threshold(scores, 0.01),
    }
    if args.out_dir:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        (args.out_dir / "target.genome").write_text(dumps_genome(ev.target))
    _emit(result)
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    if args.evaluator == "shared":
        if args.supernet is None:
            raise UsageError("--supernet is required with --evaluator shared")
        net = restore_supernet(args.supernet)
        genome = loads_genome(args.genome.read_text(), net.skeleton, net.opset.K)
        _, val = build_data(cfg)
        acc = evaluate_path(net, genome, val, None, cfg.eval.batch_size)
        size = param_count(genome, net.widths, net.opset)
    else:
        skeleton, opset, widths = build_space(cfg)
        genome = loads_genome(args.genome.read_text(), skeleton, opset.K)
        if args.evaluator == "surrogate":
            acc = SurrogateEvaluator(skeleton, opset, widths, cfg.surrogate.seed).score(genome)
        else:
            train, val = build_data(cfg)
            skeleton, opset, widths = build_space(cfg, train)
            acc = assess_scratch(
                genome, train, val, cfg.study.scratch_epochs, cfg.search.seed, opset, widths,
                batch_size=cfg.train.batch_size, lr=cfg.train.lr, momentum=cfg.train.momentum,
                weight_decay=cfg.train.weight_decay, grad_clip=cfg.train.grad_clip,
            ).exp_acc
        size = param_count(genome, widths, opset)
    _emit({"id": canonical_hash(genome), "evaluator": args.evaluator, "accuracy": acc, "size": size})
    return 0


def cmd_export_dot(args) -> int:
    text = args.genome.read_text()
    n_blocks = sum(1 for line in text.splitlines() if line.strip() and not line.strip().startswith("#"))
    opset = OpSet.named(args.opset)
    genome = loads_genome(text, SkeletonSpec(max(n_blocks, 1)), opset.K)
    dot = export_dot(genome, opset.names)
    if args.output:
        args.output.write_text(dot)
    else:
        sys.stdout.write(dot)
    return 0


COMMANDS = {
    "search": cmd_search,
    "resume": cmd_resume,
    "rank-study": cmd_rank_study,
    "bruteforce": cmd_bruteforce,
    "eval": cmd_eval,
    "export-dot": cmd_export_dot,
}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(str(exc))
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        sys.stderr.write(f"growthnas {args.command}: {exc}\n")
        return 1
    except ConfigError as exc:
        sys.stderr.write(f"growthnas {args.command}: config error: {exc}\n")
        return 1
    except Exception as exc:
        log.debug("failure", exc_info=True)
        sys.stderr.write(f"growthnas {args.command}: error: {exc}\n")
        return 2
