"""Command-line entry point: ``graspformer gen|train|predict|eval|gradcheck|bench``.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .checkpoint import FormatError
from .config import ConfigError, load_config
from .detect import ExtractionConfig
from .evaluation import ModelAgent, bench, eval_rounds, model_agent_factory
from .gradcheck import model_gradcheck
from .scenes import SCENARIOS, GenerationError, write_dataset
from .tensor import NumericalError
from .training import DatasetError, restore, train
from .tsdf import load_tsdf

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
GRADCHECK_TOL = 1e-3

log = logging.getLogger("graspformer")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _threshold(text: str) -> float:
    value = float(text)
    if not 0 < value < 1:
        raise argparse.ArgumentTypeError(f"threshold must lie in (0, 1), got {value}")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="graspformer", description="Transformer grasp detection on TSDF volumes.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="generate a synthetic scene dataset")
    p.add_argument("--scenario", choices=SCENARIOS, required=True)
    p.add_argument("--count", type=_positive, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--n", type=_positive, default=16, help="voxels per side")
    p.add_argument("--side-length", type=float, default=0.16, help="workspace edge in meters")

    p = sub.add_parser("train", help="train a model on a generated dataset")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--resume", type=Path)

    p = sub.add_parser("predict", help="predict grasps for one TSDF file")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--tsdf", type=Path, required=True)
    p.add_argument("--threshold", type=_threshold, default=0.9)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("eval", help="declutter evaluation on fresh synthetic scenes")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--rounds", type=_positive, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--repeats", type=_positive, default=5)
    p.add_argument("--scenario", choices=SCENARIOS, default="packed")
    p.add_argument("--threshold", type=_threshold, default=0.9)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full training loss")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--probes", type=_positive, default=10)

    p = sub.add_parser("bench", help="time TSDF-to-grasp-list inference")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--repeat", type=_positive, required=True)
    return parser


def _emit(text: str, out: Path | None = None) -> None:
    if out is None:
        print(text)
    else:
        out.write_text(text + "\n")


def cmd_gen(args) -> int:
    stems = write_dataset(args.out, args.count, args.seed, args.scenario, n=args.n, side_length=args.side_length)
    print(json.dumps({"scenes": len(stems), "out": str(args.out)}))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg, run = load_config(args.config)
    result = train(args.data, cfg, run, out_dir=args.out, resume=args.resume)
    print(json.dumps({"steps": result.state.step, "final_loss": result.losses[-1] if result.losses else None,
                      "skipped": result.skipped, "checkpoint": str(args.out / "last.gfck")}))
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg, params, _ = restore(args.ckpt)
    vol = load_tsdf(args.tsdf)
    if vol.n != cfg.n:
        raise FormatError(f"TSDF is {vol.n}³ but the checkpoint expects {cfg.n}³")
    poses = ModelAgent(cfg, params, ExtractionConfig(args.threshold)).predict(vol)
    _emit(json.dumps([p.to_json() for p in poses], indent=2), args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg, params, _ = restore(args.ckpt)
    summary = eval_rounds(model_agent_factory(cfg, params, args.threshold), args.rounds, args.seed,
                          repeats=args.repeats, scenario=args.scenario, n=cfg.n, side_length=cfg.side_length)
    print(json.dumps(summary.to_dict()))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg, run = load_config(args.config)
    results = model_gradcheck(cfg, probes=args.probes, seed=run.init_seed)
    worst = max(results, key=lambda r: r.rel_error)
    ok = worst.rel_error <= GRADCHECK_TOL
    print(json.dumps({"probes": len(results), "max_rel_error": worst.rel_error, "worst": worst.name,
                      "tolerance": GRADCHECK_TOL, "pass": ok}))
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_bench(args) -> int:
    cfg, params, _ = restore(args.ckpt)
    print(json.dumps(bench(cfg, params, args.repeat)))
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "predict": cmd_predict, "eval": cmd_eval,
            "gradcheck": cmd_gradcheck, "bench": cmd_bench}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, ConfigError, DatasetError, GenerationError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
