"""Command line: ``isadre {train,eval,verify,bench}``."""

from __future__ import annotations

import argparse
import logging
import sys
from contextlib import nullcontext
from pathlib import Path

from .config import ConfigError, ExperimentConfig, load_config

log = logging.getLogger("isadre")


def _thread_limit(n):
    if n is None:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _resolve(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        config = config.with_overrides(seed=args.seed)
    if args.out is not None:
        config = config.with_overrides(output_dir=str(args.out))
    return config


def cmd_train(args) -> int:
    from .experiment import CHECKPOINT_NAME, run_train

    config = _resolve(args)
    state = run_train(config, resume_from=args.checkpoint)
    last = state.loss_history[-1][1] if state.loss_history else float("nan")
    print(f"trained {state.step} steps; final loss {last:.6g}; "
          f"checkpoint {Path(config.output_dir) / CHECKPOINT_NAME}; config hash {config.config_hash()}")
    return 0


def cmd_eval(args) -> int:
    from .experiment import CHECKPOINT_NAME, REPORT_COLUMNS, REPORT_NAME, run_eval

    config = _resolve(args)
    checkpoint = args.checkpoint or Path(config.output_dir) / CHECKPOINT_NAME
    rows = run_eval(config, checkpoint)
    print(",".join(REPORT_COLUMNS))
    for r in rows:
        print(",".join(str(r[c]) for c in REPORT_COLUMNS))
    print(f"report written to {Path(config.output_dir) / REPORT_NAME}", file=sys.stderr)
    return 0


def cmd_verify(args) -> int:
    from .verify import format_report, run_battery

    results = run_battery(seed=args.seed or 0, quick=args.quick)
    text = format_report(results)
    print(text)
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "verify.txt").write_text(text + "\n")
    return 0 if all(r.passed for r in results) else 1


def cmd_bench(args) -> int:
    from .presets import PRESETS, run_preset

    if args.name not in PRESETS:
        print(f"unknown preset {args.name!r}; choose from {sorted(PRESETS)}", file=sys.stderr)
        return 2
    out = Path(args.out or Path("runs") / args.name)
    rows = run_preset(args.name, out, seed=args.seed)
    for r in rows:
        print(f"{r['method']:>18} {r['supervision']:>14} NFE={r['NFE']:<3} {r['metric']:>12} "
              f"{r['value']:.5g} +- {r['stderr']:.2g}")
    print(f"report written to {out / 'report.csv'}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="isadre", description="Secant-alignment density ratio estimation")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True, checkpoint=True):
        if config:
            p.add_argument("--config", help="YAML experiment config")
        if checkpoint:
            p.add_argument("--checkpoint", help="checkpoint to evaluate, or to resume training from")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--threads", type=int, help="cap BLAS/OpenMP threads")

    p = sub.add_parser("train", help="train a model and write checkpoint, metrics and resolved config")
    common(p)
    p.set_defaults(fn=cmd_train)
    p = sub.add_parser("eval", help="evaluate a checkpoint and write report.csv")
    common(p)
    p.set_defaults(fn=cmd_eval)
    p = sub.add_parser("verify", help="run the property battery; nonzero exit on any failure")
    common(p, config=False, checkpoint=False)
    p.add_argument("--quick", action="store_true", help="smaller sample sizes")
    p.set_defaults(fn=cmd_verify)
    p = sub.add_parser("bench", help="run a named preset suite")
    p.add_argument("name")
    common(p, config=False, checkpoint=False)
    p.set_defaults(fn=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit(args.threads):
            return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
