"""Command-line entry point: ``dribo {train,eval,verify,export-embeddings,grad-check}``."""

from __future__ import annotations

import argparse
import sys

from ..checkpoint import CheckpointError
from ..ndgrad import ContractError
from .config import ConfigError, RunConfig, paper_scale


def _parse_overrides(items: list[str]) -> dict:
    out: dict = {}
    for item in items:
        key, sep, value = item.partition("=")
        sec, dot, name = key.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} is not section.key=value")
        out.setdefault(sec, {})[name] = value
    return out


def load_config(args) -> RunConfig:
    cfg = paper_scale(args.paper_scale) if args.paper_scale else (
        RunConfig.from_file(args.config) if args.config else RunConfig())
    if args.set:
        cfg = cfg.replace(**_parse_overrides(args.set))
    return cfg


def cmd_train(args) -> int:
    from ..agents.training import TrainingAborted, train

    cfg = load_config(args)
    try:
        result = train(cfg, args.output)
    except TrainingAborted as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    for key in ("eval/return_train", "eval/return_test", "eval/skl_probe"):
        print(f"{key} {result.last(key)!r}")
    print(f"artifacts {result.output_dir}")
    return 0


def cmd_eval(args) -> int:
    from .evaluate import eval_generalization

    report = eval_generalization(args.checkpoint, args.episodes, args.seed)
    print(f"train_return {report['train_return']:.6g} +- {report['train_return_std']:.6g}")
    print(f"test_return {report['test_return']:.6g} +- {report['test_return_std']:.6g}")
    print(f"skl_probe {report['skl_probe']:.6g}")
    return 0


def cmd_verify(args) -> int:
    from ..oracle import run_suite

    records = run_suite(seed=args.seed)
    for rec in records:
        print(rec.line())
    failed = sum(1 for r in records if r.passed is False)
    asserted = sum(1 for r in records if r.passed is not None)
    print(f"verify: {asserted - failed}/{asserted} checks passed")
    return 0 if failed == 0 else 1


def cmd_export(args) -> int:
    from .evaluate import export_embeddings

    n = export_embeddings(args.checkpoint, args.output, args.episodes, args.mode, args.seed)
    print(f"wrote {n} rows to {args.output}")
    return 0


def cmd_grad_check(args) -> int:
    from ..gradsuite import run_gradient_suite

    records = run_gradient_suite(seed=args.seed, trials=args.trials)
    for rec in records:
        print(rec.line())
    failed = sum(1 for r in records if not r.passed)
    print(f"grad-check: {len(records) - failed}/{len(records)} checks passed")
    return 0 if failed == 0 else 1


def _positive(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return n


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dribo", description="Multi-view information-bottleneck RL at desk scale.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train an agent with the representation loss")
    t.add_argument("--config", help="config file (key = value with [sections])")
    t.add_argument("--paper-scale", choices=("sac", "ppo"), help="start from the published-scale preset")
    t.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override one key")
    t.add_argument("--output", help="output directory (default: [run] output_dir)")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="train/test background returns and the SKL probe")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--episodes", type=_positive, default=8)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(fn=cmd_eval)

    v = sub.add_parser("verify", help="exact information-theoretic checks on tabular POMDPs")
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(fn=cmd_verify)

    x = sub.add_parser("export-embeddings", help="write per-step representations to CSV")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--output", required=True)
    x.add_argument("--episodes", type=_positive, default=4)
    x.add_argument("--mode", choices=("train", "test"), default="test")
    x.add_argument("--seed", type=int, default=0)
    x.set_defaults(fn=cmd_export)

    g = sub.add_parser("grad-check", help="finite-difference checks of every op and loss")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--trials", type=_positive, default=20)
    g.set_defaults(fn=cmd_grad_check)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except (ConfigError, ContractError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
