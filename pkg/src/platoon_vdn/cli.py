"""Command line entry point: ``platoon-vdn train|eval|compare``.

Exit codes: 0 success, 2 configuration error, 3 runtime error.  Log
verbosity comes from ``PLATOON_VDN_LOG`` (``DEBUG``, ``INFO``, ``WARNING``...).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import config, harness, nn
from .config import ConfigError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _multiples(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad payload multiples {text!r}") from exc
    if not vals or any(v < 0 for v in vals):
        raise argparse.ArgumentTypeError("payload multiples must be non-negative")
    return [int(v) if v.is_integer() else v for v in vals]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="platoon-vdn", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a VDN or MARL policy")
    t.add_argument("--config", required=True, type=Path)
    t.add_argument("--seed", type=int, default=None, help="overrides rng_seed in the config")
    t.add_argument("--algo", choices=("vdn", "marl"), default="vdn")
    t.add_argument("--tau", type=float, default=None, help="overrides tau in the config")
    t.add_argument("--episodes", type=int, default=None, help="overrides n_episodes")
    t.add_argument("--out-dir", type=Path, required=True)

    e = sub.add_parser("eval", help="greedy evaluation over payload multiples")
    e.add_argument("--config", type=Path, default=None,
                   help="scenario to evaluate on (defaults to the checkpoint's)")
    e.add_argument("--checkpoint", type=Path, default=None)
    e.add_argument("--algo", choices=harness.ALGOS, default=None,
                   help="random, or the checkpoint's algorithm")
    e.add_argument("--payload-multiples", type=_multiples, default=list(range(1, 11)))
    e.add_argument("--episodes", type=int, default=500)
    e.add_argument("--seed", type=int, default=1)
    e.add_argument("--trace-episode", type=int, default=0)
    e.add_argument("--out-dir", type=Path, required=True)

    c = sub.add_parser("compare", help="evaluate random plus checkpoints on one payload sweep")
    c.add_argument("--config", type=Path, required=True)
    c.add_argument("--checkpoint", type=Path, action="append", default=[],
                   help="repeatable; algorithm read from each checkpoint")
    c.add_argument("--payload-multiples", type=_multiples, default=list(range(1, 11)))
    c.add_argument("--episodes", type=int, default=500)
    c.add_argument("--seed", type=int, default=1)
    c.add_argument("--out-dir", type=Path, required=True)
    return p


def _load_cfg(path: Path, **overrides) -> config.ScenarioConfig:
    cfg = config.load(path)
    changes = {k: v for k, v in overrides.items() if v is not None}
    return cfg.replace(**changes) if changes else cfg


def cmd_train(args) -> int:
    cfg = _load_cfg(args.config, rng_seed=args.seed, tau=args.tau, n_episodes=args.episodes)
    harness.run_training(cfg, args.algo, args.out_dir)
    print(f"trained {args.algo} for {cfg.n_episodes} episodes -> {args.out_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = config.load(args.config) if args.config is not None else None
    if args.checkpoint is None:
        if args.algo not in (None, "random"):
            raise ConfigError(f"--algo {args.algo} needs --checkpoint")
        if cfg is None:
            raise ConfigError("evaluating the random policy needs --config")
        algo = "random"
    else:
        algo = args.algo or "vdn"
        if algo == "random":
            raise ConfigError("--algo random does not take a checkpoint")
    res = harness.run_evaluation(cfg, algo, args.out_dir, args.payload_multiples, args.episodes,
                                 args.seed, args.checkpoint, args.trace_episode)
    for row in res.rows:
        print(f"{row['algo']:>6} x{row['payload_multiple']:<4} "
              f"delivery={row['delivery_probability']:.3f}")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = config.load(args.config)
    rows = []
    targets = [("random", None)]
    for ck in args.checkpoint:
        _, meta = nn.load_checkpoint(ck)
        targets.append((meta["algo"], ck))
    for algo, ck in targets:
        sub = args.out_dir / (algo if ck is None else f"{algo}_{Path(ck).parent.name or 'ckpt'}")
        res = harness.run_evaluation(cfg, algo, sub, args.payload_multiples, args.episodes,
                                     args.seed, ck)
        rows.extend(res.rows)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    harness.write_csv(args.out_dir / "comparison.csv", rows, harness.METRIC_COLUMNS)
    for row in rows:
        print(f"{row['algo']:>6} x{row['payload_multiple']:<4} "
              f"delivery={row['delivery_probability']:.3f}")
    return EXIT_OK


def main(argv=None) -> int:
    level = os.environ.get("PLATOON_VDN_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"train": cmd_train, "eval": cmd_eval, "compare": cmd_compare}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (nn.TrainingError, OSError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
