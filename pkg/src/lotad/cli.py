"""Command line: ``lotad train|sweep-k|validate|eval|replay``.

Exit codes: 0 success, 2 configuration error, 3 no valid decomposition.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from .decomp import ConstraintError, NoValidDecomposition
from .envs import MapError
from .harness import (
    ConfigError,
    ExperimentConfig,
    env_overrides,
    evaluate,
    replay,
    run,
    sweep_k,
    validate_decompositions,
)
from .rm import RMError

EXIT_OK, EXIT_CONFIG, EXIT_NO_DECOMPOSITION = 0, 2, 3


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file (include: supported)")
    for name in ExperimentConfig.field_names():
        p.add_argument("--" + name.replace("_", "-"), dest="cfg_" + name, metavar="VALUE",
                       help=argparse.SUPPRESS if name == "backend" else None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lotad", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train over all seeds and write logs, curves and policies")
    _add_config_flags(p)

    p = sub.add_parser("sweep-k", help="one run per candidate-set size")
    _add_config_flags(p)
    p.add_argument("--k-values", default="1,5,10,25")

    p = sub.add_parser("validate", help="list candidates with validity verdicts")
    _add_config_flags(p)

    for name, text in (("eval", "greedy rollouts of a saved policy"),
                       ("replay", "print one episode's events and machine states")):
        p = sub.add_parser(name, help=text)
        _add_config_flags(p)
        p.add_argument("--policy", required=True, help="policy file written by train")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--decomposition", type=int, default=None,
                       help="candidate index (default: the selector's best)")
        if name == "eval":
            p.add_argument("--n", type=int, default=100, help="number of episodes")
        else:
            p.add_argument("--act-epsilon", type=float, default=0.0,
                           help="exploration during the replayed episode")
    return parser


def load_config(args) -> ExperimentConfig:
    cli = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    if args.config:
        return ExperimentConfig.from_file(args.config, overrides=cli)
    values = env_overrides(os.environ)
    values.update(cli)
    return ExperimentConfig.from_mapping(values)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args)
        if args.command == "train":
            summary = run(config)
            sys.stdout.write(summary.table())
            print(f"outputs written to {config.output}")
        elif args.command == "sweep-k":
            try:
                ks = [int(x) for x in args.k_values.replace(",", " ").split()]
            except ValueError:
                raise ConfigError([f"k-values: expected integers, got {args.k_values!r}"]) from None
            for s in sweep_k(config, ks):
                sys.stdout.write(s.table())
            print(f"outputs written to {config.output}")
        elif args.command == "validate":
            _, rm, cons = config.load()
            validate_decompositions(rm, cons, out=sys.stdout)
        elif args.command == "eval":
            r = evaluate(config, args.policy, episodes=args.n, seed=args.seed,
                         decomposition=args.decomposition)
            print(f"decomposition {r.decomposition}: completion {r.completion_rate:.3f}, "
                  f"mean discounted reward {r.mean_reward:.4f}, mean steps {r.mean_steps:.1f} "
                  f"over {r.episodes} episodes")
        elif args.command == "replay":
            for line in replay(config, args.policy, seed=args.seed,
                               decomposition=args.decomposition, epsilon=args.act_epsilon):
                print(line)
    except NoValidDecomposition as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_DECOMPOSITION
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConstraintError, MapError, RMError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
