"""Command-line entry point: ``splitlab run | preset list | privacy-report | data``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from ..data import DATASETS, default_data_dir
from .config import ConfigError, DpSettings, ExperimentConfig, preset, preset_names
from .runner import DatasetMissing, run

EXIT_CONFIG = 2
EXIT_DATASET = 3


def build_config(args) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.load(args.config)
    elif args.preset:
        cfg = preset(args.preset)
    else:
        raise ConfigError("run needs --config or --preset")
    if args.preset and args.config:
        raise ConfigError("--config and --preset are mutually exclusive")
    if args.seed is not None:
        cfg.seed = args.seed
    if args.iterations is not None:
        cfg.iterations = args.iterations
    if args.epsilon is not None:
        cfg.dp = DpSettings(epsilon=args.epsilon, **({} if cfg.dp is None else
                                                     {"delta": cfg.dp.delta, "clip_norm": cfg.dp.clip_norm}))
    if args.transport is not None:
        cfg.transport = args.transport
    if args.out is not None:
        cfg.out_dir = args.out
    if args.data_dir is not None:
        cfg.data_dir = args.data_dir
    if args.host is not None:
        cfg.host = args.host
    if args.port is not None:
        cfg.port = args.port
    if args.timing:
        cfg.deterministic = False
    cfg.validate()
    return cfg


def cmd_run(args) -> int:
    cfg = build_config(args)
    report = run(cfg, role=args.role)
    if report is not None:
        summary = report.summary()
        summary.pop("grids")
        print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_preset_list(args) -> int:
    for name in preset_names():
        cfg = preset(name)
        dp = "no DP" if cfg.dp is None else f"eps={cfg.dp.epsilon}"
        extra = []
        if cfg.defense:
            extra.append(f"pca_k={cfg.defense.pca_k}")
        if cfg.excluded_classes:
            extra.append(f"excluded={cfg.excluded_classes}")
        print(f"{name:24s} {cfg.dataset:14s} {cfg.server_mode:6s} {cfg.iterations:>7d} it "
              f"{cfg.image_size}px {dp} {' '.join(extra)}".rstrip())
    return 0


def cmd_privacy_report(args) -> int:
    from ..dp import DpConfig, epsilon_for, privacy_report

    if (args.epsilon is None) == (args.sigma is None):
        raise ConfigError("give exactly one of --epsilon and --sigma")
    q = args.batch_size / args.dataset_size
    delta = args.delta if args.delta is not None else 1 / args.dataset_size
    try:
        dp = DpConfig(delta, q, args.steps, epsilon_target=args.epsilon, noise_multiplier=args.sigma,
                      clip_norm=args.clip)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    report = privacy_report(dp, None)
    if dp.sigma > 0:
        report["epsilon_spent"], report["best_alpha"] = epsilon_for(q, dp.sigma, args.steps, delta)
    report["steps"] = args.steps
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def cmd_data(args) -> int:
    from ..synth import ensure_dataset

    root = ensure_dataset(args.name, args.data_dir or default_data_dir(), n_train=args.n_train,
                          n_test=args.n_test, seed=args.seed)
    print(root)
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="splitlab", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment")
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--preset", help="named preset (see `preset list`)")
    p.add_argument("--seed", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--epsilon", type=float, help="enable DP with this epsilon target")
    p.add_argument("--transport", choices=("inproc", "tcp"))
    p.add_argument("--out", help="output directory")
    p.add_argument("--data-dir", help="dataset directory (default: $SPLITLAB_DATA)")
    p.add_argument("--role", choices=("both", "client", "server"), default="both",
                   help="run both actors here, or one TCP peer")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--timing", action="store_true", help="record wall-clock times (not reproducible)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("preset", help="inspect presets")
    psub = p.add_subparsers(dest="action", required=True)
    psub.add_parser("list").set_defaults(func=cmd_preset_list)

    p = sub.add_parser("privacy-report", help="epsilon spent or noise needed for a DP schedule")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--steps", type=int, default=10000)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--dataset-size", type=int, default=30000)
    p.add_argument("--delta", type=float)
    p.add_argument("--clip", type=float, default=1.0)
    p.set_defaults(func=cmd_privacy_report)

    p = sub.add_parser("data", help="write offline stand-in datasets in IDX format")
    p.add_argument("name", choices=DATASETS)
    p.add_argument("--data-dir")
    p.add_argument("--n-train", type=int, default=60000)
    p.add_argument("--n-test", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_data)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DatasetMissing as exc:
        print(f"error: dataset missing: {exc}; generate stand-ins with `splitlab data`", file=sys.stderr)
        return EXIT_DATASET


if __name__ == "__main__":
    sys.exit(main())
