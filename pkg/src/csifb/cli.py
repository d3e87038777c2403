"""Command-line front end: experiment runs and channel inspection."""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import replace

from .channel import ArModel, generate_sequence, sequence_to_csv
from .harness import ExperimentConfig, export, load_config, run_experiment


def _parse_bits(text: str) -> tuple:
    return tuple(
        math.inf if v.strip() in ("inf", "identity") else int(v)
        for v in text.split(",")
    )


def _cmd_run(args) -> int:
    cfg = ExperimentConfig()
    if args.config:
        cfg = load_config(args.config, base=cfg)
    overrides = {}
    if args.bits:
        overrides["bits"] = _parse_bits(args.bits)
    if args.trials is not None:
        overrides["trials"] = args.trials
    if args.seed is not None:
        overrides["base_seed"] = args.seed
    if overrides:
        cfg = replace(cfg, **overrides)

    result = run_experiment(cfg)
    paths = export(result, args.out, plot=args.plot)
    print(f"{cfg.trials} trials, bits {list(cfg.bits)}, fm={cfg.fm}")
    for row in sorted(result.aggregates, key=lambda r: (r.scheme, r.bits)):
        print(
            f"  {row.scheme:>12s} b={row.bits}: mse={row.mse_mean:.4g} "
            f"snr={row.snr_db_mean:+.4f} dB bits/slot={row.bits_per_slot_mean:.3g}"
        )
    for p in paths:
        print(f"wrote {p}")
    return 0


def _cmd_inspect_channel(args) -> int:
    model = ArModel.from_doppler(args.fm, args.order, (args.nr, args.nt))
    seq = generate_sequence(model, (args.nr, args.nt), args.slots, seed=args.seed)
    sequence_to_csv(seq, args.out)
    print(f"wrote {args.out} ({args.slots} slots, {args.nr}x{args.nt}, fm={args.fm})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="csifb",
        description="Link-level simulator for residual CSI feedback with twin predictors",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run the Monte-Carlo experiment sweep")
    run_p.add_argument("--config", help="key = value configuration file")
    run_p.add_argument("--bits", help="comma-separated bit depths, e.g. 1,2,3")
    run_p.add_argument("--trials", type=int, help="number of Monte-Carlo trials")
    run_p.add_argument("--seed", type=int, help="base seed")
    run_p.add_argument("--out", default="results", help="output directory")
    run_p.add_argument("--plot", action="store_true", help="also write bar charts")
    run_p.set_defaults(func=_cmd_run)

    ins_p = sub.add_parser("inspect-channel", help="dump a channel realization as CSV")
    ins_p.add_argument("--fm", type=float, required=True, help="normalized Doppler")
    ins_p.add_argument("--slots", type=int, required=True, help="number of slots")
    ins_p.add_argument("--seed", type=int, required=True, help="generator seed")
    ins_p.add_argument("--nr", type=int, default=1, help="receive antennas")
    ins_p.add_argument("--nt", type=int, default=2, help="transmit antennas")
    ins_p.add_argument("--order", type=int, default=1, help="AR model order")
    ins_p.add_argument("--out", default="channel.csv", help="output CSV path")
    ins_p.set_defaults(func=_cmd_inspect_channel)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # surface a clean message, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
