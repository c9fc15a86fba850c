"""Command-line interface.

    oncode [--config cfg.json] [--seed N] [--out DIR] <command> [flags]

Commands: simulate, pretrain, train, predict, evaluate, fit-tgi.
Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import __version__, harness
from .errors import CheckpointError, ConfigError, DataError, NumericalError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oncode",
        description="Tumor volume dynamics: conditioned neural ODE with a "
                    "heterogeneous graph encoder, TGI baseline, and mRECIST "
                    "evaluation.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, help="master seed (overrides config)")
    parser.add_argument("--out", help="output directory (overrides config)")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="log at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("simulate", help="generate and export a synthetic cohort")

    sub.add_parser("pretrain", help="pretrain the gene-graph VGAE trunk")

    p_train = sub.add_parser("train", help="train the configured head")
    p_train.add_argument("--epochs", type=int, help="override train.epochs")
    p_train.add_argument("--lr", type=float, help="override train.lr")
    p_train.add_argument("--fold", type=int,
                         help="held-out fold id; -1 trains on the full cohort")
    p_train.add_argument("--window", type=float,
                         help="observation window in days (0 = full series)")
    p_train.add_argument("--head", choices=["dynamics", "classifier"],
                         help="override model.head")
    p_train.add_argument("--no-graph-encoder", action="store_true",
                         help="ablation: drop the graph embedding from beta")
    p_train.add_argument("--pretrained", help="VGAE checkpoint to initialize the "
                                              "gene-GCN trunk (sets use_pretraining)")

    p_predict = sub.add_parser("predict", help="write predicted trajectories")
    p_predict.add_argument("--checkpoint", required=True)
    p_predict.add_argument("--window", type=float, required=True)
    p_predict.add_argument("--model-id")
    p_predict.add_argument("--treatment")

    p_eval = sub.add_parser("evaluate", help="windowed prediction report")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--fold", type=int, help="held-out fold id")
    p_eval.add_argument("--split", choices=["test", "train", "all"])
    p_eval.add_argument("--windows", help="comma-separated window days")
    p_eval.add_argument("--no-tgi", action="store_true",
                        help="skip the TGI comparison columns")

    p_tgi = sub.add_parser("fit-tgi", help="fit the TGI baseline per experiment")
    p_tgi.add_argument("--window", type=float,
                       help="fit window in days (0 = full series)")
    return parser


def _overrides_from_args(args) -> dict:
    o: dict = {}
    if args.seed is not None:
        o["seed"] = args.seed
    if args.out is not None:
        o["out_dir"] = args.out
    cmd = args.command
    if cmd == "train":
        train, model = {}, {}
        if args.epochs is not None:
            train["epochs"] = args.epochs
        if args.lr is not None:
            train["lr"] = args.lr
        if args.fold is not None:
            train["fold"] = None if args.fold < 0 else args.fold
        if args.window is not None:
            train["window_days"] = None if args.window == 0 else args.window
        if args.head is not None:
            model["head"] = args.head
        if args.no_graph_encoder:
            model["use_graph_encoder"] = False
        if args.pretrained is not None:
            model["use_pretraining"] = True
            train["pretrained_checkpoint"] = args.pretrained
        if train:
            o["train"] = train
        if model:
            o["model"] = model
    elif cmd == "evaluate":
        ev, train = {}, {}
        if args.split is not None:
            ev["split"] = args.split
        if args.windows is not None:
            ev["windows"] = [float(w) for w in args.windows.split(",") if w]
        if args.no_tgi:
            ev["with_tgi"] = False
        if args.fold is not None:
            train["fold"] = args.fold
        if ev:
            o["evaluate"] = ev
        if train:
            o["train"] = train
    elif cmd == "fit-tgi":
        if args.window is not None:
            o["train"] = {"window_days": None if args.window == 0 else args.window}
    return o


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = harness.load_config(args.config, _overrides_from_args(args))
        if args.command == "simulate":
            paths = harness.cmd_simulate(config)
            print("\n".join(sorted(paths.values())))
        elif args.command == "pretrain":
            print(harness.cmd_pretrain(config))
        elif args.command == "train":
            print(harness.cmd_train(config))
        elif args.command == "predict":
            keys = harness.cmd_predict(config, args.checkpoint, args.window,
                                       model_id=args.model_id,
                                       treatment=args.treatment)
            print(f"predicted {len(keys)} experiment(s)")
        elif args.command == "evaluate":
            report = harness.cmd_evaluate(config, args.checkpoint)
            for entry in report["windows"]:
                m = entry["metrics"]
                print(f"window {entry['window_days']:g}d: "
                      f"r2={_fmt(m['r2'])} auroc={_fmt(m['auroc'])}")
        elif args.command == "fit-tgi":
            payload = harness.cmd_fit_tgi(config)
            m = payload["metrics"]
            print(f"fit {payload['n_fit']} experiment(s), "
                  f"skipped {len(payload['skipped'])}: "
                  f"r2={_fmt(m['r2'])} spearman={_fmt(m['spearman'])}")
        return EXIT_OK
    except ConfigError as exc:
        print(f"oncode: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError) as exc:
        print(f"oncode: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"oncode: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def _fmt(value) -> str:
    return "n/a" if value is None else f"{value:.4f}"


if __name__ == "__main__":
    sys.exit(main())
