"""Command line: train on manifests, infer prediction manifests."""

from __future__ import annotations

import argparse
import sys

from .config import NetworkConfig, TrainConfig
from .infer import infer_directory
from .train import load_checkpoint, train


def cmd_train(args) -> int:
    network_kwargs = dict(variant=args.variant, merge=args.merge,
                          bilinear_sampling=not args.nearest_sampling)
    network = NetworkConfig.toy(**network_kwargs) if args.toy else NetworkConfig(**network_kwargs)
    cfg = TrainConfig(epochs=args.epochs, max_lr=args.max_lr, seed=args.seed,
                      toy=args.toy, network=network)
    trace = train(args.manifests, args.out, cfg, batch_size=args.batch_size)
    print(f"final loss {trace['loss'][-1]:.4f} after {cfg.epochs} epochs")
    return 0


def cmd_infer(args) -> int:
    model = load_checkpoint(args.checkpoint)
    infer_directory(model, args.manifests, args.out, checkpoint_name=args.checkpoint)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bevtrainer")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit the network on preprocessed manifests")
    p.add_argument("--manifests", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variant", choices=("cam3d", "cam", "3d"), default="cam3d")
    p.add_argument("--merge", choices=("softmax", "max"), default="softmax")
    p.add_argument("--toy", action="store_true",
                   help="quarter channel widths for desk-scale runs")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--max-lr", type=float, default=0.001)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--nearest-sampling", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="write prediction manifests for a directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifests", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "train" and args.epochs is None:
        args.epochs = 60 if args.toy else 100
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
