import argparse
import logging
import sys

from .experiments import COMMANDS, run_experiment


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stsccl", description="Contrastive spatiotemporal forecasting experiments")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="flat 'section.key = value' config file")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", default="runs", help="output directory")
    parser.add_argument("--checkpoint", help="checkpoint for 'evaluate' (default: OUT/checkpoint.pt)")
    parser.add_argument("--param", help="sweep axis: epsilon, top_u, edge_mask_rate, attr_mask_rate")
    parser.add_argument("--values", help="sweep grid, 'lo..hi' or comma list")
    gen = parser.add_argument_group("generate-synthetic")
    gen.add_argument("--nodes", type=int)
    gen.add_argument("--days", type=int)
    gen.add_argument("--interval", type=int)
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command not in ("generate-synthetic", "report") and not args.config:
        print(f"stsccl {args.command}: --config is required", file=sys.stderr)
        return 2
    data = {"nodes": args.nodes, "days": args.days, "interval": args.interval}
    if args.command == "generate-synthetic" and args.seed is not None:
        data["seed"] = args.seed
    try:
        result = run_experiment(args.config, args.command, seed=args.seed, out=args.out, data=data,
                                checkpoint=args.checkpoint, param=args.param, values=args.values)
    except (FileNotFoundError, ValueError) as err:
        print(f"stsccl {args.command}: {err}", file=sys.stderr)
        return 1
    for key, value in result.items():
        if key in ("reports", "result"):
            continue
        print(f"{key}: {value}")
    if result.get("flag"):
        print(result["flag"])
    return 0


if __name__ == "__main__":
    sys.exit(main())
