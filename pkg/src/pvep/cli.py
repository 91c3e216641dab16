"""Command-line pipeline: gen-data -> train -> attack -> eval -> report.

Every subcommand is pure given its flags: outputs land atomically at the
declared --out path, randomness comes only from --seed, and the only
environment variable consulted is PVEP_THREADS (evaluation worker count).
Exit codes: 0 success, 1 runtime failure (one-line cause on stderr), 2
usage error.
"""

from __future__ import annotations

import argparse
import sys

from .datasets import gen_general, gen_robotic, read_bundle, write_bundle
from .harness import DEFAULT_CONFIG, build_attack_grid, evaluate, parse_config, read_report, write_report
from .imgcore import SeededRng
from .nnmodel import PolicyArch, PolicyNet, load_checkpoint, train
from .patchopt import THREAT_LEVELS, PatchOptConfig, optimize_patch, resolve_threat
from .perturb import write_patch
from .tabletop import TASKS


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pvep",
        description="physical-vulnerability evaluation pipeline for a small "
        "vision-driven manipulation policy",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a training/attack data bundle")
    p.add_argument("--domain", choices=("general", "robotic"), required=True)
    p.add_argument("--count", type=int, required=True, help="number of pairs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="bundle file to write")

    p = sub.add_parser("train", help="train the base model or fine-tune the victim")
    p.add_argument("--mode", choices=("base", "finetune"), required=True)
    p.add_argument("--data", required=True, help="training bundle")
    p.add_argument("--init", help="checkpoint to start from (finetune mode)")
    p.add_argument("--epochs", type=int, required=True)
    p.add_argument("--lr", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="checkpoint file to write")

    p = sub.add_parser("attack", help="optimize an adversarial patch")
    p.add_argument("--level", choices=THREAT_LEVELS, required=True)
    p.add_argument("--target", type=int, required=True, help="target action index")
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--step", type=float, default=0.01)
    p.add_argument("--side", type=int, default=6, help="patch side in pixels")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--base", help="surrogate checkpoint (bb/rbb)")
    p.add_argument("--victim", help="victim checkpoint (gb/wb)")
    p.add_argument("--general", required=True, help="general data bundle")
    p.add_argument("--robotic", help="robotic data bundle (rbb/wb)")
    p.add_argument("--out", required=True, help="patch file to write")

    p = sub.add_parser("eval", help="run the attack grid and write a CSV report")
    p.add_argument("--model", required=True, help="victim checkpoint")
    p.add_argument("--grid", help="grid config file (defaults to the full grid)")
    p.add_argument("--episodes", type=int, help="episodes per cell")
    p.add_argument("--seed", type=int, help="master evaluation seed")
    p.add_argument("--out", required=True, help="report CSV to write")

    p = sub.add_parser("report", help="re-emit an eval report as csv or json")
    p.add_argument("--eval", dest="eval_path", required=True, help="report CSV from eval")
    p.add_argument("--format", choices=("csv", "json"), required=True)
    p.add_argument("--out", required=True)

    return parser


def _validate(parser: argparse.ArgumentParser, args: argparse.Namespace) -> None:
    if args.command == "train" and args.mode == "finetune" and not args.init:
        parser.error("--init is required with --mode finetune")
    if args.command == "attack":
        if args.level in ("bb", "rbb") and not args.base:
            parser.error(f"--base is required with --level {args.level}")
        if args.level in ("gb", "wb") and not args.victim:
            parser.error(f"--victim is required with --level {args.level}")
        if args.level in ("rbb", "wb") and not args.robotic:
            parser.error(f"--robotic is required with --level {args.level}")


def _cmd_gen_data(args) -> int:
    rng = SeededRng(args.seed)
    bundle = gen_general(args.count, rng) if args.domain == "general" else gen_robotic(
        args.count, rng
    )
    write_bundle(bundle, args.out)
    print(f"gen-data: {args.count} {args.domain} pairs (seed {args.seed}) -> {args.out}")
    return 0


def _cmd_train(args) -> int:
    bundle = read_bundle(args.data)
    rng = SeededRng(args.seed)
    if args.mode == "base":
        net = PolicyNet.init(PolicyArch(), rng)
    else:
        net = load_checkpoint(args.init)
    # fine-tuning runs on a much larger bundle; the bigger batch roughly
    # halves wall-clock per epoch without hurting the schedule
    history = train(
        net,
        bundle.images,
        bundle.instrs,
        bundle.labels,
        epochs=args.epochs,
        lr=args.lr,
        batch_size=32 if args.mode == "base" else 64,
        rng=rng,
    )
    net.save(args.out)
    acc = history[-1][2] if history else float("nan")
    print(
        f"train: {args.mode} on {len(bundle)} {bundle.domain} pairs, "
        f"{args.epochs} epochs, final acc {acc:.4f} -> {args.out}"
    )
    return 0


def _cmd_attack(args) -> int:
    base = load_checkpoint(args.base) if args.base else None
    victim = load_checkpoint(args.victim) if args.victim else None
    general = read_bundle(args.general)
    robotic = read_bundle(args.robotic) if args.robotic else None
    model, data = resolve_threat(args.level, base, victim, general, robotic)
    cfg = PatchOptConfig(
        target_action=args.target,
        iterations=args.iters,
        step_size=args.step,
        side_px=args.side,
    )
    patch = optimize_patch(model, data, cfg, SeededRng(args.seed))
    write_patch(patch, args.out)
    print(
        f"attack: {args.level} patch ({args.side}px, target {args.target}, "
        f"{args.iters} iters, seed {args.seed}) -> {args.out}"
    )
    return 0


def _cmd_eval(args) -> int:
    net = load_checkpoint(args.model)
    if args.grid:
        with open(args.grid) as fh:
            config_text = fh.read()
    else:
        config_text = DEFAULT_CONFIG
    cfg = parse_config(config_text)
    episodes = args.episodes if args.episodes is not None else (cfg.episodes or 200)
    seed = args.seed if args.seed is not None else (cfg.seed or 0)
    grid = build_attack_grid(config_text)
    report = evaluate(net, TASKS, grid, episodes, seed)
    write_report(report, "csv", args.out)
    print(
        f"eval: {len(grid)} attacks x {len(TASKS)} tasks x {episodes} episodes "
        f"(seed {seed}) -> {args.out}"
    )
    return 0


def _cmd_report(args) -> int:
    report = read_report(args.eval_path)
    write_report(report, args.format, args.out)
    print(f"report: {args.eval_path} as {args.format} -> {args.out}")
    return 0


_HANDLERS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "attack": _cmd_attack,
    "eval": _cmd_eval,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _validate(parser, args)
    try:
        return _HANDLERS[args.command](args)
    except Exception as exc:  # runtime failure: one-line cause, exit 1
        print(f"pvep: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
