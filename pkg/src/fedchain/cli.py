"""Command-line interface.

Subcommands:

* run <config.json>        one simulation; metrics CSV to stdout or --out,
                           optional chain export with --chain.
* experiment <name>        scripted experiment sweep; per-run CSVs, a
                           summary CSV, and figures into --out.
* inspect <chain-file>     pretty-print one block or the whole chain.
* verify <chain-file>      integrity audit; nonzero exit with a reason line
                           on the first failure.
"""

from __future__ import annotations

import argparse
import sys

from . import experiments, ledger, simulation
from .config import load_config
from .netsim import DeadlockError


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    sim = simulation.Simulation(cfg)
    try:
        log = sim.run()
    except DeadlockError as exc:
        print(f"deadlock: {exc}", file=sys.stderr)
        return 2
    if args.out:
        log.write_csv(args.out)
    else:
        sys.stdout.write(log.to_csv())
    if args.chain:
        sim.export_chain(args.chain)
    return 0


def _cmd_experiment(args) -> int:
    if args.name not in experiments.EXPERIMENTS:
        print(f"unknown experiment {args.name!r}; choose from "
              f"{sorted(experiments.EXPERIMENTS)}", file=sys.stderr)
        return 2
    runner, writer = experiments.EXPERIMENTS[args.name]
    seeds = tuple(args.seeds) if args.seeds else experiments.DEFAULT_SEEDS
    report = runner(seeds=seeds)
    writer(report, args.out, render_figures=not args.no_figures)
    print(f"{args.name}: wrote report for seeds {seeds} to {args.out}")
    return 0


def _format_tx(tx) -> str:
    if tx.kind == ledger.SHARE_GRADIENT:
        u = tx.update
        return (f"share_gradient trainer={u.trainer_id} base_version={u.base_version} "
                f"steps={u.steps} dim={u.dim}")
    if tx.kind == ledger.TRUST_ADJUST:
        return f"trust_adjust trainer={tx.trainer_id} new_raw={tx.new_raw:.6f}"
    if tx.kind == ledger.ROUND_CONTROL:
        extra = f" by={tx.amount:.3f}" if tx.action == ledger.EXTEND else ""
        return f"round_control round={tx.round_id} action={tx.action} at={tx.at:.3f}{extra}"
    if tx.kind == ledger.RELEASE_MODEL:
        weights = ", ".join(f"{t}:{w:.4f}" for t, w in tx.applied)
        return f"release_model version={tx.model.version} applied=[{weights}]"
    return tx.kind


def _print_block(block) -> None:
    print(f"height {block.height}  proposer {block.proposer}")
    print(f"  prev_hash  {block.prev_hash.hex()}")
    print(f"  state_hash {block.state_hash.hex()}")
    print(f"  digest     {block.digest.hex()}")
    print(f"  transactions ({len(block.txs)}):")
    for tx in block.txs:
        print(f"    [{tx.author}] {_format_tx(tx)}")


def _cmd_inspect(args) -> int:
    try:
        genesis, blocks = ledger.read_chain(args.chain)
    except Exception as exc:
        print(f"cannot read chain file: {exc}", file=sys.stderr)
        return 1
    p = genesis.policy
    print(f"chain: {len(blocks)} blocks, scheme={p.scheme} period={p.period} "
          f"theta={p.majority_ratio} trainers={len(genesis.trainer_ids)} "
          f"model_dim={genesis.initial_params.dim}")
    if args.height is not None:
        if not 0 <= args.height < len(blocks):
            print(f"height {args.height} out of range [0, {len(blocks) - 1}]",
                  file=sys.stderr)
            return 1
        _print_block(blocks[args.height])
    else:
        for block in blocks:
            kinds = ",".join(tx.kind for tx in block.txs) or "(empty)"
            print(f"  height {block.height}: {len(block.txs)} txs [{kinds}]")
    return 0


def _cmd_verify(args) -> int:
    ok, reason = ledger.verify_chain_file(args.chain)
    if ok:
        print(f"{args.chain}: chain verified")
        return 0
    print(f"{args.chain}: verification FAILED: {reason}")
    return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedchain",
        description="Deterministic simulator for blockchain-coordinated federated learning")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one simulation from a JSON config")
    p_run.add_argument("config")
    p_run.add_argument("--out", help="metrics CSV path (default: stdout)")
    p_run.add_argument("--chain", help="also export the committed chain to this file")
    p_run.set_defaults(func=_cmd_run)

    p_exp = sub.add_parser("experiment", help="run a scripted experiment")
    p_exp.add_argument("name", help=f"one of {sorted(experiments.EXPERIMENTS)}")
    p_exp.add_argument("--seeds", type=int, nargs="+")
    p_exp.add_argument("--out", default="experiment-out")
    p_exp.add_argument("--no-figures", action="store_true")
    p_exp.set_defaults(func=_cmd_experiment)

    p_ins = sub.add_parser("inspect", help="pretty-print a chain file")
    p_ins.add_argument("chain")
    p_ins.add_argument("--height", type=int)
    p_ins.set_defaults(func=_cmd_inspect)

    p_ver = sub.add_parser("verify", help="audit a chain file's integrity")
    p_ver.add_argument("chain")
    p_ver.set_defaults(func=_cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
