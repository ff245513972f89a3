"""Command-line surface: gen-witness, replay, bridge, sweep, report.

All inputs come from explicit flags (no environment variables) so every
report can be reproduced from its manifest alone.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .bridge import BridgeRow, bridge_run, common_prefix_ratio, sem_sim, seq_ratio, task_metric
from .cache import terminal_saved_ratio
from .model import (
    WITNESS_KINDS,
    generate_reference,
    init_model,
    make_witness,
    read_witness_manifest,
    write_witness_manifest,
)
from .replay import make_policy, replay_row_json, summarize, teacher_forced_replay
from .report import (
    SweepSpec,
    WitnessSpec,
    detect_crossings,
    emit_tables,
    load_rows,
    run_sweep,
)
from .twostage import StageConfig, finalize_flags


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="global model seed")
    p.add_argument("--vocab-size", type=int, default=32)
    p.add_argument("--model-dim", type=int, default=16)
    p.add_argument("--num-layers", type=int, default=1)


def _single_run_setup(args):
    witness = read_witness_manifest(args.witness)
    params = init_model(args.seed, args.vocab_size, args.model_dim,
                        args.num_layers)
    ref = generate_reference(params, list(witness.prompt), witness.decode_len)
    policy = make_policy(args.method,
                         None if args.method == "none" else args.budget)
    return witness, params, ref, policy


def _cmd_gen_witness(args) -> int:
    witness = make_witness(args.kind, args.seed, args.prefix_len,
                           args.decode_len, args.redundancy, args.vocab_size)
    path = write_witness_manifest(witness, args.out)
    print(f"wrote witness manifest {path}")
    return 0


def _cmd_replay(args) -> int:
    witness, params, ref, policy = _single_run_setup(args)
    record = teacher_forced_replay(params, list(witness.prompt), ref.tokens,
                                   policy)
    flags = finalize_flags(record.cache, StageConfig(budget=args.budget))
    row = replay_row_json(witness.name, args.method, args.budget,
                          summarize(record), flags)
    print(json.dumps(row, indent=2))
    return 0


def _cmd_bridge(args) -> int:
    witness, params, ref, policy = _single_run_setup(args)
    candidate, cache = bridge_run(params, list(witness.prompt),
                                  witness.decode_len, policy)
    row = BridgeRow(
        seq_ratio=seq_ratio(candidate, ref.tokens),
        sem_sim=sem_sim(candidate, ref.tokens),
        task_metric=task_metric(candidate, ref.tokens),
        terminal_saved=terminal_saved_ratio(cache),
        compression_events=len(cache.compression_events),
        prefix_ratio=common_prefix_ratio(candidate, ref.tokens),
        output_ratio=len(candidate) / witness.decode_len,
    )
    print(json.dumps(row.to_json(), indent=2))
    return 0


def _cmd_sweep(args) -> int:
    witnesses = []
    for path in args.witness:
        w = read_witness_manifest(path)
        witnesses.append(WitnessSpec(kind=w.kind, seed=w.seed,
                                     prefix_len=w.prefix_len,
                                     decode_len=w.decode_len,
                                     redundancy=w.redundancy))
    budgets = [int(b) for b in args.budget_grid.split(",")]
    spec = SweepSpec(witnesses=witnesses, methods=args.method,
                     budgets=budgets, out_dir=args.out, seed=args.seed,
                     vocab_size=args.vocab_size, model_dim=args.model_dim,
                     num_layers=args.num_layers)
    rows = run_sweep(spec)
    print(f"wrote {len(rows)} rows to {Path(args.out) / 'rows.jsonl'}")
    return 0


def _cmd_report(args) -> int:
    rows = load_rows(args.rows)
    written = emit_tables(rows, args.format, args.out)
    crossings = detect_crossings(rows, metric=args.metric)
    crossings_path = Path(args.out) / "crossings.json"
    crossings_path.write_text(
        json.dumps([c.to_json() for c in crossings], indent=2) + "\n")
    written.append(crossings_path)
    for path in written:
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cask",
        description="KV-cache consolidation experiments on a toy attention model",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-witness", help="write a witness manifest")
    p.add_argument("--kind", choices=WITNESS_KINDS, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--prefix-len", type=int, required=True)
    p.add_argument("--decode-len", type=int, required=True)
    p.add_argument("--redundancy", type=float, default=0.0)
    p.add_argument("--vocab-size", type=int, default=32)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_gen_witness)

    for name, fn in (("replay", _cmd_replay), ("bridge", _cmd_bridge)):
        p = sub.add_parser(name, help=f"run a single {name} cell")
        p.add_argument("--witness", required=True, help="witness manifest path")
        p.add_argument("--method", choices=("cask", "evict", "none"),
                       required=True)
        p.add_argument("--budget", type=int, required=True)
        _add_model_flags(p)
        p.set_defaults(fn=fn)

    p = sub.add_parser("sweep", help="run a witness x method x budget grid")
    p.add_argument("--witness", action="append", required=True,
                   help="witness manifest path (repeatable)")
    p.add_argument("--method", action="append", required=True,
                   choices=("cask", "evict", "none"))
    p.add_argument("--budget-grid", required=True,
                   help="comma-separated increasing budgets, e.g. 32,48,64")
    p.add_argument("--out", required=True)
    _add_model_flags(p)
    p.set_defaults(fn=_cmd_sweep)

    p = sub.add_parser("report", help="derive tables from a rows.jsonl stream")
    p.add_argument("--rows", required=True)
    p.add_argument("--format", choices=("csv", "markdown", "json"),
                   default="csv")
    p.add_argument("--metric", choices=("top1", "top5", "mean_nll"),
                   default="top1")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
