"""mobmod command-line interface.

Subcommands: ingest, build, simulate-campus, train, finetune, eval,
predict, occupancy, simulate-traces. Usage errors exit 2 (argparse),
runtime failures exit 1, success exits 0. Every stochastic command takes
an explicit --seed; the anonymization salt arrives via an environment
variable and never appears in any output.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np


def _salt_from(args) -> bytes:
    if getattr(args, "salt", None):
        return args.salt.encode()
    var = getattr(args, "salt_env", None) or "MOBMOD_SALT"
    return os.environ.get(var, "").encode()


def _parse_noise(text: str):
    from mobmod.simulate import NoiseSpec

    spec = NoiseSpec()
    if text:
        for part in text.split(","):
            key, _, value = part.partition("=")
            key = key.strip()
            rate = float(value)
            if key == "dup":
                spec.dup_rate = rate
            elif key == "drop":
                spec.drop_disassoc_rate = rate
            elif key == "reorder":
                spec.reorder_rate = rate
            else:
                raise ValueError(f"unknown noise key {key!r} (use dup/drop/reorder)")
    spec.validate()
    return spec


def cmd_ingest(args) -> int:
    from mobmod.ingest import (ingest_files, load_ap_map, load_event_kind_map,
                               write_events_jsonl)

    kinds = load_event_kind_map(args.kind_map) if args.kind_map else None
    ap_map = load_ap_map(args.ap_map)
    logs = sorted(Path(args.logs).glob("*.log")) or sorted(Path(args.logs).iterdir())
    events, stats = ingest_files(logs, kinds=kinds, salt=_salt_from(args),
                                 year=args.year, window_s=args.window)
    unknown_aps = sum(1 for e in events if e.ap and e.ap not in ap_map)
    write_events_jsonl(events, args.out)
    print(f"parsed {stats.parsed} events from {len(logs)} files -> {args.out}")
    print(f"skipped: {stats.malformed} malformed, {stats.non_presence} non-presence, "
          f"{stats.unknown_id} unknown-id; merge: {stats.merge.duplicates} duplicates, "
          f"{stats.merge.late_drops} late drops; {unknown_aps} events at unmapped APs")
    return 0


def cmd_build(args) -> int:
    from mobmod.ingest import load_ap_map, read_events_jsonl
    from mobmod.trajectory import build_trajectories, write_trajectories_jsonl

    ap_map = load_ap_map(args.ap_map)
    events = list(read_events_jsonl(args.events))
    trajs, vocab, stats = build_trajectories(events, ap_map, args.granularity)
    write_trajectories_jsonl(trajs, args.out)
    vocab_path = args.vocab_out or f"{args.out}.vocab.json"
    vocab.save(vocab_path)
    print(f"built {len(trajs)} user-day trajectories -> {args.out}")
    print(f"vocabulary ({vocab.size} ids) -> {vocab_path}")
    print(f"users: {stats.users_total} mapped, {stats.users_without_primary} without "
          f"a mobile device; {stats.stays.unknown_ap} sessions at unmapped APs")
    return 0


def cmd_simulate_campus(args) -> int:
    from mobmod.simulate import (CampusConfig, default_grammar, emit_syslog,
                                 generate_campus, generate_days, write_sim_outputs)

    config = CampusConfig.load(args.config)
    campus = generate_campus(config)
    grammar = default_grammar(campus, epsilon=args.epsilon, break_prob=args.break_prob)
    visits = generate_days(campus, grammar, days=args.days, seed=args.seed)
    out = emit_syslog(campus, grammar, visits, noise=_parse_noise(args.noise),
                      salt=_salt_from(args), seed=args.seed)
    write_sim_outputs(out, campus, args.out)
    n_lines = sum(len(v) for v in out.lines_by_controller.values())
    print(f"simulated {len(visits)} agents x {args.days} days -> {args.out} "
          f"({n_lines} syslog lines, {len(campus.ap_map)} APs)")
    return 0


def cmd_train(args) -> int:
    from mobmod.checkpoint import save_transformer
    from mobmod.trajectory import read_trajectories_jsonl
    from mobmod.training import MobilityTransformer, make_splits, write_curve_csv
    from mobmod.vocab import Vocabulary

    trajs = read_trajectories_jsonl(args.traj)
    vocab = Vocabulary.load(args.vocab)
    granularity = trajs[0].granularity
    n_max = max(96, 1440 // granularity)
    est = MobilityTransformer(
        n_modalities=args.modalities, epochs=args.epochs,
        learning_rate=args.lr, batch_size=args.batch, seed=args.seed,
        n_max=n_max, clip_norm=args.clip,
    )
    if args.no_split:
        est.fit(trajs, vocab=vocab)
    else:
        splits = make_splits(trajs)
        est.fit(splits.train, vocab=vocab, dev=splits.dev)
    save_transformer(args.out, est.params_, est.config_, vocab)
    if args.curve:
        write_curve_csv(est.curve_, args.curve)
    last = est.curve_[-1]
    dev = f", dev {last['dev_loss']:.4f}" if last["dev_loss"] is not None else ""
    print(f"trained {args.epochs} epochs (best epoch {est.best_epoch_}); "
          f"final train loss {last['train_loss']:.4f}{dev} -> {args.out}")
    return 0


def cmd_finetune(args) -> int:
    from mobmod.checkpoint import load_transformer, save_transformer
    from mobmod.trajectory import read_trajectories_jsonl
    from mobmod.training import fine_tune, make_splits, stack_tokens

    params, config, vocab = load_transformer(args.model)
    trajs = [t for t in read_trajectories_jsonl(args.traj) if t.user == args.user]
    if not trajs:
        raise ValueError(f"no trajectories for user {args.user!r}")
    splits = make_splits(trajs)
    tokens = stack_tokens(splits.train, vocab, config)
    tuned = fine_tune(params, tokens, config, epochs=args.epochs,
                      learning_rate=args.lr, seed=args.seed)
    save_transformer(args.out, tuned, config, vocab)
    print(f"fine-tuned on {len(splits.train)} days of {args.user} -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    from mobmod.checkpoint import load_transformer
    from mobmod.trajectory import read_trajectories_jsonl
    from mobmod.training import eval_accuracy, make_splits

    params, config, vocab = load_transformer(args.model)
    trajs = read_trajectories_jsonl(args.test)
    if args.split == "test":
        trajs = make_splits(trajs).test
    mode = args.mode.replace("-", "_")
    report = eval_accuracy(params, config, vocab, trajs, mode=mode)
    report.save(args.out)
    acc = ", ".join(f"{s}={v:.4f}" for s, v in sorted(report.accuracy.items()))
    print(f"evaluated {len(trajs)} trajectories ({mode}): {acc} -> {args.out}")
    return 0


def cmd_predict(args) -> int:
    from mobmod.apps import assistant_next
    from mobmod.checkpoint import load_transformer
    from mobmod.model import tokenize
    from mobmod.trajectory import read_trajectories_jsonl

    params, config, vocab = load_transformer(args.model)
    prefix_trajs = read_trajectories_jsonl(args.prefix)
    if not prefix_trajs:
        raise ValueError("prefix file is empty")
    full = tokenize(prefix_trajs[0], vocab)
    cut = args.upto if args.upto else len(prefix_trajs[0].tokens_l)
    prefix = [full[m][:cut] for m in config.modality_indices]
    result = assistant_next(params, config, vocab, prefix, top=args.top)
    Path(args.out).write_text(json.dumps(result, sort_keys=True, indent=1))
    tops = {s: r[0]["label"] for s, r in result.items()}
    print(f"next-bin top-1: {tops} -> {args.out}")
    return 0


def cmd_occupancy(args) -> int:
    from mobmod.apps import aggregate_occupancy
    from mobmod.trajectory import read_trajectories_jsonl
    from mobmod.vocab import Vocabulary

    trajs = read_trajectories_jsonl(args.traj)
    vocab = Vocabulary.load(args.vocab)
    grid = aggregate_occupancy(trajs, vocab, scale=args.scale)
    grid.save_csv(args.out)
    if args.json:
        grid.save_json(args.json)
    peak = grid.counts.sum(axis=1).max()
    print(f"occupancy grid {grid.counts.shape[0]} bins x {len(grid.zones)} zones "
          f"(peak on-network {peak:g}) -> {args.out}")
    return 0


def cmd_simulate_traces(args) -> int:
    from mobmod.apps import simulate_traces
    from mobmod.checkpoint import load_transformer
    from mobmod.trajectory import read_trajectories_jsonl, write_trajectories_jsonl

    params, config, vocab = load_transformer(args.model)
    seeds = read_trajectories_jsonl(args.seed_days)
    population = args.population or len(seeds)
    traces = simulate_traces(params, config, vocab, seeds, population,
                             k=args.topk, seed=args.seed)
    write_trajectories_jsonl(traces, args.out)
    print(f"simulated {len(traces)} synthetic day trajectories -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mobmod",
        description="Indoor mobility modeling from enterprise WiFi syslogs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse AP syslogs into ordered presence events")
    p.add_argument("--logs", required=True, help="directory of syslog files")
    p.add_argument("--ap-map", required=True)
    p.add_argument("--year", type=int, default=2019)
    p.add_argument("--salt-env", default="MOBMOD_SALT",
                   help="environment variable holding the anonymization salt")
    p.add_argument("--salt", help="literal salt (testing only)")
    p.add_argument("--kind-map", help="event_id,kind CSV overriding vendor defaults")
    p.add_argument("--window", type=int, default=300,
                   help="late-event reorder window in seconds")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("build", help="events -> multi-scale trajectories")
    p.add_argument("--events", required=True)
    p.add_argument("--ap-map", required=True)
    p.add_argument("--granularity", type=int, default=60, choices=(15, 30, 60))
    p.add_argument("--out", required=True)
    p.add_argument("--vocab-out", help="defaults to <out>.vocab.json")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("simulate-campus", help="generate campus, schedules, syslogs")
    p.add_argument("--config", required=True)
    p.add_argument("--days", type=int, default=14)
    p.add_argument("--noise", default="", help="dup=0.05,drop=0.05,reorder=0.02")
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--break-prob", type=float, default=0.45)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--salt-env", default="MOBMOD_SALT")
    p.add_argument("--salt")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate_campus)

    p = sub.add_parser("train", help="train the multi-modal transformer")
    p.add_argument("--traj", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--modalities", type=int, default=4, choices=(1, 4))
    p.add_argument("--epochs", type=int, default=15)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--batch", type=int, default=100)
    p.add_argument("--clip", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-split", action="store_true",
                   help="train on every row instead of the chronological 80/10")
    p.add_argument("--curve", help="write epoch,train_loss,dev_loss CSV here")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", help="continue training for one user")
    p.add_argument("--model", required=True)
    p.add_argument("--traj", required=True)
    p.add_argument("--user", required=True)
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="accuracy report on held-out days")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--mode", default="next-step", choices=("next-step", "rollout"))
    p.add_argument("--split", default="full", choices=("full", "test"),
                   help="optionally evaluate only the chronological test slice")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="assistant: ranked next (c,s,b,l)")
    p.add_argument("--model", required=True, help="typically a fine-tuned checkpoint")
    p.add_argument("--prefix", required=True, help="trajectory file; first row is today")
    p.add_argument("--upto", type=int, default=0, help="use only the first N bins")
    p.add_argument("--top", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("occupancy", help="aggregate trajectories into zone counts")
    p.add_argument("--traj", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--json", help="also write the JSON grid here")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_occupancy)

    p = sub.add_parser("simulate-traces", help="synthetic traces via top-k rollouts")
    p.add_argument("--model", required=True)
    p.add_argument("--seed-days", required=True)
    p.add_argument("--population", type=int, default=0,
                   help="default: one trace per seed day")
    p.add_argument("--topk", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate_traces)

    return parser


def cli_dispatch(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except Exception as exc:  # runtime failures exit 1 with a message
        print(f"mobmod {args.command}: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
