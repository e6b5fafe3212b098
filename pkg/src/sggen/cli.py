"""Command-line entry point.

One executable, eleven subcommands covering the full pipeline: generate
synthetic data, train, sample, score likelihoods, corrupt datasets, run
the anomaly benchmark, compare sets with MMD, print dataset statistics,
complete partial graphs, look up nearest training graphs, and export DOT.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Every randomized subcommand takes --seed; when omitted, a seed is
generated and printed so any run can be reproduced.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional

import numpy as np

from .dataio import (
    default_grammar,
    export_dot,
    generate_synthetic,
    load_dataset,
    load_grammar,
    save_dataset,
)
from .errors import DataError, NumericError
from .evaluation import (
    auroc,
    corrupt_dataset,
    count_kl,
    dataset_stats,
    occurrence_l1,
)
from .graphs import OrderKind, OrderingScheme
from .kernels import (
    KernelConfig,
    KernelKind,
    mmd_report,
    nearest_training_graph,
)
from .model import (
    ModelConfig,
    complete_graph,
    init_model,
    load_checkpoint,
    sample_graphs,
    score_nll_batch,
)
from .training import TrainConfig, train


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _resolve_seed(seed: Optional[int]) -> int:
    if seed is not None:
        return seed
    generated = int(np.random.SeedSequence().entropy % (2 ** 31))
    print(f"seed: {generated} (generated; pass --seed to reproduce)")
    return generated


def _load_data(path):
    try:
        return load_dataset(path)
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror or exc}") from exc


def _load_ckpt(path):
    try:
        return load_checkpoint(path)
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror or exc}") from exc
    except NumericError:
        raise
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from exc


def _check_vocab(params, vocab, path) -> None:
    if params.vocab != vocab:
        raise DataError(f"{path}: vocabulary does not match the checkpoint")


def _ordering_from_flags(args) -> OrderingScheme:
    kind = OrderKind(args.ordering)
    tier_map = None
    if kind == OrderKind.HIERARCHICAL:
        if not getattr(args, "grammar", None):
            raise DataError("hierarchical ordering needs --grammar for tiers")
        tier_map = load_grammar(args.grammar).tier_map()
    return OrderingScheme(kind=kind, tier_map=tier_map, seed=args.seed or 0)


# --------------------------------------------------------------- commands

def cmd_synth_data(args) -> int:
    seed = _resolve_seed(args.seed)
    grammar = load_grammar(args.grammar) if args.grammar else default_grammar()
    graphs = generate_synthetic(grammar, args.count, seed=seed)
    save_dataset(args.out, grammar.vocabulary(), graphs)
    sizes = [len(g.nodes) for g in graphs]
    print(f"wrote {len(graphs)} graphs to {args.out} "
          f"(nodes min/mean/max = {min(sizes)}/"
          f"{sum(sizes) / len(sizes):.1f}/{max(sizes)})")
    return 0


def cmd_train(args) -> int:
    seed = _resolve_seed(args.seed)
    args.seed = seed
    vocab, graphs = _load_data(args.data)
    if args.val_count >= len(graphs):
        raise DataError(f"{args.data}: --val-count must leave training data")
    val = graphs[len(graphs) - args.val_count:] if args.val_count else None
    train_graphs = graphs[: len(graphs) - args.val_count]

    profile = TrainConfig.desk if args.profile == "desk" else TrainConfig.full
    overrides = dict(seed=seed, ordering=_ordering_from_flags(args),
                     checkpoint_every=args.checkpoint_every)
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.batches_per_epoch is not None:
        overrides["batches_per_epoch"] = args.batches_per_epoch
    if args.batch_size is not None:
        overrides["batch_size"] = args.batch_size
    if args.lr is not None:
        overrides["lr0"] = args.lr
    cfg = profile(**overrides)

    if args.resume:
        params, meta, opt = _load_ckpt(args.resume)
        _check_vocab(params, vocab, args.data)
        state = meta.get("train_state")
        if not state:
            raise DataError(f"{args.resume}: checkpoint has no train_state")
        params, log = train(params, train_graphs, cfg, val_graphs=val,
                            log_path=args.log, checkpoint_path=args.out,
                            resume=state, opt_tensors=opt, quiet=args.quiet)
    else:
        mcfg = ModelConfig(
            max_nodes=args.max_nodes, node_embed_dim=args.node_embed,
            edge_embed_dim=args.edge_embed, hidden_size=args.hidden_size,
            num_layers=args.num_layers, mlp_hidden=args.mlp_hidden)
        params = init_model(mcfg, vocab, seed=seed)
        params, log = train(params, train_graphs, cfg, val_graphs=val,
                            log_path=args.log, checkpoint_path=args.out,
                            quiet=args.quiet)
    last = log.steps[-1] if log.steps else {}
    print(f"trained {len(log.steps)} steps; final loss "
          f"{last.get('loss', float('nan')):.4f}; checkpoint at {args.out}")
    if log.validation:
        print(f"final validation NLL: {log.validation[-1]['val_nll']:.4f}")
    return 0


def cmd_sample(args) -> int:
    seed = _resolve_seed(args.seed)
    params, _, _ = _load_ckpt(args.ckpt)
    graphs, truncated = sample_graphs(params, args.count, seed=seed,
                                      temperature=args.temperature,
                                      max_nodes=args.max_nodes)
    save_dataset(args.out, params.vocab, graphs)
    print(f"wrote {len(graphs)} samples to {args.out} "
          f"({truncated} hit the node cap)")
    if args.dot:
        import os
        os.makedirs(args.dot, exist_ok=True)
        for i, g in enumerate(graphs):
            with open(os.path.join(args.dot, f"sample{i:05d}.dot"), "w") as fh:
                fh.write(export_dot(g, params.vocab))
        print(f"wrote {len(graphs)} DOT files to {args.dot}")
    return 0


def cmd_nll(args) -> int:
    seed = _resolve_seed(args.seed)
    params, _, _ = _load_ckpt(args.ckpt)
    vocab, graphs = _load_data(args.data)
    _check_vocab(params, vocab, args.data)
    nll = score_nll_batch(params, graphs, rng=np.random.default_rng(seed))
    records = [{"index": i, "nodes": len(g.nodes), "edges": len(g.edges),
                "nll": float(v)}
               for i, (g, v) in enumerate(zip(graphs, nll))]
    if args.out:
        with open(args.out, "w") as fh:
            for rec in records:
                fh.write(json.dumps(rec) + "\n")
    else:
        print(f"{'index':>6s} {'nodes':>5s} {'edges':>5s} {'nll':>12s}")
        for rec in records:
            print(f"{rec['index']:6d} {rec['nodes']:5d} {rec['edges']:5d} "
                  f"{rec['nll']:12.4f}")
    finite = nll[np.isfinite(nll)]
    print(f"scored {len(graphs)} graphs; mean NLL "
          f"{finite.mean():.4f} over {finite.size} finite scores")
    return 0


def cmd_corrupt(args) -> int:
    seed = _resolve_seed(args.seed)
    vocab, graphs = _load_data(args.data)
    out = corrupt_dataset(graphs, args.fraction, vocab, seed=seed)
    save_dataset(args.out, vocab, out)
    print(f"wrote {len(out)} graphs corrupted at fraction "
          f"{args.fraction} to {args.out}")
    return 0


def cmd_anomaly(args) -> int:
    seed = _resolve_seed(args.seed)
    params, _, _ = _load_ckpt(args.ckpt)
    vocab, clean = _load_data(args.clean)
    _check_vocab(params, vocab, args.clean)
    rng = np.random.default_rng(seed)
    clean_nll = score_nll_batch(params, clean, rng=rng)
    print(f"{'corrupt file':<28s} {'auroc':>7s} {'clean NLL':>10s} "
          f"{'corrupt NLL':>12s}")
    for path in args.corrupt:
        cvocab, corrupt = _load_data(path)
        _check_vocab(params, cvocab, path)
        corrupt_nll = score_nll_batch(params, corrupt, rng=rng)
        value = auroc(corrupt_nll, clean_nll)
        finite_c = corrupt_nll[np.isfinite(corrupt_nll)]
        finite_n = clean_nll[np.isfinite(clean_nll)]
        print(f"{path:<28s} {value:7.4f} {finite_n.mean():10.4f} "
              f"{finite_c.mean():12.4f}")
    return 0


def cmd_mmd(args) -> int:
    seed = _resolve_seed(args.seed)
    vocab_a, set_a = _load_data(args.data_a)
    vocab_b, set_b = _load_data(args.data_b)
    if vocab_a != vocab_b:
        raise DataError(f"{args.data_b}: vocabulary differs from "
                        f"{args.data_a}")
    rng = np.random.default_rng(seed)

    def subsample(graphs):
        if len(graphs) <= args.sample:
            return graphs
        idx = np.sort(rng.choice(len(graphs), size=args.sample,
                                 replace=False))
        return [graphs[int(i)] for i in idx]

    set_a, set_b = subsample(set_a), subsample(set_b)
    cfg = KernelConfig(walk_length=args.walk_length,
                       walk_cap=args.walk_cap,
                       all_lengths=args.all_lengths)
    report = mmd_report(set_a, set_b, walk_cfg=cfg, unbiased=args.unbiased,
                        seed=seed, threads=args.threads)
    print(report.summary())
    if args.out:
        report.write_jsonl(args.out)
        print(f"wrote report to {args.out}")
    return 0


def cmd_stats(args) -> int:
    vocab, graphs = _load_data(args.data)
    stats = dataset_stats(graphs, vocab)
    print(stats.to_text(vocab))
    if args.kl_against:
        other_vocab, other = _load_data(args.kl_against)
        if other_vocab != vocab:
            raise DataError(f"{args.kl_against}: vocabulary differs from "
                            f"{args.data}")
        kl = count_kl(graphs, other, vocab)
        other_stats = dataset_stats(other, vocab)
        print(f"\nagainst {args.kl_against}:")
        print(f"  object-occurrence L1: "
              f"{occurrence_l1(stats, other_stats):.4f}")
        print(f"  mean count KL over {len(kl.per_label)} shared "
              f"categories: {kl.mean:.4f}")
    if args.out:
        stats.write_jsonl(args.out, vocab)
        print(f"wrote tables to {args.out}")
    return 0


def cmd_complete(args) -> int:
    seed = _resolve_seed(args.seed)
    params, _, _ = _load_ckpt(args.ckpt)
    vocab, partials = _load_data(args.partial)
    _check_vocab(params, vocab, args.partial)
    out = []
    truncated = 0
    for i, partial in enumerate(partials):
        for k in range(args.count):
            try:
                g, trunc = complete_graph(
                    params, partial, seed=seed + i * args.count + k,
                    temperature=args.temperature)
            except DataError as exc:
                raise DataError(f"{args.partial}: graph {i}: {exc}") from exc
            truncated += trunc
            out.append(g)
    save_dataset(args.out, vocab, out)
    print(f"wrote {len(out)} completions ({args.count} per partial) to "
          f"{args.out}; {truncated} hit the node cap")
    return 0


def cmd_nearest(args) -> int:
    vocab, trainset = _load_data(args.data)
    qvocab, queries = _load_data(args.query)
    if qvocab != vocab:
        raise DataError(f"{args.query}: vocabulary differs from {args.data}")
    if not 0 <= args.index < len(queries):
        raise DataError(f"{args.query}: --index {args.index} out of range "
                        f"(file has {len(queries)} graphs)")
    kind = (KernelKind.OBJECT_SET if args.kernel == "object"
            else KernelKind.RANDOM_WALK)
    cfg = KernelConfig(kind=kind, walk_length=args.walk_length)
    idx, best, sim = nearest_training_graph(queries[args.index], trainset, cfg)
    print(f"nearest training graph: index {idx}, similarity {sim:.6f}")
    print(export_dot(best, vocab), end="")
    return 0


def cmd_export_dot(args) -> int:
    import os
    vocab, graphs = _load_data(args.data)
    os.makedirs(args.out_dir, exist_ok=True)
    for i, g in enumerate(graphs):
        with open(os.path.join(args.out_dir, f"graph{i:05d}.dot"), "w") as fh:
            fh.write(export_dot(g, vocab))
    print(f"wrote {len(graphs)} DOT files to {args.out_dir}")
    return 0


# ----------------------------------------------------------------- parser

def build_parser() -> _Parser:
    parser = _Parser(prog="sggen",
                     description="Learn, sample, and evaluate distributions "
                                 "over labeled directed scene graphs.")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND")

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.set_defaults(func=fn)
        return p

    p = add("synth-data", cmd_synth_data,
            "Generate a synthetic dataset from the scene grammar.")
    p.add_argument("--out", required=True, help="output dataset JSON")
    p.add_argument("--count", type=int, default=5000)
    p.add_argument("--grammar", help="grammar config JSON (default built-in)")
    p.add_argument("--seed", type=int)

    p = add("train", cmd_train, "Train a model on a dataset.")
    p.add_argument("--data", required=True, help="training dataset JSON")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--profile", choices=("desk", "full"), default="desk",
                   help="schedule preset: desk (50x64 batches of 32) or "
                        "full (300x256 batches of 256)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batches-per-epoch", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--ordering", choices=[k.value for k in OrderKind],
                   default="random")
    p.add_argument("--grammar", help="grammar JSON supplying tiers for "
                                     "hierarchical ordering")
    p.add_argument("--val-count", type=int, default=0,
                   help="hold out the last N graphs for validation")
    p.add_argument("--max-nodes", type=int, default=16)
    p.add_argument("--hidden-size", type=int, default=128)
    p.add_argument("--num-layers", type=int, default=4)
    p.add_argument("--node-embed", type=int, default=64)
    p.add_argument("--edge-embed", type=int, default=8)
    p.add_argument("--mlp-hidden", type=int, default=128)
    p.add_argument("--checkpoint-every", type=int, default=0,
                   help="also checkpoint every N steps")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--log", help="write per-step JSONL records here")
    p.add_argument("--quiet", action="store_true",
                   help="suppress periodic progress lines")
    p.add_argument("--seed", type=int)

    p = add("sample", cmd_sample, "Sample graphs from a checkpoint.")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True, help="output dataset JSON")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--max-nodes", type=int)
    p.add_argument("--dot", help="also write one DOT file per sample here")
    p.add_argument("--seed", type=int)

    p = add("nll", cmd_nll, "Score per-graph negative log-likelihood.")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="write JSONL records instead of a table")
    p.add_argument("--seed", type=int)

    p = add("corrupt", cmd_corrupt,
            "Relabel a fraction of nodes and edges in every graph.")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fraction", type=float, required=True)
    p.add_argument("--seed", type=int)

    p = add("anomaly", cmd_anomaly,
            "AUROC of NLL scores: corrupted sets vs a clean set.")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--clean", required=True)
    p.add_argument("--corrupt", required=True, nargs="+",
                   help="one or more corrupted dataset files")
    p.add_argument("--seed", type=int)

    p = add("mmd", cmd_mmd, "MMD^2 between two datasets, both kernels.")
    p.add_argument("data_a")
    p.add_argument("data_b")
    p.add_argument("--sample", type=int, default=1000,
                   help="subsample each set to at most N graphs")
    p.add_argument("--walk-length", type=int, default=3)
    p.add_argument("--walk-cap", type=int, default=10_000)
    p.add_argument("--all-lengths", action="store_true",
                   help="sum walk lengths 1..p instead of exactly p")
    p.add_argument("--unbiased", action="store_true")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", help="write the report as JSONL")
    p.add_argument("--seed", type=int)

    p = add("stats", cmd_stats,
            "Occurrence, co-occurrence, and count tables for a dataset.")
    p.add_argument("--data", required=True)
    p.add_argument("--kl-against",
                   help="second dataset for count-KL and occurrence L1")
    p.add_argument("--out", help="write tables as JSONL")

    p = add("complete", cmd_complete,
            "Sample completions that extend partial graphs.")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--partial", required=True,
                   help="dataset JSON of partial graphs")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=5,
                   help="completions per partial graph")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--seed", type=int)

    p = add("nearest", cmd_nearest,
            "Most similar training graph for a query graph.")
    p.add_argument("--data", required=True, help="training dataset JSON")
    p.add_argument("--query", required=True, help="dataset JSON with queries")
    p.add_argument("--index", type=int, default=0,
                   help="which query graph to look up")
    p.add_argument("--kernel", choices=("walk", "object"), default="walk")
    p.add_argument("--walk-length", type=int, default=3)

    p = add("export-dot", cmd_export_dot,
            "Write one Graphviz DOT file per graph.")
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            parser.print_help()
            return 1
        return args.func(args)
    except SystemExit as exc:        # argparse --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
