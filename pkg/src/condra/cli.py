"""Command line interface.

Subcommands: generate (synthetic corpus bundles), build (tree + conditional
index file), query (TSV results), rcd (per-node density report), theorem1
(coverage curve CSV), bench speed / bench accuracy (JSON reports), serve.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import cond_index as ci
from .analytics import blind_spots, rcd_report, theorem1_experiment
from .bench import (
    accuracy_at_n,
    default_condition_suite,
    make_benchmark_corpus,
    measure_memory,
    run_speed_benchmark,
    shape_checks,
)
from .corpus import (
    BlobComponent,
    generate_blobs,
    generate_content_style,
    load_corpus,
    save_corpus,
)
from .errors import CondraError
from .tree import build_ball_tree, build_kd_tree, build_rp_tree

_BUILDERS = {"ball": build_ball_tree, "kd": build_kd_tree, "rp_max": build_rp_tree}


def _build_tree(corpus, kind: str, leaf_size: int, seed: int):
    if kind == "rp_max":
        return build_rp_tree(corpus, leaf_size, seed)
    return _BUILDERS[kind](corpus, leaf_size)


def _open_out(path: str | None):
    if path in (None, "-"):
        return sys.stdout, False
    return open(path, "w", encoding="utf-8"), True


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_generate(args) -> int:
    if args.kind == "blobs":
        rng = np.random.default_rng(args.seed)
        centers = rng.standard_normal((args.components, args.d)) * 4.0
        per = max(1, args.n // args.components)
        components = [
            BlobComponent(mean=tuple(centers[i]), count=per, label=f"c{i:03d}")
            for i in range(args.components)
        ]
        corpus = generate_blobs(components, seed=args.seed, metric=args.metric, attribute="source")
    elif args.kind == "content-style":
        corpus = generate_content_style(
            args.contents, args.styles, args.d,
            style_strength=args.style_strength, noise=args.noise,
            seed=args.seed, metric=args.metric,
        )
    else:  # bench
        corpus = make_benchmark_corpus(args.n, args.d, n_labels=args.labels, seed=args.seed)
    save_corpus(corpus, args.out)
    print(f"wrote {corpus.n} x {corpus.d} corpus to {args.out}")
    return 0


def cmd_build(args) -> int:
    corpus = load_corpus(args.corpus)
    tree = _build_tree(corpus, args.tree, args.leaf_size, args.seed)
    index = ci.build_cond_index(tree, corpus)
    ci.save_tree_with_index(tree, index, args.out)
    print(f"wrote {tree.kind} tree ({tree.node_count} nodes) + index to {args.out}")
    return 0


def _load_query(corpus, text: str) -> np.ndarray:
    try:
        pid = int(text)
    except ValueError:
        values = Path(text).read_text().replace(",", " ").split()
        return np.asarray([float(v) for v in values], dtype=np.float64)
    if not 0 <= pid < corpus.n:
        raise CondraError(f"point id {pid} out of range [0, {corpus.n})")
    return np.asarray(corpus.points[pid], dtype=np.float64)


def cmd_query(args) -> int:
    corpus = load_corpus(args.corpus)
    tree, index = ci.load_tree_with_index(args.index, corpus)
    q = _load_query(corpus, args.q)
    cache = ci.NodeSetCache()
    if args.strategy == "cond":
        res = ci.cknn_query(tree, index, q, args.cond, args.k, cache)
    elif args.strategy == "qtf":
        res = ci.query_then_filter(tree, corpus, q, args.cond, args.k)
    elif args.strategy == "reconf":
        res = ci.reconfigured_query(tree, index, corpus, q, args.cond, args.k, cache=cache)
    elif args.strategy == "brute":
        res = ci.brute_force_cknn(corpus, q, args.cond, args.k)
    else:
        ded = ci.build_dedicated(corpus, args.cond, tree.leaf_size)
        res = ci.query_dedicated(ded, q, args.k)
    out, close = _open_out(args.out)
    try:
        for rank, (pid, dist) in enumerate(res.pairs(), 1):
            out.write(f"{rank}\t{pid}\t{dist:.9g}\n")
    finally:
        if close:
            out.close()
    return 0


def cmd_rcd(args) -> int:
    corpus = load_corpus(args.corpus)
    if args.label_attr not in corpus.metadata:
        raise CondraError(f"corpus has no attribute {args.label_attr!r}")
    members = corpus.metadata[args.label_attr] == args.positive
    tree = _build_tree(corpus, args.tree, args.leaf_size, args.seed)
    report = rcd_report(tree, members, alpha=args.alpha)
    spots = blind_spots(report, args.threshold)
    out, close = _open_out(args.out)
    try:
        out.write("node_id\tdepth\tcount\tmembers\trcd\tp\tflag\n")
        for node_id, depth, count, m, value, p, flag in report.rows():
            out.write(f"{node_id}\t{depth}\t{count}\t{m}\t{value:.6g}\t{p:.6g}\t{int(flag)}\n")
    finally:
        if close:
            out.close()
    summary = json.dumps({
        "flagged_fraction": report.flagged_fraction,
        "blind_spot_count": len(spots),
    })
    # keep the summary out of the TSV stream when both go to stdout
    print(summary, file=sys.stdout if close else sys.stderr)
    return 0


def cmd_theorem1(args) -> int:
    if args.corpus:
        corpus = load_corpus(args.corpus)
    else:
        rng = np.random.default_rng(args.seed)
        from .corpus import Corpus

        corpus = Corpus(rng.standard_normal((args.n, args.d)).astype(np.float32), {})
    radii = [float(r) for r in args.radii.split(",")]
    curve = theorem1_experiment(corpus, radii, args.leaf_size, list(range(args.seeds)))
    out, close = _open_out(args.out)
    try:
        out.write("radius_fraction,mean_fraction,min_fraction,max_fraction,bound,seeds\n")
        for p in curve.points:
            out.write(
                f"{p.radius_fraction},{p.mean_fraction:.6g},{p.min_fraction:.6g},"
                f"{p.max_fraction:.6g},{p.bound:.6g},{p.n_seeds}\n"
            )
    finally:
        if close:
            out.close()
    return 0


def cmd_bench_speed(args) -> int:
    corpus = make_benchmark_corpus(args.n, args.d, n_labels=args.labels, seed=args.seed)
    conditions = default_condition_suite(corpus, seed=args.seed)
    report = run_speed_benchmark(
        corpus,
        strategies=args.strategies.split(","),
        conditions=conditions,
        k=args.k,
        queries=args.queries,
        seed=args.seed,
        leaf_size=args.leaf_size,
        repetitions=args.repetitions,
    )
    tree = build_ball_tree(corpus, args.leaf_size)
    index = ci.build_cond_index(tree, corpus)
    payload = json.loads(report.to_json())
    payload["shape_checks"] = shape_checks(report)
    payload["memory"] = json.loads(measure_memory(tree, index, corpus).to_json())
    text = json.dumps(payload, indent=2)
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote report to {args.out}")
    else:
        print(text)
    return 0


def cmd_bench_accuracy(args) -> int:
    corpus = generate_content_style(
        args.contents, args.styles, args.d,
        style_strength=args.style_strength, noise=args.noise, seed=args.seed,
    )
    table = accuracy_at_n(corpus, tuple(int(n) for n in args.at.split(",")),
                          trials=args.trials, seed=args.seed, leaf_size=args.leaf_size)
    if args.out:
        Path(args.out).write_text(table.to_json())
        print(f"wrote accuracy table to {args.out}")
    else:
        print(table.to_json())
    return 0


def cmd_serve(args) -> int:
    from .service import serve

    serve(args.config, args.addr)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="condra", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic corpus bundle")
    p.add_argument("kind", choices=["blobs", "content-style", "bench"])
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--components", type=int, default=10)
    p.add_argument("--labels", type=int, default=200)
    p.add_argument("--contents", type=int, default=63)
    p.add_argument("--styles", type=int, default=249)
    p.add_argument("--style-strength", type=float, default=0.2)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--metric", choices=["euclidean", "angular"], default="euclidean")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("build", help="build a tree + conditional index file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tree", choices=sorted(_BUILDERS), default="ball")
    p.add_argument("--leaf-size", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_build)

    p = sub.add_parser("query", help="run one conditional query, TSV output")
    p.add_argument("--corpus", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--q", required=True, help="point id or path to a vector file")
    p.add_argument("--cond", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--strategy", choices=["cond", "qtf", "reconf", "brute", "dedicated"],
                   default="cond")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_query)

    p = sub.add_parser("rcd", help="per-node relative conditioner density report")
    p.add_argument("--corpus", required=True)
    p.add_argument("--label-attr", default="source")
    p.add_argument("--positive", default="generated")
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--threshold", type=float, default=0.6)
    p.add_argument("--tree", choices=sorted(_BUILDERS), default="ball")
    p.add_argument("--leaf-size", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="TSV path; stdout when omitted")
    p.set_defaults(fn=cmd_rcd)

    p = sub.add_parser("theorem1", help="coverage curve over subset radii")
    p.add_argument("--corpus", default=None)
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--radii", default="0.5,0.25,0.1,0.05")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--leaf-size", type=int, default=25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_theorem1)

    p = sub.add_parser("bench", help="benchmarks")
    bench_sub = p.add_subparsers(dest="bench_command", required=True)

    ps = bench_sub.add_parser("speed", help="strategy latency comparison")
    ps.add_argument("--n", type=int, default=100000)
    ps.add_argument("--d", type=int, default=64)
    ps.add_argument("--labels", type=int, default=200)
    ps.add_argument("--queries", type=int, default=1000)
    ps.add_argument("--k", type=int, default=10)
    ps.add_argument("--leaf-size", type=int, default=500)
    ps.add_argument("--repetitions", type=int, default=5)
    ps.add_argument("--strategies", default="cond,qtf,reconf,brute,dedicated")
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--out", default=None)
    ps.set_defaults(fn=cmd_bench_speed)

    pa = bench_sub.add_parser("accuracy", help="content recovery across styles")
    pa.add_argument("--contents", type=int, default=63)
    pa.add_argument("--styles", type=int, default=249)
    pa.add_argument("--d", type=int, default=32)
    pa.add_argument("--style-strength", type=float, default=0.2)
    pa.add_argument("--noise", type=float, default=0.05)
    pa.add_argument("--trials", type=int, default=10000)
    pa.add_argument("--at", default="1,10")
    pa.add_argument("--leaf-size", type=int, default=200)
    pa.add_argument("--seed", type=int, default=0)
    pa.add_argument("--out", default=None)
    pa.set_defaults(fn=cmd_bench_accuracy)

    p = sub.add_parser("serve", help="run the retrieval service")
    p.add_argument("--config", required=True)
    p.add_argument("--addr", default="127.0.0.1:8080")
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CondraError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
