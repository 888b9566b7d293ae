"""Benchmarks: strategy latency comparison, space accounting, accuracy@N.

The speed benchmark times every strategy against the same deterministic
query sample, verifies a slice of results against the exhaustive-scan oracle
(a report with any mismatch is invalid), and reports per-condition medians
bucketed by condition fraction.  Shape checks (pruned queries beat
query-then-filter on rare conditions, stay near dedicated trees on broad
ones) are statistical targets evaluated on top of a report.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import cond_index as ci
from .corpus import Corpus, generate_blobs, BlobComponent, with_attribute
from .errors import DataError
from .tree import Tree, build_ball_tree, tree_to_bytes

SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# Benchmark corpus: clustered labels spanning three decades of fractions
# ---------------------------------------------------------------------------


def make_benchmark_corpus(n: int, d: int, n_labels: int = 200, seed: int = 0) -> Corpus:
    """Blob-per-label corpus; 40% of labels are 9x rarer than the rest,
    so single labels and label unions span roughly 0.1% .. 100% of points."""
    if n_labels < 10:
        raise DataError("need at least 10 labels")
    rng = np.random.default_rng(seed)
    n_small = int(0.4 * n_labels)
    n_big = n_labels - n_small
    weight_small, weight_big = 1.0, 9.0
    total = n_small * weight_small + n_big * weight_big
    counts = []
    for i in range(n_labels):
        w = weight_small if i < n_small else weight_big
        counts.append(max(1, int(round(n * w / total))))
    counts[-1] += n - sum(counts)
    centers = rng.standard_normal((n_labels, d)) * 4.0
    components = [
        BlobComponent(mean=tuple(centers[i]), count=counts[i], label=f"c{i:03d}")
        for i in range(n_labels)
    ]
    corpus = generate_blobs(components, seed=seed + 1, attribute="label")
    group_of = {f"c{i:03d}": f"g{i % 8}" for i in range(n_labels)}
    groups = [group_of[v] for v in corpus.metadata["label"]]
    return with_attribute(corpus, "group", groups)


def default_condition_suite(corpus: Corpus, seed: int = 0) -> list[str]:
    """Condition strings spanning at least three decades of member fractions."""
    rng = np.random.default_rng(seed)
    values, counts = np.unique(corpus.metadata["label"], return_counts=True)
    order = np.argsort(counts)
    rare = values[order[0]]
    rare2 = values[order[1]]
    common = values[order[-1]]
    suite = [
        f'label="{rare}"',
        f'label="{rare}" OR label="{rare2}"',
        f'label="{common}"',
        'group="g0"',
        'group="g0" OR group="g1"',
        'group="g0" OR group="g1" OR group="g2" OR group="g3"',
        "ALL",
    ]
    extra = rng.choice(values, size=4, replace=False)
    suite.insert(3, " OR ".join(f'label="{v}"' for v in extra))
    return suite


FRACTION_BUCKETS = [
    (0.0, 0.001, "<=0.1%"),
    (0.001, 0.01, "0.1-1%"),
    (0.01, 0.1, "1-10%"),
    (0.1, 0.999, "10-99%"),
    (0.999, 1.01, "100%"),
]


def fraction_bucket(fraction: float) -> str:
    for lo, hi, label in FRACTION_BUCKETS:
        if lo <= fraction < hi:
            return label
    return "100%"


# ---------------------------------------------------------------------------
# Speed benchmark
# ---------------------------------------------------------------------------


@dataclass
class BenchRow:
    strategy: str
    condition: str
    fraction: float
    bucket: str
    median_ms: float
    p90_ms: float
    speedup_vs_brute: float
    mean_nodes_visited: float
    mean_points_scored: float
    queries: int
    exactness_checked: int
    exactness_passed: bool


@dataclass
class BenchReport:
    n: int
    d: int
    metric: str
    leaf_size: int
    k: int
    repetitions: int
    seed: int
    rows: list[BenchRow]
    reconfig_threshold: int
    schema_version: int = SCHEMA_VERSION

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @property
    def all_exact(self) -> bool:
        return all(r.exactness_passed for r in self.rows)

    def row(self, strategy: str, condition: str) -> BenchRow:
        for r in self.rows:
            if r.strategy == strategy and r.condition == condition:
                return r
        raise KeyError((strategy, condition))


def _time_call(fn, repetitions: int) -> float:
    best = math.inf
    for _ in range(repetitions):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def calibrate_reconfig_threshold(
    corpus: Corpus,
    tree: Tree,
    index: ci.CondIndex,
    cache: ci.NodeSetCache,
    k: int = 10,
    seed: int = 0,
) -> int:
    """Crossover |S| where cached brute force stops beating query-then-filter.

    Measures both branches on synthetic conditions of increasing size and
    returns the first size where query-then-filter wins.
    """
    rng = np.random.default_rng(seed)
    qids = rng.choice(corpus.n, size=8, replace=False)
    values, counts = np.unique(corpus.metadata[next(iter(corpus.metadata))], return_counts=True)
    attr = next(iter(corpus.metadata))
    order = np.argsort(counts)
    sizes_and_conds = []
    acc = []
    total = 0
    for pos in order:
        acc.append(str(values[pos]))
        total += int(counts[pos])
        sizes_and_conds.append((total, " OR ".join(f'{attr}="{v}"' for v in acc)))
        if total > corpus.n // 2:
            break
    probe = [sizes_and_conds[0]]
    step = max(1, len(sizes_and_conds) // 6)
    probe += sizes_and_conds[step::step]
    threshold = sizes_and_conds[-1][0]
    for size, cond in probe:
        ci.resolve_node_set(index, cond, cache)  # warm, as reconf would run
        brute_t = np.median([
            _time_call(lambda q=corpus.points[qid]: ci.brute_force_cknn(corpus, q, cond, k), 3)
            for qid in qids
        ])
        qtf_t = np.median([
            _time_call(lambda q=corpus.points[qid]: ci.query_then_filter(tree, corpus, q, cond, k), 3)
            for qid in qids
        ])
        if qtf_t < brute_t:
            threshold = size
            break
    return int(threshold)


def run_speed_benchmark(
    corpus: Corpus,
    strategies: list[str],
    conditions: list[str],
    k: int = 10,
    queries: int = 1000,
    seed: int = 0,
    leaf_size: int = 500,
    repetitions: int = 5,
    warmup: int = 100,
    exactness_sample: float = 0.05,
    reconfig_threshold: int | None = None,
) -> BenchReport:
    known = {"cond", "qtf", "reconf", "brute", "dedicated"}
    bad = set(strategies) - known
    if bad:
        raise DataError(f"unknown strategies: {sorted(bad)}")
    fractions = []
    tree = build_ball_tree(corpus, leaf_size)
    index = ci.build_cond_index(tree, corpus)
    cache = ci.NodeSetCache()
    rng = np.random.default_rng(seed)
    qids = rng.choice(corpus.n, size=queries, replace=True)
    qvecs = corpus.points[qids]

    if reconfig_threshold is None:
        reconfig_threshold = calibrate_reconfig_threshold(corpus, tree, index, cache, k, seed)

    dedicated: dict[str, ci.DedicatedTree] = {}
    if "dedicated" in strategies:
        for cond in conditions:
            members = ci.resolve_node_set(index, cond, cache)[1]
            if members.count() > 0:
                dedicated[cond] = ci.build_dedicated(corpus, cond, leaf_size)

    def runner(strategy: str, cond: str):
        if strategy == "cond":
            return lambda q: ci.cknn_query(tree, index, q, cond, k, cache)
        if strategy == "qtf":
            return lambda q: ci.query_then_filter(tree, corpus, q, cond, k)
        if strategy == "reconf":
            return lambda q: ci.reconfigured_query(
                tree, index, corpus, q, cond, k, reconfig_threshold, cache
            )
        if strategy == "brute":
            return lambda q: ci.brute_force_cknn(corpus, q, cond, k)
        ded = dedicated.get(cond)
        if ded is None:
            return lambda q: ci.ResultList([], [], k, cond, "dedicated")
        return lambda q: ci.query_dedicated(ded, q, k)

    # warm the caches and the allocator before timing
    for i in range(min(warmup, queries)):
        for cond in conditions:
            ci.cknn_query(tree, index, qvecs[i % queries], cond, k, cache)

    timed_strategies = list(dict.fromkeys(strategies))
    need_brute_baseline = "brute" not in timed_strategies
    rows: list[BenchRow] = []
    brute_medians: dict[str, float] = {}

    for cond in conditions:
        members = ci.resolve_node_set(index, cond, cache)[1]
        fraction = members.count() / corpus.n
        fractions.append(fraction)
        bucket = fraction_bucket(fraction)
        per_strategy: dict[str, tuple[np.ndarray, list]] = {}
        stride = max(1, int(round(1.0 / exactness_sample))) if exactness_sample > 0 else queries + 1
        for strategy in timed_strategies + (["brute"] if need_brute_baseline else []):
            fn = runner(strategy, cond)
            latencies = np.empty(queries)
            results = []
            for qi in range(queries):
                q = qvecs[qi]
                latencies[qi] = _time_call(lambda: fn(q), repetitions)
                if qi % stride == 0:
                    results.append((qi, fn(q)))
            per_strategy[strategy] = (latencies, results)
        brute_median = float(np.median(per_strategy["brute"][0]))
        brute_medians[cond] = brute_median
        for strategy in timed_strategies:
            latencies, sampled = per_strategy[strategy]
            checked = 0
            passed = True
            for qi, res in sampled:
                oracle = ci.brute_force_cknn(corpus, qvecs[qi], cond, k)
                checked += 1
                if res.ids != oracle.ids:
                    passed = False
                else:
                    a = np.asarray(res.distances)
                    b = np.asarray(oracle.distances)
                    if a.shape != b.shape or not np.allclose(a, b, rtol=1e-5, atol=1e-9):
                        passed = False
                if not passed:
                    raise DataError(
                        "exactness check failed: "
                        + json.dumps({
                            "strategy": strategy, "condition": cond, "k": k,
                            "query_id": int(qids[qi]), "seed": seed,
                            "got": res.ids, "want": oracle.ids,
                        })
                    )
            nodes = np.mean([r.nodes_visited for _, r in sampled]) if sampled else 0.0
            scored = np.mean([r.points_scored for _, r in sampled]) if sampled else 0.0
            median = float(np.median(latencies))
            rows.append(
                BenchRow(
                    strategy=strategy,
                    condition=cond,
                    fraction=fraction,
                    bucket=bucket,
                    median_ms=median * 1e3,
                    p90_ms=float(np.percentile(latencies, 90)) * 1e3,
                    speedup_vs_brute=brute_median / median if median > 0 else math.inf,
                    mean_nodes_visited=float(nodes),
                    mean_points_scored=float(scored),
                    queries=queries,
                    exactness_checked=checked,
                    exactness_passed=passed,
                )
            )
    positive = [f for f in fractions if f > 0]
    if positive and max(positive) / min(positive) < 1000:
        import warnings

        warnings.warn(
            f"condition fractions span only {max(positive) / min(positive):.0f}x, want >= 1000x"
        )
    return BenchReport(
        n=corpus.n, d=corpus.d, metric=corpus.metric, leaf_size=leaf_size, k=k,
        repetitions=repetitions, seed=seed, rows=rows,
        reconfig_threshold=reconfig_threshold,
    )


def shape_checks(report: BenchReport) -> dict[str, bool | None]:
    """Fig-6 style orderings; None when a side is missing from the report.

    (a) rare conditions (fraction <= 1%): pruned queries beat query-then-filter
    (b) broad conditions (>= 30%): pruned within 3x of a dedicated tree
    """
    def medians(strategy, pred):
        vals = [r.median_ms for r in report.rows if r.strategy == strategy and pred(r.fraction)]
        return vals

    out: dict[str, bool | None] = {}
    rare_cond = medians("cond", lambda f: f <= 0.01)
    rare_qtf = medians("qtf", lambda f: f <= 0.01)
    out["rare_cond_beats_qtf"] = (
        None if not (rare_cond and rare_qtf)
        else float(np.median(rare_cond)) < float(np.median(rare_qtf))
    )
    broad_cond = medians("cond", lambda f: f >= 0.3)
    broad_ded = medians("dedicated", lambda f: f >= 0.3)
    out["broad_cond_within_3x_dedicated"] = (
        None if not (broad_cond and broad_ded)
        else float(np.median(broad_cond)) <= 3.0 * float(np.median(broad_ded))
    )
    return out


# ---------------------------------------------------------------------------
# Space accounting (Table-1 style)
# ---------------------------------------------------------------------------


@dataclass
class MemoryReport:
    n: int
    d: int
    leaf_size: int
    node_count: int
    n_values: int
    data_bytes: int
    tree_bytes: int
    index_bytes: int
    data_bytes_f64_model: int
    tree_bytes_f64_model: int
    index_bytes_8byte_model: int
    index_bits_bound_bytes: int
    node_budget: int
    node_budget_ok: bool
    schema_version: int = SCHEMA_VERSION

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def measure_memory(tree: Tree, index: ci.CondIndex, corpus: Corpus) -> MemoryReport:
    n_values = sum(len(a.values) for a in index.attributes.values())
    budget = 2 * math.ceil(corpus.n / tree.leaf_size) - 1
    return MemoryReport(
        n=corpus.n,
        d=corpus.d,
        leaf_size=tree.leaf_size,
        node_count=tree.node_count,
        n_values=n_values,
        data_bytes=corpus.points.nbytes,
        tree_bytes=len(tree_to_bytes(tree)),
        index_bytes=len(ci.index_to_bytes(index)),
        data_bytes_f64_model=corpus.n * corpus.d * 8,
        tree_bytes_f64_model=tree.node_count * corpus.d * 8,
        index_bytes_8byte_model=n_values * tree.node_count * 8,
        index_bits_bound_bytes=n_values * ((tree.node_count + 7) // 8),
        node_budget=budget,
        node_budget_ok=tree.node_count <= budget,
    )


# ---------------------------------------------------------------------------
# Accuracy@N protocol
# ---------------------------------------------------------------------------


@dataclass
class AccuracyTable:
    accuracies: dict[int, float]
    baselines: dict[int, float]
    trials: int
    n_content: int
    n_style: int
    schema_version: int = SCHEMA_VERSION

    def to_json(self) -> str:
        return json.dumps(
            {
                "schema_version": self.schema_version,
                "trials": self.trials,
                "n_content": self.n_content,
                "n_style": self.n_style,
                "accuracy": {str(k): v for k, v in self.accuracies.items()},
                "random_baseline": {str(k): v for k, v in self.baselines.items()},
            },
            indent=2,
        )


def accuracy_at_n(
    corpus: Corpus,
    n_values: tuple[int, ...] = (1, 10),
    trials: int = 10000,
    seed: int = 0,
    leaf_size: int = 200,
) -> AccuracyTable:
    """Content recovery across styles: query a random point conditioned on a
    random *other* style and test whether any top-N hit shares its content.
    The query point itself is excluded (a no-op, its style never matches)."""
    if trials < 1:
        raise DataError("trials must be >= 1")
    for name in ("content", "style"):
        if name not in corpus.metadata:
            raise DataError(f"corpus lacks the {name!r} attribute")
    styles = np.unique(corpus.metadata["style"])
    contents = np.unique(corpus.metadata["content"])
    if styles.shape[0] < 2:
        raise DataError("need at least two styles")
    k = max(n_values)
    tree = build_ball_tree(corpus, leaf_size)
    index = ci.build_cond_index(tree, corpus)
    cache = ci.NodeSetCache()
    rng = np.random.default_rng(seed)
    hits = {nv: 0 for nv in n_values}
    for _ in range(trials):
        pid = int(rng.integers(0, corpus.n))
        own_style = corpus.metadata["style"][pid]
        own_content = corpus.metadata["content"][pid]
        others = styles[styles != own_style]
        target = str(others[int(rng.integers(0, others.shape[0]))])
        res = ci.cknn_query(tree, index, corpus.points[pid], f'style="{target}"', k, cache)
        ids = [i for i in res.ids if i != pid][:k]
        got = corpus.metadata["content"][ids]
        for nv in n_values:
            if np.any(got[:nv] == own_content):
                hits[nv] += 1
    return AccuracyTable(
        accuracies={nv: hits[nv] / trials for nv in n_values},
        baselines={nv: min(1.0, nv / contents.shape[0]) for nv in n_values},
        trials=trials,
        n_content=int(contents.shape[0]),
        n_style=int(styles.shape[0]),
    )
