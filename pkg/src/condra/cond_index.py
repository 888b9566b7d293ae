"""Inverted index from attribute values to dominating tree nodes.

For each categorical value c, the index stores the set of tree nodes with at
least one c-labeled point below them.  Union and intersection of conditions
commute through these per-value node sets, so an arbitrary boolean condition
resolves to a node bit-array that prunes the tree before traversal.  AND
across different attributes yields a superset of the exact node set; the
point-level predicate applied at leaves restores exactness.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from threading import Lock

import numpy as np

from .bitset import BitSet, IdSet, NodeSet
from .conditions import (
    All,
    And,
    ConditionExpr,
    Not,
    Or,
    Term,
    condition_members,
    negated_terms,
    parse_condition,
)
from .corpus import Corpus, sq_distances, subset_corpus
from .errors import BindError, ConsistencyError, DataError, DimensionMismatch, FormatError
from .tree import SearchCounters, Tree, build_ball_tree, tree_search, _prepare_query

_WORD_BYTES = 8


@dataclass
class AttrIndex:
    values: list[str]
    value_pos: dict[str, int]
    codes: np.ndarray       # (n,) int32 value code per point
    node_words: np.ndarray  # (n_values, n_words) uint64 packed node sets
    counts: np.ndarray      # (n_values,) int64 points per value


@dataclass
class CondIndex:
    node_count: int
    n: int
    corpus_token: int
    attributes: dict[str, AttrIndex]

    def node_set(self, attribute: str, value: str) -> NodeSet:
        """I_class(value): dominating nodes of all points carrying value."""
        attr = self._attr(attribute)
        pos = attr.value_pos.get(value)
        if pos is None:
            return NodeSet.empty(self.node_count)
        return NodeSet(self.node_count, attr.node_words[pos].copy())

    def value_count(self, attribute: str, value: str) -> int:
        attr = self._attr(attribute)
        pos = attr.value_pos.get(value)
        return 0 if pos is None else int(attr.counts[pos])

    def _attr(self, attribute: str) -> AttrIndex:
        try:
            return self.attributes[attribute]
        except KeyError:
            raise BindError(f"attribute {attribute!r} is not indexed") from None


@dataclass
class ResultList:
    ids: list[int]
    distances: list[float]
    k: int
    condition: str
    strategy: str
    nodes_visited: int = 0
    points_scored: int = 0
    passes: int = 1  # tree passes taken (query-then-filter escalations)

    def pairs(self) -> list[tuple[int, float]]:
        return list(zip(self.ids, self.distances))

    def __len__(self) -> int:
        return len(self.ids)


class NodeSetCache:
    """Memo table from canonical condition text to resolved sets.

    Read-mostly: concurrent resolutions of the same condition may race but
    recompute identical values, so last-write-wins is safe.
    """

    def __init__(self):
        self._table: dict[str, tuple[NodeSet, IdSet]] = {}
        self._lock = Lock()
        self.hits = 0
        self.misses = 0

    def get(self, key: str):
        entry = self._table.get(key)
        if entry is None:
            self.misses += 1
        else:
            self.hits += 1
        return entry

    def put(self, key: str, value: tuple[NodeSet, IdSet]) -> None:
        with self._lock:
            self._table[key] = value

    def __len__(self) -> int:
        return len(self._table)


def build_cond_index(tree: Tree, corpus: Corpus, attributes: list[str] | None = None) -> CondIndex:
    """Mark, for every attribute value, the nodes dominating its points."""
    if tree.n != corpus.n or tree.corpus_token != corpus.fingerprint():
        raise ConsistencyError("tree was not built over this corpus")
    if attributes is None:
        attributes = corpus.attributes
    missing = [a for a in attributes if a not in corpus.metadata]
    if missing:
        raise BindError(f"unknown attribute(s): {', '.join(missing)}")

    nc = tree.node_count
    out: dict[str, AttrIndex] = {}
    for name in attributes:
        values, codes = np.unique(corpus.metadata[name], return_inverse=True)
        codes = codes.astype(np.int32)
        n_values = values.shape[0]
        present = np.zeros((nc, n_values), dtype=bool)
        # Children precede nothing: preorder ids put parents first, so a
        # reverse sweep sees both children before their parent.
        for node in range(nc - 1, -1, -1):
            if tree.left[node] < 0:
                below = codes[tree.idx[tree.start[node]:tree.end[node]]]
                present[node, np.unique(below)] = True
            else:
                np.logical_or(
                    present[tree.left[node]], present[tree.right[node]], out=present[node]
                )
        packed = np.packbits(present.T, axis=1, bitorder="little")
        n_words = (nc + 63) // 64
        padded = np.zeros((n_values, n_words * _WORD_BYTES), dtype=np.uint8)
        padded[:, : packed.shape[1]] = packed
        out[name] = AttrIndex(
            values=[str(v) for v in values],
            value_pos={str(v): i for i, v in enumerate(values)},
            codes=codes,
            node_words=padded.view(np.uint64),
            counts=np.bincount(codes, minlength=n_values).astype(np.int64),
        )
    return CondIndex(node_count=nc, n=corpus.n, corpus_token=corpus.fingerprint(), attributes=out)


# ---------------------------------------------------------------------------
# Node-set resolution
# ---------------------------------------------------------------------------


def _resolve(index: CondIndex, expr: ConditionExpr) -> tuple[NodeSet, np.ndarray]:
    if isinstance(expr, All):
        return NodeSet.full(index.node_count), np.ones(index.n, dtype=bool)
    if isinstance(expr, Term):
        attr = index._attr(expr.attribute)
        pos = attr.value_pos.get(expr.value)
        if pos is None:
            return NodeSet.empty(index.node_count), np.zeros(index.n, dtype=bool)
        nodes = NodeSet(index.node_count, attr.node_words[pos].copy())
        return nodes, attr.codes == pos
    if isinstance(expr, Or):
        nodes, members = _resolve(index, expr.parts[0])
        for part in expr.parts[1:]:
            n2, m2 = _resolve(index, part)
            nodes = nodes | n2
            members = members | m2
        return nodes, members
    if isinstance(expr, And):
        nodes, members = _resolve(index, expr.parts[0])
        for part in expr.parts[1:]:
            n2, m2 = _resolve(index, part)
            nodes = nodes & n2
            members = members & m2
        return nodes, members
    if isinstance(expr, Not):
        attribute, excluded = negated_terms(expr)
        attr = index._attr(attribute)
        skip = {attr.value_pos[v] for v in excluded if v in attr.value_pos}
        nodes = NodeSet.empty(index.node_count)
        keep = np.zeros(index.n, dtype=bool)
        for pos in range(len(attr.values)):
            if pos in skip:
                continue
            nodes.words |= attr.node_words[pos]
            keep |= attr.codes == pos
        return nodes, keep
    raise TypeError(f"unknown expression node {type(expr).__name__}")


def resolve_node_set(
    index: CondIndex,
    expr: ConditionExpr | str,
    cache: NodeSetCache | None = None,
) -> tuple[NodeSet, IdSet]:
    """Resolve a condition to (valid tree nodes, member point ids)."""
    if isinstance(expr, str):
        expr = parse_condition(expr)
    key = expr.canonical()
    if cache is not None:
        hit = cache.get(key)
        if hit is not None:
            return hit
    nodes, members = _resolve(index, expr)
    result = (nodes, IdSet.from_bools(members))
    if cache is not None:
        cache.put(key, result)
    return result


def point_level_node_set(tree: Tree, members: IdSet) -> NodeSet:
    """Reference semantics: union of ancestor chains over member points."""
    mask = members.to_bools()
    nodes = NodeSet.empty(tree.node_count)
    counts = member_counts_per_node(tree, mask)
    nodes_with = np.flatnonzero(counts > 0)
    for node in nodes_with:
        nodes.add(int(node))
    return nodes


def member_counts_per_node(tree: Tree, member_mask: np.ndarray) -> np.ndarray:
    """|node ∩ S| for every node, via one reverse (children-first) sweep."""
    counts = np.zeros(tree.node_count, dtype=np.int64)
    for node in range(tree.node_count - 1, -1, -1):
        if tree.left[node] < 0:
            counts[node] = int(member_mask[tree.idx[tree.start[node]:tree.end[node]]].sum())
        else:
            counts[node] = counts[tree.left[node]] + counts[tree.right[node]]
    return counts


# ---------------------------------------------------------------------------
# Query strategies.  All of them return exactly the filtered exhaustive-scan
# answer; they differ only in how much work they do to find it.
# ---------------------------------------------------------------------------


def _condition_text(expr: ConditionExpr | str) -> str:
    return expr if isinstance(expr, str) else expr.canonical()


def _as_expr(expr: ConditionExpr | str) -> ConditionExpr:
    return parse_condition(expr) if isinstance(expr, str) else expr


def cknn_query(
    tree: Tree,
    index: CondIndex,
    q,
    expr: ConditionExpr | str,
    k: int,
    cache: NodeSetCache | None = None,
) -> ResultList:
    """Conditional KNN by pruned best-first traversal of the full tree."""
    text = _condition_text(expr)
    expr = _as_expr(expr)
    q64 = _prepare_query(tree, q)
    nodes, members = resolve_node_set(index, expr, cache)
    n_members = members.count()
    if n_members == 0:
        return ResultList([], [], k, text, "cond")
    counters = SearchCounters()
    pairs = tree_search(
        tree, q64, k,
        valid_nodes=None if nodes.count() == tree.node_count else nodes.to_bools(),
        member_mask=None if n_members == tree.n else members.to_bools(),
        counters=counters,
    )
    return ResultList(
        [p for p, _ in pairs], [d for _, d in pairs], k, text, "cond",
        nodes_visited=counters.nodes_visited, points_scored=counters.points_scored,
    )


def _brute_over_mask(corpus: Corpus, q64: np.ndarray, mask: np.ndarray, k: int,
                     text: str, strategy: str) -> ResultList:
    ids = np.flatnonzero(mask)
    if ids.shape[0] == 0:
        return ResultList([], [], k, text, strategy)
    d2 = sq_distances(corpus.points64()[ids], q64)
    dist = np.sqrt(d2)
    order = np.lexsort((ids, dist))[: min(k, ids.shape[0])]
    return ResultList(
        [int(ids[i]) for i in order],
        [float(dist[i]) for i in order],
        k, text, strategy, nodes_visited=0, points_scored=int(ids.shape[0]),
    )


def brute_force_cknn(corpus: Corpus, q, expr: ConditionExpr | str, k: int) -> ResultList:
    """Filtered exhaustive scan; the oracle every strategy must match."""
    if k < 1:
        raise DataError("k must be >= 1")
    text = _condition_text(expr)
    expr = _as_expr(expr)
    q64 = corpus.query_vector(q)
    mask = condition_members(expr, corpus).to_bools()
    return _brute_over_mask(corpus, q64, mask, k, text, "brute")


def query_then_filter(
    tree: Tree,
    corpus: Corpus,
    q,
    expr: ConditionExpr | str,
    k: int,
    initial: int = 50,
    growth: int = 5,
) -> ResultList:
    """Unconditional KNN with inflated k, filtered, escalating geometrically."""
    if k < 1:
        raise DataError("k must be >= 1")
    if initial < 1 or growth < 2:
        raise DataError("initial must be >= 1 and growth >= 2")
    text = _condition_text(expr)
    expr = _as_expr(expr)
    q64 = _prepare_query(tree, q)
    mask = condition_members(expr, corpus).to_bools()
    nodes_visited = 0
    points_scored = 0
    k_prime = initial
    passes = 0
    while True:
        counters = SearchCounters()
        pairs = tree_search(tree, q64, min(k_prime, tree.n), counters=counters)
        passes += 1
        nodes_visited += counters.nodes_visited
        points_scored += counters.points_scored
        kept = [(pid, dist) for pid, dist in pairs if mask[pid]]
        if len(kept) >= k or k_prime >= tree.n:
            kept = kept[:k]
            return ResultList(
                [p for p, _ in kept], [d for _, d in kept], k, text, "qtf",
                nodes_visited=nodes_visited, points_scored=points_scored, passes=passes,
            )
        k_prime *= growth


def reconfigured_query(
    tree: Tree,
    index: CondIndex,
    corpus: Corpus,
    q,
    expr: ConditionExpr | str,
    k: int,
    threshold: int = 2000,
    cache: NodeSetCache | None = None,
) -> ResultList:
    """Adaptive switch: brute force over small conditions, else query-then-filter."""
    if threshold < 0:
        raise DataError("threshold must be >= 0")
    text = _condition_text(expr)
    expr = _as_expr(expr)
    _, members = resolve_node_set(index, expr, cache)
    if members.count() < threshold:
        q64 = corpus.query_vector(q)
        res = _brute_over_mask(corpus, q64, members.to_bools(), k, text, "reconf[brute]")
        return res
    res = query_then_filter(tree, corpus, q, expr, k)
    res.strategy = "reconf[qtf]"
    return res


@dataclass
class DedicatedTree:
    """Ball tree rebuilt over exactly one condition's points."""

    tree: Tree
    corpus: Corpus
    orig_ids: np.ndarray
    condition: str


def build_dedicated(corpus: Corpus, expr: ConditionExpr | str, leaf_size: int) -> DedicatedTree:
    text = _condition_text(expr)
    expr = _as_expr(expr)
    ids = condition_members(expr, corpus).to_indices()
    if ids.shape[0] == 0:
        raise DataError("cannot build a dedicated tree over an empty condition")
    sub = subset_corpus(corpus, ids)
    return DedicatedTree(build_ball_tree(sub, leaf_size), sub, ids, text)


def query_dedicated(ded: DedicatedTree, q, k: int) -> ResultList:
    counters = SearchCounters()
    q64 = _prepare_query(ded.tree, q)
    pairs = tree_search(ded.tree, q64, k, counters=counters)
    return ResultList(
        [int(ded.orig_ids[p]) for p, _ in pairs],
        [d for _, d in pairs],
        k, ded.condition, "dedicated",
        nodes_visited=counters.nodes_visited, points_scored=counters.points_scored,
    )


def batched_brute_force(
    corpus: Corpus,
    queries: np.ndarray,
    exprs: list[ConditionExpr | str],
    k: int,
) -> list[list[ResultList]]:
    """All (query, condition) cells from one dense distance computation.

    One float32 einsum Gram product serves every cell; per condition a
    margin-widened candidate set is selected from the float32 grid and then
    rescored with the exact float64 kernel, so each cell's ids, order and
    distances match brute_force_cknn.
    """
    if k < 1:
        raise DataError("k must be >= 1")
    Q64 = np.asarray(queries, dtype=np.float64)
    if Q64.ndim == 1:
        Q64 = Q64[None, :]
    if Q64.shape[1] != corpus.d:
        raise DimensionMismatch(f"queries have dim {Q64.shape[1]}, corpus has {corpus.d}")
    # row-by-row so angular normalization is bit-identical to the single-query path
    Q64 = np.stack([corpus.query_vector(row) for row in Q64])

    Xf = corpus.points
    Qf = Q64.astype(np.float32)
    gram = np.einsum("id,jd->ij", Qf, Xf, optimize=True)
    xsq = np.einsum("jd,jd->j", Xf, Xf)
    qsq = np.einsum("id,id->i", Qf, Qf)
    sq32 = np.maximum(qsq[:, None] + xsq[None, :] - 2.0 * gram, np.float32(0.0))
    # absolute slack covering float32 rounding of the norm expansion; the
    # exact rescoring below makes any over-selection harmless
    margin = (32 * np.finfo(np.float32).eps) * (qsq + float(xsq.max()))

    pts64 = corpus.points64()
    parsed = [_as_expr(e) for e in exprs]
    texts = [_condition_text(e) for e in exprs]
    m = Q64.shape[0]
    grid: list[list[ResultList | None]] = [[None] * len(parsed) for _ in range(m)]
    for ci, expr in enumerate(parsed):
        ids = condition_members(expr, corpus).to_indices()
        s = ids.shape[0]
        if s == 0:
            for qi in range(m):
                grid[qi][ci] = ResultList([], [], k, texts[ci], "batched")
            continue
        kk = min(k, s)
        sub = sq32[:, ids]  # (m, s)
        slack = min(kk + 32, s)
        if slack < s:
            part = np.argpartition(sub, slack - 1, axis=1)[:, :slack]
            vals = np.take_along_axis(sub, part, axis=1)
            kth = np.partition(vals, kk - 1, axis=1)[:, kk - 1]
            thresh = kth + margin
            # the slack window absorbed every candidate under the threshold
            # unless it is completely full of them
            covered = (vals <= thresh[:, None]).sum(axis=1) < slack
        else:
            part = np.broadcast_to(np.arange(s), (m, s))
            thresh = np.full(m, np.inf)
            covered = np.ones(m, dtype=bool)
        for qi in range(m):
            if covered[qi]:
                row = part[qi]
                cand = row[sub[qi, row] <= thresh[qi]]
            else:
                cand = np.flatnonzero(sub[qi] <= thresh[qi])
            cand_ids = ids[cand]
            exact = np.sqrt(sq_distances(pts64[cand_ids], Q64[qi]))
            order = np.lexsort((cand_ids, exact))[:kk]
            grid[qi][ci] = ResultList(
                [int(cand_ids[i]) for i in order],
                [float(exact[i]) for i in order],
                k, texts[ci], "batched",
                nodes_visited=0, points_scored=s,
            )
    return grid


# ---------------------------------------------------------------------------
# Serialization: the index is appended to the tree file as a tagged section.
# ---------------------------------------------------------------------------

INDEX_MAGIC = b"CIDX"
_U32 = struct.Struct("<I")


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def index_to_bytes(index: CondIndex) -> bytes:
    parts = [INDEX_MAGIC, _U32.pack(len(index.attributes))]
    bits_len = (index.node_count + 7) // 8
    for name, attr in index.attributes.items():
        parts.append(_pack_str(name))
        parts.append(_U32.pack(len(attr.values)))
        byte_view = attr.node_words.view(np.uint8).reshape(len(attr.values), -1)
        for pos, value in enumerate(attr.values):
            parts.append(_pack_str(value))
            parts.append(_U32.pack(int(attr.counts[pos])))
            payload = byte_view[pos, :bits_len].tobytes()
            parts.append(_U32.pack(len(payload)))
            parts.append(payload)
    return b"".join(parts)


def index_from_bytes(data: bytes, offset: int, tree: Tree, corpus: Corpus) -> CondIndex:
    if data[offset:offset + 4] != INDEX_MAGIC:
        raise FormatError("missing conditional-index section")
    off = offset + 4

    def u32():
        nonlocal off
        (v,) = _U32.unpack_from(data, off)
        off += 4
        return v

    def text():
        nonlocal off
        (ln,) = struct.unpack_from("<H", data, off)
        off += 2
        s = data[off:off + ln].decode("utf-8")
        off += ln
        return s

    nc = tree.node_count
    n_words = (nc + 63) // 64
    n_attrs = u32()
    attributes: dict[str, AttrIndex] = {}
    for _ in range(n_attrs):
        name = text()
        n_values = u32()
        values = []
        counts = np.zeros(n_values, dtype=np.int64)
        words = np.zeros((n_values, n_words), dtype=np.uint64)
        for pos in range(n_values):
            values.append(text())
            counts[pos] = u32()
            ln = u32()
            bs = BitSet.from_packed_bytes(nc, data[off:off + ln])
            off += ln
            words[pos] = bs.words
        if name not in corpus.metadata:
            raise ConsistencyError(f"indexed attribute {name!r} missing from corpus")
        value_pos = {v: i for i, v in enumerate(values)}
        uniq, inverse = np.unique(corpus.metadata[name], return_inverse=True)
        lookup = np.array([value_pos.get(str(v), -1) for v in uniq])
        codes = lookup[inverse].astype(np.int32)
        if np.any(codes < 0):
            raise ConsistencyError(f"attribute {name!r} has values missing from the index")
        attributes[name] = AttrIndex(values, value_pos, codes, words, counts)
    return CondIndex(nc, tree.n, tree.corpus_token, attributes)


def save_tree_with_index(tree: Tree, index: CondIndex, path) -> None:
    from .tree import tree_to_bytes

    Path(path).write_bytes(tree_to_bytes(tree) + index_to_bytes(index))


def load_tree_with_index(path, corpus: Corpus) -> tuple[Tree, CondIndex]:
    from .tree import tree_from_bytes

    data = Path(path).read_bytes()
    tree, consumed = tree_from_bytes(data, corpus)
    index = index_from_bytes(data, consumed, tree, corpus)
    return tree, index
