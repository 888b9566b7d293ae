"""Binary spatial partition trees over a corpus.

All three kinds (ball, kd, rp_max) share one flat array layout: nodes are
stored in preorder (root = 0, parents before children), each node owns a
contiguous slice of a permutation array ``idx`` so the points below any node
are ``idx[start:end]``.  Every node carries a centroid and covering radius;
a parent's radius is never smaller than its children's, so pruning bounds
and cell-size statistics are uniform across kinds.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from heapq import heappush, heapreplace
from pathlib import Path

import numpy as np

from .corpus import Corpus, as_float64, sq_distances
from .errors import ConsistencyError, DataError, DimensionMismatch, FormatError

TREE_MAGIC = b"CTRE"
TREE_VERSION = 1
KINDS = ("ball", "kd", "rp_max")
METRIC_CODES = {"euclidean": 0, "angular": 1}


@dataclass(eq=False)
class Tree:
    kind: str
    leaf_size: int
    metric: str
    n: int
    d: int
    corpus_token: int
    centroids: np.ndarray        # (node_count, d) float32
    radii: np.ndarray            # (node_count,) float32
    left: np.ndarray             # (node_count,) int32, -1 for leaves
    right: np.ndarray            # (node_count,) int32
    start: np.ndarray            # (node_count,) int64
    end: np.ndarray              # (node_count,) int64
    split_dim: np.ndarray        # (node_count,) int32, -1 where absent
    split_threshold: np.ndarray  # (node_count,) float64
    directions: np.ndarray | None  # (node_count, d) float32, rp_max only
    idx: np.ndarray              # (n,) int32 permutation of point ids
    points: np.ndarray | None = field(default=None, repr=False)
    _f64: np.ndarray | None = field(default=None, repr=False)
    _c64: np.ndarray | None = field(default=None, repr=False)

    @property
    def node_count(self) -> int:
        return self.radii.shape[0]

    def is_leaf(self, node: int) -> bool:
        return self.left[node] < 0

    def counts(self) -> np.ndarray:
        return (self.end - self.start).astype(np.int64)

    def points_below(self, node: int) -> np.ndarray:
        return self.idx[self.start[node]:self.end[node]]

    def points64(self) -> np.ndarray:
        if self._f64 is None:
            if self.points is None:
                raise ConsistencyError("tree is not bound to corpus points")
            self._f64 = as_float64(self.points)
        return self._f64

    def centroids64(self) -> np.ndarray:
        if self._c64 is None:
            self._c64 = as_float64(self.centroids)
        return self._c64

    def node_depths(self) -> np.ndarray:
        depths = np.zeros(self.node_count, dtype=np.int32)
        for i in range(self.node_count):  # preorder: parents precede children
            if self.left[i] >= 0:
                depths[self.left[i]] = depths[i] + 1
                depths[self.right[i]] = depths[i] + 1
        return depths

    def parents(self) -> np.ndarray:
        par = np.full(self.node_count, -1, dtype=np.int32)
        for i in range(self.node_count):
            if self.left[i] >= 0:
                par[self.left[i]] = i
                par[self.right[i]] = i
        return par


@dataclass
class TreeStats:
    node_count: int
    leaf_count: int
    depth: int
    gamma_hat: float
    shrink_factor: float
    radius_histogram: tuple[list[int], list[float]]


class _Builder:
    def __init__(self, corpus: Corpus, leaf_size: int, kind: str, rng=None):
        if leaf_size < 1:
            raise DataError("leaf_size must be >= 1")
        if corpus.n < 1:
            raise DataError("cannot build a tree over an empty corpus")
        self.pts = corpus.points
        self.pts64 = corpus.points64()
        self.leaf_size = leaf_size
        self.kind = kind
        self.rng = rng
        self.d = corpus.d
        self.idx = np.arange(corpus.n, dtype=np.int32)
        self.centroids: list[np.ndarray] = []
        self.radii: list[np.float32] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.start: list[int] = []
        self.end: list[int] = []
        self.split_dim: list[int] = []
        self.split_threshold: list[float] = []
        self.directions: list[np.ndarray] = []

    def build(self, lo: int, hi: int) -> int:
        me = len(self.radii)
        ids = self.idx[lo:hi]
        rows = self.pts64[ids]
        centroid = rows.mean(axis=0)
        c32 = centroid.astype(np.float32)
        dists = np.sqrt(sq_distances(rows, as_float64(c32)))
        r0 = float(dists.max())
        r32 = np.float32(r0)
        if float(r32) < r0:
            r32 = np.nextafter(r32, np.float32(np.inf))

        self.centroids.append(c32)
        self.radii.append(r32)
        self.left.append(-1)
        self.right.append(-1)
        self.start.append(lo)
        self.end.append(hi)
        self.split_dim.append(-1)
        self.split_threshold.append(0.0)
        if self.kind == "rp_max":
            self.directions.append(np.zeros(self.d, dtype=np.float32))

        count = hi - lo
        if count <= self.leaf_size:
            return me

        if self.kind == "rp_max":
            order, mid = self._split_rp(me, rows, r0)
        else:
            order, mid = self._split_spread(me, rows)
        self.idx[lo:hi] = ids[order]
        left_id = self.build(lo, lo + mid)
        right_id = self.build(lo + mid, hi)
        self.left[me] = left_id
        self.right[me] = right_id
        # Covering radii are monotone along every edge by construction.
        self.radii[me] = max(self.radii[me], self.radii[left_id], self.radii[right_id])
        return me

    def _split_spread(self, me: int, rows: np.ndarray) -> tuple[np.ndarray, int]:
        spreads = rows.max(axis=0) - rows.min(axis=0)
        dim = int(np.argmax(spreads))
        coords = rows[:, dim]
        order = np.argsort(coords, kind="stable")
        mid = self._leaf_aligned_mid(rows.shape[0])
        self.split_dim[me] = dim
        self.split_threshold[me] = float(coords[order[mid]])
        return order, mid

    def _leaf_aligned_mid(self, count: int) -> int:
        # Median rounded to a leaf_size boundary: the tree then has exactly
        # ceil(n / leaf_size) leaves, meeting the 2n/l node budget (a pure
        # median split can produce nearly twice that many leaves).
        leaves = -(-count // self.leaf_size)
        return (leaves // 2) * self.leaf_size

    def _split_rp(self, me: int, rows: np.ndarray, r0: float) -> tuple[np.ndarray, int]:
        v = self.rng.standard_normal(self.d)
        norm = float(np.linalg.norm(v))
        if norm == 0.0:
            v[0] = 1.0
            norm = 1.0
        v /= norm
        proj = rows @ v
        diameter_est = 2.0 * r0
        jitter = float(self.rng.uniform(-1.0, 1.0)) * 6.0 * diameter_est / math.sqrt(self.d)
        threshold = float(np.median(proj)) + jitter
        go_left = proj <= threshold
        n_left = int(go_left.sum())
        if 0 < n_left < rows.shape[0]:
            order = np.argsort(~go_left, kind="stable")
            mid = n_left
        else:
            # Jitter pushed the threshold outside the data; fall back to halves.
            order = np.argsort(proj, kind="stable")
            mid = rows.shape[0] // 2
            threshold = float(proj[order[mid]])
        self.directions[me] = v.astype(np.float32)
        self.split_threshold[me] = threshold
        return order, mid

    def finish(self, corpus: Corpus) -> Tree:
        nc = len(self.radii)
        return Tree(
            kind=self.kind,
            leaf_size=self.leaf_size,
            metric=corpus.metric,
            n=corpus.n,
            d=corpus.d,
            corpus_token=corpus.fingerprint(),
            centroids=np.vstack(self.centroids).astype(np.float32),
            radii=np.asarray(self.radii, dtype=np.float32),
            left=np.asarray(self.left, dtype=np.int32),
            right=np.asarray(self.right, dtype=np.int32),
            start=np.asarray(self.start, dtype=np.int64),
            end=np.asarray(self.end, dtype=np.int64),
            split_dim=np.asarray(self.split_dim, dtype=np.int32),
            split_threshold=np.asarray(self.split_threshold, dtype=np.float64),
            directions=np.vstack(self.directions).astype(np.float32) if nc and self.kind == "rp_max" else None,
            idx=self.idx,
            points=corpus.points,
        )


def _build(corpus: Corpus, leaf_size: int, kind: str, rng=None) -> Tree:
    builder = _Builder(corpus, leaf_size, kind, rng)
    builder.build(0, corpus.n)
    return builder.finish(corpus)


def build_ball_tree(corpus: Corpus, leaf_size: int) -> Tree:
    """Balanced ball tree: median split along the dimension of max spread."""
    return _build(corpus, leaf_size, "ball")


def build_kd_tree(corpus: Corpus, leaf_size: int) -> Tree:
    """KD-style build; shares the max-spread median rule, tagged kd."""
    return _build(corpus, leaf_size, "kd")


def build_rp_tree(corpus: Corpus, leaf_size: int, seed: int) -> Tree:
    """Random-projection tree: jittered median split on a random direction."""
    return _build(corpus, leaf_size, "rp_max", np.random.default_rng(seed))


# ---------------------------------------------------------------------------
# Queries
# ---------------------------------------------------------------------------


class SearchCounters:
    __slots__ = ("nodes_visited", "points_scored")

    def __init__(self):
        self.nodes_visited = 0
        self.points_scored = 0


def tree_search(
    tree: Tree,
    q64: np.ndarray,
    k: int,
    valid_nodes: np.ndarray | None = None,
    member_mask: np.ndarray | None = None,
    counters: SearchCounters | None = None,
) -> list[tuple[int, float]]:
    """Best-first branch-and-bound search shared by plain and conditional KNN.

    valid_nodes: bool per node id; nodes outside are skipped entirely.
    member_mask: bool per point id; only members are scored at leaves.
    Returns up to k (point id, distance) pairs ordered by (distance, id).
    """
    if k < 1:
        raise DataError("k must be >= 1")
    pts64 = tree.points64()
    counters = counters or SearchCounters()

    if k >= tree.n and valid_nodes is None and member_mask is None:
        # full scan: the traversal would score every point anyway
        counters.nodes_visited = tree.node_count
        counters.points_scored = tree.n
        dist = np.sqrt(sq_distances(pts64, q64))
        ids = np.arange(tree.n)
        order = np.lexsort((ids, dist))
        return [(int(i), float(dist[i])) for i in order]

    cents = tree.centroids64()
    radii = tree.radii
    left, right = tree.left, tree.right
    start, end, idx = tree.start, tree.end, tree.idx
    select = _HeapSelect(k) if k <= 64 else _BatchSelect(k)

    def score_leaf(node: int) -> None:
        ids = idx[start[node]:end[node]]
        if member_mask is not None:
            ids = ids[member_mask[ids]]
        if ids.shape[0] == 0:
            return
        counters.points_scored += ids.shape[0]
        select.offer(ids, np.sqrt(sq_distances(pts64[ids], q64)))

    def bound(node: int) -> float:
        diff = cents[node] - q64
        cd = math.sqrt(float(diff @ diff))
        return max(0.0, cd - float(radii[node]))

    def visit(node: int) -> None:
        if valid_nodes is not None and not valid_nodes[node]:
            return
        counters.nodes_visited += 1
        if left[node] < 0:
            score_leaf(node)
            return
        children = (int(left[node]), int(right[node]))
        bounds = (bound(children[0]), bound(children[1]))
        if bounds[1] < bounds[0]:
            children = (children[1], children[0])
            bounds = (bounds[1], bounds[0])
        for child, b in zip(children, bounds):
            # Strict inequality: equal-distance candidates with smaller ids
            # may still displace the current worst, so ties are explored.
            if b > select.worst():
                continue
            visit(child)

    visit(0)
    return select.results()


class _HeapSelect:
    """k-best by (distance, id) via a max-heap; good for small k."""

    __slots__ = ("k", "heap")

    def __init__(self, k: int):
        self.k = k
        self.heap: list[tuple[float, int]] = []  # (-distance, -id), worst on top

    def worst(self) -> float:
        return -self.heap[0][0] if len(self.heap) == self.k else math.inf

    def offer(self, ids: np.ndarray, dist: np.ndarray) -> None:
        heap, k = self.heap, self.k
        if len(heap) == k:
            keep = dist <= -heap[0][0]
            ids, dist = ids[keep], dist[keep]
        for pid, d in zip(ids.tolist(), dist.tolist()):
            key = (-d, -pid)
            if len(heap) < k:
                heappush(heap, key)
            elif key > heap[0]:
                heapreplace(heap, key)

    def results(self) -> list[tuple[int, float]]:
        out = sorted(((-d, -pid) for d, pid in self.heap))
        return [(pid, dist) for dist, pid in out]


class _BatchSelect:
    """k-best by (distance, id) via periodic vectorized compaction.

    For large k (query-then-filter escalations) per-point heap updates cost
    more than lexsorting candidate batches; selection is order independent,
    so results are identical to the heap engine.
    """

    __slots__ = ("k", "ids", "dists", "pending", "thr_d", "thr_id")

    def __init__(self, k: int):
        self.k = k
        self.ids: list[np.ndarray] = []
        self.dists: list[np.ndarray] = []
        self.pending = 0
        self.thr_d = math.inf  # (thr_d, thr_id) = current kth best
        self.thr_id = -1

    def worst(self) -> float:
        return self.thr_d

    def offer(self, ids: np.ndarray, dist: np.ndarray) -> None:
        if self.thr_d < math.inf:
            keep = (dist < self.thr_d) | ((dist == self.thr_d) & (ids < self.thr_id))
            ids, dist = ids[keep], dist[keep]
            if ids.shape[0] == 0:
                return
        self.ids.append(ids)
        self.dists.append(dist)
        self.pending += ids.shape[0]
        if self.pending >= 2 * self.k:
            self._compact()

    def _compact(self) -> None:
        ids = np.concatenate(self.ids)
        dist = np.concatenate(self.dists)
        if ids.shape[0] > self.k:
            order = np.lexsort((ids, dist))[: self.k]
            ids, dist = ids[order], dist[order]
            self.thr_d = float(dist[-1])
            self.thr_id = int(ids[-1])
        self.ids, self.dists = [ids], [dist]
        self.pending = ids.shape[0]

    def results(self) -> list[tuple[int, float]]:
        if not self.ids:
            return []
        ids = np.concatenate(self.ids)
        dist = np.concatenate(self.dists)
        order = np.lexsort((ids, dist))[: self.k]
        return [(int(ids[i]), float(dist[i])) for i in order]


def knn_query(tree: Tree, q, k: int) -> list[tuple[int, float]]:
    """Exact unconditional k nearest neighbors, ties broken by smaller id."""
    q64 = _prepare_query(tree, q)
    return tree_search(tree, q64, k)


def _prepare_query(tree: Tree, q) -> np.ndarray:
    q64 = np.asarray(q, dtype=np.float64).ravel()
    if q64.shape[0] != tree.d:
        raise DimensionMismatch(f"query has dim {q64.shape[0]}, tree expects {tree.d}")
    if not np.all(np.isfinite(q64)):
        raise DataError("query vector contains NaN or Inf")
    if tree.metric == "angular":
        norm = float(np.linalg.norm(q64))
        if norm == 0.0:
            raise DataError("cannot normalize a zero query vector")
        if abs(norm - 1.0) > 1e-6:
            q64 = q64 / norm
    return q64


def tree_stats(tree: Tree) -> TreeStats:
    depths = tree.node_depths()
    internal = tree.left >= 0
    gamma = 0.0
    shrink = 1.0
    for node in np.flatnonzero(internal):
        pr = float(tree.radii[node])
        if pr <= 0.0:
            continue
        for child in (int(tree.left[node]), int(tree.right[node])):
            cr = float(tree.radii[child])
            gamma = max(gamma, cr / pr)
            if cr > 0.0:
                shrink = max(shrink, pr / cr)
    counts, edges = np.histogram(tree.radii, bins=10)
    return TreeStats(
        node_count=tree.node_count,
        leaf_count=int((~internal).sum()),
        depth=int(depths.max()),
        gamma_hat=gamma,
        shrink_factor=shrink,
        radius_histogram=(counts.tolist(), edges.tolist()),
    )


# ---------------------------------------------------------------------------
# Serialization: header then raw little-endian arrays, bit-exact round trip.
# ---------------------------------------------------------------------------

_TREE_HEADER = struct.Struct("<4sIBIIII")
_TREE_EXTRA = struct.Struct("<BIB")


def tree_to_bytes(tree: Tree) -> bytes:
    parts = [
        _TREE_HEADER.pack(
            TREE_MAGIC,
            TREE_VERSION,
            KINDS.index(tree.kind),
            tree.leaf_size,
            tree.node_count,
            tree.n,
            tree.d,
        ),
        _TREE_EXTRA.pack(
            METRIC_CODES[tree.metric],
            tree.corpus_token,
            1 if tree.directions is not None else 0,
        ),
        np.ascontiguousarray(tree.centroids, dtype="<f4").tobytes(),
        np.ascontiguousarray(tree.radii, dtype="<f4").tobytes(),
        np.ascontiguousarray(tree.left, dtype="<i4").tobytes(),
        np.ascontiguousarray(tree.right, dtype="<i4").tobytes(),
        np.ascontiguousarray(tree.start, dtype="<i8").tobytes(),
        np.ascontiguousarray(tree.end, dtype="<i8").tobytes(),
        np.ascontiguousarray(tree.split_dim, dtype="<i4").tobytes(),
        np.ascontiguousarray(tree.split_threshold, dtype="<f8").tobytes(),
    ]
    if tree.directions is not None:
        parts.append(np.ascontiguousarray(tree.directions, dtype="<f4").tobytes())
    parts.append(np.ascontiguousarray(tree.idx, dtype="<i4").tobytes())
    return b"".join(parts)


def tree_from_bytes(data: bytes, corpus: Corpus | None = None) -> tuple[Tree, int]:
    """Parse a tree from bytes; returns (tree, bytes consumed)."""
    if len(data) < _TREE_HEADER.size:
        raise FormatError("tree data too short for header")
    magic, version, kind_code, leaf_size, node_count, n, d = _TREE_HEADER.unpack_from(data)
    if magic != TREE_MAGIC:
        raise FormatError(f"bad magic {magic!r} in tree file")
    if version != TREE_VERSION:
        raise FormatError(f"unsupported tree version {version}")
    if kind_code >= len(KINDS):
        raise FormatError(f"unknown tree kind code {kind_code}")
    off = _TREE_HEADER.size
    metric_code, token, has_dirs = _TREE_EXTRA.unpack_from(data, off)
    off += _TREE_EXTRA.size
    metric = {v: k for k, v in METRIC_CODES.items()}.get(metric_code)
    if metric is None:
        raise FormatError(f"unknown metric code {metric_code}")

    def take(dtype, count, shape=None):
        nonlocal off
        item = np.dtype(dtype).itemsize
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=off).copy()
        off += item * count
        return arr.reshape(shape) if shape else arr

    centroids = take("<f4", node_count * d, (node_count, d))
    radii = take("<f4", node_count)
    left = take("<i4", node_count)
    right = take("<i4", node_count)
    start = take("<i8", node_count)
    end = take("<i8", node_count)
    split_dim = take("<i4", node_count)
    split_threshold = take("<f8", node_count)
    directions = take("<f4", node_count * d, (node_count, d)) if has_dirs else None
    idx = take("<i4", n)

    points = None
    if corpus is not None:
        if corpus.n != n or corpus.d != d or corpus.metric != metric:
            raise ConsistencyError("tree header does not match the corpus")
        if corpus.fingerprint() != token:
            raise ConsistencyError("tree was built over a different corpus")
        points = corpus.points
    tree = Tree(
        kind=KINDS[kind_code], leaf_size=leaf_size, metric=metric, n=n, d=d,
        corpus_token=token, centroids=centroids, radii=radii, left=left,
        right=right, start=start, end=end, split_dim=split_dim,
        split_threshold=split_threshold, directions=directions, idx=idx,
        points=points,
    )
    return tree, off


def save_tree(tree: Tree, path) -> None:
    Path(path).write_bytes(tree_to_bytes(tree))


def load_tree(path, corpus: Corpus | None = None) -> Tree:
    tree, _ = tree_from_bytes(Path(path).read_bytes(), corpus)
    return tree
