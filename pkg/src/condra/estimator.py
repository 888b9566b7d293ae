"""Scikit-learn style estimator wrapping the conditional retrieval engine.

``ConditionalNearestNeighbors`` follows the fit/kneighbors contract of
``sklearn.neighbors.NearestNeighbors`` while accepting a per-call boolean
condition over categorical metadata, so the engine composes with sklearn
pipelines and tooling (get_params, clone).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array

from . import cond_index as ci
from .conditions import All, parse_condition
from .corpus import Corpus
from .errors import DataError
from .tree import build_ball_tree, build_kd_tree, build_rp_tree

_STRATEGIES = ("cond", "qtf", "reconf", "brute", "dedicated")


def _as_metadata(metadata, n: int) -> dict[str, np.ndarray]:
    if metadata is None:
        return {}
    if hasattr(metadata, "to_dict") and hasattr(metadata, "columns"):
        metadata = {c: metadata[c].to_numpy() for c in metadata.columns}
    out = {}
    for name, values in dict(metadata).items():
        arr = np.asarray(values, dtype=np.str_)
        if arr.shape != (n,):
            raise DataError(f"metadata column {name!r} has length {arr.shape}, expected ({n},)")
        out[name] = arr
    return out


class ConditionalNearestNeighbors(BaseEstimator):
    """Exact nearest-neighbor search restricted by boolean metadata conditions.

    Parameters
    ----------
    index_kind : "ball", "kd" or "rp_max" spatial partition tree.
    leaf_size : maximum points per tree leaf.
    metric : "euclidean" or "angular" (unit-normalized Euclidean).
    random_state : seed for the rp_max build.
    strategy : default query strategy, one of cond/qtf/reconf/brute/dedicated.
    reconfig_threshold : |S| below which the reconf strategy goes brute force.
    """

    def __init__(
        self,
        index_kind: str = "ball",
        leaf_size: int = 40,
        metric: str = "euclidean",
        random_state: int = 0,
        strategy: str = "cond",
        reconfig_threshold: int = 2000,
    ):
        self.index_kind = index_kind
        self.leaf_size = leaf_size
        self.metric = metric
        self.random_state = random_state
        self.strategy = strategy
        self.reconfig_threshold = reconfig_threshold

    def fit(self, X, y=None, metadata=None):
        X = check_array(X, dtype=np.float32, ensure_2d=True)
        corpus = Corpus(X, _as_metadata(metadata, X.shape[0]), metric=self.metric)
        if self.index_kind == "ball":
            tree = build_ball_tree(corpus, self.leaf_size)
        elif self.index_kind == "kd":
            tree = build_kd_tree(corpus, self.leaf_size)
        elif self.index_kind == "rp_max":
            tree = build_rp_tree(corpus, self.leaf_size, self.random_state)
        else:
            raise ValueError(f"unknown index_kind {self.index_kind!r}")
        self.corpus_ = corpus
        self.tree_ = tree
        self.index_ = ci.build_cond_index(tree, corpus)
        self.cache_ = ci.NodeSetCache()
        self._dedicated: dict[str, ci.DedicatedTree] = {}
        self.n_samples_fit_ = corpus.n
        self.n_features_in_ = corpus.d
        return self

    def _check_fitted(self):
        if not hasattr(self, "tree_"):
            raise DataError("estimator is not fitted; call fit first")

    def query_one(self, q, condition="all", n_neighbors: int = 5, strategy: str | None = None) -> ci.ResultList:
        """Single-query path returning the full ResultList."""
        self._check_fitted()
        strategy = strategy or self.strategy
        if strategy not in _STRATEGIES:
            raise ValueError(f"unknown strategy {strategy!r}")
        expr = parse_condition(condition) if isinstance(condition, str) else condition
        if strategy == "cond":
            return ci.cknn_query(self.tree_, self.index_, q, expr, n_neighbors, self.cache_)
        if strategy == "qtf":
            return ci.query_then_filter(self.tree_, self.corpus_, q, expr, n_neighbors)
        if strategy == "reconf":
            return ci.reconfigured_query(
                self.tree_, self.index_, self.corpus_, q, expr, n_neighbors,
                threshold=self.reconfig_threshold, cache=self.cache_,
            )
        if strategy == "brute":
            return ci.brute_force_cknn(self.corpus_, q, expr, n_neighbors)
        key = expr.canonical()
        ded = self._dedicated.get(key)
        if ded is None:
            ded = ci.build_dedicated(self.corpus_, expr, self.leaf_size)
            self._dedicated[key] = ded
        return ci.query_dedicated(ded, q, n_neighbors)

    def kneighbors(
        self,
        X,
        n_neighbors: int = 5,
        condition="all",
        strategy: str | None = None,
        return_distance: bool = True,
    ):
        """Conditional neighbors of each row of X.

        Returns (distances, indices) with min(n_neighbors, |S|) columns, |S|
        being the condition's member count; sklearn shape conventions apply.
        """
        self._check_fitted()
        X = check_array(X, dtype=np.float64, ensure_2d=True)
        expr = parse_condition(condition) if isinstance(condition, str) else condition
        results = [self.query_one(row, expr, n_neighbors, strategy) for row in X]
        width = min(len(r) for r in results) if results else 0
        ind = np.array([r.ids[:width] for r in results], dtype=np.int64).reshape(len(results), width)
        if not return_distance:
            return ind
        dist = np.array([r.distances[:width] for r in results], dtype=np.float64).reshape(len(results), width)
        return dist, ind

    def query_by_id(
        self,
        point_id: int,
        condition="all",
        n_neighbors: int = 5,
        strategy: str | None = None,
        exclude_self: bool = True,
    ) -> ci.ResultList:
        """Use a fitted point as the query, optionally excluding it."""
        self._check_fitted()
        if not 0 <= point_id < self.n_samples_fit_:
            raise DataError(f"point id {point_id} out of range")
        q = self.corpus_.points[point_id]
        extra = 1 if exclude_self else 0
        res = self.query_one(q, condition, n_neighbors + extra, strategy)
        if exclude_self and point_id in res.ids:
            pos = res.ids.index(point_id)
            res.ids.pop(pos)
            res.distances.pop(pos)
        res.ids = res.ids[:n_neighbors]
        res.distances = res.distances[:n_neighbors]
        res.k = n_neighbors
        return res
