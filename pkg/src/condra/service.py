"""Retrieval service: collections, facets, conditional queries, text search.

JSON over HTTP.  Collections are loaded once at startup and never mutated;
the per-collection node-set cache is the only shared mutable state and is a
read-mostly memo, so requests are handled fully concurrently.  All errors
use one shape: {"error": {"code", "message", "position"?}}.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from . import cond_index as ci
from .conditions import parse_condition
from .corpus import Corpus, load_corpus
from .errors import (
    BindError,
    CondraError,
    ConditionSyntaxError,
    DataError,
    DimensionMismatch,
    FormatError,
)
from .tree import Tree, build_ball_tree, build_kd_tree, build_rp_tree

MAX_K = 100
STRATEGIES = ("cond", "qtf", "reconf", "brute", "dedicated")


@dataclass
class CollectionSpec:
    collection_id: str
    path: str
    leaf_size: int = 100
    tree: str = "ball"
    seed: int = 0


@dataclass
class ServiceConfig:
    collections: list[CollectionSpec]


@dataclass
class CollectionHandle:
    collection_id: str
    corpus: Corpus
    tree: Tree
    index: ci.CondIndex
    cache: ci.NodeSetCache
    loaded_at: float
    facets: list[dict] = field(default_factory=list)
    dedicated: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.corpus.n


def _parse_service_config(text: str) -> ServiceConfig:
    """Minimal TOML subset: [[collections]] table arrays of key = value."""
    collections: list[dict] = []
    current: dict | None = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line == "[[collections]]":
            current = {}
            collections.append(current)
            continue
        if line.startswith("["):
            raise FormatError(f"config line {lineno}: unknown section {line}")
        if "=" not in line:
            raise FormatError(f"config line {lineno}: expected key = value")
        if current is None:
            raise FormatError(f"config line {lineno}: key outside [[collections]]")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if value.startswith('"') and value.endswith('"') and len(value) >= 2:
            current[key] = value[1:-1]
        else:
            try:
                current[key] = int(value)
            except ValueError:
                raise FormatError(f"config line {lineno}: bad value {value!r}") from None
    specs = []
    for entry in collections:
        if "id" not in entry or "path" not in entry:
            raise FormatError("every [[collections]] entry needs id and path")
        specs.append(
            CollectionSpec(
                collection_id=str(entry["id"]),
                path=str(entry["path"]),
                leaf_size=int(entry.get("leaf_size", 100)),
                tree=str(entry.get("tree", "ball")),
                seed=int(entry.get("seed", 0)),
            )
        )
    return ServiceConfig(collections=specs)


def load_service_config(path) -> ServiceConfig:
    return _parse_service_config(Path(path).read_text(encoding="utf-8"))


def _build_facets(corpus: Corpus) -> list[dict]:
    out = []
    for name in corpus.attributes:
        counts = corpus.value_counts(name)
        values = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        out.append({
            "name": name,
            "values": [{"value": v, "count": c} for v, c in values],
        })
    return out


def load_collection(spec: CollectionSpec) -> CollectionHandle:
    try:
        corpus = load_corpus(spec.path)
        if spec.tree == "ball":
            tree = build_ball_tree(corpus, spec.leaf_size)
        elif spec.tree == "kd":
            tree = build_kd_tree(corpus, spec.leaf_size)
        elif spec.tree == "rp_max":
            tree = build_rp_tree(corpus, spec.leaf_size, spec.seed)
        else:
            raise FormatError(f"unknown tree kind {spec.tree!r}")
        index = ci.build_cond_index(tree, corpus)
    except CondraError as err:
        raise FormatError(
            f"failed to load collection {spec.collection_id!r} from {spec.path}: {err}"
        ) from err
    return CollectionHandle(
        collection_id=spec.collection_id,
        corpus=corpus,
        tree=tree,
        index=index,
        cache=ci.NodeSetCache(),
        loaded_at=time.time(),
        facets=_build_facets(corpus),
    )


def _error(status: int, code: str, message: str, position: int | None = None) -> JSONResponse:
    body = {"code": code, "message": message}
    if position is not None:
        body["position"] = position
    return JSONResponse(status_code=status, content={"error": body})


def _point_payload(corpus: Corpus, pid: int) -> dict:
    payload = {
        "id": pid,
        "attributes": {name: str(corpus.metadata[name][pid]) for name in corpus.attributes},
    }
    if corpus.image_urls is not None and corpus.image_urls[pid]:
        payload["image_url"] = str(corpus.image_urls[pid])
    return payload


def create_app(handles: list[CollectionHandle]) -> FastAPI:
    app = FastAPI(title="condra", docs_url=None, redoc_url=None)
    by_id = {h.collection_id: h for h in handles}

    def collection_or_none(collection_id: str) -> CollectionHandle | None:
        return by_id.get(collection_id)

    @app.get("/collections")
    def collections():
        return {
            "collections": [
                {
                    "id": h.collection_id,
                    "n": h.corpus.n,
                    "d": h.corpus.d,
                    "metric": h.corpus.metric,
                    "attributes": h.corpus.attributes,
                }
                for h in handles
            ]
        }

    @app.get("/collections/{collection_id}/facets")
    def facets(collection_id: str):
        handle = collection_or_none(collection_id)
        if handle is None:
            return _error(404, "unknown_collection", f"no collection {collection_id!r}")
        return {"collection": collection_id, "attributes": handle.facets}

    @app.post("/collections/{collection_id}/query")
    async def query(collection_id: str, request: Request):
        handle = collection_or_none(collection_id)
        if handle is None:
            return _error(404, "unknown_collection", f"no collection {collection_id!r}")
        try:
            body = await request.json()
        except Exception:
            return _error(400, "bad_request", "body must be a JSON object")
        if not isinstance(body, dict):
            return _error(400, "bad_request", "body must be a JSON object")

        point_id = body.get("point_id")
        vector = body.get("vector")
        if (point_id is None) == (vector is None):
            return _error(400, "bad_request", "provide exactly one of point_id or vector")
        k = body.get("k")
        if not isinstance(k, int) or isinstance(k, bool) or not 1 <= k <= MAX_K:
            return _error(400, "bad_request", f"k must be an integer in [1, {MAX_K}]")
        strategy = body.get("strategy", "cond")
        if strategy not in STRATEGIES:
            return _error(400, "bad_request", f"strategy must be one of {', '.join(STRATEGIES)}")
        condition = body.get("condition", "ALL")
        if not isinstance(condition, str):
            return _error(400, "bad_request", "condition must be a string")
        try:
            expr = parse_condition(condition)
        except ConditionSyntaxError as err:
            return _error(400, "condition_syntax", str(err), position=err.position)

        exclude: int | None = None
        if point_id is not None:
            if not isinstance(point_id, int) or isinstance(point_id, bool):
                return _error(400, "bad_request", "point_id must be an integer")
            if not 0 <= point_id < handle.corpus.n:
                return _error(404, "unknown_point", f"no point {point_id}")
            q = handle.corpus.points[point_id]
            exclude = point_id
        else:
            if not isinstance(vector, list) or not all(
                isinstance(x, (int, float)) and not isinstance(x, bool) for x in vector
            ):
                return _error(400, "bad_request", "vector must be a list of numbers")
            q = np.asarray(vector, dtype=np.float64)

        try:
            result = _run_strategy(handle, q, expr, k + (1 if exclude is not None else 0), strategy)
        except BindError as err:
            return _error(400, "unknown_attribute", str(err))
        except DimensionMismatch as err:
            return _error(400, "dimension_mismatch", str(err))
        except DataError as err:
            return _error(400, "bad_request", str(err))

        pairs = [(pid, dist) for pid, dist in result.pairs() if pid != exclude][:k]
        return {
            "collection": collection_id,
            "condition": condition,
            "strategy": result.strategy,
            "k": k,
            "matches": [
                {**_point_payload(handle.corpus, pid), "distance": dist}
                for pid, dist in pairs
            ],
            "nodes_visited": result.nodes_visited,
            "points_scored": result.points_scored,
        }

    @app.get("/collections/{collection_id}/points/{point_id}")
    def point(collection_id: str, point_id: int):
        handle = collection_or_none(collection_id)
        if handle is None:
            return _error(404, "unknown_collection", f"no collection {collection_id!r}")
        if not 0 <= point_id < handle.corpus.n:
            return _error(404, "unknown_point", f"no point {point_id}")
        return _point_payload(handle.corpus, point_id)

    @app.get("/collections/{collection_id}/search")
    def search(collection_id: str, q: str = "", limit: int = 20):
        handle = collection_or_none(collection_id)
        if handle is None:
            return _error(404, "unknown_collection", f"no collection {collection_id!r}")
        if not q.strip():
            return _error(400, "bad_request", "q must be a nonempty string")
        if limit < 1:
            return _error(400, "bad_request", "limit must be >= 1")
        corpus = handle.corpus
        needle = q.lower()
        match_counts = np.zeros(corpus.n, dtype=np.int32)
        for name in corpus.attributes:
            lowered = np.char.lower(corpus.metadata[name])
            match_counts += np.char.find(lowered, needle) >= 0
        if corpus.image_urls is not None:
            lowered = np.char.lower(corpus.image_urls)
            match_counts += np.char.find(lowered, needle) >= 0
        hits = np.flatnonzero(match_counts > 0)
        order = hits[np.lexsort((hits, -match_counts[hits]))][:limit]
        return {
            "collection": collection_id,
            "q": q,
            "results": [
                {**_point_payload(corpus, int(pid)), "matched_attributes": int(match_counts[pid])}
                for pid in order
            ],
        }

    return app


def _run_strategy(handle: CollectionHandle, q, expr, k: int, strategy: str) -> ci.ResultList:
    if strategy == "cond":
        return ci.cknn_query(handle.tree, handle.index, q, expr, k, handle.cache)
    if strategy == "qtf":
        return ci.query_then_filter(handle.tree, handle.corpus, q, expr, k)
    if strategy == "reconf":
        return ci.reconfigured_query(
            handle.tree, handle.index, handle.corpus, q, expr, k, cache=handle.cache
        )
    if strategy == "brute":
        return ci.brute_force_cknn(handle.corpus, q, expr, k)
    key = expr.canonical()
    ded = handle.dedicated.get(key)
    if ded is None:
        members = ci.resolve_node_set(handle.index, expr, handle.cache)[1]
        if members.count() == 0:
            return ci.ResultList([], [], k, key, "dedicated")
        ded = ci.build_dedicated(handle.corpus, expr, handle.tree.leaf_size)
        handle.dedicated[key] = ded
    return ci.query_dedicated(ded, q, k)


def build_app_from_config(config: ServiceConfig) -> FastAPI:
    handles = [load_collection(spec) for spec in config.collections]
    return create_app(handles)


def serve(config_path, addr: str = "127.0.0.1:8080") -> None:
    import uvicorn

    config = load_service_config(config_path)
    app = build_app_from_config(config)
    host, _, port = addr.partition(":")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8080), log_level="warning")
