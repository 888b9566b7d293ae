import numpy as np
import pytest

from condra import (
    Corpus,
    NodeSet,
    NodeSetCache,
    batched_brute_force,
    brute_force_cknn,
    build_ball_tree,
    build_cond_index,
    build_dedicated,
    cknn_query,
    condition_members,
    knn_query,
    load_tree_with_index,
    parse_condition,
    point_level_node_set,
    query_dedicated,
    query_then_filter,
    reconfigured_query,
    resolve_node_set,
    save_tree_with_index,
)
from condra.cond_index import member_counts_per_node
from condra.errors import BindError, ConsistencyError, DataError
from condra.tree import SearchCounters, tree_search, tree_to_bytes

from conftest import make_labeled_corpus


def random_conditions(rng, n_labels=6):
    pool = [f"L{i}" for i in range(n_labels)]
    template = [
        lambda: f'label="{rng.choice(pool)}"',
        lambda: f'label="{rng.choice(pool)}" OR label="{rng.choice(pool)}"',
        lambda: f'parity="even" AND label="{rng.choice(pool)}"',
        lambda: f'NOT label="{rng.choice(pool)}"',
        lambda: "ALL",
        lambda: f'parity="odd" AND NOT (label="{rng.choice(pool)}" OR label="{rng.choice(pool)}")',
        lambda: 'label="does_not_exist"',
    ]
    return template[rng.integers(0, len(template))]()


# ---------------------------------------------------------------------------
# Index structure
# ---------------------------------------------------------------------------


def test_ancestor_closure(small_tree, small_corpus, small_index):
    parents = small_tree.parents()
    for attr in small_index.attributes.values():
        for pos in range(len(attr.values)):
            nodes = NodeSet(small_index.node_count, attr.node_words[pos].copy())
            for node in nodes.to_indices():
                p = parents[node]
                if p >= 0:
                    assert nodes.contains(int(p))


def test_union_of_value_sets_covers_all_nodes(small_index):
    for attr in small_index.attributes.values():
        acc = NodeSet.empty(small_index.node_count)
        for pos in range(len(attr.values)):
            acc = acc | NodeSet(small_index.node_count, attr.node_words[pos].copy())
        assert acc.count() == small_index.node_count


def test_single_value_attribute_dominates_every_node():
    corpus = make_labeled_corpus(n=100, d=3, seed=1)
    from condra import with_attribute
    corpus = with_attribute(corpus, "const", ["only"] * 100)
    tree = build_ball_tree(corpus, 8)
    index = build_cond_index(tree, corpus)
    assert index.node_set("const", "only").count() == tree.node_count


def test_left_right_split_node_sets():
    # two values perfectly split by geometry: root in both sets, each
    # subtree only in its own
    pts = np.array([[0.0, 0], [1, 0], [2, 0], [100, 0], [101, 0], [102, 0]], np.float32)
    corpus = Corpus(pts, {"side": ["l", "l", "l", "r", "r", "r"]})
    tree = build_ball_tree(corpus, leaf_size=3)
    index = build_cond_index(tree, corpus)
    left, right = int(tree.left[0]), int(tree.right[0])
    sl, sr = index.node_set("side", "l"), index.node_set("side", "r")
    assert sl.contains(0) and sr.contains(0)
    assert sl.contains(left) != sl.contains(right)
    assert sr.contains(left) != sr.contains(right)
    assert not (sl.contains(left) and sr.contains(left))


def test_index_counts_match_value_counts(small_index, small_corpus):
    for name, attr in small_index.attributes.items():
        for pos, value in enumerate(attr.values):
            assert attr.counts[pos] == int((small_corpus.metadata[name] == value).sum())


def test_index_rejects_wrong_corpus(small_tree):
    other = make_labeled_corpus(n=300, d=4, seed=77)
    with pytest.raises(ConsistencyError):
        build_cond_index(small_tree, other)


def test_index_rejects_unknown_attribute(small_tree, small_corpus):
    with pytest.raises(BindError):
        build_cond_index(small_tree, small_corpus, ["nope"])


# ---------------------------------------------------------------------------
# Resolution
# ---------------------------------------------------------------------------


def test_or_resolves_to_union(small_index):
    nodes, _ = resolve_node_set(small_index, 'label="L1" OR label="L2"')
    expected = small_index.node_set("label", "L1") | small_index.node_set("label", "L2")
    assert nodes == expected


def test_and_resolves_to_intersection_superset(small_tree, small_corpus, small_index):
    expr = parse_condition('label="L1" AND parity="odd"')
    nodes, members = resolve_node_set(small_index, expr)
    expected = small_index.node_set("label", "L1") & small_index.node_set("parity", "odd")
    assert nodes == expected
    # superset of the exact point-level node set, never a subset
    exact = point_level_node_set(small_tree, members)
    assert nodes.issuperset(exact)


def test_all_resolves_to_full_sets(small_index, small_corpus):
    nodes, members = resolve_node_set(small_index, "ALL")
    assert nodes.count() == small_index.node_count
    assert members.count() == small_corpus.n


def test_single_attribute_union_commutation_exact(small_tree, small_index):
    # class-level resolution equals point-level reference semantics for
    # unions over one attribute
    for cond in ('label="L0"', 'label="L0" OR label="L3"', 'NOT label="L2"'):
        nodes, members = resolve_node_set(small_index, cond)
        assert nodes == point_level_node_set(small_tree, members)


def test_resolution_members_match_condition_members(small_index, small_corpus):
    rng = np.random.default_rng(0)
    for _ in range(30):
        cond = random_conditions(rng)
        _, members = resolve_node_set(small_index, cond)
        oracle = condition_members(parse_condition(cond), small_corpus)
        assert members == oracle


def test_unknown_value_resolves_empty(small_index):
    nodes, members = resolve_node_set(small_index, 'label="zzz"')
    assert nodes.count() == 0 and members.count() == 0


def test_unbound_attribute_raises(small_index):
    with pytest.raises(BindError):
        resolve_node_set(small_index, 'ghost="x"')


def test_cache_returns_bit_identical_sets(small_index):
    cache = NodeSetCache()
    cold = resolve_node_set(small_index, 'label="L1" OR parity="even"', cache)
    warm = resolve_node_set(small_index, 'parity="even" OR label="L1"', cache)
    assert cache.hits == 1
    assert warm[0] == cold[0] and warm[1] == cold[1]
    fresh = resolve_node_set(small_index, 'label="L1" OR parity="even"')
    assert fresh[0] == cold[0] and fresh[1] == cold[1]


# ---------------------------------------------------------------------------
# Strategies vs oracle
# ---------------------------------------------------------------------------


def test_forced_geometry_cknn():
    pts = np.array([[0.0, 0], [1, 0], [10, 0], [11, 0]], np.float32)
    corpus = Corpus(pts, {"label": ["A", "A", "B", "B"]})
    tree = build_ball_tree(corpus, leaf_size=1)
    index = build_cond_index(tree, corpus)
    res = cknn_query(tree, index, [0.2, 0.0], 'label="B"', 1)
    assert res.ids == [2] and res.distances[0] == pytest.approx(9.8)
    res = cknn_query(tree, index, [0.2, 0.0], 'label="A"', 1)
    assert res.ids == [0] and res.distances[0] == pytest.approx(0.2)


@pytest.mark.parametrize("metric", ["euclidean", "angular"])
def test_all_strategies_match_oracle(metric):
    rng = np.random.default_rng(21)
    corpus = make_labeled_corpus(n=800, d=5, n_labels=6, seed=21, metric=metric)
    tree = build_ball_tree(corpus, leaf_size=10)
    index = build_cond_index(tree, corpus)
    cache = NodeSetCache()
    for trial in range(50):
        cond = random_conditions(rng)
        q = rng.standard_normal(corpus.d)
        k = int(rng.integers(1, 12))
        oracle = brute_force_cknn(corpus, q, cond, k)
        assert cknn_query(tree, index, q, cond, k, cache).pairs() == oracle.pairs()
        assert query_then_filter(tree, corpus, q, cond, k).pairs() == oracle.pairs()
        for threshold in (0, 50, 10**9):
            assert reconfigured_query(tree, index, corpus, q, cond, k, threshold, cache).pairs() == oracle.pairs()
        if oracle.points_scored > 0:
            ded = build_dedicated(corpus, cond, leaf_size=10)
            assert query_dedicated(ded, q, k).pairs() == oracle.pairs()


def test_every_result_satisfies_condition(small_tree, small_corpus, small_index):
    rng = np.random.default_rng(3)
    for _ in range(20):
        cond = random_conditions(rng)
        expr = parse_condition(cond)
        members = condition_members(expr, small_corpus).to_bools()
        res = cknn_query(small_tree, small_index, rng.standard_normal(small_corpus.d), expr, 8)
        assert all(members[i] for i in res.ids)
        assert len(res) == min(8, int(members.sum()))


def test_result_is_sorted_with_id_tiebreak(small_tree, small_corpus, small_index):
    res = cknn_query(small_tree, small_index, np.zeros(small_corpus.d), "ALL", 20)
    keys = list(zip(res.distances, res.ids))
    assert keys == sorted(keys)


def test_empty_condition_returns_empty_not_error(small_tree, small_index):
    res = cknn_query(small_tree, small_index, np.zeros(4), 'label="zzz"', 5)
    assert res.ids == [] and res.nodes_visited == 0


def test_brute_force_all_equals_knn(small_tree, small_corpus):
    q = np.full(small_corpus.d, 0.3)
    assert brute_force_cknn(small_corpus, q, "ALL", 7).pairs() == knn_query(small_tree, q, 7)


def test_qtf_escalation_schedule():
    # 300 near points labeled "common", 5 far points labeled "rare": the
    # initial k'=50 pass finds no rare matches, the second (k'=250) does
    rng = np.random.default_rng(5)
    near = rng.standard_normal((200, 3))
    far = rng.standard_normal((5, 3)) + 40.0
    pts = np.vstack([near, far]).astype(np.float32)
    corpus = Corpus(pts, {"kind": ["common"] * 200 + ["rare"] * 5})
    tree = build_ball_tree(corpus, leaf_size=8)
    q = np.zeros(3)
    res = query_then_filter(tree, corpus, q, 'kind="rare"', 1, initial=50, growth=5)
    assert res.passes == 2  # 50 then 250
    assert res.pairs() == brute_force_cknn(corpus, q, 'kind="rare"', 1).pairs()
    # an impossible condition escalates to a full scan and returns empty
    res = query_then_filter(tree, corpus, q, 'kind="zzz"', 1, initial=2, growth=5)
    assert res.ids == []
    assert res.passes >= 4  # 2, 10, 50, 250 then k' capped at n


def test_qtf_single_pass_when_condition_is_dense(small_tree, small_corpus):
    # half the corpus matches, k=1: the first pass must suffice
    q = np.asarray(small_corpus.points[0], dtype=np.float64)
    res = query_then_filter(small_tree, small_corpus, q, 'parity="even"', 1, initial=50, growth=5)
    assert res.passes == 1


def test_reconfigured_records_branch(small_tree, small_corpus, small_index):
    q = np.zeros(small_corpus.d)
    small = reconfigured_query(small_tree, small_index, small_corpus, q, 'label="L0"', 2, threshold=10**6)
    assert small.strategy == "reconf[brute]"
    big = reconfigured_query(small_tree, small_index, small_corpus, q, "ALL", 2, threshold=0)
    assert big.strategy == "reconf[qtf]"


def test_dedicated_all_equals_full_build(small_corpus):
    ded = build_dedicated(small_corpus, "ALL", leaf_size=8)
    full = build_ball_tree(small_corpus, leaf_size=8)
    assert tree_to_bytes(ded.tree) == tree_to_bytes(full)
    assert np.array_equal(ded.orig_ids, np.arange(small_corpus.n))


def test_dedicated_node_count_bound(small_corpus):
    import math
    ded = build_dedicated(small_corpus, 'parity="even"', leaf_size=8)
    s = ded.corpus.n
    assert ded.tree.node_count <= 2 * math.ceil(s / 8) - 1


def test_dedicated_empty_condition_rejected(small_corpus):
    with pytest.raises(DataError):
        build_dedicated(small_corpus, 'label="zzz"', 8)


# ---------------------------------------------------------------------------
# Pruning soundness and visit accounting
# ---------------------------------------------------------------------------


def test_valid_nodes_superset_and_visit_bound(small_tree, small_corpus, small_index):
    rng = np.random.default_rng(9)
    for _ in range(25):
        cond = random_conditions(rng)
        nodes, members = resolve_node_set(small_index, cond)
        exact = point_level_node_set(small_tree, members)
        assert nodes.issuperset(exact)
        res = cknn_query(small_tree, small_index, rng.standard_normal(small_corpus.d), cond, 5)
        assert res.nodes_visited <= nodes.count()


def test_pruned_visits_at_most_unpruned(small_tree, small_corpus, small_index):
    rng = np.random.default_rng(10)
    for _ in range(10):
        cond = random_conditions(rng)
        nodes, members = resolve_node_set(small_index, cond)
        if members.count() == 0:
            continue
        q64 = np.asarray(rng.standard_normal(small_corpus.d), dtype=np.float64)
        pruned = SearchCounters()
        tree_search(small_tree, q64, 5, nodes.to_bools(), members.to_bools(), pruned)
        unpruned = SearchCounters()
        tree_search(small_tree, q64, 5, None, members.to_bools(), unpruned)
        assert pruned.nodes_visited <= unpruned.nodes_visited


# ---------------------------------------------------------------------------
# Batched brute force
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("metric", ["euclidean", "angular"])
def test_batched_equals_per_cell_oracle(metric):
    rng = np.random.default_rng(31)
    corpus = make_labeled_corpus(n=400, d=6, seed=31, metric=metric)
    queries = rng.standard_normal((5, corpus.d))
    conds = ['label="L0"', 'label="L1" OR parity="odd"', "ALL", 'label="zzz"']
    grid = batched_brute_force(corpus, queries, conds, k=6)
    assert len(grid) == 5 and all(len(row) == len(conds) for row in grid)
    for qi, row in enumerate(grid):
        for ci, cell in enumerate(row):
            oracle = brute_force_cknn(corpus, queries[qi], conds[ci], 6)
            assert cell.ids == oracle.ids
            np.testing.assert_allclose(cell.distances, oracle.distances, rtol=1e-7, atol=1e-9)


def test_batched_single_cell_matches_brute(small_corpus):
    q = np.ones(small_corpus.d)
    grid = batched_brute_force(small_corpus, q[None, :], ['parity="odd"'], 4)
    oracle = brute_force_cknn(small_corpus, q, 'parity="odd"', 4)
    assert grid[0][0].ids == oracle.ids


def test_batched_partition_completeness(small_corpus):
    # conditions partitioning the corpus, k=n: each query's union of ids is everything
    conds = ['parity="even"', 'parity="odd"']
    q = np.zeros(small_corpus.d)
    grid = batched_brute_force(small_corpus, q[None, :], conds, k=small_corpus.n)
    got = set(grid[0][0].ids) | set(grid[0][1].ids)
    assert got == set(range(small_corpus.n))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def test_tree_and_index_round_trip(tmp_path, small_tree, small_corpus, small_index):
    path = tmp_path / "bundle.ctre"
    save_tree_with_index(small_tree, small_index, path)
    tree2, index2 = load_tree_with_index(path, small_corpus)
    assert tree_to_bytes(tree2) == tree_to_bytes(small_tree)
    for name, attr in small_index.attributes.items():
        back = index2.attributes[name]
        assert back.values == attr.values
        assert np.array_equal(back.node_words, attr.node_words)
        assert np.array_equal(back.counts, attr.counts)
        assert np.array_equal(back.codes, attr.codes)
    q = np.ones(small_corpus.d)
    a = cknn_query(small_tree, small_index, q, 'label="L1"', 3)
    b = cknn_query(tree2, index2, q, 'label="L1"', 3)
    assert a.pairs() == b.pairs()


def test_index_serialized_size_is_bit_packed(small_tree, small_index):
    from condra.cond_index import index_to_bytes

    raw = index_to_bytes(small_index)
    n_values = sum(len(a.values) for a in small_index.attributes.values())
    bits = n_values * ((small_tree.node_count + 7) // 8)
    # payload is the packed bits plus small per-value framing
    assert len(raw) <= 2 * (bits + 64 * n_values)
