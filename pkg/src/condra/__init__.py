"""condra: exact conditional k-nearest-neighbor retrieval.

Tree-based KNN indexes augmented with an inverted index from categorical
attribute values to tree nodes, so arbitrary boolean conditions prune the
tree at query time instead of forcing post-filtering or rebuilds.
"""

from .analytics import (
    BlindSpot,
    CoverageCurve,
    RCDReport,
    blind_spots,
    frechet_distance,
    matched_moment_pair,
    rcd,
    rcd_report,
    theorem1_experiment,
    theorem1_fraction,
)
from .bitset import BitSet, IdSet, NodeSet
from .conditions import (
    All,
    And,
    ConditionExpr,
    Not,
    Or,
    Term,
    bind_condition,
    condition_members,
    parse_condition,
)
from .cond_index import (
    CondIndex,
    DedicatedTree,
    NodeSetCache,
    ResultList,
    batched_brute_force,
    brute_force_cknn,
    build_cond_index,
    build_dedicated,
    cknn_query,
    load_tree_with_index,
    point_level_node_set,
    query_dedicated,
    query_then_filter,
    reconfigured_query,
    resolve_node_set,
    save_tree_with_index,
)
from .corpus import (
    BlobComponent,
    Corpus,
    distance,
    generate_blobs,
    generate_content_style,
    load_corpus,
    merge_corpora,
    save_corpus,
    subset_corpus,
    with_attribute,
)
from .errors import (
    BindError,
    CondraError,
    ConditionSyntaxError,
    ConsistencyError,
    DataError,
    DimensionMismatch,
    FormatError,
)
from .estimator import ConditionalNearestNeighbors
from .tree import (
    Tree,
    TreeStats,
    build_ball_tree,
    build_kd_tree,
    build_rp_tree,
    knn_query,
    load_tree,
    save_tree,
    tree_stats,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
