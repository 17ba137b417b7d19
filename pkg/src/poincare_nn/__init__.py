"""Nearest-neighbor search in the Poincaré ball on top of Euclidean oracles."""

from .adversarial import (
    Construction,
    ConstructionError,
    best_case_configuration,
    gen_binary_search_approx_failure,
    gen_recentering_approx_failure,
    gen_recentering_worstcase,
    gen_rl_ratio_instance,
    shell_exact_counterexample,
)
from .bench import EvalConfig, EvalReport, EvalRow, evaluate
from .dataset import Dataset, DatasetError, load_dataset, save_dataset, split_queries
from .geometry import (
    EuclideanBall,
    GeometryError,
    HyperbolicBall,
    OutOfRangeError,
    ShellParams,
    check_intersection,
    choose_band,
    euclidean_center_of_hyperbolic_ball,
    hyperbolic_distance,
    partition_index,
    radial_scalar,
)
from .oracles import (
    AdversarialOracle,
    BruteForceOracle,
    KdTree,
    LshIndex,
    LshParams,
    OracleError,
    OracleStats,
    adversarial_approx_query,
    brute_force_exact_query,
    decision_query,
    kdtree_build,
    kdtree_query,
    kdtree_query_k,
    lsh_build,
    lsh_query,
)
from .persistence import load_index, save_index
from .search import (
    SearchError,
    SearchResult,
    ShellPartition,
    binary_search_nn,
    brute_force_hyper_knn,
    build_shell_partition,
    randomized_shell_nn,
    recentering_knn,
    recentering_nn,
    shell_knn,
    shell_nn,
)

__version__ = "0.1.0"
