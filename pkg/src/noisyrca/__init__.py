"""Root cause attribution for DAG systems with noisy causal mechanisms."""

from .attribution import (
    AttributionReport,
    GameConfig,
    IgConfig,
    METHODS,
    attribute_batch,
    baseline_edge_scores,
    game_attribute,
    ig_attribute,
    naive_attribute,
)
from .dag import Dag, ancestor_subgraph, load_graph, save_graph, topological_order
from .evaluation import EvalConfig, bench_runtime, evaluate_method, ndcg_at_k
from .mechanism import (
    Hyperparams,
    MechanismModel,
    fit_posterior,
    load_model,
    map_weights,
    sample,
    save_model,
)
from .noise import (
    NoiseAssignment,
    forward_g,
    gradient_g,
    infer_edge_noise,
    infer_node_noise,
)
from .scenarios import (
    gen_microservice_case,
    gen_random_graph_case,
    gen_supply_chain_case,
    load_case,
    save_case,
)
from .scoring import MarginalStats, outlier_score, score_of_leaf, z_value
from .shapley import shapley_classic, shapley_permutation, shapley_sampling

__version__ = "0.1.0"
