"""Attribution of a leaf anomaly to upstream node and edge noises.

The primary method ("bigen") integrates exact leaf gradients, composed with
the outlier-score derivative, along straight paths in joint noise space from
reference noise to the inferred anomalous noise, and multiplies by the
displacement per coordinate (integrated gradients, midpoint rule). Reference
points take their node noise from rows of normal data and their edge noise
as zero. Baselines play a cooperative game whose players are the node noises
only; their edge scores are the outer product of node scores.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .dag import EdgeId, NodeId
from .mechanism import Dataset, MechanismModel
from .noise import (
    IDENTITY,
    Link,
    NoiseAssignment,
    assignment_to_vectors,
    forward_many,
    get_system,
    gradient_many,
    infer_assignment,
    infer_edge_noise,
    infer_node_noise,
)
from .scoring import score_derivatives, score_values
from .shapley import (
    shapley_classic,
    shapley_permutation,
    shapley_sampling,
)

METHODS = ("bigen", "shapley", "sampling", "permutation", "naive")

VOLATILE_METADATA = ("runtime_seconds",)


class EmptyReferencePool(ValueError):
    """No normal rows are available to draw reference noise from."""


@dataclass(frozen=True)
class ScoreFunction:
    """Vectorized score of the leaf value and its derivative."""

    value: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray]


def leaf_score_function(model: MechanismModel, target: NodeId) -> ScoreFunction:
    stats = model.stats_of(target)
    return ScoreFunction(
        value=lambda xs: score_values(stats, xs),
        derivative=lambda xs: score_derivatives(stats, xs),
    )


IDENTITY_SCORE = ScoreFunction(
    value=lambda xs: np.asarray(xs, dtype=float),
    derivative=lambda xs: np.ones_like(np.asarray(xs, dtype=float)),
)


@dataclass(frozen=True)
class IgConfig:
    """Integrated-gradients settings; reference_data holds normal rows."""

    reference_data: Dataset
    steps: int = 50
    references: int = 5

    def __post_init__(self) -> None:
        if self.steps < 1 or self.references < 1:
            raise ValueError("steps and references must be positive")


@dataclass(frozen=True)
class GameConfig:
    """Settings for the game-based baselines.

    instances is the number of independent reference draws whose Shapley
    values are averaged for the classic and sampling engines; a single draw
    conditions every coalition on one normal row's idiosyncrasies. The
    permutation engine already redraws its reference per permutation.
    """

    reference_data: Dataset
    num_subsets: int = 1000
    num_permutations: int = 25
    instances: int = 5
    early_stop: float | None = None
    hard_cap: int = 20
    max_rounds: int = 20000


@dataclass(frozen=True)
class RankedEntry:
    kind: str  # "node" or "edge"
    id: NodeId | EdgeId
    score: float


@dataclass
class AttributionReport:
    target: NodeId
    method: str
    node_scores: dict[NodeId, float]
    edge_scores: dict[EdgeId, float]
    ranking: list[RankedEntry]
    metadata: dict = field(default_factory=dict)


def rank_entries(
    node_scores: Mapping[NodeId, float], edge_scores: Mapping[EdgeId, float]
) -> list[RankedEntry]:
    """Single ranking over nodes and edges.

    Descending score; exact ties put nodes before edges, then ascending id.
    """
    entries = [RankedEntry("node", v, float(s)) for v, s in node_scores.items()]
    entries += [RankedEntry("edge", e, float(s)) for e, s in edge_scores.items()]

    def key(entry: RankedEntry):
        if entry.kind == "node":
            return (-entry.score, 0, (entry.id,))
        return (-entry.score, 1, tuple(entry.id))

    return sorted(entries, key=key)


def _build_report(
    target: NodeId,
    method: str,
    node_scores: dict[NodeId, float],
    edge_scores: dict[EdgeId, float],
    metadata: dict,
) -> AttributionReport:
    node_scores = {v: float(node_scores[v]) for v in sorted(node_scores)}
    edge_scores = {e: float(edge_scores[e]) for e in sorted(edge_scores)}
    return AttributionReport(
        target=target,
        method=method,
        node_scores=node_scores,
        edge_scores=edge_scores,
        ranking=rank_entries(node_scores, edge_scores),
        metadata=metadata,
    )


def _reference_node_noise(
    model: MechanismModel, system, pool: Dataset, row_index: int
) -> np.ndarray:
    eps = infer_node_noise(model, pool[row_index])
    return np.asarray([eps[v] for v in system.nodes], dtype=float)


def _ig_factors(
    model: MechanismModel,
    system,
    abnormal_row: np.ndarray,
    inferred: NoiseAssignment,
    cfg: IgConfig,
    rng_seed: int,
    score: ScoreFunction,
    link: Link,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, int]:
    """Per-reference IG factors for one abnormal row.

    Returns (disp_eps (K, d), grad_eps (K, d), grad_xi (K, e), xi_act (e,),
    evaluations): the node-noise displacement per reference, the midpoint
    path means of d score / d coordinate, and the shared edge displacement.
    The per-reference attribution is the elementwise product of displacement
    and gradient factor.
    """
    pool = np.asarray(cfg.reference_data, dtype=float)
    if pool.ndim != 2 or pool.shape[0] == 0:
        raise EmptyReferencePool("reference data must contain at least one row")
    eps_act, xi_act = assignment_to_vectors(system, inferred)
    rng = np.random.default_rng(rng_seed)
    row_ids = rng.integers(0, pool.shape[0], size=cfg.references)
    t = (np.arange(cfg.steps) + 0.5) / cfg.steps
    disp_eps = np.zeros((cfg.references, len(system.nodes)))
    grad_eps = np.zeros((cfg.references, len(system.nodes)))
    grad_xi = np.zeros((cfg.references, len(system.edges)))
    evaluations = 0
    for k, idx in enumerate(row_ids):
        eps_ref = _reference_node_noise(model, system, pool, int(idx))
        disp_eps[k] = eps_act - eps_ref
        eps_path = eps_ref[None, :] + t[:, None] * disp_eps[k][None, :]
        xi_path = t[:, None] * xi_act[None, :]
        leaf, g_eps, g_xi = gradient_many(system, eps_path, xi_path, link)
        evaluations += cfg.steps
        ds = score.derivative(leaf)
        grad_eps[k] = (ds[:, None] * g_eps).mean(axis=0)
        grad_xi[k] = (ds[:, None] * g_xi).mean(axis=0)
    return disp_eps, grad_eps, grad_xi, xi_act, evaluations


def ig_attribute(
    model: MechanismModel,
    target: NodeId,
    abnormal_row: np.ndarray,
    inferred: NoiseAssignment,
    cfg: IgConfig,
    rng_seed: int,
    score: ScoreFunction | None = None,
    link: Link = IDENTITY,
) -> AttributionReport:
    """Integrated-gradients attribution over all subgraph noise coordinates.

    For each of cfg.references reference points (node noise inverted from a
    random normal row under the MAP weights, edge noise zero), the integral
    of d score(leaf) / d coordinate along the straight path from reference
    to inferred noise is taken with the midpoint rule at cfg.steps points,
    then scaled by the coordinate displacement. Scores average the
    per-reference attributions; the sum over all coordinates of one
    reference's attribution equals the score gap to that reference up to
    discretization error.
    """
    system = get_system(model, target)
    if score is None:
        score = leaf_score_function(model, target)
    started = time.perf_counter()
    disp_eps, grad_eps, grad_xi, xi_act, evaluations = _ig_factors(
        model, system, abnormal_row, inferred, cfg, rng_seed, score, link
    )
    attr_eps = (disp_eps * grad_eps).mean(axis=0)
    attr_xi = xi_act * grad_xi.mean(axis=0)
    metadata = {
        "rows": 1,
        "steps": cfg.steps,
        "references": cfg.references,
        "gradient_evaluations": evaluations,
        "runtime_seconds": time.perf_counter() - started,
    }
    return _build_report(
        target,
        "bigen",
        {v: attr_eps[k] for k, v in enumerate(system.nodes)},
        {e: attr_xi[k] for k, e in enumerate(system.edges)},
        metadata,
    )


def baseline_edge_scores(
    node_scores: Mapping[NodeId, float], edges: tuple[EdgeId, ...]
) -> dict[EdgeId, float]:
    """Edge score as the product of its endpoint node scores."""
    return {
        (i, j): float(node_scores[i]) * float(node_scores[j])
        for (i, j) in edges
        if i in node_scores and j in node_scores
    }


def naive_attribute(
    model: MechanismModel, target: NodeId, abnormal_row: np.ndarray
) -> AttributionReport:
    """Marginal outlier score of each ancestor's own observed value.

    No interaction with the graph beyond selecting the ancestors; edge
    scores are the endpoint product.
    """
    system = get_system(model, target)
    row = np.asarray(abnormal_row, dtype=float)
    node_scores = {
        v: float(score_values(model.stats_of(v), np.asarray([row[v]]))[0])
        for v in system.nodes
    }
    edge_scores = baseline_edge_scores(node_scores, system.edges)
    metadata = {"rows": 1, "value_evaluations": len(system.nodes)}
    return _build_report(target, "naive", node_scores, edge_scores, metadata)


def game_attribute(
    model: MechanismModel,
    target: NodeId,
    abnormal_row: np.ndarray,
    inferred: NoiseAssignment,
    method: str,
    cfg: GameConfig,
    rng_seed: int,
    score: ScoreFunction | None = None,
    link: Link = IDENTITY,
) -> AttributionReport:
    """Game-based node attribution with players = subgraph node noises.

    v(Q) is the outlier score of the leaf when node noises in Q take their
    inferred anomalous values and all other coordinates take reference
    values: node noise from a normal-data row, edge noise zero throughout.
    The permutation engine redraws the reference row per permutation; the
    classic and sampling engines average their Shapley values over
    cfg.instances independent reference rows.
    """
    if method not in ("shapley", "sampling", "permutation"):
        raise ValueError(f"unknown game method {method!r}")
    system = get_system(model, target)
    pool = np.asarray(cfg.reference_data, dtype=float)
    if pool.ndim != 2 or pool.shape[0] == 0:
        raise EmptyReferencePool("reference data must contain at least one row")
    if score is None:
        score = leaf_score_function(model, target)
    eps_act, _ = assignment_to_vectors(system, inferred)
    d = len(system.nodes)
    xi_zero = np.zeros((1, len(system.edges)))
    counter = {"evaluations": 0}

    def make_v_many(eps_ref: np.ndarray):
        def v_many(masks: np.ndarray) -> np.ndarray:
            masks = np.asarray(masks, dtype=float)
            counter["evaluations"] += masks.shape[0]
            eps = eps_ref[None, :] + masks * (eps_act - eps_ref)[None, :]
            xi = np.broadcast_to(xi_zero, (masks.shape[0], xi_zero.shape[1]))
            X, _ = forward_many(system, eps, xi, link)
            return score.value(X[:, system.target_pos])

        return v_many

    seeds = np.random.SeedSequence(rng_seed).spawn(2)
    rng = np.random.default_rng(seeds[0])
    started = time.perf_counter()
    if method == "permutation":

        def instance_factory(engine_rng: np.random.Generator):
            idx = int(engine_rng.integers(0, pool.shape[0]))
            v_many = make_v_many(_reference_node_noise(model, system, pool, idx))
            return (lambda m: float(v_many(m[None, :])[0])), v_many

        phi = shapley_permutation(
            list(system.nodes),
            lambda m: 0.0,
            cfg.num_permutations,
            seeds[1],
            instance_factory=instance_factory,
        )
    else:
        if cfg.instances < 1:
            raise ValueError("instances must be at least 1")
        phi = np.zeros(d)
        for inst_seed in seeds[1].spawn(cfg.instances):
            idx = int(rng.integers(0, pool.shape[0]))
            v_many = make_v_many(_reference_node_noise(model, system, pool, idx))
            v = lambda m: float(v_many(m[None, :])[0])  # noqa: E731
            engine_seed = int(inst_seed.generate_state(1)[0])
            if method == "shapley":
                phi += shapley_classic(
                    list(system.nodes),
                    v,
                    early_stop=cfg.early_stop,
                    hard_cap=cfg.hard_cap,
                    rng_seed=engine_seed,
                    v_many=v_many,
                    max_rounds=cfg.max_rounds,
                )
            else:
                phi += shapley_sampling(
                    list(system.nodes),
                    v,
                    cfg.num_subsets,
                    engine_seed,
                    v_many=v_many,
                )
        phi /= cfg.instances
    node_scores = {v_id: float(phi[k]) for k, v_id in enumerate(system.nodes)}
    edge_scores = baseline_edge_scores(node_scores, system.edges)
    metadata = {
        "rows": 1,
        "value_evaluations": counter["evaluations"],
        "runtime_seconds": time.perf_counter() - started,
    }
    if method == "sampling":
        metadata["num_subsets"] = cfg.num_subsets
    if method == "permutation":
        metadata["num_permutations"] = cfg.num_permutations
    else:
        metadata["instances"] = cfg.instances
    return _build_report(target, method, node_scores, edge_scores, metadata)


AGGREGATES = ("factored", "magnitude", "mean", "top_row")


def attribute_batch(
    model: MechanismModel,
    target: NodeId,
    abnormal: Dataset,
    method: str,
    *,
    ig_cfg: IgConfig | None = None,
    game_cfg: GameConfig | None = None,
    rng_seed: int = 0,
    prior_precision: str | float = "diffuse",
    aggregate: str = "factored",
) -> AttributionReport:
    """Attribute a whole abnormal batch through per-row attributions.

    Edge noise is inferred once from the batch and shared by all rows; node
    noise is inverted per row. Per-row attributions are signed contributions
    to the row's outlier score, so a cause whose push opposes the net leaf
    deviation of a row carries a negative value, and pushes of opposite signs
    across rows cancel under a plain signed average. The default "factored"
    aggregation multiplies the batch mean of the displacement factor by the
    batch mean of the gradient factor instead of averaging their per-row
    products, and reports the magnitude of that product as the ranking
    strength: a persistent shift keeps both factors sign-consistent so the
    product stays large whether its push widens or narrows the leaf
    deviation, while a node that merely relays a shifted edge inherits
    zero-mean displacement wiggles whose average vanishes. Alternatives:
    "mean" averages the signed per-row products, "magnitude" averages their
    absolute values, "top_row" reports the signed scores of the single most
    anomalous row. For the game baselines and the naive method there is no
    factor structure, so "factored" takes the magnitude of the batch-averaged
    node contributions; edge scores are always the endpoint products of the
    aggregated node scores, which under "factored" makes them magnitudes too
    (a near-zero contribution at one endpoint carries an arbitrary sign that
    would otherwise bury the product of a strong pair).
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    if aggregate not in AGGREGATES:
        raise ValueError(
            f"unknown aggregate {aggregate!r}; expected one of {AGGREGATES}"
        )
    abnormal = np.asarray(abnormal, dtype=float)
    if abnormal.ndim != 2 or abnormal.shape[0] < 1:
        raise ValueError("abnormal batch must contain at least one row")
    system = get_system(model, target)
    n_rows = abnormal.shape[0]
    if aggregate == "top_row":
        score = leaf_score_function(model, target)
        rows = [int(np.argmax(score.value(abnormal[:, target])))]
    else:
        rows = list(range(n_rows))
    row_seeds = np.random.SeedSequence(rng_seed).spawn(n_rows)
    started = time.perf_counter()
    node_acc = {v: 0.0 for v in system.nodes}
    edge_acc = {e: 0.0 for e in system.edges}
    evaluations = 0

    def fold(acc: dict, key, value: float) -> None:
        if aggregate == "magnitude":
            acc[key] += abs(value) / len(rows)
        else:
            acc[key] += value / len(rows)

    if method == "bigen":
        if ig_cfg is None:
            raise ValueError("bigen requires ig_cfg")
        shared_xi = infer_edge_noise(model, abnormal, prior_precision)
        if aggregate == "factored":
            score = leaf_score_function(model, target)
            disp_eps_sum = np.zeros(len(system.nodes))
            grad_eps_sum = np.zeros(len(system.nodes))
            grad_xi_sum = np.zeros(len(system.edges))
            xi_act = np.zeros(len(system.edges))
            count = 0
            for r in rows:
                assignment = infer_assignment(
                    model, target, abnormal, r, use_edge_noise=True,
                    edge_noise=shared_xi,
                )
                disp_eps, grad_eps, grad_xi, xi_act, used = _ig_factors(
                    model, system, abnormal[r], assignment, ig_cfg,
                    int(row_seeds[r].generate_state(1)[0]), score, IDENTITY,
                )
                disp_eps_sum += disp_eps.sum(axis=0)
                grad_eps_sum += grad_eps.sum(axis=0)
                grad_xi_sum += grad_xi.sum(axis=0)
                count += disp_eps.shape[0]
                evaluations += used
            attr_eps = np.abs((disp_eps_sum / count) * (grad_eps_sum / count))
            attr_xi = np.abs(xi_act * (grad_xi_sum / count))
            node_acc = {v: float(attr_eps[k]) for k, v in enumerate(system.nodes)}
            edge_acc = {e: float(attr_xi[k]) for k, e in enumerate(system.edges)}
        else:
            for r in rows:
                assignment = infer_assignment(
                    model, target, abnormal, r, use_edge_noise=True,
                    edge_noise=shared_xi,
                )
                report = ig_attribute(
                    model, target, abnormal[r], assignment, ig_cfg,
                    rng_seed=int(row_seeds[r].generate_state(1)[0]),
                )
                for v, s in report.node_scores.items():
                    fold(node_acc, v, s)
                for e, s in report.edge_scores.items():
                    fold(edge_acc, e, s)
                evaluations += report.metadata["gradient_evaluations"]
        node_scores = node_acc
        edge_scores = edge_acc
        metadata = {
            "rows": n_rows,
            "steps": ig_cfg.steps,
            "references": ig_cfg.references,
            "gradient_evaluations": evaluations,
        }
    elif method == "naive":
        for r in rows:
            report = naive_attribute(model, target, abnormal[r])
            for v, s in report.node_scores.items():
                fold(node_acc, v, s)
            evaluations += report.metadata["value_evaluations"]
        if aggregate == "factored":
            node_acc = {v: abs(s) for v, s in node_acc.items()}
        node_scores = node_acc
        edge_scores = baseline_edge_scores(node_scores, system.edges)
        metadata = {"rows": n_rows, "value_evaluations": evaluations}
    else:
        if game_cfg is None:
            raise ValueError(f"{method} requires game_cfg")
        for r in rows:
            assignment = infer_assignment(
                model, target, abnormal, r, use_edge_noise=False
            )
            report = game_attribute(
                model, target, abnormal[r], assignment, method, game_cfg,
                rng_seed=int(row_seeds[r].generate_state(1)[0]),
            )
            for v, s in report.node_scores.items():
                fold(node_acc, v, s)
            evaluations += report.metadata["value_evaluations"]
        if aggregate == "factored":
            node_acc = {v: abs(s) for v, s in node_acc.items()}
        node_scores = node_acc
        edge_scores = baseline_edge_scores(node_scores, system.edges)
        metadata = {"rows": n_rows, "value_evaluations": evaluations}
    metadata["rows_attributed"] = len(rows)
    metadata["aggregate"] = aggregate
    metadata["runtime_seconds"] = time.perf_counter() - started
    return _build_report(target, method, node_scores, edge_scores, metadata)


def report_to_json(report: AttributionReport, names: list[str] | None = None) -> dict:
    """JSON form of a report; volatile metadata (timings) is dropped."""
    ranking = []
    for entry in report.ranking:
        rid = entry.id if entry.kind == "node" else list(entry.id)
        ranking.append({"kind": entry.kind, "id": rid, "score": entry.score})
    metadata = {
        k: v for k, v in report.metadata.items() if k not in VOLATILE_METADATA
    }
    out = {
        "target": report.target,
        "method": report.method,
        "node_scores": {str(v): s for v, s in report.node_scores.items()},
        "edge_scores": [[i, j, s] for (i, j), s in report.edge_scores.items()],
        "ranking": ranking,
        "metadata": metadata,
    }
    if names is not None:
        out["target_name"] = names[report.target]
    return out
