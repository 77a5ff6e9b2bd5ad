"""Ranking quality (NDCG@k) and runtime scaling of the attribution methods.

Per case, the pipeline refits the mechanism on the case's normal data,
attributes the abnormal batch, and scores the resulting ranking against the
injected ground truth with graded NDCG. Node-only and edge-only rankings are
scored alongside the combined one whenever the truth contains causes of that
kind.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Hashable, Mapping, Sequence

import numpy as np

from .attribution import (
    GameConfig,
    IgConfig,
    METHODS,
    attribute_batch,
)
from .dag import Dag
from .mechanism import (
    GaussianNoise,
    Hyperparams,
    MechanismModel,
    fit_posterior,
    make_generator_model,
    sample,
)
from .noise import get_system, infer_assignment
from .scenarios import ScenarioCase, render_case
from .shapley import HARD_CAP

logger = logging.getLogger(__name__)

VARIANTS = ("nodes", "edges", "combined")


def dcg_at_k(relevances: Sequence[float], k: int) -> float:
    return sum(
        rel / math.log2(i + 2) for i, rel in enumerate(relevances[:k])
    )


def ndcg_at_k(
    ranking: Sequence[Hashable], relevance: Mapping[Hashable, float], k: int
) -> float:
    """Graded NDCG of a ranking at cutoff k.

    Gains are linear, discounts log2(rank + 1). The ideal ranking sorts the
    relevance grades themselves descending and is truncated at the same k.
    All-zero relevance is degenerate and scores 1.0 (logged as a warning).
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    gains = [float(relevance.get(r, 0.0)) for r in ranking]
    ideal = sorted((float(g) for g in relevance.values()), reverse=True)
    idcg = dcg_at_k(ideal, k)
    if idcg == 0.0:
        logger.warning("all relevance grades are zero; NDCG defined as 1.0")
        return 1.0
    return dcg_at_k(gains, k) / idcg


@dataclass
class RankingMetricResult:
    method: str
    k: int
    variant: str
    per_case: list[float]
    mean: float
    std: float

    @property
    def ndcg(self) -> float:
        return self.mean


@dataclass(frozen=True)
class EvalConfig:
    """Shared settings for suite evaluation."""

    hyper: Hyperparams = Hyperparams(alpha=100.0, beta=1.0)
    ig_steps: int = 50
    ig_references: int = 5
    num_subsets: int = 1000
    num_permutations: int = 25
    instances: int = 5
    early_stop: float | None = 0.05
    hard_cap: int = HARD_CAP
    prior_precision: str | float = "diffuse"
    aggregate: str = "factored"
    rng_seed: int = 0


def _aggregate(method: str, k: int, variant: str, scores: list[float]) -> RankingMetricResult:
    arr = np.asarray(scores, dtype=float)
    return RankingMetricResult(
        method=method,
        k=k,
        variant=variant,
        per_case=list(map(float, arr)),
        mean=float(arr.mean()) if arr.size else float("nan"),
        std=float(arr.std()) if arr.size else float("nan"),
    )


def case_rankings(report) -> dict[str, list]:
    """Combined, node-only and edge-only candidate rankings of a report."""
    combined = [
        (e.id if e.kind == "node" else tuple(e.id)) for e in report.ranking
    ]
    nodes = [e.id for e in report.ranking if e.kind == "node"]
    edges = [tuple(e.id) for e in report.ranking if e.kind == "edge"]
    return {"combined": combined, "nodes": nodes, "edges": edges}


def evaluate_case(
    case: ScenarioCase,
    method: str,
    cfg: EvalConfig,
    k_values: Sequence[int],
    rng_seed: int,
) -> dict[tuple[int, str], float]:
    """NDCG of one case for one method, keyed by (k, variant)."""
    model = fit_posterior(case.dag, case.normal_data, cfg.hyper)
    report = attribute_batch(
        model,
        case.target,
        case.abnormal_data,
        method,
        ig_cfg=IgConfig(
            reference_data=case.normal_data,
            steps=cfg.ig_steps,
            references=cfg.ig_references,
        ),
        game_cfg=GameConfig(
            reference_data=case.normal_data,
            num_subsets=cfg.num_subsets,
            num_permutations=cfg.num_permutations,
            instances=cfg.instances,
            early_stop=cfg.early_stop,
            hard_cap=cfg.hard_cap,
        ),
        rng_seed=rng_seed,
        prior_precision=cfg.prior_precision,
        aggregate=cfg.aggregate,
    )
    rankings = case_rankings(report)
    truth = case.truth
    rel_all = dict(truth.relevance)
    rel_nodes = {v: truth.relevance[v] for v in truth.root_cause_nodes}
    rel_edges = {e: truth.relevance[e] for e in truth.root_cause_edges}
    out: dict[tuple[int, str], float] = {}
    for k in k_values:
        out[(k, "combined")] = ndcg_at_k(rankings["combined"], rel_all, k)
        if rel_nodes:
            out[(k, "nodes")] = ndcg_at_k(rankings["nodes"], rel_nodes, k)
        if rel_edges:
            out[(k, "edges")] = ndcg_at_k(rankings["edges"], rel_edges, k)
    return out


def evaluate_method(
    cases: Sequence[ScenarioCase],
    method: str,
    cfg: EvalConfig,
    k_values: Sequence[int] = (5,),
) -> list[RankingMetricResult]:
    """NDCG of a method over a case suite, per k and ranking variant.

    Node-only (edge-only) variants aggregate over the cases whose truth
    contains node (edge) causes. Deterministic for a given cfg.rng_seed.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    seeds = np.random.SeedSequence(cfg.rng_seed).spawn(len(cases))
    buckets: dict[tuple[int, str], list[float]] = {}
    for case, seed in zip(cases, seeds):
        scores = evaluate_case(
            case, method, cfg, k_values, int(seed.generate_state(1)[0])
        )
        for key, val in scores.items():
            buckets.setdefault(key, []).append(val)
    results = []
    for k in k_values:
        for variant in VARIANTS:
            if (k, variant) in buckets:
                results.append(_aggregate(method, k, variant, buckets[(k, variant)]))
    return results


@dataclass
class BenchRecord:
    method: str
    num_ancestors: int
    num_edges: int
    wall_time: float
    evaluation_count: int


@dataclass
class SkippedCell:
    method: str
    num_ancestors: int
    reason: str


@dataclass
class BenchResult:
    records: list[BenchRecord] = field(default_factory=list)
    skipped: list[SkippedCell] = field(default_factory=list)

    def slope(self, method: str) -> float:
        """Least-squares log-log slope of wall time against d + e."""
        pts = [
            (r.num_ancestors + 1 + r.num_edges, r.wall_time)
            for r in self.records
            if r.method == method
        ]
        if len(pts) < 2:
            return float("nan")
        x = np.log([p[0] for p in pts])
        y = np.log([p[1] for p in pts])
        return float(np.polyfit(x, y, 1)[0])

    def count_slope(self, method: str) -> float:
        """Log-log slope of evaluation count against d + e."""
        pts = [
            (r.num_ancestors + 1 + r.num_edges, max(r.evaluation_count, 1))
            for r in self.records
            if r.method == method
        ]
        if len(pts) < 2:
            return float("nan")
        x = np.log([p[0] for p in pts])
        y = np.log([p[1] for p in pts])
        return float(np.polyfit(x, y, 1)[0])


def _bench_dag(num_nodes: int, rng: np.random.Generator) -> Dag:
    """Connected DAG where every node is an ancestor of the last one."""
    parents: list[tuple[int, ...]] = [()]
    for p in range(1, num_nodes):
        extra = tuple(
            i for i in range(p - 1) if rng.random() < min(1.0, 1.0 / p)
        )
        parents.append(tuple(sorted(extra + (p - 1,))))
    return Dag(
        parents=tuple(parents), names=tuple(f"X{j}" for j in range(num_nodes))
    )


def _bench_instance(size: int, rng_seed: int):
    rng = np.random.default_rng(rng_seed)
    dag = _bench_dag(size + 1, rng)
    weights = [
        np.abs(rng.normal(0.0, 1.0, len(dag.parents[j])))
        for j in range(dag.node_count)
    ]
    hyper = Hyperparams(alpha=100.0, beta=1.0)
    generator = make_generator_model(
        dag, weights, hyper, [GaussianNoise(std=1.0)] * dag.node_count
    )
    normal = sample(generator, 500, rng, mode="resample_edge_noise_per_row")
    abnormal = sample(generator, 1, rng, mode="resample_edge_noise_per_row")
    abnormal[0, 0] += 8.0
    model = fit_posterior(dag, normal, hyper)
    return model, dag, normal, abnormal


def bench_runtime(
    sizes: Sequence[int],
    methods: Sequence[str],
    budget: float,
    rng_seed: int,
    *,
    min_time: float = 0.05,
) -> BenchResult:
    """Wall time and value/gradient evaluation counts per method and size.

    size = number of ancestors of the leaf (the player count is size + 1).
    The exact Shapley engine is projected as 2^players evaluations and a
    cell is skipped, recording the reason, when its projection or a
    measured attribution exceeds the per-cell budget in seconds. Timings
    repeat the attribution until min_time accumulates and report the mean.
    """
    result = BenchResult()
    seeds = np.random.SeedSequence(rng_seed).spawn(len(sizes))
    for size, seed in zip(sizes, seeds):
        cell_seed = int(seed.generate_state(1)[0])
        model, dag, normal, abnormal = _bench_instance(size, cell_seed)
        target = dag.node_count - 1
        system = get_system(model, target)
        players = len(system.nodes)
        num_edges = len(system.edges)
        ig_cfg = IgConfig(reference_data=normal)
        # instances=1 keeps the classic engine's cost the bare coalition
        # enumeration, so reported evaluation counts scale as 2^d.
        game_cfg = GameConfig(reference_data=normal, instances=1)
        for method in methods:
            if method == "shapley":
                per_eval = _calibrate_eval_cost(
                    model, target, normal, abnormal, cell_seed
                )
                projected = per_eval * (2.0**players)
                if players > game_cfg.hard_cap or projected > budget:
                    result.skipped.append(
                        SkippedCell(
                            method,
                            size,
                            f"projected {projected:.1f}s for 2^{players} evaluations",
                        )
                    )
                    continue
            reps = 0
            elapsed = 0.0
            evaluations = 0
            while elapsed < min_time:
                t0 = time.perf_counter()
                report = attribute_batch(
                    model,
                    target,
                    abnormal,
                    method,
                    ig_cfg=ig_cfg,
                    game_cfg=game_cfg,
                    rng_seed=cell_seed,
                )
                elapsed += time.perf_counter() - t0
                reps += 1
                evaluations = report.metadata.get(
                    "gradient_evaluations",
                    report.metadata.get("value_evaluations", 0),
                )
                if elapsed / reps > budget:
                    break
            wall = elapsed / reps
            if wall > budget:
                result.skipped.append(
                    SkippedCell(method, size, f"measured {wall:.1f}s over budget")
                )
                continue
            result.records.append(
                BenchRecord(
                    method=method,
                    num_ancestors=size,
                    num_edges=num_edges,
                    wall_time=wall,
                    evaluation_count=int(evaluations),
                )
            )
    return result


def _calibrate_eval_cost(model, target, normal, abnormal, rng_seed: int) -> float:
    """Seconds per value-function evaluation, from a short sampling run."""
    players = len(get_system(model, target).nodes)
    probe = GameConfig(
        reference_data=normal, num_subsets=max(64, players + 2), instances=1
    )
    assignment = infer_assignment(model, target, abnormal, 0, use_edge_noise=False)
    from .attribution import game_attribute

    t0 = time.perf_counter()
    report = game_attribute(
        model, target, abnormal[0], assignment, "sampling", probe, rng_seed
    )
    dt = time.perf_counter() - t0
    evals = max(report.metadata.get("value_evaluations", 1), 1)
    return dt / evals
