"""Benchmark case generators with known injected root causes.

A case bundles a DAG, a generating mechanism, a normal dataset, an abnormal
batch produced by interfering with selected node or edge noise
distributions, and the ground truth: which coordinates were injected and a
relevance grade per cause (strongest injection gets the highest grade).

Three families: random sparse DAGs with half-normal mean weights, an
eleven-service call-graph topology with latency semantics, and a five-stage
order-flow topology whose node noise is Gamma distributed. The two fixed
topologies ship as JSON data files and can be swapped for user graphs.
"""

from __future__ import annotations

import importlib.resources
import json
import math
import os
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .dag import Dag, EdgeId, NodeId, ancestor_subgraph, ancestors_of, load_graph, save_graph
from .mechanism import (
    Dataset,
    GammaNoise,
    GaussianNoise,
    Hyperparams,
    MechanismModel,
    NodeNoise,
    load_dataset,
    make_generator_model,
    propagate,
    save_dataset,
)

MIXES = ("nodes", "edges", "both")

NoiseSampler = Callable[[np.random.Generator, int], np.ndarray]


@dataclass(frozen=True)
class GroundTruth:
    root_cause_nodes: frozenset[NodeId]
    root_cause_edges: frozenset[EdgeId]
    relevance: dict[NodeId | EdgeId, float]

    def __post_init__(self) -> None:
        if not (self.root_cause_nodes or self.root_cause_edges):
            raise ValueError("a case must have at least one root cause")
        causes = set(self.root_cause_nodes) | set(self.root_cause_edges)
        if set(self.relevance) != causes:
            raise ValueError("relevance keys must be exactly the causes")
        if any(not g > 0 for g in self.relevance.values()):
            raise ValueError("relevance grades must be positive")


@dataclass
class ScenarioCase:
    dag: Dag
    generator: MechanismModel | None
    normal_data: Dataset
    abnormal_data: Dataset
    target: NodeId
    truth: GroundTruth
    seed: int
    scenario: str
    mix: str


def _check_mix(mix: str) -> None:
    if mix not in MIXES:
        raise ValueError(f"mix must be one of {MIXES}, got {mix!r}")


def _draw_noise_matrices(
    model: MechanismModel, n: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    dag = model.dag
    eps = np.column_stack(
        [model.per_node[j].node_noise.sample(rng, n) for j in range(dag.node_count)]
    )
    xi = rng.normal(0.0, model.hyper.alpha**-0.5, (n, len(dag.edges)))
    return eps, xi


def render_case(
    dag: Dag,
    generator: MechanismModel,
    target: NodeId,
    node_causes: Mapping[NodeId, NoiseSampler],
    edge_causes: Mapping[EdgeId, NoiseSampler],
    normal_rows: int,
    abnormal_rows: int,
    rng: np.random.Generator,
    seed: int,
    scenario: str,
    mix: str,
) -> ScenarioCase:
    """Sample normal data, then abnormal data with the causes' noise
    distributions swapped in, and grade causes by realized mean |injection|.
    """
    sub_nodes = ancestors_of(dag, target) | {target}
    for v in node_causes:
        if v not in sub_nodes or v == target:
            raise ValueError(f"node cause {v} is not a strict ancestor of target")
    edge_pos = {e: k for k, e in enumerate(dag.edges)}
    for e in edge_causes:
        if e not in edge_pos or not (e[0] in sub_nodes and e[1] in sub_nodes):
            raise ValueError(f"edge cause {e} is not inside the ancestor subgraph")
    eps_n, xi_n = _draw_noise_matrices(generator, normal_rows, rng)
    normal = propagate(generator, eps_n, xi_n)
    eps_a, xi_a = _draw_noise_matrices(generator, abnormal_rows, rng)
    magnitudes: list[tuple[float, int, tuple], ] = []
    for v in sorted(node_causes):
        draws = np.asarray(node_causes[v](rng, abnormal_rows), dtype=float)
        eps_a[:, v] = draws
        magnitudes.append((float(np.abs(draws).mean()), 0, (v,)))
    for e in sorted(edge_causes):
        draws = np.asarray(edge_causes[e](rng, abnormal_rows), dtype=float)
        xi_a[:, edge_pos[e]] = draws
        magnitudes.append((float(np.abs(draws).mean()), 1, e))
    abnormal = propagate(generator, eps_a, xi_a)
    ordered = sorted(magnitudes, key=lambda m: (-m[0], m[1], m[2]))
    relevance: dict[NodeId | EdgeId, float] = {}
    for rank, (_, kind, key) in enumerate(ordered):
        grade = float(len(ordered) - rank)
        relevance[key[0] if kind == 0 else key] = grade
    return ScenarioCase(
        dag=dag,
        generator=generator,
        normal_data=normal,
        abnormal_data=abnormal,
        target=target,
        truth=GroundTruth(
            root_cause_nodes=frozenset(node_causes),
            root_cause_edges=frozenset(edge_causes),
            relevance=relevance,
        ),
        seed=seed,
        scenario=scenario,
        mix=mix,
    )


EXTRA_PARENT_PROB = 0.10


def random_dag(num_nodes: int, rng: np.random.Generator) -> Dag:
    """Sparse random DAG: one uniform upstream parent per node, plus a second
    one with probability EXTRA_PARENT_PROB.

    Expected in-degree stays near 1.1. Denser wiring compounds the variance
    of deep nodes multiplicatively (every extra unit-scale parent roughly
    doubles it), which drowns fixed-size noise injections at the leaf and
    makes root-cause recovery ill-posed regardless of method.
    """
    parents: list[tuple[int, ...]] = [()]
    for p in range(1, num_nodes):
        chosen = {int(rng.integers(0, p))}
        if p >= 2 and rng.random() < EXTRA_PARENT_PROB:
            chosen.add(int(rng.integers(0, p)))
        parents.append(tuple(sorted(chosen)))
    names = tuple(f"X{j}" for j in range(num_nodes))
    return Dag(parents=tuple(parents), names=names)


def _pick_causes(
    rng: np.random.Generator,
    candidates: list,
    count: int,
) -> list:
    count = min(count, len(candidates))
    idx = rng.choice(len(candidates), size=count, replace=False)
    return [candidates[int(i)] for i in sorted(idx)]


def gen_random_graph_case(
    num_nodes: int,
    normal_rows: int,
    abnormal_rows: int,
    mix: str,
    rng_seed: int,
) -> ScenarioCase:
    """Random-graph case with anomalous-mean noise injections.

    Weight means are |N(0, 1)|; node noise has variance 1, edge noise
    variance 0.01. The target is uniform among nodes with at least one
    ancestor. With s nodes in the ancestor subgraph, up to m = max(1,
    floor(0.1 s)) causes per kind are injected. A node cause redraws eps
    from N(a, b) with a from a sign-symmetric Uniform(3, 5) and b from
    Uniform(3, 5); an edge cause on (i, j) redraws xi from N(a m_j, b s_j)
    where m_j is the largest |weight| into j and s_j the edge-noise std.
    """
    _check_mix(mix)
    if num_nodes < 2:
        raise ValueError("need at least two nodes")
    rng = np.random.default_rng(rng_seed)
    dag = random_dag(num_nodes, rng)
    weights = [np.abs(rng.normal(0.0, 1.0, len(dag.parents[j]))) for j in range(num_nodes)]
    hyper = Hyperparams(alpha=100.0, beta=1.0)
    generator = make_generator_model(
        dag, weights, hyper, [GaussianNoise(std=1.0)] * num_nodes
    )
    with_ancestors = [j for j in range(num_nodes) if dag.parents[j]]
    target = int(with_ancestors[int(rng.integers(0, len(with_ancestors)))])
    sub, mapping = ancestor_subgraph(dag, target)
    m = max(1, math.floor(0.1 * sub.node_count))
    node_candidates = [v for v in mapping if v != target]
    edge_candidates = [(mapping[i], mapping[j]) for (i, j) in sub.edges]
    node_causes: dict[NodeId, NoiseSampler] = {}
    edge_causes: dict[EdgeId, NoiseSampler] = {}
    sigma_xi = hyper.alpha**-0.5
    if mix in ("nodes", "both"):
        k = int(rng.integers(1, m + 1))
        for v in _pick_causes(rng, node_candidates, k):
            a = float(rng.choice([-1.0, 1.0]) * rng.uniform(3.0, 5.0))
            b = float(rng.uniform(3.0, 5.0))
            node_causes[v] = _normal_sampler(a, b)
    if mix in ("edges", "both"):
        l = int(rng.integers(1, m + 1))
        for (i, j) in _pick_causes(rng, edge_candidates, l):
            w_in = generator.per_node[j].posterior_mean
            m_j = float(np.max(np.abs(w_in)))
            a = float(rng.choice([-1.0, 1.0]) * rng.uniform(3.0, 5.0))
            b = float(rng.uniform(3.0, 5.0))
            edge_causes[(i, j)] = _normal_sampler(a * m_j, b * sigma_xi)
    return render_case(
        dag, generator, target, node_causes, edge_causes,
        normal_rows, abnormal_rows, rng, rng_seed, "random", mix,
    )


def random_suite(
    mix: str,
    n_cases: int,
    normal_rows: int = 2000,
    abnormal_rows: int = 10,
    rng_seed: int = 0,
    min_nodes: int = 10,
    max_nodes: int = 50,
) -> list[ScenarioCase]:
    """Suite of random-graph cases with sizes drawn uniformly per case.

    The case seeds derive from (rng_seed, mix), so suites for different
    mixes under one seed are independent and every suite is reproducible.
    """
    _check_mix(mix)
    root = np.random.SeedSequence([rng_seed, MIXES.index(mix)])
    cases = []
    for child in root.spawn(n_cases):
        seed = int(child.generate_state(1)[0])
        n = int(np.random.default_rng(seed).integers(min_nodes, max_nodes + 1))
        cases.append(gen_random_graph_case(n, normal_rows, abnormal_rows, mix, seed))
    return cases


def _normal_sampler(mean: float, variance: float) -> NoiseSampler:
    std = math.sqrt(variance)
    return lambda rng, size: rng.normal(mean, std, size)


def _band_sampler(low: float, high: float, sign: float) -> NoiseSampler:
    return lambda rng, size: sign * rng.uniform(low, high, size)


def _bundled_graph(name: str) -> tuple[Dag, NodeId]:
    ref = importlib.resources.files("noisyrca").joinpath("data", name)
    raw = json.loads(ref.read_text(encoding="utf-8"))
    dag = Dag(
        parents=_parents_from_edges(len(raw["nodes"]), raw["edges"]),
        names=tuple(str(s) for s in raw["nodes"]),
    )
    return dag, dag.node_by_name(raw["target"])


def _parents_from_edges(n: int, edges: list) -> tuple[tuple[int, ...], ...]:
    parents: list[list[int]] = [[] for _ in range(n)]
    for src, dst in edges:
        parents[dst].append(src)
    return tuple(tuple(p) for p in parents)


def gen_microservice_case(
    rng_seed: int,
    mix: str,
    normal_rows: int = 2000,
    abnormal_rows: int = 10,
) -> ScenarioCase:
    """Service call-graph case with latency semantics.

    Weights are positive (Uniform(0.5, 1.5)); per-node Gaussian noise stds
    are Uniform(0.2, 1.0). One to three causes per selected kind; injected
    noise is drawn uniformly from the (3 sigma, 5 sigma] band of the
    respective noise distribution, with random sign for node noise.
    """
    _check_mix(mix)
    rng = np.random.default_rng(rng_seed)
    dag, target = _bundled_graph("microservice.json")
    n = dag.node_count
    weights = [rng.uniform(0.5, 1.5, len(dag.parents[j])) for j in range(n)]
    stds = rng.uniform(0.2, 1.0, n)
    hyper = Hyperparams(alpha=100.0, beta=1.0)
    noises: list[NodeNoise] = [GaussianNoise(std=float(s)) for s in stds]
    generator = make_generator_model(dag, weights, hyper, noises)
    sigma_xi = hyper.alpha**-0.5
    sub, mapping = ancestor_subgraph(dag, target)
    node_candidates = [v for v in mapping if v != target]
    edge_candidates = [(mapping[i], mapping[j]) for (i, j) in sub.edges]
    node_causes: dict[NodeId, NoiseSampler] = {}
    edge_causes: dict[EdgeId, NoiseSampler] = {}
    if mix in ("nodes", "both"):
        k = int(rng.integers(1, 4))
        for v in _pick_causes(rng, node_candidates, k):
            s = float(stds[v])
            sign = float(rng.choice([-1.0, 1.0]))
            node_causes[v] = _band_sampler(3.0 * s, 5.0 * s, sign)
    if mix in ("edges", "both"):
        l = int(rng.integers(1, 4))
        for e in _pick_causes(rng, edge_candidates, l):
            edge_causes[e] = _band_sampler(3.0 * sigma_xi, 5.0 * sigma_xi, 1.0)
    return render_case(
        dag, generator, target, node_causes, edge_causes,
        normal_rows, abnormal_rows, rng, rng_seed, "microservice", mix,
    )


def gen_supply_chain_case(
    rng_seed: int,
    mix: str,
    normal_rows: int = 2000,
    abnormal_rows: int = 10,
) -> ScenarioCase:
    """Order-flow case whose node noise is Gamma (non-negative).

    Weights are Uniform(0.5, 1.5); node noise is Gamma(shape, 1) with shape
    Uniform(0.5, 2.0) per node. One or two causes of the selected kind (one
    of each for mix "both"); injected noise values are Uniform(3, 5).
    """
    _check_mix(mix)
    rng = np.random.default_rng(rng_seed)
    dag, target = _bundled_graph("supply_chain.json")
    n = dag.node_count
    weights = [rng.uniform(0.5, 1.5, len(dag.parents[j])) for j in range(n)]
    shapes = rng.uniform(0.5, 2.0, n)
    hyper = Hyperparams(alpha=100.0, beta=1.0)
    noises: list[NodeNoise] = [GammaNoise(shape=float(s), scale=1.0) for s in shapes]
    generator = make_generator_model(dag, weights, hyper, noises)
    sub, mapping = ancestor_subgraph(dag, target)
    node_candidates = [v for v in mapping if v != target]
    edge_candidates = [(mapping[i], mapping[j]) for (i, j) in sub.edges]
    node_causes: dict[NodeId, NoiseSampler] = {}
    edge_causes: dict[EdgeId, NoiseSampler] = {}
    uniform_3_5: NoiseSampler = lambda r, size: r.uniform(3.0, 5.0, size)
    if mix == "nodes":
        k = int(rng.integers(1, 3))
        for v in _pick_causes(rng, node_candidates, k):
            node_causes[v] = uniform_3_5
    elif mix == "edges":
        l = int(rng.integers(1, 3))
        for e in _pick_causes(rng, edge_candidates, l):
            edge_causes[e] = uniform_3_5
    else:
        for v in _pick_causes(rng, node_candidates, 1):
            node_causes[v] = uniform_3_5
        for e in _pick_causes(rng, edge_candidates, 1):
            edge_causes[e] = uniform_3_5
    return render_case(
        dag, generator, target, node_causes, edge_causes,
        normal_rows, abnormal_rows, rng, rng_seed, "supply_chain", mix,
    )


GENERATORS = {
    "random": gen_random_graph_case,
    "microservice": gen_microservice_case,
    "supplychain": gen_supply_chain_case,
}


def truth_to_json(case: ScenarioCase) -> dict:
    truth = case.truth
    return {
        "target": case.target,
        "target_name": case.dag.names[case.target],
        "seed": case.seed,
        "scenario": case.scenario,
        "mix": case.mix,
        "node_causes": [
            [v, truth.relevance[v]] for v in sorted(truth.root_cause_nodes)
        ],
        "edge_causes": [
            [i, j, truth.relevance[(i, j)]]
            for (i, j) in sorted(truth.root_cause_edges)
        ],
    }


def save_case(case: ScenarioCase, out_dir: str) -> None:
    """Write graph.json, normal.csv, abnormal.csv and truth.json."""
    save_graph(case.dag, os.path.join(out_dir, "graph.json"))
    save_dataset(os.path.join(out_dir, "normal.csv"), case.normal_data, case.dag.names)
    save_dataset(
        os.path.join(out_dir, "abnormal.csv"), case.abnormal_data, case.dag.names
    )
    with open(os.path.join(out_dir, "truth.json"), "w", encoding="utf-8") as fh:
        json.dump(truth_to_json(case), fh, indent=2)
        fh.write("\n")


def load_case(case_dir: str) -> ScenarioCase:
    dag = load_graph(os.path.join(case_dir, "graph.json"))
    names_n, normal = load_dataset(os.path.join(case_dir, "normal.csv"))
    names_a, abnormal = load_dataset(os.path.join(case_dir, "abnormal.csv"))
    if list(names_n) != list(dag.names) or list(names_a) != list(dag.names):
        raise ValueError(f"{case_dir}: dataset headers disagree with graph nodes")
    with open(os.path.join(case_dir, "truth.json"), "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    relevance: dict[NodeId | EdgeId, float] = {}
    nodes = frozenset(int(v) for v, _ in raw["node_causes"])
    for v, g in raw["node_causes"]:
        relevance[int(v)] = float(g)
    edges = frozenset((int(i), int(j)) for i, j, _ in raw["edge_causes"])
    for i, j, g in raw["edge_causes"]:
        relevance[(int(i), int(j))] = float(g)
    return ScenarioCase(
        dag=dag,
        generator=None,
        normal_data=normal,
        abnormal_data=abnormal,
        target=int(raw["target"]),
        truth=GroundTruth(
            root_cause_nodes=nodes, root_cause_edges=edges, relevance=relevance
        ),
        seed=int(raw["seed"]),
        scenario=str(raw["scenario"]),
        mix=str(raw["mix"]),
    )
