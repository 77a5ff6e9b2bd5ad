"""Noise-space view of a leaf: values and gradients of X_target.

Restricted to the ancestor subgraph of a target, the observed leaf value is
a deterministic function of all node noises eps and edge noises xi upstream:

    X_j = f((mu_j + xi_j) . X_pa(j)) + eps_j   for every subgraph node j.

This module evaluates that function, differentiates it exactly with one
reverse sweep, and inverts it: edge noise is estimated by refitting the
weights on an abnormal batch with the trained posterior as prior, node noise
by solving each structural equation for eps row by row.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .dag import Dag, EdgeId, NodeId, ancestor_subgraph
from .mechanism import (
    Dataset,
    MechanismModel,
    fit_posterior,
    weight_prior_of,
)


class KeyMismatch(ValueError):
    """A noise assignment does not cover exactly the ancestor subgraph."""


# Weight-shift prior precision for the "diffuse" refit anchor. Small enough
# that ~10 abnormal rows dominate (their evidence is beta * sum x_i^2, at
# least ~10 per unit parent variance), large enough to pin unidentified
# directions of a rank-deficient batch at zero shift.
DIFFUSE_PRECISION = 1.0


@dataclass(frozen=True)
class Link:
    """Scalar link f applied to the weighted parent sum, with derivative."""

    f: Callable[[np.ndarray], np.ndarray]
    df: Callable[[np.ndarray], np.ndarray]


IDENTITY = Link(f=lambda z: z, df=lambda z: np.ones_like(z))


@dataclass
class NoiseAssignment:
    """One value per node noise and per edge noise of an ancestor subgraph."""

    node_noise: dict[NodeId, float]
    edge_noise: dict[EdgeId, float]


@dataclass
class GradientBundle:
    leaf_value: float
    d_leaf_d_node_noise: dict[NodeId, float]
    d_leaf_d_edge_noise: dict[EdgeId, float]


@dataclass(frozen=True)
class SubgraphSystem:
    """Compiled ancestor subgraph of one target, in original node ids.

    nodes lists the subgraph in topological order; edges keeps the canonical
    (dst ascending, parent order) enumeration. parent_idx / edge_idx give,
    per topological position, the positions of the node's parents in `nodes`
    and of its incoming edges in `edges`. weights holds the model MAP weight
    vector per node, aligned with parent_idx.
    """

    target: NodeId
    nodes: tuple[NodeId, ...]
    edges: tuple[EdgeId, ...]
    node_pos: Mapping[NodeId, int]
    edge_pos: Mapping[EdgeId, int]
    parent_idx: tuple[np.ndarray, ...]
    edge_idx: tuple[np.ndarray, ...]
    weights: tuple[np.ndarray, ...]
    target_pos: int = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "target_pos", self.node_pos[self.target])


def get_system(model: MechanismModel, target: NodeId) -> SubgraphSystem:
    """Build (and cache on the model) the compiled subgraph of target."""
    cached = model._systems.get(target)
    if cached is not None:
        return cached
    sub, mapping = ancestor_subgraph(model.dag, target)
    topo = sub.topological_order
    nodes = tuple(mapping[k] for k in topo)
    edges = tuple(
        (mapping[i], mapping[j]) for (i, j) in sub.edges
    )
    node_pos = {orig: k for k, orig in enumerate(nodes)}
    edge_pos = {e: k for k, e in enumerate(edges)}
    parent_idx = []
    edge_idx = []
    weights = []
    for orig in nodes:
        plist = model.dag.parents[orig]
        parent_idx.append(np.asarray([node_pos[i] for i in plist], dtype=int))
        edge_idx.append(np.asarray([edge_pos[(i, orig)] for i in plist], dtype=int))
        weights.append(np.asarray(model.per_node[orig].posterior_mean, dtype=float))
    system = SubgraphSystem(
        target=target,
        nodes=nodes,
        edges=edges,
        node_pos=node_pos,
        edge_pos=edge_pos,
        parent_idx=tuple(parent_idx),
        edge_idx=tuple(edge_idx),
        weights=tuple(weights),
    )
    model._systems[target] = system
    return system


def _check_assignment(system: SubgraphSystem, noise: NoiseAssignment) -> None:
    if set(noise.node_noise) != set(system.nodes):
        raise KeyMismatch("node noise keys do not match the ancestor subgraph")
    if set(noise.edge_noise) != set(system.edges):
        raise KeyMismatch("edge noise keys do not match the ancestor subgraph")


def assignment_to_vectors(
    system: SubgraphSystem, noise: NoiseAssignment
) -> tuple[np.ndarray, np.ndarray]:
    _check_assignment(system, noise)
    eps = np.asarray([noise.node_noise[v] for v in system.nodes], dtype=float)
    xi = np.asarray([noise.edge_noise[e] for e in system.edges], dtype=float)
    return eps, xi


def forward_many(
    system: SubgraphSystem,
    eps: np.ndarray,
    xi: np.ndarray,
    link: Link = IDENTITY,
) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate the subgraph for a batch of noise assignments.

    eps is (B, d) over system.nodes, xi is (B, e) over system.edges. Returns
    (X, Z): node values and pre-link weighted sums, both (B, d). Roots have
    Z = 0.
    """
    B, d = eps.shape
    X = np.zeros((B, d))
    Z = np.zeros((B, d))
    for k in range(d):
        pidx = system.parent_idx[k]
        if pidx.size:
            w = system.weights[k][None, :] + xi[:, system.edge_idx[k]]
            Z[:, k] = (w * X[:, pidx]).sum(axis=1)
            X[:, k] = link.f(Z[:, k]) + eps[:, k]
        else:
            X[:, k] = eps[:, k]
    return X, Z


def gradient_many(
    system: SubgraphSystem,
    eps: np.ndarray,
    xi: np.ndarray,
    link: Link = IDENTITY,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched exact gradients of the leaf value.

    Returns (leaf, d_eps, d_xi) with shapes (B,), (B, d), (B, e). One forward
    sweep stores values, one reverse sweep accumulates adjoints:

        a_target = 1
        a_i     += a_j * f'(z_j) * (mu_ij + xi_ij)
        dX_t/d eps_j = a_j
        dX_t/d xi_ij = a_j * f'(z_j) * X_i
    """
    X, Z = forward_many(system, eps, xi, link)
    B, d = eps.shape
    a = np.zeros((B, d))
    a[:, system.target_pos] = 1.0
    d_xi = np.zeros((B, xi.shape[1]))
    for k in range(d - 1, -1, -1):
        pidx = system.parent_idx[k]
        if not pidx.size:
            continue
        c = a[:, k] * link.df(Z[:, k])
        eidx = system.edge_idx[k]
        w = system.weights[k][None, :] + xi[:, eidx]
        a[:, pidx] += c[:, None] * w
        d_xi[:, eidx] = c[:, None] * X[:, pidx]
    return X[:, system.target_pos], a, d_xi


def forward_g(
    model: MechanismModel,
    target: NodeId,
    noise: NoiseAssignment,
    link: Link = IDENTITY,
) -> tuple[dict[NodeId, float], float]:
    """Node values and leaf value implied by one noise assignment."""
    system = get_system(model, target)
    eps, xi = assignment_to_vectors(system, noise)
    X, _ = forward_many(system, eps[None, :], xi[None, :], link)
    values = {v: float(X[0, k]) for k, v in enumerate(system.nodes)}
    return values, values[target]


def gradient_g(
    model: MechanismModel,
    target: NodeId,
    noise: NoiseAssignment,
    link: Link = IDENTITY,
) -> GradientBundle:
    """Exact gradient of the leaf value in every noise coordinate."""
    system = get_system(model, target)
    eps, xi = assignment_to_vectors(system, noise)
    leaf, d_eps, d_xi = gradient_many(system, eps[None, :], xi[None, :], link)
    return GradientBundle(
        leaf_value=float(leaf[0]),
        d_leaf_d_node_noise={
            v: float(d_eps[0, k]) for k, v in enumerate(system.nodes)
        },
        d_leaf_d_edge_noise={
            e: float(d_xi[0, k]) for k, e in enumerate(system.edges)
        },
    )


def infer_edge_noise(
    model: MechanismModel,
    abnormal: Dataset,
    prior_precision: str | float = "diffuse",
) -> dict[EdgeId, float]:
    """One edge-noise estimate per edge from an abnormal batch.

    The abnormal batch is refit with the trained posterior means as the new
    prior; the estimate is the shift of the MAP weights, xi = W' - W.

    prior_precision sets how strongly the refit is anchored at the trained
    weights. "posterior" carries the full trained precision (exact sequential
    update: a small batch can barely move the weights); "alpha" restarts at
    alpha*I; "diffuse" (default) restarts at DIFFUSE_PRECISION*I, weak enough
    that the batch evidence dominates while keeping the solve positive
    definite when the batch is rank-deficient. Any strong anchor shrinks
    estimates on edges whose parents stay in their normal range far more than
    on edges whose parents carry propagated anomalies (those rows have large
    leverage), which systematically biases the shift estimates toward
    downstream edges; the diffuse anchor removes that bias. A float selects
    an explicit precision.
    """
    abnormal = np.asarray(abnormal, dtype=float)
    if abnormal.ndim != 2 or abnormal.shape[0] < 1:
        raise ValueError("abnormal batch must contain at least one row")
    prior = weight_prior_of(model)
    if isinstance(prior_precision, str):
        if prior_precision not in ("posterior", "alpha", "diffuse"):
            raise ValueError(f"unknown prior_precision {prior_precision!r}")
        if prior_precision == "alpha":
            scale = model.hyper.alpha
        elif prior_precision == "diffuse":
            scale = DIFFUSE_PRECISION
        else:
            scale = None
    else:
        scale = float(prior_precision)
        if not scale > 0:
            raise ValueError("prior_precision must be positive")
    if scale is not None:
        prior = [(m, scale * np.eye(len(m))) for (m, _) in prior]
    refit = fit_posterior(model.dag, abnormal, model.hyper, prior=prior)
    out: dict[EdgeId, float] = {}
    for j in range(model.dag.node_count):
        shift = refit.per_node[j].posterior_mean - model.per_node[j].posterior_mean
        for k, i in enumerate(model.dag.parents[j]):
            out[(i, j)] = float(shift[k])
    return out


def infer_node_noise(
    model: MechanismModel,
    row: np.ndarray,
    weights: list[np.ndarray] | None = None,
    link: Link = IDENTITY,
) -> dict[NodeId, float]:
    """Per-node noise implied by one observed row under supplied weights.

    eps_j = x_j - f(w_j . x_pa(j)). Defaults to the trained MAP weights;
    passing W' = W + xi makes the forward map reproduce the row exactly.
    """
    row = np.asarray(row, dtype=float)
    dag = model.dag
    if row.shape != (dag.node_count,):
        raise ValueError("row must hold one value per node")
    out: dict[NodeId, float] = {}
    for j in range(dag.node_count):
        plist = dag.parents[j]
        w = model.per_node[j].posterior_mean if weights is None else weights[j]
        if plist:
            z = float(np.dot(w, row[list(plist)]))
            out[j] = float(row[j] - link.f(np.asarray([z]))[0])
        else:
            out[j] = float(row[j])
    return out


def infer_assignment(
    model: MechanismModel,
    target: NodeId,
    abnormal: Dataset,
    row_index: int,
    use_edge_noise: bool = True,
    prior_precision: str | float = "diffuse",
    edge_noise: dict[EdgeId, float] | None = None,
) -> NoiseAssignment:
    """Full noise assignment of one abnormal row on the target's subgraph.

    With use_edge_noise on, edge noise comes from the batch refit (or from a
    precomputed `edge_noise` map) and node noise is inverted under the
    shifted weights W + xi, so forward_g reproduces the observed leaf. With
    it off, edge noise is 0 and node noise is inverted under the MAP weights,
    which also reproduces the leaf.
    """
    abnormal = np.asarray(abnormal, dtype=float)
    system = get_system(model, target)
    if use_edge_noise:
        if edge_noise is None:
            edge_noise = infer_edge_noise(model, abnormal, prior_precision)
        weights = []
        for j in range(model.dag.node_count):
            w = model.per_node[j].posterior_mean.copy()
            for k, i in enumerate(model.dag.parents[j]):
                w[k] += edge_noise[(i, j)]
            weights.append(w)
        eps = infer_node_noise(model, abnormal[row_index], weights)
        xi = {e: edge_noise[e] for e in system.edges}
    else:
        eps = infer_node_noise(model, abnormal[row_index])
        xi = {e: 0.0 for e in system.edges}
    return NoiseAssignment(
        node_noise={v: eps[v] for v in system.nodes},
        edge_noise=xi,
    )
