"""Noisy functional causal mechanisms over a DAG and their Bayesian fit.

Each non-root node j is generated as

    X_j = (mu_j + xi_j) . X_pa(j) + eps_j

with per-edge weight noise xi_j ~ N(0, alpha^-1 I) around the mean weights
mu_j and additive node noise eps_j (Gaussian with precision beta by default,
Gamma in one scenario). Roots reduce to X_j = eps_j.

Fitting node j on data (X_pa, y) with weight prior N(m0, P0) is conjugate
Bayesian linear regression:

    H  = P0 + beta * X_pa^T X_pa        (posterior precision)
    mu = H^-1 (P0 m0 + beta * X_pa^T y) (posterior mean = MAP)

A fresh prior uses P0 = alpha * I, m0 = 0. Passing a previously fitted
posterior as the prior gives the exact sequential update.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from .dag import Dag, EdgeId, NodeId, from_edge_list, graph_to_json
from .scoring import MarginalStats

logger = logging.getLogger(__name__)

Dataset = np.ndarray  # rows = observations, columns = nodes in id order

RIDGE_SCALE = 1e-9


class SingularPrecision(RuntimeError):
    """A posterior precision matrix could not be factorized as SPD."""


@dataclass(frozen=True)
class Hyperparams:
    """Edge-noise precision alpha and node-noise precision beta."""

    alpha: float
    beta: float

    def __post_init__(self) -> None:
        if not (self.alpha > 0.0 and self.beta > 0.0):
            raise ValueError("alpha and beta must be positive")


@dataclass(frozen=True)
class GaussianNoise:
    std: float

    def __post_init__(self) -> None:
        if not self.std > 0.0:
            raise ValueError("std must be positive")

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.normal(0.0, self.std, size)

    @property
    def stddev(self) -> float:
        return self.std

    def to_json(self) -> dict:
        return {"kind": "gaussian", "std": self.std}


@dataclass(frozen=True)
class GammaNoise:
    """Non-negative node noise, used by the supply-chain generator."""

    shape: float
    scale: float = 1.0

    def __post_init__(self) -> None:
        if not (self.shape > 0.0 and self.scale > 0.0):
            raise ValueError("shape and scale must be positive")

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.gamma(self.shape, self.scale, size)

    @property
    def stddev(self) -> float:
        return self.shape**0.5 * self.scale

    def to_json(self) -> dict:
        return {"kind": "gamma", "shape": self.shape, "scale": self.scale}


NodeNoise = GaussianNoise | GammaNoise


def _noise_from_json(raw: dict) -> NodeNoise:
    kind = raw.get("kind")
    if kind == "gaussian":
        return GaussianNoise(std=float(raw["std"]))
    if kind == "gamma":
        return GammaNoise(shape=float(raw["shape"]), scale=float(raw["scale"]))
    raise ValueError(f"unknown node noise kind {kind!r}")


@dataclass
class NodeMechanism:
    """Weight prior and posterior for one node, plus its noise model.

    Arrays are aligned to the node's parent list order. Root nodes carry
    empty weight arrays.
    """

    node: NodeId
    prior_mean: np.ndarray
    posterior_mean: np.ndarray
    posterior_precision: np.ndarray
    node_noise: NodeNoise


@dataclass
class MechanismModel:
    dag: Dag
    per_node: list[NodeMechanism]
    hyper: Hyperparams
    marginal_stats: list[MarginalStats] | None = None
    _systems: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        if len(self.per_node) != self.dag.node_count:
            raise ValueError("one NodeMechanism per node required")
        for j, nm in enumerate(self.per_node):
            p = len(self.dag.parents[j])
            if nm.node != j or len(nm.posterior_mean) != p:
                raise ValueError(f"node mechanism {j} inconsistent with dag")

    def stats_of(self, node: NodeId) -> MarginalStats:
        self.dag._check_node(node)
        if self.marginal_stats is None:
            raise ValueError("model carries no marginal statistics")
        return self.marginal_stats[node]

    def weight_of(self, edge: EdgeId) -> float:
        src, dst = edge
        k = self.dag.parents[dst].index(src)
        return float(self.per_node[dst].posterior_mean[k])


def map_weights(model: MechanismModel) -> list[np.ndarray]:
    """MAP weight vector per node (posterior mean under a Gaussian posterior)."""
    return [nm.posterior_mean.copy() for nm in model.per_node]


def make_generator_model(
    dag: Dag,
    weights: Sequence[np.ndarray],
    hyper: Hyperparams,
    node_noises: Sequence[NodeNoise] | None = None,
) -> MechanismModel:
    """Assemble a model for data generation from explicit mean weights."""
    per_node = []
    for j in range(dag.node_count):
        w = np.asarray(weights[j], dtype=float)
        noise = (
            node_noises[j] if node_noises is not None else GaussianNoise(std=hyper.beta**-0.5)
        )
        per_node.append(
            NodeMechanism(
                node=j,
                prior_mean=w.copy(),
                posterior_mean=w.copy(),
                posterior_precision=hyper.alpha * np.eye(len(w)),
                node_noise=noise,
            )
        )
    return MechanismModel(dag=dag, per_node=per_node, hyper=hyper)


def propagate(model: MechanismModel, eps: np.ndarray, xi: np.ndarray) -> Dataset:
    """Generate data rows from explicit noise draws.

    eps has one column per node, xi one column per edge in canonical order.
    Row r of the result applies the mechanism with weights mu + xi[r] and
    node noise eps[r], in topological order.
    """
    dag = model.dag
    n = eps.shape[0]
    if eps.shape[1] != dag.node_count or xi.shape[1] != len(dag.edges):
        raise ValueError("noise matrices do not match graph shape")
    edge_pos = {e: k for k, e in enumerate(dag.edges)}
    data = np.zeros((n, dag.node_count))
    for j in dag.topological_order:
        plist = dag.parents[j]
        if plist:
            eidx = [edge_pos[(i, j)] for i in plist]
            w = model.per_node[j].posterior_mean
            data[:, j] = ((w[None, :] + xi[:, eidx]) * data[:, plist]).sum(axis=1)
        data[:, j] += eps[:, j]
    return data


def sample(
    model: MechanismModel,
    n: int,
    rng_seed: int | np.random.Generator,
    mode: str = "resample_edge_noise_per_row",
) -> Dataset:
    """Draw n rows from the generative mechanism.

    mode "resample_edge_noise_per_row" draws fresh edge noise for every row;
    "mean_weights" pins the weights at their means (no edge noise).
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    if mode not in ("mean_weights", "resample_edge_noise_per_row"):
        raise ValueError(f"unknown sampling mode {mode!r}")
    rng = np.random.default_rng(rng_seed)
    dag = model.dag
    eps = np.column_stack(
        [model.per_node[j].node_noise.sample(rng, n) for j in range(dag.node_count)]
    ) if dag.node_count else np.zeros((n, 0))
    if mode == "resample_edge_noise_per_row":
        xi = rng.normal(0.0, model.hyper.alpha**-0.5, (n, len(dag.edges)))
    else:
        xi = np.zeros((n, len(dag.edges)))
    return propagate(model, eps, xi)


WeightPrior = tuple[np.ndarray, np.ndarray]  # (mean, precision) per node


def weight_prior_of(model: MechanismModel) -> list[WeightPrior]:
    """The fitted posterior of every node, packaged for sequential refits."""
    return [
        (nm.posterior_mean.copy(), nm.posterior_precision.copy())
        for nm in model.per_node
    ]


def _solve_spd(H: np.ndarray, b: np.ndarray, node: NodeId) -> np.ndarray:
    """Solve H x = b with H symmetric positive definite, via Cholesky.

    On factorization failure a ridge of RIDGE_SCALE * trace(H) / dim is added
    once and the event logged; a second failure raises SingularPrecision.
    """
    try:
        c = scipy.linalg.cho_factor(H, lower=True)
        return scipy.linalg.cho_solve(c, b)
    except np.linalg.LinAlgError:
        pass
    except scipy.linalg.LinAlgError:
        pass
    dim = H.shape[0]
    ridge = RIDGE_SCALE * np.trace(H) / dim
    logger.warning("node %d: precision not SPD, adding ridge %.3e", node, ridge)
    H += ridge * np.eye(dim)
    try:
        c = scipy.linalg.cho_factor(H, lower=True)
        return scipy.linalg.cho_solve(c, b)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise SingularPrecision(f"node {node}: precision matrix is singular") from exc


def fit_posterior(
    dag: Dag,
    data: Dataset,
    hyper: Hyperparams,
    prior: Sequence[WeightPrior] | None = None,
) -> MechanismModel:
    """Fit every node's weight posterior by Bayesian linear regression.

    Without an explicit prior each node starts from N(0, alpha^-1 I). With a
    prior (for example the posterior of an earlier fit) the update is the
    exact conjugate continuation, so fitting one batch then updating on a
    second equals fitting the concatenation.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[1] != dag.node_count:
        raise ValueError("data must be a 2d array with one column per node")
    n = data.shape[0]
    per_node = []
    for j in range(dag.node_count):
        plist = dag.parents[j]
        p = len(plist)
        if prior is not None:
            m0 = np.asarray(prior[j][0], dtype=float)
            P0 = np.asarray(prior[j][1], dtype=float)
            if m0.shape != (p,) or P0.shape != (p, p):
                raise ValueError(f"prior for node {j} has wrong shape")
        else:
            m0 = np.zeros(p)
            P0 = hyper.alpha * np.eye(p)
        if p == 0:
            per_node.append(
                NodeMechanism(
                    node=j,
                    prior_mean=m0,
                    posterior_mean=np.zeros(0),
                    posterior_precision=np.zeros((0, 0)),
                    node_noise=GaussianNoise(std=hyper.beta**-0.5),
                )
            )
            continue
        X = data[:, plist]
        y = data[:, j]
        H = P0 + hyper.beta * (X.T @ X)
        H = 0.5 * (H + H.T)
        b = P0 @ m0 + hyper.beta * (X.T @ y)
        mu = _solve_spd(H.copy(), b, j)
        per_node.append(
            NodeMechanism(
                node=j,
                prior_mean=m0,
                posterior_mean=mu,
                posterior_precision=H,
                node_noise=GaussianNoise(std=hyper.beta**-0.5),
            )
        )
    stats = None
    if n >= 1:
        means = data.mean(axis=0)
        stds = data.std(axis=0)
        stats = [MarginalStats(float(m), float(s)) for m, s in zip(means, stds)]
    return MechanismModel(dag=dag, per_node=per_node, hyper=hyper, marginal_stats=stats)


def model_to_json(model: MechanismModel) -> dict:
    nodes = []
    for j, nm in enumerate(model.per_node):
        entry = {
            "node": j,
            "name": model.dag.names[j],
            "parents": list(model.dag.parents[j]),
            "prior_mean": nm.prior_mean.tolist(),
            "posterior_mean": nm.posterior_mean.tolist(),
            "posterior_precision": nm.posterior_precision.tolist(),
            "node_noise": nm.node_noise.to_json(),
        }
        if model.marginal_stats is not None:
            st = model.marginal_stats[j]
            entry["marginal"] = {"mean": st.mean, "std": st.std}
        nodes.append(entry)
    return {
        "graph": graph_to_json(model.dag),
        "hyperparams": {"alpha": model.hyper.alpha, "beta": model.hyper.beta},
        "nodes": nodes,
    }


def model_from_json(raw: dict) -> MechanismModel:
    g = raw["graph"]
    dag = from_edge_list([str(s) for s in g["nodes"]], g["edges"])
    hyper = Hyperparams(
        alpha=float(raw["hyperparams"]["alpha"]), beta=float(raw["hyperparams"]["beta"])
    )
    per_node: list[NodeMechanism | None] = [None] * dag.node_count
    stats: list[MarginalStats | None] = [None] * dag.node_count
    have_stats = False
    for entry in raw["nodes"]:
        j = int(entry["node"])
        if tuple(entry["parents"]) != dag.parents[j]:
            raise ValueError(f"node {j}: parent list disagrees with graph")
        p = len(dag.parents[j])
        per_node[j] = NodeMechanism(
            node=j,
            prior_mean=np.asarray(entry["prior_mean"], dtype=float).reshape(p),
            posterior_mean=np.asarray(entry["posterior_mean"], dtype=float).reshape(p),
            posterior_precision=np.asarray(
                entry["posterior_precision"], dtype=float
            ).reshape(p, p),
            node_noise=_noise_from_json(entry["node_noise"]),
        )
        if "marginal" in entry:
            have_stats = True
            stats[j] = MarginalStats(
                float(entry["marginal"]["mean"]), float(entry["marginal"]["std"])
            )
    if any(nm is None for nm in per_node):
        raise ValueError("model file misses some nodes")
    marginal = None
    if have_stats:
        if any(s is None for s in stats):
            raise ValueError("marginal stats present for only some nodes")
        marginal = [s for s in stats if s is not None]
    return MechanismModel(
        dag=dag, per_node=[nm for nm in per_node if nm is not None], hyper=hyper,
        marginal_stats=marginal,
    )


def save_model(model: MechanismModel, path: str) -> None:
    """Write the model as JSON; floats use shortest round-trip decimals."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_json(model), fh, indent=2)
        fh.write("\n")


def load_model(path: str) -> MechanismModel:
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_json(json.load(fh))


def save_dataset(path: str, data: Dataset, names: Sequence[str]) -> None:
    """CSV with a header row of node names, one column per node."""
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[1] != len(names):
        raise ValueError("data shape does not match names")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for row in data:
            writer.writerow([repr(float(v)) for v in row])


def load_dataset(path: str) -> tuple[list[str], Dataset]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            names = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty dataset file") from None
        rows = [[float(v) for v in row] for row in reader if row]
    data = np.asarray(rows, dtype=float).reshape(len(rows), len(names))
    return names, data
