"""Directed acyclic graphs with ordered parent lists.

Nodes are integers 0..n-1 with display names. Each node carries an ordered
parent list; that ordering fixes the coordinate layout of weight vectors and
edge-noise vectors everywhere else, so it is part of the graph identity and
never reordered after construction.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

NodeId = int
EdgeId = tuple[int, int]


class CycleDetected(ValueError):
    """The edge set admits no topological order."""


class UnknownNode(ValueError):
    """A node id or name does not exist in the graph."""


@dataclass(frozen=True)
class Dag:
    """Immutable DAG over nodes 0..n-1.

    parents[j] lists the parents of node j in construction order. Edges are
    identified as (src, dst) pairs; the canonical edge order enumerates
    destinations ascending and, within a destination, parents in list order.
    """

    parents: tuple[tuple[NodeId, ...], ...]
    names: tuple[str, ...]

    def __post_init__(self) -> None:
        n = len(self.parents)
        if len(self.names) != n:
            raise ValueError(f"{len(self.names)} names for {n} nodes")
        if len(set(self.names)) != n:
            raise ValueError("node names must be unique")
        for j, plist in enumerate(self.parents):
            for i in plist:
                if not (0 <= i < n):
                    raise UnknownNode(f"parent {i} of node {j} out of range")
                if i == j:
                    raise CycleDetected(f"self loop at node {j}")
            if len(set(plist)) != len(plist):
                raise ValueError(f"duplicate parent in node {j} parent list")
        self.topological_order  # acyclicity check happens here

    @property
    def node_count(self) -> int:
        return len(self.parents)

    @cached_property
    def edges(self) -> tuple[EdgeId, ...]:
        """All edges in canonical order (ascending dst, then parent order)."""
        return tuple((i, j) for j in range(self.node_count) for i in self.parents[j])

    @cached_property
    def children(self) -> tuple[tuple[NodeId, ...], ...]:
        out: list[list[NodeId]] = [[] for _ in range(self.node_count)]
        for j in range(self.node_count):
            for i in self.parents[j]:
                out[i].append(j)
        return tuple(tuple(c) for c in out)

    @cached_property
    def topological_order(self) -> tuple[NodeId, ...]:
        """Kahn order with ties broken by ascending node id.

        Deterministic for a given graph. Raises CycleDetected when some nodes
        never reach in-degree zero.
        """
        indegree = [len(p) for p in self.parents]
        ready = [j for j in range(self.node_count) if indegree[j] == 0]
        heapq.heapify(ready)
        order: list[NodeId] = []
        while ready:
            j = heapq.heappop(ready)
            order.append(j)
            for c in self.children[j]:
                indegree[c] -= 1
                if indegree[c] == 0:
                    heapq.heappush(ready, c)
        if len(order) != self.node_count:
            raise CycleDetected("graph contains a cycle")
        return tuple(order)

    def name_of(self, node: NodeId) -> str:
        self._check_node(node)
        return self.names[node]

    def node_by_name(self, name: str) -> NodeId:
        try:
            return self.names.index(name)
        except ValueError:
            raise UnknownNode(f"no node named {name!r}") from None

    def _check_node(self, node: NodeId) -> None:
        if not (0 <= node < self.node_count):
            raise UnknownNode(f"node {node} out of range")


def topological_order(dag: Dag) -> list[NodeId]:
    """Topological order of all nodes, parents before children."""
    return list(dag.topological_order)


def ancestors_of(dag: Dag, target: NodeId) -> set[NodeId]:
    """All nodes with a directed path into target (target excluded)."""
    dag._check_node(target)
    seen: set[NodeId] = set()
    stack = list(dag.parents[target])
    while stack:
        i = stack.pop()
        if i in seen:
            continue
        seen.add(i)
        stack.extend(dag.parents[i])
    return seen


def ancestor_subgraph(dag: Dag, target: NodeId) -> tuple[Dag, list[NodeId]]:
    """Subgraph induced by target and its ancestors.

    Returns (sub, mapping) where mapping[local] is the original node id of
    local node `local`. Local ids follow ascending original id, and every
    parent list keeps the original relative parent order. All edges between
    retained nodes are retained, so edge coordinates restrict cleanly.
    """
    keep = sorted(ancestors_of(dag, target) | {target})
    local = {orig: k for k, orig in enumerate(keep)}
    parents = tuple(
        tuple(local[i] for i in dag.parents[orig] if i in local) for orig in keep
    )
    names = tuple(dag.names[orig] for orig in keep)
    return Dag(parents=parents, names=names), keep


def from_edge_list(names: Sequence[str], edges: Iterable[Sequence[int]]) -> Dag:
    """Build a Dag from node names and (src, dst) pairs.

    Parent order of each node follows first appearance in the edge list.
    """
    n = len(names)
    parents: list[list[NodeId]] = [[] for _ in range(n)]
    for edge in edges:
        if len(edge) != 2:
            raise ValueError(f"edge {edge!r} is not a (src, dst) pair")
        src, dst = int(edge[0]), int(edge[1])
        if not (0 <= src < n) or not (0 <= dst < n):
            raise UnknownNode(f"edge ({src}, {dst}) references a missing node")
        if src in parents[dst]:
            raise ValueError(f"duplicate edge ({src}, {dst})")
        parents[dst].append(src)
    return Dag(parents=tuple(tuple(p) for p in parents), names=tuple(names))


def load_graph(path: str) -> Dag:
    """Read a graph file: {"nodes": [name, ...], "edges": [[src, dst], ...]}."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict) or "nodes" not in raw or "edges" not in raw:
        raise ValueError(f"{path}: graph file must contain 'nodes' and 'edges'")
    names = [str(s) for s in raw["nodes"]]
    return from_edge_list(names, raw["edges"])


def graph_to_json(dag: Dag) -> dict:
    return {
        "nodes": list(dag.names),
        "edges": [[i, j] for (i, j) in dag.edges],
    }


def save_graph(dag: Dag, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(graph_to_json(dag), fh, indent=2)
        fh.write("\n")
