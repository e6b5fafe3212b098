"""Scene graphs, vocabularies, node orderings, and the sequence codec.

A scene graph is a set of labelled nodes (object instances) plus directed
labelled edges between distinct nodes, with at most one edge per ordered
node pair.  For autoregressive modelling a graph is serialized, under a
node permutation, into a sequence of per-node elements: the node label
plus two slot lists describing the edges to/from all earlier nodes.

All values here are immutable after construction and every operation is a
pure function, so they are safe to share across threads.
"""

from __future__ import annotations

import enum
import hashlib
import json
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import DataError


class OutOfRangeLabel(DataError):
    pass


class SelfLoop(DataError):
    pass


class DuplicateDirectedEdge(DataError):
    pass


class MissingTier(DataError):
    pass


class MalformedSequence(DataError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    """Object and relation label sets plus the reserved token indices.

    Categories occupy ``[0, C)`` and ``[0, R)``.  Reserved tokens sit just
    above each range:

    * node side: ``EOS = C`` (sequence terminator), ``PAD = C + 1``
    * edge side: ``NO_EDGE = R``, ``SOS = R + 1``, ``PAD = R + 2``
    """

    object_labels: tuple[str, ...]
    relation_labels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "object_labels", tuple(self.object_labels))
        object.__setattr__(self, "relation_labels", tuple(self.relation_labels))
        if not self.object_labels or not self.relation_labels:
            raise DataError("vocabulary needs at least one object and one relation label")
        for kind, labels in (("object", self.object_labels), ("relation", self.relation_labels)):
            if len(set(labels)) != len(labels):
                raise DataError(f"duplicate {kind} labels in vocabulary")

    @property
    def num_objects(self) -> int:
        return len(self.object_labels)

    @property
    def num_relations(self) -> int:
        return len(self.relation_labels)

    # Reserved node-side tokens.
    @property
    def node_eos(self) -> int:
        return self.num_objects

    @property
    def node_pad(self) -> int:
        return self.num_objects + 1

    # Reserved edge-side tokens.
    @property
    def no_edge(self) -> int:
        return self.num_relations

    @property
    def edge_sos(self) -> int:
        return self.num_relations + 1

    @property
    def edge_pad(self) -> int:
        return self.num_relations + 2

    def object_index(self, name: str) -> int:
        try:
            return self.object_labels.index(name)
        except ValueError:
            raise OutOfRangeLabel(f"unknown object label {name!r}") from None

    def relation_index(self, name: str) -> int:
        try:
            return self.relation_labels.index(name)
        except ValueError:
            raise OutOfRangeLabel(f"unknown relation label {name!r}") from None

    def digest(self) -> str:
        """Stable hash of the label lists, used to match checkpoints to data."""
        blob = json.dumps(
            {"objects": list(self.object_labels), "relations": list(self.relation_labels)}
        ).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class SceneGraph:
    """Labelled nodes plus directed labelled edges ``(src, rel, dst)``."""

    nodes: tuple[int, ...]
    edges: frozenset[tuple[int, int, int]] = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(int(n) for n in self.nodes))
        object.__setattr__(
            self, "edges", frozenset((int(s), int(r), int(d)) for s, r, d in self.edges)
        )

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def edge_map(self) -> dict[tuple[int, int], int]:
        """Relation label per occupied ordered ``(src, dst)`` pair."""
        return {(s, d): r for s, r, d in self.edges}

    def label_triples(self) -> list[tuple[int, int, int]]:
        """Edges as (src label, rel, dst label), for order-insensitive comparison."""
        return sorted((self.nodes[s], r, self.nodes[d]) for s, r, d in self.edges)


def validate_graph(g: SceneGraph, v: Vocabulary) -> SceneGraph:
    """Return ``g`` unchanged if all structural invariants hold.

    Raises :class:`OutOfRangeLabel`, :class:`SelfLoop`, or
    :class:`DuplicateDirectedEdge` naming the offending node or edge.
    """
    if g.num_nodes < 1:
        raise DataError("graph must have at least one node")
    for i, lab in enumerate(g.nodes):
        if not 0 <= lab < v.num_objects:
            raise OutOfRangeLabel(f"node {i} has object label {lab} outside [0, {v.num_objects})")
    seen_pairs: set[tuple[int, int]] = set()
    for s, r, d in sorted(g.edges):
        if not (0 <= s < g.num_nodes and 0 <= d < g.num_nodes):
            raise OutOfRangeLabel(f"edge ({s}, {r}, {d}) references a missing node")
        if s == d:
            raise SelfLoop(f"edge ({s}, {r}, {d}) is a self-loop on node {s}")
        if not 0 <= r < v.num_relations:
            raise OutOfRangeLabel(f"edge ({s}, {r}, {d}) has relation label outside [0, {v.num_relations})")
        if (s, d) in seen_pairs:
            raise DuplicateDirectedEdge(f"more than one edge on ordered pair ({s}, {d})")
        seen_pairs.add((s, d))
    return g


class OrderKind(str, enum.Enum):
    BFS = "bfs"
    HIERARCHICAL = "hierarchical"
    RANDOM = "random"


@dataclass(frozen=True)
class OrderingScheme:
    """How nodes are permuted before a graph is serialized.

    ``tier_map`` (hierarchical only) maps object-category index to tier
    rank; lower tiers come first.  ``seed`` makes a bare ``order_nodes``
    call deterministic; callers that need fresh draws pass their own RNG.
    """

    kind: OrderKind = OrderKind.RANDOM
    tier_map: Optional[Mapping[int, int]] = None
    seed: int = 0

    def to_json(self) -> dict:
        return {
            "kind": self.kind.value,
            "tier_map": {str(k): v for k, v in self.tier_map.items()} if self.tier_map else None,
            "seed": self.seed,
        }

    @staticmethod
    def from_json(obj: dict) -> "OrderingScheme":
        tiers = obj.get("tier_map")
        return OrderingScheme(
            kind=OrderKind(obj["kind"]),
            tier_map={int(k): int(v) for k, v in tiers.items()} if tiers else None,
            seed=int(obj.get("seed", 0)),
        )


def bfs_order(g: SceneGraph, root: int) -> list[int]:
    """BFS over the undirected skeleton from ``root``.

    Neighbors are visited in ascending node-index order; once a component
    is exhausted, the lowest-index unvisited node starts the next one.
    """
    neighbors: list[set[int]] = [set() for _ in g.nodes]
    for s, _, d in g.edges:
        neighbors[s].add(d)
        neighbors[d].add(s)
    visited = [False] * g.num_nodes
    order: list[int] = []

    def run(start: int) -> None:
        queue = deque([start])
        visited[start] = True
        while queue:
            u = queue.popleft()
            order.append(u)
            for w in sorted(neighbors[u]):
                if not visited[w]:
                    visited[w] = True
                    queue.append(w)

    run(root)
    for u in range(g.num_nodes):
        if not visited[u]:
            run(u)
    return order


def order_nodes(
    g: SceneGraph,
    scheme: OrderingScheme,
    rng: Optional[np.random.Generator] = None,
) -> tuple[int, ...]:
    """Draw a node permutation for ``g`` under the given scheme.

    Returns ``order`` such that ``order[t]`` is the original index of the
    node placed at position ``t``.  With ``rng=None`` a generator seeded
    from ``scheme.seed`` is used, so repeated calls are deterministic.
    """
    if rng is None:
        rng = np.random.default_rng(scheme.seed)
    m = g.num_nodes
    if scheme.kind is OrderKind.BFS:
        root = int(rng.integers(m))
        return tuple(bfs_order(g, root))
    if scheme.kind is OrderKind.HIERARCHICAL:
        if scheme.tier_map is None:
            raise MissingTier("hierarchical ordering needs a tier_map")
        for lab in set(g.nodes):
            if lab not in scheme.tier_map:
                raise MissingTier(f"tier_map has no tier for object category {lab}")
        shuffled = rng.permutation(m)
        return tuple(sorted(shuffled, key=lambda i: scheme.tier_map[g.nodes[i]]))
    if scheme.kind is OrderKind.RANDOM:
        return tuple(int(i) for i in rng.permutation(m))
    raise DataError(f"unknown ordering kind {scheme.kind}")


@dataclass(frozen=True)
class GraphSequence:
    """Serialized form of a graph under some node permutation.

    ``node_seq`` lists the node categories in permuted order and ends with
    the EOS token.  For the node at position ``i`` (0-based), ``edges_to[i]``
    and ``edges_from[i]`` hold ``i`` labels: slot ``j`` is the relation on
    the edge from/to the earlier node at position ``j``, or NO_EDGE.
    """

    node_seq: tuple[int, ...]
    edges_to: tuple[tuple[int, ...], ...]
    edges_from: tuple[tuple[int, ...], ...]

    @property
    def num_nodes(self) -> int:
        return len(self.node_seq) - 1


def encode_sequence(g: SceneGraph, order: Sequence[int], v: Vocabulary) -> GraphSequence:
    """Serialize ``g`` under the permutation ``order``; EOS is appended.

    For the node placed at position ``i``, slot ``j < i`` holds the label
    of the edge between it and the node placed at position ``j``:
    ``edges_to[i][j]`` for the edge arriving at node ``i`` and
    ``edges_from[i][j]`` for the edge leaving it, NO_EDGE when absent.
    """
    m = g.num_nodes
    if sorted(order) != list(range(m)):
        raise MalformedSequence(f"order {order!r} is not a permutation of {m} nodes")
    emap = g.edge_map()
    node_seq = tuple(g.nodes[o] for o in order) + (v.node_eos,)
    edges_to: list[tuple[int, ...]] = []
    edges_from: list[tuple[int, ...]] = []
    for i in range(m):
        to_i = tuple(emap.get((order[j], order[i]), v.no_edge) for j in range(i))
        from_i = tuple(emap.get((order[i], order[j]), v.no_edge) for j in range(i))
        edges_to.append(to_i)
        edges_from.append(from_i)
    return GraphSequence(node_seq, tuple(edges_to), tuple(edges_from))


def decode_sequence(seq: GraphSequence, v: Vocabulary) -> SceneGraph:
    """Rebuild a graph from its serialized form; inverse of the encoder.

    Node positions become node indices.  Raises
    :class:`MalformedSequence` on a missing/early EOS, a slot list of the
    wrong length, or any label outside its valid range.
    """
    if not seq.node_seq or seq.node_seq[-1] != v.node_eos:
        raise MalformedSequence("node sequence must end with EOS")
    labels = seq.node_seq[:-1]
    m = len(labels)
    if m < 1:
        raise MalformedSequence("sequence encodes an empty graph")
    for i, lab in enumerate(labels):
        if not 0 <= lab < v.num_objects:
            raise MalformedSequence(f"position {i} has non-category node token {lab}")
    if len(seq.edges_to) != m or len(seq.edges_from) != m:
        raise MalformedSequence("need one slot list per node in each direction")
    edges: set[tuple[int, int, int]] = set()
    for i in range(m):
        for name, slots, flip in (("edges_to", seq.edges_to[i], True),
                                  ("edges_from", seq.edges_from[i], False)):
            if len(slots) != i:
                raise MalformedSequence(f"{name}[{i}] has {len(slots)} slots, expected {i}")
            for j, lab in enumerate(slots):
                if lab == v.no_edge:
                    continue
                if not 0 <= lab < v.num_relations:
                    raise MalformedSequence(f"{name}[{i}][{j}] has non-category edge token {lab}")
                edges.add((j, lab, i) if flip else (i, lab, j))
    return SceneGraph(labels, frozenset(edges))


def sequence_element_count(m: int) -> int:
    """Number of modelled elements for an ``m``-node graph.

    ``m`` node predictions (with EOS replacing the first node, which is
    drawn from the prior) plus ``m * (m - 1)`` edge slots: ``m ** 2``.
    """
    return m * m
