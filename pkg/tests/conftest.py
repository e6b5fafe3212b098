"""Shared fixtures and random-graph helpers used across the test suite."""

import numpy as np
import pytest

from sggen.graphs import SceneGraph, Vocabulary


@pytest.fixture
def small_vocab() -> Vocabulary:
    return Vocabulary(
        object_labels=("sky", "man", "shirt", "dog"),
        relation_labels=("on", "wearing", "near"),
    )


def random_graph(rng: np.random.Generator, num_objects: int, num_relations: int,
                 max_nodes: int = 8, edge_prob: float = 0.3) -> SceneGraph:
    """Uniformly messy random graph for property tests."""
    m = int(rng.integers(1, max_nodes + 1))
    nodes = tuple(int(x) for x in rng.integers(0, num_objects, size=m))
    edges = set()
    for s in range(m):
        for d in range(m):
            if s != d and rng.random() < edge_prob:
                edges.add((s, int(rng.integers(0, num_relations)), d))
    return SceneGraph(nodes, frozenset(edges))


def permute_graph(g: SceneGraph, order) -> SceneGraph:
    """Relabel nodes so that original node order[t] becomes node t."""
    pos = {orig: t for t, orig in enumerate(order)}
    nodes = tuple(g.nodes[o] for o in order)
    edges = frozenset((pos[s], r, pos[d]) for s, r, d in g.edges)
    return SceneGraph(nodes, edges)
