from collections import Counter

import numpy as np
import pytest

from sggen.errors import DataError
from sggen.graphs import SceneGraph, Vocabulary, validate_graph
from sggen.evaluation import (
    CountKl,
    MarginalBaseline,
    auroc,
    corrupt_dataset,
    corrupt_graph,
    count_kl,
    dataset_stats,
    occurrence_l1,
)

from conftest import random_graph


@pytest.fixture
def square_graph():
    return SceneGraph(nodes=(0, 1, 2, 3),
                      edges=frozenset({(0, 0, 1), (1, 1, 2),
                                       (2, 2, 3), (3, 0, 0)}))


# ---------------------------------------------------------- corruption

def test_fraction_zero_is_identity(small_vocab, square_graph):
    out = corrupt_dataset([square_graph], 0.0, small_vocab, seed=1)
    assert out == [square_graph]


def test_fraction_one_changes_every_label(small_vocab, square_graph):
    rng = np.random.default_rng(0)
    for _ in range(20):
        out = corrupt_graph(square_graph, 1.0, small_vocab, rng)
        assert all(a != b for a, b in zip(out.nodes, square_graph.nodes))
        orig = square_graph.edge_map()
        new = out.edge_map()
        assert set(orig) == set(new)          # endpoints preserved
        assert all(new[k] != orig[k] for k in orig)
        validate_graph(out, small_vocab)


def test_half_fraction_changes_ceiling_counts(small_vocab, square_graph):
    rng = np.random.default_rng(3)
    out = corrupt_graph(square_graph, 0.5, small_vocab, rng)
    node_changes = sum(a != b for a, b in zip(out.nodes, square_graph.nodes))
    edge_changes = sum(out.edge_map()[k] != square_graph.edge_map()[k]
                       for k in square_graph.edge_map())
    assert node_changes == 2 and edge_changes == 2


def test_ceiling_rounds_up(small_vocab):
    g = SceneGraph(nodes=(0, 1, 2), edges=frozenset({(0, 0, 1)}))
    rng = np.random.default_rng(4)
    out = corrupt_graph(g, 0.4, small_vocab, rng)   # ceil(1.2)=2, ceil(0.4)=1
    assert sum(a != b for a, b in zip(out.nodes, g.nodes)) == 2
    assert next(iter(out.edges))[1] != 0


def test_corruption_is_seed_reproducible(small_vocab):
    rng = np.random.default_rng(8)
    graphs = [random_graph(rng, 4, 3) for _ in range(10)]
    a = corrupt_dataset(graphs, 0.5, small_vocab, seed=7)
    b = corrupt_dataset(graphs, 0.5, small_vocab, seed=7)
    c = corrupt_dataset(graphs, 0.5, small_vocab, seed=8)
    assert a == b
    assert a != c


def test_corruption_needs_alternative_labels():
    vocab = Vocabulary(object_labels=("only",), relation_labels=("r", "s"))
    g = SceneGraph(nodes=(0,), edges=frozenset())
    with pytest.raises(DataError):
        corrupt_graph(g, 1.0, vocab, np.random.default_rng(0))
    with pytest.raises(DataError):
        corrupt_graph(g, 1.5, vocab, np.random.default_rng(0))


# --------------------------------------------------------------- auroc

def test_auroc_separable_and_identical():
    assert auroc([5.0, 6.0], [1.0, 2.0]) == 1.0
    assert auroc([1.0, 2.0], [5.0, 6.0]) == 0.0
    assert auroc([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.5


def test_auroc_hand_case():
    assert auroc([3.0, 1.0], [2.0, 0.0]) == 0.75


def test_auroc_ties_count_half():
    assert auroc([1.0], [1.0]) == 0.5
    assert auroc([2.0, 1.0], [1.0]) == 0.75


def test_auroc_rejects_empty():
    with pytest.raises(DataError):
        auroc([], [1.0])


# ---------------------------------------------------------------- stats

def test_stats_single_graph_tables(small_vocab):
    g = SceneGraph(nodes=(0, 0, 1), edges=frozenset({(0, 2, 2)}))
    s = dataset_stats([g], small_vocab)
    assert s.object_occurrence[0] == pytest.approx(2 / 3)
    assert s.object_occurrence[1] == pytest.approx(1 / 3)
    assert s.co_occurrence == {(0, 1): 1.0}
    assert s.relation_occurrence[2] == 1.0
    np.testing.assert_allclose(s.count_dists[0], [0.0, 1.0])  # two instances
    np.testing.assert_allclose(s.count_dists[1], [1.0])
    assert s.mean_nodes == 3.0 and s.mean_edges == 1.0


def test_stats_tables_are_normalized(small_vocab):
    rng = np.random.default_rng(12)
    graphs = [random_graph(rng, 4, 3) for _ in range(50)]
    s = dataset_stats(graphs, small_vocab)
    assert s.object_occurrence.sum() == pytest.approx(1.0)
    assert s.relation_occurrence.sum() == pytest.approx(1.0)
    assert sum(s.co_occurrence.values()) == pytest.approx(1.0)
    for dist in s.count_dists.values():
        assert dist.sum() == pytest.approx(1.0)
    for (a, b) in s.co_occurrence:
        assert a < b


def test_stats_serialization(tmp_path, small_vocab):
    g = SceneGraph(nodes=(0, 1), edges=frozenset({(0, 1, 1)}))
    s = dataset_stats([g], small_vocab)
    text = s.to_text(small_vocab)
    assert "sky" in text and "wearing" in text
    path = tmp_path / "stats.jsonl"
    s.write_jsonl(path, small_vocab)
    assert len(path.read_text().strip().split("\n")) >= 4
    with pytest.raises(DataError):
        dataset_stats([], small_vocab)


def test_occurrence_l1(small_vocab):
    a = dataset_stats([SceneGraph(nodes=(0,), edges=frozenset())], small_vocab)
    b = dataset_stats([SceneGraph(nodes=(1,), edges=frozenset())], small_vocab)
    assert occurrence_l1(a, b) == pytest.approx(2.0)
    assert occurrence_l1(a, a) == 0.0


# ------------------------------------------------------------ count KL

def test_count_kl_identical_sets_is_zero(small_vocab):
    rng = np.random.default_rng(2)
    graphs = [random_graph(rng, 4, 3) for _ in range(20)]
    kl = count_kl(graphs, list(graphs), small_vocab)
    assert kl.mean == pytest.approx(0.0, abs=1e-12)
    assert all(v == pytest.approx(0.0, abs=1e-12) for v in kl.per_label.values())


def test_count_kl_hand_case(small_vocab):
    # Category 0 appears once per graph in A (3 graphs) and twice per
    # graph in B (2 graphs); bins 1..2 with add-one smoothing give
    # A=(4/5, 1/5), B=(1/4, 3/4).
    a = [SceneGraph(nodes=(0,), edges=frozenset()) for _ in range(3)]
    b = [SceneGraph(nodes=(0, 0), edges=frozenset()) for _ in range(2)]
    kl = count_kl(a, b, small_vocab)
    pa = np.array([4 / 5, 1 / 5])
    pb = np.array([1 / 4, 3 / 4])
    want = float(np.sum(pa * np.log(pa / pb)))
    assert kl.per_label[0] == pytest.approx(want, rel=1e-12)
    assert kl.mean == pytest.approx(want, rel=1e-12)


def test_count_kl_only_shared_categories(small_vocab):
    a = [SceneGraph(nodes=(0, 1), edges=frozenset())]
    b = [SceneGraph(nodes=(0, 2), edges=frozenset())]
    kl = count_kl(a, b, small_vocab)
    assert set(kl.per_label) == {0}
    recs = kl.to_records(small_vocab)
    assert recs[-1]["table"] == "count_kl_mean"
    with pytest.raises(DataError):
        count_kl([], b, small_vocab)


# ------------------------------------------------------------ baseline

def test_baseline_fit_and_sample_validity(small_vocab):
    rng = np.random.default_rng(44)
    graphs = [random_graph(rng, 4, 3, max_nodes=6, edge_prob=0.3)
              for _ in range(200)]
    base = MarginalBaseline.fit(graphs, small_vocab)
    assert base.size_dist.sum() == pytest.approx(1.0)
    assert base.object_probs.sum() == pytest.approx(1.0)
    assert 0.0 < base.edge_density < 1.0
    samples = base.sample(100, seed=3, vocab=small_vocab)
    assert len(samples) == 100
    for g in samples:
        validate_graph(g, small_vocab)
    again = base.sample(100, seed=3, vocab=small_vocab)
    assert samples == again


def test_baseline_matches_marginals_in_the_large(small_vocab):
    rng = np.random.default_rng(45)
    graphs = [random_graph(rng, 4, 3, max_nodes=6, edge_prob=0.3)
              for _ in range(300)]
    base = MarginalBaseline.fit(graphs, small_vocab)
    samples = base.sample(3000, seed=9, vocab=small_vocab)
    got = dataset_stats(samples, small_vocab)
    want = dataset_stats(graphs, small_vocab)
    assert occurrence_l1(got, want) < 0.05
    sizes = Counter(len(g.nodes) for g in samples)
    for m, p in enumerate(base.size_dist, start=1):
        assert sizes.get(m, 0) / 3000 == pytest.approx(p, abs=0.03)


def test_baseline_single_node_corpus(small_vocab):
    graphs = [SceneGraph(nodes=(2,), edges=frozenset())] * 5
    base = MarginalBaseline.fit(graphs, small_vocab)
    assert base.edge_density == 0.0
    samples = base.sample(10, seed=0, vocab=small_vocab)
    assert all(g.nodes == (2,) and not g.edges for g in samples)
