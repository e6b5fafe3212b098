import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sggen.errors import DataError
from sggen.graphs import (
    DuplicateDirectedEdge,
    GraphSequence,
    MalformedSequence,
    MissingTier,
    OrderKind,
    OrderingScheme,
    OutOfRangeLabel,
    SceneGraph,
    SelfLoop,
    Vocabulary,
    bfs_order,
    decode_sequence,
    encode_sequence,
    order_nodes,
    sequence_element_count,
    validate_graph,
)

from conftest import permute_graph, random_graph


# ---------------------------------------------------------------- vocabulary

def test_reserved_token_indices(small_vocab):
    v = small_vocab
    assert v.num_objects == 4 and v.num_relations == 3
    assert v.node_eos == 4
    assert v.node_pad == 5
    assert v.no_edge == 3
    assert v.edge_sos == 4
    assert v.edge_pad == 5


def test_vocabulary_rejects_duplicates_and_empty():
    with pytest.raises(DataError):
        Vocabulary(("a", "a"), ("r",))
    with pytest.raises(DataError):
        Vocabulary(("a",), ())


def test_label_lookup(small_vocab):
    assert small_vocab.object_index("man") == 1
    assert small_vocab.relation_index("wearing") == 1
    with pytest.raises(OutOfRangeLabel):
        small_vocab.object_index("submarine")


def test_vocab_digest_tracks_content(small_vocab):
    same = Vocabulary(small_vocab.object_labels, small_vocab.relation_labels)
    other = Vocabulary(("x",) + small_vocab.object_labels[1:], small_vocab.relation_labels)
    assert small_vocab.digest() == same.digest()
    assert small_vocab.digest() != other.digest()


# ---------------------------------------------------------------- validation

def test_validate_minimal_graph(small_vocab):
    g = SceneGraph((1, 2), frozenset({(0, 1, 1)}))  # man --wearing--> shirt
    assert validate_graph(g, small_vocab) is g


def test_validate_self_loop(small_vocab):
    g = SceneGraph((1,), frozenset({(0, 0, 0)}))
    with pytest.raises(SelfLoop):
        validate_graph(g, small_vocab)


def test_validate_duplicate_directed_edge(small_vocab):
    g = SceneGraph((1, 2), frozenset({(0, 0, 1), (0, 2, 1)}))
    with pytest.raises(DuplicateDirectedEdge):
        validate_graph(g, small_vocab)


def test_validate_opposite_directions_ok(small_vocab):
    g = SceneGraph((1, 2), frozenset({(0, 0, 1), (1, 2, 0)}))
    assert validate_graph(g, small_vocab) is g


def test_validate_out_of_range(small_vocab):
    with pytest.raises(OutOfRangeLabel):
        validate_graph(SceneGraph((9,)), small_vocab)
    with pytest.raises(OutOfRangeLabel):
        validate_graph(SceneGraph((0, 1), frozenset({(0, 7, 1)})), small_vocab)
    with pytest.raises(OutOfRangeLabel):
        validate_graph(SceneGraph((0, 1), frozenset({(0, 0, 5)})), small_vocab)
    with pytest.raises(DataError):
        validate_graph(SceneGraph(()), small_vocab)


# ----------------------------------------------------------------- orderings

@pytest.mark.parametrize("kind", list(OrderKind))
def test_single_node_any_scheme(kind):
    g = SceneGraph((0,))
    scheme = OrderingScheme(kind=kind, tier_map={0: 0}, seed=7)
    assert order_nodes(g, scheme) == (0,)


def test_bfs_path_hand_trace():
    # path 0-1-2 rooted at 0 must come out in index order
    g = SceneGraph((0, 0, 0), frozenset({(0, 0, 1), (1, 0, 2)}))
    assert bfs_order(g, root=0) == [0, 1, 2]
    assert bfs_order(g, root=1) == [1, 0, 2]
    assert bfs_order(g, root=2) == [2, 1, 0]


def test_bfs_uses_undirected_traversal_and_ascending_neighbors():
    # star with edges pointing INTO the hub: 1->0, 2->0, 3->0
    g = SceneGraph((0,) * 4, frozenset({(1, 0, 0), (2, 0, 0), (3, 0, 0)}))
    assert bfs_order(g, root=0) == [0, 1, 2, 3]


def test_bfs_appends_disconnected_components():
    g = SceneGraph((0,) * 4, frozenset({(2, 0, 3)}))
    assert bfs_order(g, root=3) == [3, 2, 0, 1]


def test_hierarchical_tiers():
    # labels: 0=sky tier 0, 1=man tier 1, 2=shirt tier 2
    g = SceneGraph((2, 0, 1))
    scheme = OrderingScheme(OrderKind.HIERARCHICAL, tier_map={0: 0, 1: 1, 2: 2}, seed=3)
    order = order_nodes(g, scheme)
    assert [g.nodes[i] for i in order] == [0, 1, 2]


def test_hierarchical_tie_break_is_seeded():
    g = SceneGraph((1, 1, 1, 1, 0))
    scheme_a = OrderingScheme(OrderKind.HIERARCHICAL, tier_map={0: 0, 1: 1}, seed=11)
    scheme_b = OrderingScheme(OrderKind.HIERARCHICAL, tier_map={0: 0, 1: 1}, seed=12)
    a = order_nodes(g, scheme_a)
    assert a == order_nodes(g, scheme_a)
    assert a[0] == 4  # the lone tier-0 node leads regardless of tie-break
    orders = {order_nodes(g, OrderingScheme(OrderKind.HIERARCHICAL, {0: 0, 1: 1}, s))
              for s in range(20)}
    assert len(orders) > 1  # ties genuinely shuffled


def test_missing_tier():
    g = SceneGraph((0, 1))
    with pytest.raises(MissingTier):
        order_nodes(g, OrderingScheme(OrderKind.HIERARCHICAL, tier_map={0: 0}))
    with pytest.raises(MissingTier):
        order_nodes(g, OrderingScheme(OrderKind.HIERARCHICAL, tier_map=None))


def test_orderings_are_permutations_and_seed_deterministic():
    rng = np.random.default_rng(0)
    for seed in range(10):
        g = random_graph(rng, num_objects=5, num_relations=3)
        for kind in (OrderKind.BFS, OrderKind.RANDOM):
            scheme = OrderingScheme(kind, seed=seed)
            order = order_nodes(g, scheme)
            assert sorted(order) == list(range(g.num_nodes))
            assert order == order_nodes(g, scheme)


def test_ordering_scheme_json_round_trip():
    scheme = OrderingScheme(OrderKind.HIERARCHICAL, tier_map={0: 0, 3: 1}, seed=9)
    assert OrderingScheme.from_json(scheme.to_json()) == scheme
    plain = OrderingScheme(OrderKind.BFS, seed=2)
    assert OrderingScheme.from_json(plain.to_json()) == plain


# --------------------------------------------------------------------- codec

def test_encode_wearing_example(small_vocab):
    v = small_vocab
    g = SceneGraph((1, 2), frozenset({(0, 1, 1)}))  # man --wearing--> shirt
    seq = encode_sequence(g, (0, 1), v)
    assert seq.node_seq == (1, 2, v.node_eos)
    assert seq.edges_to == ((), (1,))        # wearing arrives at the shirt
    assert seq.edges_from == ((), (v.no_edge,))
    assert seq.num_nodes == 2


def test_encode_reversed_permutation(small_vocab):
    v = small_vocab
    g = SceneGraph((1, 2), frozenset({(0, 1, 1)}))
    seq = encode_sequence(g, (1, 0), v)
    assert seq.node_seq == (2, 1, v.node_eos)
    # now the man comes second; his outgoing edge targets the earlier shirt
    assert seq.edges_to == ((), (v.no_edge,))
    assert seq.edges_from == ((), (1,))


def test_encode_single_node(small_vocab):
    seq = encode_sequence(SceneGraph((3,)), (0,), small_vocab)
    assert seq.node_seq == (3, small_vocab.node_eos)
    assert seq.edges_to == ((),)
    assert seq.edges_from == ((),)


def test_encode_edgeless_slot_counts(small_vocab):
    v = small_vocab
    seq = encode_sequence(SceneGraph((0, 1, 2)), (0, 1, 2), v)
    assert [len(s) for s in seq.edges_to] == [0, 1, 2]
    assert [len(s) for s in seq.edges_from] == [0, 1, 2]
    assert all(lab == v.no_edge for slots in seq.edges_to for lab in slots)
    assert all(lab == v.no_edge for slots in seq.edges_from for lab in slots)


def test_encode_rejects_non_permutation(small_vocab):
    g = SceneGraph((0, 1))
    with pytest.raises(MalformedSequence):
        encode_sequence(g, (0, 0), small_vocab)
    with pytest.raises(MalformedSequence):
        encode_sequence(g, (0,), small_vocab)


def test_decode_single_node(small_vocab):
    seq = GraphSequence((2, small_vocab.node_eos), ((),), ((),))
    g = decode_sequence(seq, small_vocab)
    assert g == SceneGraph((2,))


def test_decode_malformed(small_vocab):
    v = small_vocab
    with pytest.raises(MalformedSequence):
        decode_sequence(GraphSequence((1, 2), ((), ()), ((), ())), v)  # no EOS
    with pytest.raises(MalformedSequence):
        decode_sequence(GraphSequence((v.node_eos,), (), ()), v)  # empty graph
    with pytest.raises(MalformedSequence):
        decode_sequence(GraphSequence((1, 2, v.node_eos), ((), (0, 0)), ((), (0,))), v)
    with pytest.raises(MalformedSequence):
        decode_sequence(GraphSequence((1, v.node_eos, 2), ((), ()), ((), ())), v)
    with pytest.raises(MalformedSequence):
        decode_sequence(GraphSequence((1, 2, v.node_eos), ((), (v.edge_pad,)), ((), (0,))), v)


def test_round_trip_identity_permutation(small_vocab):
    g = SceneGraph((1, 2, 0), frozenset({(0, 1, 1), (2, 0, 0), (1, 2, 2)}))
    seq = encode_sequence(g, (0, 1, 2), small_vocab)
    assert decode_sequence(seq, small_vocab) == g


def test_round_trip_1000_random_graphs():
    v = Vocabulary(tuple(f"o{i}" for i in range(7)), tuple(f"r{i}" for i in range(4)))
    rng = np.random.default_rng(20240817)
    for _ in range(1000):
        g = random_graph(rng, v.num_objects, v.num_relations)
        order = tuple(int(i) for i in rng.permutation(g.num_nodes))
        decoded = decode_sequence(encode_sequence(g, order, v), v)
        assert decoded == permute_graph(g, order)


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_round_trip_property(seed):
    v = Vocabulary(tuple(f"o{i}" for i in range(5)), tuple(f"r{i}" for i in range(3)))
    rng = np.random.default_rng(seed)
    g = random_graph(rng, v.num_objects, v.num_relations, max_nodes=6, edge_prob=0.4)
    order = tuple(int(i) for i in rng.permutation(g.num_nodes))
    assert decode_sequence(encode_sequence(g, order, v), v) == permute_graph(g, order)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_permutation_invariance_of_content(seed):
    v = Vocabulary(tuple(f"o{i}" for i in range(5)), tuple(f"r{i}" for i in range(3)))
    rng = np.random.default_rng(seed)
    g = random_graph(rng, v.num_objects, v.num_relations, max_nodes=6)
    pi_a = tuple(int(i) for i in rng.permutation(g.num_nodes))
    pi_b = tuple(int(i) for i in rng.permutation(g.num_nodes))
    ga = decode_sequence(encode_sequence(g, pi_a, v), v)
    gb = decode_sequence(encode_sequence(g, pi_b, v), v)
    assert sorted(ga.nodes) == sorted(gb.nodes)
    assert ga.label_triples() == gb.label_triples()


def test_sequence_element_count():
    assert sequence_element_count(1) == 1
    assert sequence_element_count(2) == 4
    assert sequence_element_count(5) == 25
