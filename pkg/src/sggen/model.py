"""Hierarchical autoregressive model over scene-graph sequences.

A graph is generated one node at a time.  Three "history" GRU stacks read
the same per-node summary vector (node embedding plus both edge-slot
lists, padded to fixed width); their states condition, respectively, the
node-category head and the two edge-sequence generators.  When node i
arrives, an edge GRU per direction starts from the matching history state
(copied per layer) and walks the earlier nodes j = 1..i-1, emitting a
relation-or-no-edge class for the pair; the generated "to" label at slot
j is fed to the "from" generator at the same slot, so the factorization
p(node) * p(edges_to | node) * p(edges_from | node, edges_to) is explicit
in the wiring.

The first node has no history; its category comes from a smoothed
empirical prior over first nodes under the chosen ordering.  Likelihood
of a graph is the sum of cross-entropies of every decision (node steps
including the final EOS, both edge directions for every slot) plus
-log prior(first node).

Teacher-forced passes are batched: graphs are sorted by size so every
timestep works on a contiguous prefix of rows and no masking or wasted
compute is needed; the same code path yields the training loss (on tape)
and per-graph scores (off tape), so the two agree to float precision.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .autodiff import (
    Tape,
    Tensor,
    add,
    concat_last,
    concat_rows,
    cross_entropy_values,
    embed_slots,
    rows,
    slice_rows,
    softmax_cross_entropy,
)
from .errors import DataError, NumericError
from .graphs import (
    GraphSequence,
    MalformedSequence,
    OrderingScheme,
    SceneGraph,
    Vocabulary,
    decode_sequence,
    encode_sequence,
    order_nodes,
)
from .layers import (
    Embedding,
    GruStack,
    Linear,
    Mlp,
    gru_stack_step,
    init_embedding,
    init_gru_stack,
    init_linear,
    init_mlp,
    linear_forward,
    mlp_forward,
)


class TooManyNodes(DataError):
    pass


class PriorMissing(DataError):
    pass


class PartialTooLarge(DataError):
    pass


class EmptyDataset(DataError):
    pass


class ZeroPriorProbability(NumericError):
    pass


GRU_VARIANT = "cho-reset-on-hidden-candidate"
CHECKPOINT_MAGIC = b"SGCK"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Architecture sizes.  Defaults follow the reference configuration:
    node/edge embeddings 64/8, four GRU layers of width 128 everywhere."""

    max_nodes: int = 16
    node_embed_dim: int = 64
    edge_embed_dim: int = 8
    hidden_size: int = 128
    num_layers: int = 4
    mlp_hidden: int = 128

    def __post_init__(self):
        if self.max_nodes < 2:
            raise DataError("max_nodes must be at least 2")

    @property
    def history_input_dim(self) -> int:
        return self.node_embed_dim + 2 * (self.max_nodes - 1) * self.edge_embed_dim

    @property
    def edge_to_input_dim(self) -> int:
        return 2 * self.edge_embed_dim + 2 * self.node_embed_dim

    @property
    def edge_from_input_dim(self) -> int:
        return self.edge_to_input_dim + self.edge_embed_dim

    def to_json(self) -> dict:
        return {
            "max_nodes": self.max_nodes,
            "node_embed_dim": self.node_embed_dim,
            "edge_embed_dim": self.edge_embed_dim,
            "hidden_size": self.hidden_size,
            "num_layers": self.num_layers,
            "mlp_hidden": self.mlp_hidden,
        }

    @staticmethod
    def from_json(obj: dict) -> "ModelConfig":
        return ModelConfig(**{k: int(v) for k, v in obj.items()})


@dataclass
class ModelParams:
    """All learnable tensors plus the bits needed to use them.

    ``first_node_prior`` is a float64 categorical over object categories;
    it stays ``None`` until estimated from data.  ``ordering`` records the
    node-ordering scheme the model was trained under so scoring and prior
    estimation default to the same convention.
    """

    config: ModelConfig
    vocab: Vocabulary
    emb_node: Embedding
    emb_edge: Embedding
    gru_o: GruStack
    gru_eto: GruStack
    gru_efrom: GruStack
    mlp_node: Mlp
    egru_to: GruStack
    egru_from: GruStack
    head_to: Linear
    head_from: Linear
    first_node_prior: Optional[np.ndarray] = None
    ordering: Optional[OrderingScheme] = None

    def named_tensors(self) -> dict[str, Tensor]:
        out: list[tuple[str, Tensor]] = []
        out += self.emb_node.named("emb_node")
        out += self.emb_edge.named("emb_edge")
        out += self.gru_o.named("gru_o")
        out += self.gru_eto.named("gru_eto")
        out += self.gru_efrom.named("gru_efrom")
        out += self.mlp_node.named("mlp_node")
        out += self.egru_to.named("egru_to")
        out += self.egru_from.named("egru_from")
        out += self.head_to.named("head_to")
        out += self.head_from.named("head_from")
        return dict(out)

    @property
    def dtype(self):
        return self.emb_node.table.data.dtype

    def parameter_count(self) -> int:
        return sum(t.data.size for t in self.named_tensors().values())


def init_model(config: ModelConfig, vocab: Vocabulary, seed: int,
               dtype=np.float32) -> ModelParams:
    """Fresh parameters; same seed gives bit-identical values.

    Head sizes: node head C+1 (categories plus EOS), edge heads R+1
    (relations plus no-edge).  Embedding tables carry the reserved rows
    (node: EOS and PAD; edge: no-edge, SOS, PAD).  The prior is left
    unset until estimated.
    """
    rng = np.random.default_rng(seed)
    c, r = vocab.num_objects, vocab.num_relations
    hid, nl = config.hidden_size, config.num_layers
    return ModelParams(
        config=config,
        vocab=vocab,
        emb_node=init_embedding(rng, c + 2, config.node_embed_dim, dtype),
        emb_edge=init_embedding(rng, r + 3, config.edge_embed_dim, dtype),
        gru_o=init_gru_stack(rng, config.history_input_dim, hid, nl, dtype),
        gru_eto=init_gru_stack(rng, config.history_input_dim, hid, nl, dtype),
        gru_efrom=init_gru_stack(rng, config.history_input_dim, hid, nl, dtype),
        mlp_node=init_mlp(rng, hid, config.mlp_hidden, c + 1, dtype),
        egru_to=init_gru_stack(rng, config.edge_to_input_dim, hid, nl, dtype),
        egru_from=init_gru_stack(rng, config.edge_from_input_dim, hid, nl, dtype),
        head_to=init_linear(rng, hid, r + 1, dtype),
        head_from=init_linear(rng, hid, r + 1, dtype),
    )


def estimate_first_node_prior(graphs: Sequence[SceneGraph], scheme: OrderingScheme,
                              vocab: Vocabulary,
                              rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Laplace-smoothed histogram of the first node category.

    One ordering draw per graph from a generator seeded by the scheme (or
    the caller's), so repeated passes are reproducible.  Smoothing keeps
    every category's probability positive: (count + 1) / (n + C).
    """
    if not graphs:
        raise EmptyDataset("cannot estimate a prior from zero graphs")
    if rng is None:
        rng = np.random.default_rng(scheme.seed)
    counts = np.zeros(vocab.num_objects, dtype=np.float64)
    for g in graphs:
        order = order_nodes(g, scheme, rng)
        counts[g.nodes[order[0]]] += 1.0
    return (counts + 1.0) / (counts.sum() + vocab.num_objects)


# ---------------------------------------------------------------------------
# Batched teacher forcing
# ---------------------------------------------------------------------------

@dataclass
class _Batch:
    """Size-sorted, slot-padded arrays for one batch of sequences.

    Graphs are sorted by node count descending, so the rows that are
    still alive at timestep s (graphs with at least s+1 nodes) form the
    prefix [0:alive[s]] everywhere.
    """

    nodes: np.ndarray        # (B, T) node categories, PAD beyond each graph
    node_targets: np.ndarray  # (B, T) next category or EOS
    eto: np.ndarray          # (B, T, N_max-1) labels into node s, PAD filler
    efrom: np.ndarray        # (B, T, N_max-1) labels out of node s, PAD filler
    sizes: np.ndarray        # (B,) node counts, descending
    alive: np.ndarray        # (T+1,) rows with size > s
    orig: np.ndarray         # (B,) original position of each sorted row


def _prepare_batch(params: ModelParams, seqs: Sequence[GraphSequence]) -> _Batch:
    v, cfg = params.vocab, params.config
    if not seqs:
        raise EmptyDataset("empty batch")
    sizes = []
    for q in seqs:
        m = q.num_nodes
        if m < 1 or q.node_seq[-1] != v.node_eos:
            raise MalformedSequence("sequence must hold at least one node and end with EOS")
        if m > cfg.max_nodes:
            raise TooManyNodes(f"graph has {m} nodes, model caps at {cfg.max_nodes}")
        if len(q.edges_to) != m or len(q.edges_from) != m:
            raise MalformedSequence("need one slot list per node in each direction")
        for i in range(m):
            if len(q.edges_to[i]) != i or len(q.edges_from[i]) != i:
                raise MalformedSequence(f"node {i} slot lists must have {i} entries")
        sizes.append(m)

    order = sorted(range(len(seqs)), key=lambda i: -sizes[i])
    bsz, t_max, s_max = len(seqs), max(sizes), cfg.max_nodes - 1
    nodes = np.full((bsz, t_max), v.node_pad, dtype=np.int64)
    node_targets = np.full((bsz, t_max), v.node_pad, dtype=np.int64)
    eto = np.full((bsz, t_max, s_max), v.edge_pad, dtype=np.int64)
    efrom = np.full((bsz, t_max, s_max), v.edge_pad, dtype=np.int64)
    for row, i in enumerate(order):
        q, m = seqs[i], sizes[i]
        nodes[row, :m] = q.node_seq[:m]
        node_targets[row, :m - 1] = q.node_seq[1:m]
        node_targets[row, m - 1] = v.node_eos
        for s in range(m):
            if s:
                eto[row, s, :s] = q.edges_to[s]
                efrom[row, s, :s] = q.edges_from[s]
    sorted_sizes = np.array([sizes[i] for i in order], dtype=np.int64)
    alive = np.array([(sorted_sizes > s).sum() for s in range(t_max + 1)], dtype=np.int64)
    return _Batch(nodes, node_targets, eto, efrom, sorted_sizes, alive,
                  np.array(order, dtype=np.int64))


@dataclass
class _ScoredStep:
    logits: Tensor       # (rows, classes)
    targets: np.ndarray  # (rows,)
    graph_ids: np.ndarray  # (rows,) original batch positions


def _teacher_forward(params: ModelParams, batch: _Batch
                     ) -> tuple[list[_ScoredStep], list[_ScoredStep]]:
    """Run the full teacher-forced pass; return node and edge logit groups.

    Each returned step carries its integer targets and the original graph
    index per row, so callers can either sum cross-entropies into one
    scalar (training) or bucket per-graph values (scoring).
    """
    v, cfg = params.vocab, params.config
    dtype = params.dtype
    t_max = batch.nodes.shape[1]
    alive = batch.alive
    hid = cfg.hidden_size

    def zeros(n):
        return Tensor(np.zeros((n, hid), dtype=dtype))

    state_o = [zeros(alive[0]) for _ in range(cfg.num_layers)]
    state_eto = [zeros(alive[0]) for _ in range(cfg.num_layers)]
    state_efrom = [zeros(alive[0]) for _ in range(cfg.num_layers)]
    eto_hist: list[list[Tensor]] = []    # per timestep, per layer
    efrom_hist: list[list[Tensor]] = []
    node_steps: list[_ScoredStep] = []

    for s in range(t_max):
        n = int(alive[s])
        state_o = [slice_rows(h, 0, n) for h in state_o]
        state_eto = [slice_rows(h, 0, n) for h in state_eto]
        state_efrom = [slice_rows(h, 0, n) for h in state_efrom]
        inp = concat_last([
            rows(params.emb_node.table, batch.nodes[:n, s]),
            embed_slots(params.emb_edge.table, batch.eto[:n, s]),
            embed_slots(params.emb_edge.table, batch.efrom[:n, s]),
        ])
        _, state_o = gru_stack_step(params.gru_o, inp, state_o)
        _, state_eto = gru_stack_step(params.gru_eto, inp, state_eto)
        _, state_efrom = gru_stack_step(params.gru_efrom, inp, state_efrom)
        eto_hist.append(state_eto)
        efrom_hist.append(state_efrom)
        node_steps.append(_ScoredStep(
            logits=mlp_forward(params.mlp_node, state_o[-1]),
            targets=batch.node_targets[:n, s],
            graph_ids=batch.orig[:n],
        ))

    edge_steps_out: list[_ScoredStep] = []
    if t_max > 1:
        # Row blocks ordered by timestep descending keep "active at slot j"
        # a prefix.  Block for timestep s holds the alive[s] graphs that
        # actually have a node at position s.
        blocks = list(range(t_max - 1, 0, -1))
        init_to = [concat_rows([slice_rows(eto_hist[s - 1][l], 0, int(alive[s]))
                                for s in blocks])
                   for l in range(cfg.num_layers)]
        init_from = [concat_rows([slice_rows(efrom_hist[s - 1][l], 0, int(alive[s]))
                                  for s in blocks])
                     for l in range(cfg.num_layers)]
        row_step = np.concatenate([np.full(int(alive[s]), s) for s in blocks])
        row_graph = np.concatenate([np.arange(int(alive[s])) for s in blocks])
        total = row_step.size
        # rows with s > j are active at slot j
        active = np.array([(row_step > j).sum() for j in range(t_max)], dtype=np.int64)

        new_node_emb = rows(params.emb_node.table,
                            batch.nodes[row_graph, row_step])
        sos = np.full(total, v.edge_sos, dtype=np.int64)
        h_to, h_from = init_to, init_from
        prev_eto, prev_efrom = sos, sos

        for j in range(t_max - 1):
            k = int(active[j])
            if k == 0:
                break
            gr, st = row_graph[:k], row_step[:k]
            h_to = [slice_rows(h, 0, k) for h in h_to]
            h_from = [slice_rows(h, 0, k) for h in h_from]
            emb_prev_from = rows(params.emb_edge.table, prev_efrom[:k])
            emb_prev_to = rows(params.emb_edge.table, prev_eto[:k])
            emb_new = slice_rows(new_node_emb, 0, k)
            emb_old = rows(params.emb_node.table, batch.nodes[gr, j])
            base = concat_last([emb_prev_from, emb_prev_to, emb_new, emb_old])

            top_to, h_to = gru_stack_step(params.egru_to, base, h_to)
            eto_targets = batch.eto[gr, st, j]
            edge_steps_out.append(_ScoredStep(
                logits=linear_forward(params.head_to, top_to),
                targets=eto_targets,
                graph_ids=batch.orig[gr],
            ))

            inp_from = concat_last([base, rows(params.emb_edge.table, eto_targets)])
            top_from, h_from = gru_stack_step(params.egru_from, inp_from, h_from)
            edge_steps_out.append(_ScoredStep(
                logits=linear_forward(params.head_from, top_from),
                targets=batch.efrom[gr, st, j],
                graph_ids=batch.orig[gr],
            ))
            prev_eto, prev_efrom = eto_targets, batch.efrom[gr, st, j]

    return node_steps, edge_steps_out


def forward_loss(params: ModelParams, seqs: Sequence[GraphSequence]) -> Tensor:
    """Teacher-forced batch loss: mean over graphs of per-graph summed
    cross-entropy over all node steps (EOS included) and both edge
    directions of every slot.  The first node itself is not a model
    decision (it comes from the prior) so it contributes no term."""
    batch = _prepare_batch(params, seqs)
    node_steps, edge_steps_out = _teacher_forward(params, batch)
    inv_b = 1.0 / len(seqs)
    total: Optional[Tensor] = None
    for step in node_steps + edge_steps_out:
        w = np.full(step.targets.shape[0], inv_b, dtype=params.dtype)
        term = softmax_cross_entropy(step.logits, step.targets, weights=w)
        total = term if total is None else add(total, term)
    return total


def _score_batch(params: ModelParams, seqs: Sequence[GraphSequence]) -> np.ndarray:
    """Per-graph sums of teacher-forced cross-entropy (no prior term)."""
    batch = _prepare_batch(params, seqs)
    node_steps, edge_steps_out = _teacher_forward(params, batch)
    out = np.zeros(len(seqs), dtype=np.float64)
    for step in node_steps + edge_steps_out:
        vals = cross_entropy_values(step.logits.data, step.targets)
        np.add.at(out, step.graph_ids, vals.astype(np.float64))
    return out


def score_nll(params: ModelParams, g: SceneGraph, order: Optional[Sequence[int]] = None,
              rng: Optional[np.random.Generator] = None) -> float:
    """Negative log-likelihood of one graph in nats.

    Equals the teacher-forced loss of the singleton batch plus
    -log prior(first node).  Raises :class:`ZeroPriorProbability` when a
    manually-set prior assigns zero to the first node's category.
    """
    vals = score_nll_batch(params, [g], orders=None if order is None else [order],
                           rng=rng)
    if np.isinf(vals[0]):
        raise ZeroPriorProbability("prior probability of the first node is zero")
    return float(vals[0])


def score_nll_batch(params: ModelParams, graphs: Sequence[SceneGraph],
                    orders: Optional[Sequence[Sequence[int]]] = None,
                    rng: Optional[np.random.Generator] = None,
                    chunk: int = 128) -> np.ndarray:
    """NLL per graph; zero-prior first nodes yield +inf instead of raising."""
    if params.first_node_prior is None:
        raise PriorMissing("estimate or load a first-node prior before scoring")
    if orders is None:
        scheme = params.ordering or OrderingScheme()
        if rng is None:
            rng = np.random.default_rng(scheme.seed)
        orders = [order_nodes(g, scheme, rng) for g in graphs]
    seqs = [encode_sequence(g, o, params.vocab) for g, o in zip(graphs, orders)]
    out = np.zeros(len(graphs), dtype=np.float64)
    for lo in range(0, len(seqs), chunk):
        part = seqs[lo:lo + chunk]
        out[lo:lo + len(part)] = _score_batch(params, part)
    prior = params.first_node_prior
    for i, (g, o) in enumerate(zip(graphs, orders)):
        p = prior[g.nodes[o[0]]]
        if p <= 0.0:
            out[i] = np.inf
        else:
            out[i] += -np.log(p)
    return out


# ---------------------------------------------------------------------------
# Incremental generation
# ---------------------------------------------------------------------------

@dataclass
class ModelState:
    """Per-layer hidden states of the three history GRUs plus the number
    of node elements consumed so far.  Starts all-zero."""

    o: list[Tensor]
    eto: list[Tensor]
    efrom: list[Tensor]
    steps: int = 0


def init_state(params: ModelParams) -> ModelState:
    hid = params.config.hidden_size

    def zeros():
        return [Tensor(np.zeros((1, hid), dtype=params.dtype))
                for _ in range(params.config.num_layers)]

    return ModelState(zeros(), zeros(), zeros(), steps=0)


def history_step(params: ModelParams, state: ModelState,
                 node_cat: int, edges_to: Sequence[int],
                 edges_from: Sequence[int]) -> ModelState:
    """Feed one completed element (node plus its slot lists) into all
    three history GRUs.  Slot lists shorter than max_nodes-1 are padded
    with PAD; the first node passes empty lists."""
    cfg, v = params.config, params.vocab
    if state.steps >= cfg.max_nodes:
        raise TooManyNodes(f"history already holds {cfg.max_nodes} nodes")
    width = cfg.max_nodes - 1
    if len(edges_to) > width or len(edges_from) > width:
        raise MalformedSequence("more edge slots than max_nodes-1")
    eto = np.full((1, width), v.edge_pad, dtype=np.int64)
    efrom = np.full((1, width), v.edge_pad, dtype=np.int64)
    eto[0, :len(edges_to)] = edges_to
    efrom[0, :len(edges_from)] = edges_from
    inp = concat_last([
        rows(params.emb_node.table, np.array([node_cat], dtype=np.int64)),
        embed_slots(params.emb_edge.table, eto),
        embed_slots(params.emb_edge.table, efrom),
    ])
    _, o = gru_stack_step(params.gru_o, inp, state.o)
    _, eto_s = gru_stack_step(params.gru_eto, inp, state.eto)
    _, efrom_s = gru_stack_step(params.gru_efrom, inp, state.efrom)
    return ModelState(o, eto_s, efrom_s, state.steps + 1)


def node_step(params: ModelParams, state: ModelState) -> Tensor:
    """Logits over C+1 node classes (categories plus EOS)."""
    return mlp_forward(params.mlp_node, state.o[-1])


def _sample_class(logits: np.ndarray, rng: np.random.Generator,
                  temperature: float) -> int:
    z = logits.reshape(-1).astype(np.float64)
    if temperature <= 0.0:
        return int(z.argmax())
    z = z / temperature
    z -= z.max()
    p = np.exp(z)
    p /= p.sum()
    return int(rng.choice(p.size, p=p))


def edge_steps(params: ModelParams, state: ModelState, new_node_cat: int,
               prev_node_cats: Sequence[int],
               teacher_to: Optional[Sequence[int]] = None,
               teacher_from: Optional[Sequence[int]] = None,
               rng: Optional[np.random.Generator] = None,
               temperature: float = 1.0):
    """Generate or score the edge slots that attach one new node.

    Both edge GRUs start from a per-layer copy of the matching history
    state.  Slot j's "to" decision is made first and its label is part of
    the "from" input at the same slot, then both labels feed slot j+1.
    Returns (labels_to, labels_from, logits_to, logits_from).
    """
    v = params.vocab
    n_prev = len(prev_node_cats)
    h_to = list(state.eto)
    h_from = list(state.efrom)
    emb_new = rows(params.emb_node.table, np.array([new_node_cat], dtype=np.int64))
    prev_to_lab, prev_from_lab = v.edge_sos, v.edge_sos
    labels_to: list[int] = []
    labels_from: list[int] = []
    logits_to: list[Tensor] = []
    logits_from: list[Tensor] = []
    for j in range(n_prev):
        base = concat_last([
            rows(params.emb_edge.table, np.array([prev_from_lab], dtype=np.int64)),
            rows(params.emb_edge.table, np.array([prev_to_lab], dtype=np.int64)),
            emb_new,
            rows(params.emb_node.table, np.array([prev_node_cats[j]], dtype=np.int64)),
        ])
        top_to, h_to = gru_stack_step(params.egru_to, base, h_to)
        lg_to = linear_forward(params.head_to, top_to)
        logits_to.append(lg_to)
        if teacher_to is not None:
            lab_to = int(teacher_to[j])
        else:
            lab_to = _sample_class(lg_to.data, rng, temperature)
        labels_to.append(lab_to)

        inp_from = concat_last([
            base, rows(params.emb_edge.table, np.array([lab_to], dtype=np.int64))])
        top_from, h_from = gru_stack_step(params.egru_from, inp_from, h_from)
        lg_from = linear_forward(params.head_from, top_from)
        logits_from.append(lg_from)
        if teacher_from is not None:
            lab_from = int(teacher_from[j])
        else:
            lab_from = _sample_class(lg_from.data, rng, temperature)
        labels_from.append(lab_from)
        prev_to_lab, prev_from_lab = lab_to, lab_from
    return labels_to, labels_from, logits_to, logits_from


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_graph(params: ModelParams, seed=0, temperature: float = 1.0,
                 max_nodes: Optional[int] = None) -> tuple[SceneGraph, bool]:
    """Draw one graph; returns (graph, truncated).

    The first node comes from the prior; afterwards nodes are sampled
    from the node head until EOS.  ``truncated`` is True when the cap
    (default: the model's max_nodes) stopped generation instead of EOS.
    At temperature 0 every choice is the argmax (the prior draw included).
    """
    if params.first_node_prior is None:
        raise PriorMissing("estimate or load a first-node prior before sampling")
    v = params.vocab
    cap = params.config.max_nodes if max_nodes is None else min(max_nodes,
                                                                params.config.max_nodes)
    rng = _as_rng(seed)
    prior = params.first_node_prior
    if temperature <= 0.0:
        first = int(prior.argmax())
    else:
        first = int(rng.choice(v.num_objects, p=prior / prior.sum()))
    nodes = [first]
    slots_to: list[list[int]] = [[]]
    slots_from: list[list[int]] = [[]]
    state = history_step(params, init_state(params), first, [], [])
    truncated = False
    while True:
        cat = _sample_class(node_step(params, state).data, rng, temperature)
        if cat == v.node_eos:
            break
        if len(nodes) >= cap:
            truncated = True
            break
        lab_to, lab_from, _, _ = edge_steps(params, state, cat, nodes,
                                            rng=rng, temperature=temperature)
        nodes.append(cat)
        slots_to.append(lab_to)
        slots_from.append(lab_from)
        state = history_step(params, state, cat, lab_to, lab_from)
    seq = GraphSequence(tuple(nodes) + (v.node_eos,),
                        tuple(tuple(s) for s in slots_to),
                        tuple(tuple(s) for s in slots_from))
    return decode_sequence(seq, v), truncated


def sample_graphs(params: ModelParams, count: int, seed=0,
                  temperature: float = 1.0,
                  max_nodes: Optional[int] = None) -> tuple[list[SceneGraph], int]:
    """Draw ``count`` graphs from one generator; returns (graphs, truncations)."""
    rng = _as_rng(seed)
    out, truncs = [], 0
    for _ in range(count):
        g, truncated = sample_graph(params, rng, temperature, max_nodes)
        out.append(g)
        truncs += int(truncated)
    return out, truncs


def complete_graph(params: ModelParams, partial: SceneGraph,
                   order: Optional[Sequence[int]] = None, seed=0,
                   temperature: float = 1.0) -> tuple[SceneGraph, bool]:
    """Extend a partial graph by teacher-forcing its sequence, then
    sampling until EOS.  The output's first nodes are the partial graph
    under the given order (identity by default), all its edges intact."""
    v, cfg = params.vocab, params.config
    k = partial.num_nodes
    if k >= cfg.max_nodes:
        raise PartialTooLarge(f"partial has {k} nodes, model caps at {cfg.max_nodes}")
    if order is None:
        order = tuple(range(k))
    seq = encode_sequence(partial, order, v)
    rng = _as_rng(seed)
    nodes = list(seq.node_seq[:-1])
    slots_to = [list(s) for s in seq.edges_to]
    slots_from = [list(s) for s in seq.edges_from]
    state = init_state(params)
    for i in range(k):
        state = history_step(params, state, nodes[i], slots_to[i], slots_from[i])
    truncated = False
    while True:
        cat = _sample_class(node_step(params, state).data, rng, temperature)
        if cat == v.node_eos:
            break
        if len(nodes) >= cfg.max_nodes:
            truncated = True
            break
        lab_to, lab_from, _, _ = edge_steps(params, state, cat, nodes,
                                            rng=rng, temperature=temperature)
        nodes.append(cat)
        slots_to.append(lab_to)
        slots_from.append(lab_from)
        state = history_step(params, state, cat, lab_to, lab_from)
    out_seq = GraphSequence(tuple(nodes) + (v.node_eos,),
                            tuple(tuple(s) for s in slots_to),
                            tuple(tuple(s) for s in slots_from))
    return decode_sequence(out_seq, v), truncated


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.float32, 1: np.float64}


def _write_tensor(buf, name: str, arr: np.ndarray) -> None:
    enc = name.encode()
    buf.write(struct.pack("<H", len(enc)))
    buf.write(enc)
    buf.write(struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim))
    for d in arr.shape:
        buf.write(struct.pack("<I", d))
    buf.write(np.ascontiguousarray(arr).astype(arr.dtype, copy=False)
              .tobytes(order="C"))


def _read_tensor(buf) -> tuple[str, np.ndarray]:
    raw = buf.read(2)
    if not raw:
        return "", np.empty(0)
    (nlen,) = struct.unpack("<H", raw)
    name = buf.read(nlen).decode()
    code, ndim = struct.unpack("<BB", buf.read(2))
    shape = tuple(struct.unpack("<I", buf.read(4))[0] for _ in range(ndim))
    dtype = np.dtype(_CODE_DTYPES[code])
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(buf.read(count * dtype.itemsize), dtype=dtype).reshape(shape)
    return name, data.copy()


def save_checkpoint(path, params: ModelParams,
                    train_state: Optional[dict] = None,
                    opt_state: Optional[dict[str, np.ndarray]] = None) -> None:
    """Binary container: magic, version, JSON metadata, named tensors.

    Metadata records the vocabulary (labels and hash), architecture
    config, ordering scheme, GRU variant tag, parameter dtype, and any
    training-progress dict the caller passes.  Tensors are written in
    sorted name order, little-endian; the prior (float64) and optimizer
    moments ride along as extra named tensors.
    """
    meta = {
        "vocab": {"objects": list(params.vocab.object_labels),
                  "relations": list(params.vocab.relation_labels)},
        "vocab_hash": params.vocab.digest(),
        "config": params.config.to_json(),
        "ordering": params.ordering.to_json() if params.ordering else None,
        "gru_variant": GRU_VARIANT,
        "dtype": np.dtype(params.dtype).name,
        "train_state": train_state,
    }
    tensors: dict[str, np.ndarray] = {name: t.data
                                      for name, t in params.named_tensors().items()}
    if params.first_node_prior is not None:
        tensors["first_node_prior"] = params.first_node_prior.astype(np.float64)
    if opt_state:
        for name, arr in opt_state.items():
            tensors[f"opt.{name}"] = arr
    blob = json.dumps(meta).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name in sorted(tensors):
            _write_tensor(fh, name, tensors[name])


def load_checkpoint(path) -> tuple[ModelParams, dict, dict[str, np.ndarray]]:
    """Inverse of :func:`save_checkpoint`.

    Returns (params, metadata, optimizer tensors).  Rejects bad magic,
    unknown versions, and tensor shapes that do not match the declared
    config/vocabulary.
    """
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise DataError(f"{path}: not a model checkpoint")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        (mlen,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(mlen).decode())
        tensors: dict[str, np.ndarray] = {}
        while True:
            name, arr = _read_tensor(fh)
            if not name:
                break
            tensors[name] = arr

    vocab = Vocabulary(tuple(meta["vocab"]["objects"]),
                       tuple(meta["vocab"]["relations"]))
    if vocab.digest() != meta["vocab_hash"]:
        raise DataError(f"{path}: vocabulary hash mismatch")
    config = ModelConfig.from_json(meta["config"])
    dtype = np.dtype(meta["dtype"]).type
    params = init_model(config, vocab, seed=0, dtype=dtype)
    if meta.get("ordering"):
        params = replace(params, ordering=OrderingScheme.from_json(meta["ordering"]))
    named = params.named_tensors()
    missing = sorted(set(named) - set(tensors))
    if missing:
        raise DataError(f"{path}: checkpoint lacks tensors: {missing[:3]}...")
    for name, t in named.items():
        arr = tensors[name]
        if arr.shape != t.data.shape:
            raise DataError(
                f"{path}: tensor {name} has shape {arr.shape}, expected {t.data.shape}")
        t.data = arr.astype(t.data.dtype, copy=False)
    if "first_node_prior" in tensors:
        prior = tensors["first_node_prior"].astype(np.float64)
        if prior.shape != (vocab.num_objects,):
            raise DataError(f"{path}: prior has shape {prior.shape}")
        params.first_node_prior = prior
    opt = {name[len("opt."):]: arr for name, arr in tensors.items()
           if name.startswith("opt.")}
    return params, meta, opt
