"""Dataset evaluation: label-corruption harness, AUROC, occurrence and
count statistics, and an independent-marginals baseline sampler.

Corruption keeps graph structure fixed and relabels a ceiling fraction of
nodes and edges, always to a *different* label, which makes fraction 1.0
change every label in the graph.  AUROC uses the rank (Mann-Whitney)
formulation, so ties count half.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import DataError
from .graphs import SceneGraph, Vocabulary, validate_graph


def _replace_label(old: int, num_labels: int, rng: np.random.Generator) -> int:
    if num_labels < 2:
        raise DataError("relabeling needs at least 2 labels to choose from")
    draw = int(rng.integers(0, num_labels - 1))
    return draw + 1 if draw >= old else draw


def corrupt_graph(g: SceneGraph, fraction: float, vocab: Vocabulary,
                  rng: np.random.Generator) -> SceneGraph:
    """Relabel ceil(fraction*m) nodes and ceil(fraction*|E|) edges, chosen
    uniformly without replacement, each to a uniformly random different
    label. Edge endpoints are untouched."""
    if not 0.0 <= fraction <= 1.0:
        raise DataError(f"fraction must lie in [0, 1], got {fraction}")
    nodes = list(g.nodes)
    k_nodes = math.ceil(fraction * len(nodes))
    if k_nodes:
        for i in rng.choice(len(nodes), size=k_nodes, replace=False):
            nodes[i] = _replace_label(nodes[i], vocab.num_objects, rng)
    edges = sorted(g.edges)
    k_edges = math.ceil(fraction * len(edges))
    if k_edges:
        for i in rng.choice(len(edges), size=k_edges, replace=False):
            src, rel, dst = edges[i]
            edges[i] = (src, _replace_label(rel, vocab.num_relations, rng), dst)
    return SceneGraph(nodes=tuple(nodes), edges=frozenset(edges))


def corrupt_dataset(graphs: Sequence[SceneGraph], fraction: float,
                    vocab: Vocabulary, seed: int) -> list[SceneGraph]:
    rng = np.random.default_rng(seed)
    return [corrupt_graph(g, fraction, vocab, rng) for g in graphs]


def auroc(positives: Sequence[float], negatives: Sequence[float]) -> float:
    """Probability that a random positive outscores a random negative;
    ties contribute 1/2."""
    if len(positives) == 0 or len(negatives) == 0:
        raise DataError("auroc needs nonempty score lists")
    pos = np.asarray(positives, dtype=np.float64)
    neg = np.asarray(negatives, dtype=np.float64)
    ranks = rankdata(np.concatenate([pos, neg]))
    u = ranks[: len(pos)].sum() - len(pos) * (len(pos) + 1) / 2.0
    return float(u / (len(pos) * len(neg)))


# ------------------------------------------------------------ statistics

@dataclass
class DatasetStats:
    """Occurrence and count tables for a graph set.

    ``object_occurrence``/``relation_occurrence`` are probability vectors
    over label indices (instance-weighted).  ``co_occurrence`` maps pairs
    of *distinct* object labels (low index first) to the normalized
    frequency with which they appear in the same graph.  ``count_dists``
    maps an object label to the distribution of its per-graph instance
    count (over graphs that contain it), index 0 meaning count 1.
    """

    num_graphs: int
    object_occurrence: np.ndarray
    relation_occurrence: np.ndarray
    co_occurrence: dict[tuple[int, int], float]
    count_dists: dict[int, np.ndarray]
    mean_nodes: float
    mean_edges: float

    def to_records(self, vocab: Vocabulary) -> list[dict]:
        recs = [{"table": "summary", "graphs": self.num_graphs,
                 "mean_nodes": self.mean_nodes, "mean_edges": self.mean_edges}]
        for i, p in enumerate(self.object_occurrence):
            recs.append({"table": "object_occurrence",
                         "label": vocab.object_labels[i], "p": float(p)})
        for i, p in enumerate(self.relation_occurrence):
            recs.append({"table": "relation_occurrence",
                         "label": vocab.relation_labels[i], "p": float(p)})
        for (a, b), p in sorted(self.co_occurrence.items()):
            recs.append({"table": "co_occurrence",
                         "a": vocab.object_labels[a],
                         "b": vocab.object_labels[b], "p": p})
        for lbl, dist in sorted(self.count_dists.items()):
            recs.append({"table": "count_distribution",
                         "label": vocab.object_labels[lbl],
                         "p_by_count": [float(x) for x in dist]})
        return recs

    def write_jsonl(self, path, vocab: Vocabulary) -> None:
        with open(path, "w") as fh:
            for rec in self.to_records(vocab):
                fh.write(json.dumps(rec) + "\n")

    def to_text(self, vocab: Vocabulary, co_occurrence_cap: float = 0.05) -> str:
        """Aligned tables; co-occurrence values are display-capped so rare
        heavy pairs do not drown the rest of the pattern."""
        lines = [f"graphs: {self.num_graphs}   "
                 f"mean nodes: {self.mean_nodes:.2f}   "
                 f"mean edges: {self.mean_edges:.2f}", ""]
        lines.append("object occurrence:")
        order = np.argsort(self.object_occurrence)[::-1]
        for i in order:
            if self.object_occurrence[i] > 0:
                lines.append(f"  {vocab.object_labels[i]:<16s} "
                             f"{self.object_occurrence[i]:.4f}")
        lines.append("")
        lines.append("relation occurrence:")
        rorder = np.argsort(self.relation_occurrence)[::-1]
        for i in rorder:
            if self.relation_occurrence[i] > 0:
                lines.append(f"  {vocab.relation_labels[i]:<16s} "
                             f"{self.relation_occurrence[i]:.4f}")
        lines.append("")
        lines.append(f"co-occurrence (display cap {co_occurrence_cap}):")
        for (a, b), p in sorted(self.co_occurrence.items(),
                                key=lambda kv: -kv[1])[:40]:
            capped = min(p, co_occurrence_cap)
            lines.append(f"  {vocab.object_labels[a]:<14s} "
                         f"{vocab.object_labels[b]:<14s} {capped:.4f}")
        return "\n".join(lines)


def dataset_stats(graphs: Sequence[SceneGraph],
                  vocab: Vocabulary) -> DatasetStats:
    if not graphs:
        raise DataError("dataset_stats needs a nonempty set")
    obj = np.zeros(vocab.num_objects)
    rel = np.zeros(vocab.num_relations)
    pair_counts: Counter = Counter()
    per_label_counts: dict[int, Counter] = {}
    total_nodes = total_edges = 0
    for g in graphs:
        total_nodes += len(g.nodes)
        total_edges += len(g.edges)
        counts = Counter(g.nodes)
        for lbl, c in counts.items():
            obj[lbl] += c
            per_label_counts.setdefault(lbl, Counter())[c] += 1
        for _, r, _ in g.edges:
            rel[r] += 1
        present = sorted(counts)
        for i, a in enumerate(present):
            for b in present[i + 1:]:
                pair_counts[(a, b)] += 1
    if obj.sum() > 0:
        obj /= obj.sum()
    if rel.sum() > 0:
        rel /= rel.sum()
    pair_total = sum(pair_counts.values())
    co = {k: v / pair_total for k, v in pair_counts.items()} if pair_total else {}
    dists = {}
    for lbl, counter in per_label_counts.items():
        top = max(counter)
        dist = np.zeros(top)
        for c, n in counter.items():
            dist[c - 1] = n
        dists[lbl] = dist / dist.sum()
    return DatasetStats(
        num_graphs=len(graphs),
        object_occurrence=obj,
        relation_occurrence=rel,
        co_occurrence=co,
        count_dists=dists,
        mean_nodes=total_nodes / len(graphs),
        mean_edges=total_edges / len(graphs),
    )


def occurrence_l1(stats_a: DatasetStats, stats_b: DatasetStats) -> float:
    """L1 distance between object-occurrence probability vectors."""
    return float(np.abs(stats_a.object_occurrence
                        - stats_b.object_occurrence).sum())


@dataclass
class CountKl:
    per_label: dict[int, float]
    mean: float

    def to_records(self, vocab: Vocabulary) -> list[dict]:
        recs = [{"table": "count_kl", "label": vocab.object_labels[k],
                 "kl": v} for k, v in sorted(self.per_label.items())]
        recs.append({"table": "count_kl_mean", "mean": self.mean})
        return recs


def count_kl(set_a: Sequence[SceneGraph], set_b: Sequence[SceneGraph],
             vocab: Vocabulary) -> CountKl:
    """Per-category KL(count dist of A || count dist of B) with add-one
    smoothing over count bins 1..max observed in either set; the mean runs
    over categories present in both sets."""
    if not set_a or not set_b:
        raise DataError("count_kl needs two nonempty sets")

    def per_label(graphs):
        table: dict[int, Counter] = {}
        for g in graphs:
            for lbl, c in Counter(g.nodes).items():
                table.setdefault(lbl, Counter())[c] += 1
        return table

    ta, tb = per_label(set_a), per_label(set_b)
    out = {}
    for lbl in sorted(set(ta) & set(tb)):
        top = max(max(ta[lbl]), max(tb[lbl]))
        pa = np.array([ta[lbl].get(c, 0) for c in range(1, top + 1)],
                      dtype=np.float64) + 1.0
        pb = np.array([tb[lbl].get(c, 0) for c in range(1, top + 1)],
                      dtype=np.float64) + 1.0
        pa /= pa.sum()
        pb /= pb.sum()
        out[lbl] = float(np.sum(pa * np.log(pa / pb)))
    mean = float(np.mean(list(out.values()))) if out else 0.0
    return CountKl(per_label=out, mean=mean)


# ----------------------------------------------------------- baseline

@dataclass
class MarginalBaseline:
    """Independent-marginals fit of a graph set: node count, node label,
    edge presence, and relation label are all modeled independently."""

    size_dist: np.ndarray       # probability of m nodes, index 0 = 1 node
    object_probs: np.ndarray
    relation_probs: np.ndarray
    edge_density: float         # per ordered node pair

    @staticmethod
    def fit(graphs: Sequence[SceneGraph],
            vocab: Vocabulary) -> "MarginalBaseline":
        if not graphs:
            raise DataError("baseline fit needs a nonempty set")
        sizes = Counter(len(g.nodes) for g in graphs)
        size_dist = np.zeros(max(sizes))
        for m, n in sizes.items():
            size_dist[m - 1] = n
        size_dist /= size_dist.sum()
        stats = dataset_stats(graphs, vocab)
        pairs = sum(len(g.nodes) * (len(g.nodes) - 1) for g in graphs)
        edges = sum(len(g.edges) for g in graphs)
        rel = stats.relation_occurrence
        if rel.sum() == 0:
            rel = np.full(vocab.num_relations, 1.0 / vocab.num_relations)
        return MarginalBaseline(
            size_dist=size_dist,
            object_probs=stats.object_occurrence,
            relation_probs=rel,
            edge_density=edges / pairs if pairs else 0.0,
        )

    def sample(self, count: int, seed: int,
               vocab: Vocabulary) -> list[SceneGraph]:
        rng = np.random.default_rng(seed)
        sizes = rng.choice(len(self.size_dist), size=count,
                           p=self.size_dist) + 1
        out = []
        for m in sizes:
            nodes = tuple(int(x) for x in rng.choice(
                vocab.num_objects, size=int(m), p=self.object_probs))
            edges = set()
            for s in range(int(m)):
                for d in range(int(m)):
                    if s != d and rng.random() < self.edge_density:
                        r = int(rng.choice(vocab.num_relations,
                                           p=self.relation_probs))
                        edges.add((s, r, d))
            g = SceneGraph(nodes=nodes, edges=frozenset(edges))
            validate_graph(g, vocab)
            out.append(g)
        return out
