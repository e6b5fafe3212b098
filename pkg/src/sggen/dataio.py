"""Dataset files, the synthetic scene grammar, and DOT export.

Datasets are a single JSON document (format_version 1): a vocabulary
header plus one record per graph holding node label names and
[src, relation, dst] triples with integer node indices.  Serialization is
deterministic, so save -> load -> save is byte-identical.

The grammar generates desk-scale corpora with learnable structure: a
scene type is drawn first, its object pool sampled with per-category
presence probabilities and count distributions, part categories are
attached to exactly one parent instance (shirt -> man, wheel -> car), and
pairwise relation rules then fill in edges between category pairs, never
touching an occupied ordered pair.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DataError
from .graphs import SceneGraph, Vocabulary, validate_graph

FORMAT_VERSION = 1


class ParseError(DataError):
    pass


class ValidationError(DataError):
    pass


class ConfigInvalid(DataError):
    pass


# ------------------------------------------------------------- dataset IO

def save_dataset(path, vocab: Vocabulary,
                 graphs: Sequence[SceneGraph]) -> None:
    for i, g in enumerate(graphs):
        try:
            validate_graph(g, vocab)
        except DataError as exc:
            raise ValidationError(f"graph {i}: {exc}") from exc
    doc = {
        "format_version": FORMAT_VERSION,
        "vocabulary": {"objects": list(vocab.object_labels),
                       "relations": list(vocab.relation_labels)},
        "graphs": [
            {"nodes": [vocab.object_labels[lbl] for lbl in g.nodes],
             "edges": [[s, vocab.relation_labels[r], d]
                       for s, r, d in sorted(g.edges)]}
            for g in graphs
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_dataset(path) -> tuple[Vocabulary, list[SceneGraph]]:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno}: "
                         f"{exc.msg}") from exc
    if not isinstance(doc, dict) or doc.get("format_version") != FORMAT_VERSION:
        raise ParseError(f"{path}: expected format_version {FORMAT_VERSION}")
    try:
        head = doc["vocabulary"]
        vocab = Vocabulary(object_labels=tuple(head["objects"]),
                           relation_labels=tuple(head["relations"]))
    except (KeyError, TypeError) as exc:
        raise ParseError(f"{path}: malformed vocabulary header") from exc

    graphs = []
    for i, rec in enumerate(doc.get("graphs", [])):
        try:
            nodes = tuple(vocab.object_index(name) for name in rec["nodes"])
            edges = set()
            for s, rel, d in rec["edges"]:
                edges.add((int(s), vocab.relation_index(rel), int(d)))
        except DataError as exc:
            raise ParseError(f"{path}: graph {i}: {exc}") from exc
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: graph {i}: malformed record") from exc
        g = SceneGraph(nodes=nodes, edges=frozenset(edges))
        try:
            validate_graph(g, vocab)
        except DataError as exc:
            raise ValidationError(f"{path}: graph {i}: {exc}") from exc
        graphs.append(g)
    return vocab, graphs


# -------------------------------------------------------------- grammar

@dataclass(frozen=True)
class ObjectSpec:
    """Presence probability and, given presence, distribution over
    instance counts 1..len(count_probs)."""

    probability: float
    count_probs: tuple[float, ...] = (1.0,)


@dataclass(frozen=True)
class SceneType:
    name: str
    weight: float
    objects: dict[str, ObjectSpec]


@dataclass(frozen=True)
class PartRule:
    """Every instance of ``child`` gets exactly one incoming edge
    ``parent -> relation -> child`` from a sampled parent instance."""

    child: str
    parents: tuple[str, ...]
    relation: str


@dataclass(frozen=True)
class RelationRule:
    """For each unoccupied ordered (src-category, dst-category) instance
    pair, fire with ``probability`` and draw the relation label."""

    src: str
    dst: str
    relations: dict[str, float]
    probability: float


@dataclass(frozen=True)
class GrammarConfig:
    objects: tuple[str, ...]
    relations: tuple[str, ...]
    tiers: dict[str, int]
    scenes: tuple[SceneType, ...]
    part_rules: tuple[PartRule, ...]
    relation_rules: tuple[RelationRule, ...]
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        objs = set(self.objects)
        rels = set(self.relations)
        if not self.scenes:
            raise ConfigInvalid("grammar needs at least one scene type")
        if set(self.tiers) != objs:
            raise ConfigInvalid("tiers must cover exactly the object labels")
        for scene in self.scenes:
            if scene.weight <= 0:
                raise ConfigInvalid(f"scene {scene.name}: weight must be > 0")
            if not scene.objects:
                raise ConfigInvalid(f"scene {scene.name}: empty object pool")
            for cat, spec in scene.objects.items():
                if cat not in objs:
                    raise ConfigInvalid(f"scene {scene.name}: unknown "
                                        f"category {cat!r}")
                if not 0.0 <= spec.probability <= 1.0:
                    raise ConfigInvalid(f"{scene.name}/{cat}: probability "
                                        "outside [0, 1]")
                if not spec.count_probs or min(spec.count_probs) < 0 or \
                        abs(sum(spec.count_probs) - 1.0) > 1e-9:
                    raise ConfigInvalid(f"{scene.name}/{cat}: count_probs "
                                        "must be a normalized distribution")
        children = set()
        for rule in self.part_rules:
            if rule.child in children:
                raise ConfigInvalid(f"duplicate part rule for {rule.child}")
            children.add(rule.child)
            if rule.child not in objs or rule.relation not in rels:
                raise ConfigInvalid(f"part rule {rule.child}: unknown name")
            for parent in rule.parents:
                if parent not in objs:
                    raise ConfigInvalid(f"part rule {rule.child}: unknown "
                                        f"parent {parent!r}")
                if self.tiers[parent] >= self.tiers[rule.child]:
                    raise ConfigInvalid(
                        f"part rule {rule.child}: parent {parent} must sit "
                        "in a strictly lower tier")
        for rule in self.relation_rules:
            if rule.src not in objs or rule.dst not in objs:
                raise ConfigInvalid(f"relation rule {rule.src}->{rule.dst}: "
                                    "unknown category")
            if not 0.0 <= rule.probability <= 1.0:
                raise ConfigInvalid(f"relation rule {rule.src}->{rule.dst}: "
                                    "probability outside [0, 1]")
            if not rule.relations or \
                    abs(sum(rule.relations.values()) - 1.0) > 1e-9 or \
                    min(rule.relations.values()) < 0:
                raise ConfigInvalid(f"relation rule {rule.src}->{rule.dst}: "
                                    "relation weights must be normalized")
            for rel in rule.relations:
                if rel not in rels:
                    raise ConfigInvalid(f"relation rule {rule.src}->"
                                        f"{rule.dst}: unknown relation {rel!r}")

    def vocabulary(self) -> Vocabulary:
        return Vocabulary(object_labels=self.objects,
                          relation_labels=self.relations)

    def tier_map(self) -> dict[int, int]:
        """Label-index tiers for hierarchical ordering."""
        return {i: self.tiers[name] for i, name in enumerate(self.objects)}

    def to_json(self) -> dict:
        return {
            "objects": list(self.objects),
            "relations": list(self.relations),
            "tiers": dict(self.tiers),
            "seed": self.seed,
            "scenes": [
                {"name": s.name, "weight": s.weight,
                 "objects": {c: {"probability": spec.probability,
                                 "count_probs": list(spec.count_probs)}
                             for c, spec in s.objects.items()}}
                for s in self.scenes
            ],
            "part_rules": [
                {"child": r.child, "parents": list(r.parents),
                 "relation": r.relation} for r in self.part_rules
            ],
            "relation_rules": [
                {"src": r.src, "dst": r.dst, "relations": dict(r.relations),
                 "probability": r.probability} for r in self.relation_rules
            ],
        }

    @staticmethod
    def from_json(doc: dict) -> "GrammarConfig":
        try:
            return GrammarConfig(
                objects=tuple(doc["objects"]),
                relations=tuple(doc["relations"]),
                tiers={k: int(v) for k, v in doc["tiers"].items()},
                seed=int(doc.get("seed", 0)),
                scenes=tuple(
                    SceneType(
                        name=s["name"], weight=float(s["weight"]),
                        objects={c: ObjectSpec(
                            probability=float(spec["probability"]),
                            count_probs=tuple(spec["count_probs"]))
                            for c, spec in s["objects"].items()})
                    for s in doc["scenes"]),
                part_rules=tuple(
                    PartRule(child=r["child"], parents=tuple(r["parents"]),
                             relation=r["relation"])
                    for r in doc["part_rules"]),
                relation_rules=tuple(
                    RelationRule(src=r["src"], dst=r["dst"],
                                 relations=dict(r["relations"]),
                                 probability=float(r["probability"]))
                    for r in doc["relation_rules"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigInvalid(f"malformed grammar config: {exc}") from exc


def save_grammar(path, cfg: GrammarConfig) -> None:
    with open(path, "w") as fh:
        json.dump(cfg.to_json(), fh, indent=1)
        fh.write("\n")


def load_grammar(path) -> GrammarConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno}: "
                         f"{exc.msg}") from exc
    return GrammarConfig.from_json(doc)


def default_grammar() -> GrammarConfig:
    """21 object categories in 3 tiers, 8 relations, 4 scene types.

    Tier 0 holds backgrounds that anchor each scene, tier 1 the objects,
    tier 2 parts that always attach to a tier-1 parent.  Worst-case graph
    size is 15 nodes. Parent categories of parts have presence
    probability 1.0 in every scene offering the part, so attachment never
    has to invent a parent.
    """
    t0 = ["sky", "ground", "road", "grass", "wall", "water"]
    t1 = ["man", "woman", "dog", "cat", "car", "tree", "building",
          "horse", "table", "chair", "food"]
    t2 = ["shirt", "pants", "hat", "wheel"]
    tiers = {**{c: 0 for c in t0}, **{c: 1 for c in t1}, **{c: 2 for c in t2}}

    scenes = (
        SceneType("street", 0.30, {
            "sky": ObjectSpec(1.0),
            "road": ObjectSpec(1.0),
            "building": ObjectSpec(0.8, (0.6, 0.4)),
            "car": ObjectSpec(1.0, (0.6, 0.4)),
            "man": ObjectSpec(1.0, (0.7, 0.3)),
            "woman": ObjectSpec(0.5),
            "shirt": ObjectSpec(0.7, (0.7, 0.3)),
            "pants": ObjectSpec(0.4),
            "hat": ObjectSpec(0.2),
            "wheel": ObjectSpec(0.5, (0.4, 0.6)),
        }),
        SceneType("park", 0.30, {
            "sky": ObjectSpec(1.0),
            "grass": ObjectSpec(1.0),
            "tree": ObjectSpec(0.9, (0.5, 0.3, 0.2)),
            "dog": ObjectSpec(0.5, (0.8, 0.2)),
            "man": ObjectSpec(1.0, (0.7, 0.3)),
            "woman": ObjectSpec(0.5),
            "food": ObjectSpec(0.3),
            "shirt": ObjectSpec(0.6, (0.7, 0.3)),
            "hat": ObjectSpec(0.25),
        }),
        SceneType("room", 0.25, {
            "wall": ObjectSpec(1.0, (0.7, 0.3)),
            "table": ObjectSpec(0.9),
            "chair": ObjectSpec(0.8, (0.5, 0.5)),
            "cat": ObjectSpec(0.4),
            "food": ObjectSpec(0.6, (0.6, 0.4)),
            "man": ObjectSpec(1.0),
            "woman": ObjectSpec(0.4),
            "shirt": ObjectSpec(0.5),
        }),
        SceneType("countryside", 0.15, {
            "sky": ObjectSpec(1.0),
            "grass": ObjectSpec(1.0),
            "ground": ObjectSpec(0.5),
            "water": ObjectSpec(0.4),
            "horse": ObjectSpec(0.7, (0.6, 0.4)),
            "tree": ObjectSpec(0.6, (0.5, 0.5)),
            "man": ObjectSpec(1.0),
            "hat": ObjectSpec(0.3),
        }),
    )
    part_rules = (
        PartRule("shirt", ("man", "woman"), "wearing"),
        PartRule("pants", ("man", "woman"), "wearing"),
        PartRule("hat", ("man", "woman"), "wearing"),
        PartRule("wheel", ("car",), "has"),
    )
    relation_rules = (
        RelationRule("car", "road", {"on": 1.0}, 0.9),
        RelationRule("man", "road", {"on": 1.0}, 0.5),
        RelationRule("woman", "road", {"on": 1.0}, 0.5),
        RelationRule("building", "road", {"near": 0.7, "behind": 0.3}, 0.6),
        RelationRule("tree", "building", {"behind": 0.6, "near": 0.4}, 0.4),
        RelationRule("building", "sky", {"under": 1.0}, 0.4),
        RelationRule("tree", "sky", {"under": 1.0}, 0.4),
        RelationRule("tree", "grass", {"on": 1.0}, 0.8),
        RelationRule("dog", "grass", {"on": 1.0}, 0.7),
        RelationRule("man", "grass", {"on": 1.0}, 0.5),
        RelationRule("man", "dog", {"near": 1.0}, 0.5),
        RelationRule("man", "woman", {"near": 1.0}, 0.6),
        RelationRule("man", "horse", {"riding": 0.7, "near": 0.3}, 0.6),
        RelationRule("horse", "grass", {"on": 0.7, "eating": 0.3}, 0.8),
        RelationRule("food", "table", {"on": 1.0}, 0.9),
        RelationRule("cat", "table", {"on": 0.6, "under": 0.4}, 0.5),
        RelationRule("chair", "table", {"near": 1.0}, 0.8),
        RelationRule("man", "chair", {"on": 1.0}, 0.3),
        RelationRule("man", "food", {"eating": 1.0}, 0.4),
        RelationRule("woman", "food", {"eating": 1.0}, 0.3),
        RelationRule("cat", "food", {"eating": 1.0}, 0.3),
        RelationRule("table", "wall", {"near": 1.0}, 0.5),
        RelationRule("water", "grass", {"near": 1.0}, 0.6),
        RelationRule("dog", "water", {"near": 1.0}, 0.3),
        RelationRule("man", "building", {"near": 1.0}, 0.3),
        RelationRule("man", "water", {"near": 1.0}, 0.3),
    )
    return GrammarConfig(
        objects=tuple(t0 + t1 + t2),
        relations=("on", "has", "wearing", "near", "behind", "under",
                   "riding", "eating"),
        tiers=tiers,
        scenes=scenes,
        part_rules=part_rules,
        relation_rules=relation_rules,
    )


def generate_synthetic(cfg: GrammarConfig, n: int,
                       seed: Optional[int] = None) -> list[SceneGraph]:
    """Sample n graphs from the grammar; reproducible from (cfg, n, seed)."""
    if n < 0:
        raise ConfigInvalid("n must be nonnegative")
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    vocab = cfg.vocabulary()
    weights = np.array([s.weight for s in cfg.scenes], dtype=np.float64)
    weights /= weights.sum()
    part_by_child = {r.child: r for r in cfg.part_rules}

    out = []
    for _ in range(n):
        scene = cfg.scenes[int(rng.choice(len(cfg.scenes), p=weights))]
        labels: list[str] = []
        for cat, spec in scene.objects.items():
            if rng.random() < spec.probability:
                count = int(rng.choice(len(spec.count_probs),
                                       p=np.asarray(spec.count_probs))) + 1
                labels.extend([cat] * count)
        if not labels:
            anchor = max(scene.objects, key=lambda c:
                         (scene.objects[c].probability, c))
            labels = [anchor]

        # Part attachment may need a parent the pool did not produce.
        for child, rule in part_by_child.items():
            if child in labels and not any(p in labels for p in rule.parents):
                labels.append(rule.parents[int(rng.integers(
                    0, len(rule.parents)))])

        edges: set[tuple[int, int, int]] = set()
        occupied: set[tuple[int, int]] = set()
        by_cat: dict[str, list[int]] = {}
        for i, cat in enumerate(labels):
            by_cat.setdefault(cat, []).append(i)

        for child, rule in part_by_child.items():
            candidates = [i for p in rule.parents for i in by_cat.get(p, [])]
            rel = vocab.relation_index(rule.relation)
            for c in by_cat.get(child, []):
                parent = candidates[int(rng.integers(0, len(candidates)))]
                edges.add((parent, rel, c))
                occupied.add((parent, c))

        for rule in cfg.relation_rules:
            rel_names = sorted(rule.relations)
            rel_p = np.array([rule.relations[r] for r in rel_names])
            for s in by_cat.get(rule.src, []):
                for d in by_cat.get(rule.dst, []):
                    if s == d or (s, d) in occupied:
                        continue
                    if rng.random() < rule.probability:
                        rel = vocab.relation_index(rel_names[int(
                            rng.choice(len(rel_names), p=rel_p))])
                        edges.add((s, rel, d))
                        occupied.add((s, d))

        g = SceneGraph(
            nodes=tuple(vocab.object_index(c) for c in labels),
            edges=frozenset(edges))
        validate_graph(g, vocab)
        out.append(g)
    return out


# ------------------------------------------------------------------- DOT

def export_dot(g: SceneGraph, vocab: Vocabulary) -> str:
    """Graphviz text: one node per instance labeled 'category (index)',
    one directed edge per triple; byte-stable ordering."""
    validate_graph(g, vocab)
    lines = ["digraph scene {"]
    for i, lbl in enumerate(g.nodes):
        lines.append(f'  n{i} [label="{vocab.object_labels[lbl]} ({i})"];')
    for s, r, d in sorted(g.edges):
        lines.append(f'  n{s} -> n{d} [label="{vocab.relation_labels[r]}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
