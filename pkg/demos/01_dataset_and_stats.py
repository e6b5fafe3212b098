"""Generate a synthetic scene-graph dataset and look at what is in it.

The built-in grammar draws a scene type (street, park, room,
countryside), fills it with objects, attaches parts (a shirt is always
worn by someone, a wheel always belongs to a car), and wires up pairwise
relations. Everything downstream of this script consumes the same
dataset file format.
"""

from sggen.dataio import default_grammar, export_dot, generate_synthetic, save_dataset
from sggen.evaluation import dataset_stats

grammar = default_grammar()
vocab = grammar.vocabulary()
print(f"vocabulary: {vocab.num_objects} object labels, "
      f"{vocab.num_relations} relation labels")

graphs = generate_synthetic(grammar, 2000, seed=7)
save_dataset("demo_data.json", vocab, graphs)
print(f"wrote demo_data.json with {len(graphs)} graphs\n")

stats = dataset_stats(graphs, vocab)
print(stats.to_text(vocab))

# A single graph, rendered as Graphviz DOT (pipe into `dot -Tpng`).
print("\nfirst graph as DOT:\n")
print(export_dot(graphs[0], vocab))

# The raw triple view of the same graph.
g = graphs[0]
for s, r, d in sorted(g.edges):
    print(f"  {vocab.object_labels[g.nodes[s]]} "
          f"--{vocab.relation_labels[r]}--> "
          f"{vocab.object_labels[g.nodes[d]]}")
