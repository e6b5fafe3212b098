"""Complete partial scene graphs.

Because generation is sequential, a partial graph can be replayed
through the model as the beginning of a sequence and then extended by
sampling: the result always contains the partial graph verbatim (same
node order, same edges among the given nodes) plus whatever the model
adds. Different seeds give different continuations.

Run 02_train_and_sample.py first to produce demo_model.ckpt.
"""

from sggen.graphs import SceneGraph
from sggen.model import complete_graph, load_checkpoint

params, _, _ = load_checkpoint("demo_model.ckpt")
vocab = params.vocab

man = vocab.object_index("man")
horse = vocab.object_index("horse")
riding = vocab.relation_index("riding")
partial = SceneGraph(nodes=(man, horse), edges=frozenset({(0, riding, 1)}))
print("partial graph: man --riding--> horse\n")

for seed in range(6):
    g, truncated = complete_graph(params, partial, seed=seed,
                                  temperature=1.0)
    names = [vocab.object_labels[lbl] for lbl in g.nodes]
    print(f"seed {seed}: nodes {names}")
    for s, r, d in sorted(g.edges):
        print(f"    {names[s]} --{vocab.relation_labels[r]}--> {names[d]}")
    print()
