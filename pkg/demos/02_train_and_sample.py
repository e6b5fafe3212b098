"""Train a small model on synthetic data and sample novel graphs.

The model consumes graphs as sequences: nodes arrive one at a time under
a (here random) ordering, and each new node predicts its label plus the
relations to and from every earlier node. Training minimizes the exact
negative log-likelihood of those sequences, so the same network later
scores graphs and samples new ones.

This demo uses a reduced model and a couple of minutes of CPU; see the
README for the full desk-scale recipe.
"""

from sggen.dataio import default_grammar, export_dot, generate_synthetic
from sggen.model import ModelConfig, init_model, sample_graphs, save_checkpoint
from sggen.training import TrainConfig, train

grammar = default_grammar()
vocab = grammar.vocabulary()
data = generate_synthetic(grammar, 2000, seed=7)
held_out = generate_synthetic(grammar, 200, seed=8)

config = ModelConfig(hidden_size=64, num_layers=2, node_embed_dim=32,
                     edge_embed_dim=8, mlp_hidden=64)
params = init_model(config, vocab, seed=0)
print(f"model: {params.parameter_count():,} parameters")

schedule = TrainConfig.desk(epochs=8, seed=0)
params, log = train(params, data, schedule, val_graphs=held_out, quiet=False)
print(f"\nfinal training loss: {log.steps[-1]['loss']:.3f}")
print(f"validation NLL by epoch: "
      f"{[round(r['val_nll'], 2) for r in log.validation]}")

save_checkpoint("demo_model.ckpt", params)
print("checkpoint saved to demo_model.ckpt\n")

samples, truncated = sample_graphs(params, 5, seed=123)
print(f"5 samples ({truncated} hit the node cap):\n")
for g in samples:
    names = [vocab.object_labels[lbl] for lbl in g.nodes]
    print(f"  nodes: {names}")
    for s, r, d in sorted(g.edges):
        print(f"    {names[s]} --{vocab.relation_labels[r]}--> {names[d]}")
    print()

print("first sample as DOT:\n")
print(export_dot(samples[0], vocab))
