"""Autoregressive scene-graph modelling toolkit.

Learns a distribution over labelled directed graphs from examples, samples
novel graphs, scores likelihoods for anomaly detection, completes partial
graphs, and measures distribution distance between graph sets with
kernel MMD.
"""

__version__ = "0.1.0"
