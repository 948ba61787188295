"""Negative filtering and the two node-level contrastive losses.

Run: python3 demos/04_contrastive.py
"""
import torch

from stsccl import (basic_graph_contrastive_loss, build_negative_filter, js_similarity,
                    semantic_contextual_loss, synth_traffic)

_, graph = synth_traffic(12, 10, 30, seed=0)
print(f"JS similarity of nodes 0 and 1: {js_similarity(graph.semantic[0], graph.semantic[1]):.4f}")

# Node 0 may not use itself, its road neighbours or its 4 most similar nodes as negatives.
filt = build_negative_filter(graph, u=4)
print("neighbours of 0:", sorted(set(filt.spatial[0].nonzero()[0].tolist()) - {0}))
print("semantic top-4 of 0:", filt.semantic[0].nonzero()[0].tolist())
print("allowed negatives of 0:", filt.negatives(0))

torch.manual_seed(0)
h = torch.randn(12, 8, dtype=torch.float64)
noisy = h + 0.05 * torch.randn_like(h)
other = torch.randn_like(h)
print(f"filtered loss, matched views {semantic_contextual_loss(h, noisy, filt).item():.4f}"
      f" vs unrelated views {semantic_contextual_loss(h, other, filt).item():.4f}")
print(f"unfiltered loss, matched views {basic_graph_contrastive_loss(h, noisy).item():.4f}"
      f" vs unrelated views {basic_graph_contrastive_loss(h, other).item():.4f}")
