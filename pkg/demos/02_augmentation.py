"""Basic and learned (strong) augmented views of one batch.

Run: python3 demos/02_augmentation.py
"""
import torch

from stsccl.augmentation import UNCHANGED
from stsccl import AugmentationConfig, ViewGenerator, augment_views, make_windows, synth_traffic

series, graph = synth_traffic(12, 10, 30, seed=0)
batch = next(make_windows(series, range(0, series.n_steps), p=12, k=3, batch_size=4, seed=1))

cfg = AugmentationConfig(edge_mask_rate=0.2, attr_mask_rate=0.2, delta_ts=0.5)
generator = ViewGenerator(d_feat=12 * 1, hidden=16).double()
views = augment_views(batch, graph, generator, cfg, seed=0)

print(f"fusion coefficients: alpha={views.alpha:.3f} beta={views.beta:.3f}")
kept = views.basic_adj_mask.sum().item() / graph.a_con.sum()
print(f"basic view keeps {kept:.0%} of adjacency entries")
names = ["drop edges", "mask features", "unchanged"]
choices = views.strong_edge_choices.argmax(1).tolist()
print("strong view choice per node:", [names[c] for c in choices])

# Pinning the generator to "unchanged" everywhere makes the strong view a plain
# temporal fusion of the history, with the full connectivity.
generator.pin(UNCHANGED)
pinned = augment_views(batch, graph, generator, cfg, seed=0)
print("pinned strong adjacency equals A_con:",
      torch.equal(pinned.strong_adj, torch.tensor(graph.a_con, dtype=torch.float64)))
