"""Synthetic traffic, chronological splits and sliding windows.

Run: python3 demos/01_data.py
"""
import numpy as np

from stsccl import chronological_split, make_windows, synth_traffic

# A 12-node ring observed every 30 minutes for 10 days.
series, graph = synth_traffic(n_nodes=12, days=10, interval_minutes=30, seed=0)
print(f"series: {series.n_steps} steps x {series.n_nodes} nodes, {series.steps_per_day} steps per day")
print(f"graph: {int(graph.a_con.sum())} nonzero adjacency entries, semantic dim {graph.semantic.shape[1]}")

train, val, test = chronological_split(series)
print(f"splits: train {train}, val {val}, test {test}")

# Each window carries 12 steps of history, 3 future steps and the same
# slot one day and one week earlier. Lags that fall before t=0 are flagged.
batch = next(make_windows(series, train, p=12, k=3, batch_size=8, seed=0))
print("history", batch.history.shape, "future", batch.future.shape)
print("anchors", batch.anchors.tolist())
print("day lag missing:", batch.day_flag.tolist())
print("week lag missing:", batch.week_flag.tolist())

# Daily periodicity is visible in the raw values.
x = series.values[:, 0, 0]
lag = series.steps_per_day
print(f"node 0 autocorrelation at one day: {np.corrcoef(x[:-lag], x[lag:])[0, 1]:.3f}")
