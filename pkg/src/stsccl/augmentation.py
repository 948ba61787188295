"""Basic and strong augmentation views.

The basic view masks a fixed fraction of edges and input cells, then blends
the history window with its day- and week-lagged counterparts. The strong
view lets a small GNN choose, per node, between masking that node's edges,
masking its features, or leaving it alone, and then applies the same
temporal blend.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
from torch import nn

from ._util import as_tensor, derive_seed
from .encoder_decoder import gumbel_softmax
from .exceptions import ConfigError, NumericalError
from .graph_data import GraphSpec, WindowBatch

EDGE_MASK, ATTR_MASK, UNCHANGED = 0, 1, 2


@dataclass
class AugmentationConfig:
    edge_mask_rate: float = 0.1
    attr_mask_rate: float = 0.1
    delta_ts: float = 0.5
    generator_temperature: float = 0.5
    generator_hidden_dim: int = 16
    seed: int = 0

    def __post_init__(self):
        for name in ("edge_mask_rate", "attr_mask_rate"):
            rate = getattr(self, name)
            if not 0 <= rate < 1:
                raise ConfigError(f"{name} must lie in [0, 1), got {rate}")
        if not 0 < self.delta_ts < 1:
            raise ConfigError(f"delta_ts must lie in (0, 1), got {self.delta_ts}")
        if self.generator_temperature <= 0:
            raise ConfigError("generator_temperature must be positive")


@dataclass
class AugmentedViews:
    basic: torch.Tensor
    strong: torch.Tensor
    basic_adj_mask: torch.Tensor
    strong_adj: torch.Tensor
    strong_edge_choices: torch.Tensor
    alpha: float
    beta: float


def _check_rate(rate: float) -> None:
    if not 0 <= rate < 1:
        raise ConfigError(f"masking rate must lie in [0, 1), got {rate}")


def edge_mask(a_con, rate: float, seed: int) -> torch.Tensor:
    """Zero ``floor(rate * E)`` undirected off-diagonal edges, chosen uniformly."""
    _check_rate(rate)
    a = as_tensor(a_con).clone()
    i, j = torch.triu_indices(a.shape[0], a.shape[0], offset=1)
    present = a[i, j] != 0
    i, j = i[present], j[present]
    n_drop = int(np.floor(rate * len(i)))
    if n_drop:
        pick = np.random.default_rng(seed).choice(len(i), size=n_drop, replace=False)
        pick = torch.as_tensor(pick)
        a[i[pick], j[pick]] = 0
        a[j[pick], i[pick]] = 0
    return a


def attr_mask(x, rate: float, seed: int) -> torch.Tensor:
    """Zero ``floor(rate * x.numel())`` entries at seeded uniform positions."""
    _check_rate(rate)
    x = as_tensor(x)
    n_drop = int(np.floor(rate * x.numel()))
    if not n_drop:
        return x.clone()
    pick = np.random.default_rng(seed).choice(x.numel(), size=n_drop, replace=False)
    keep = torch.ones(x.numel(), dtype=x.dtype)
    keep[torch.as_tensor(pick)] = 0
    return x * keep.reshape(x.shape)


def fusion_coefficients(delta_ts: float, seed: int) -> tuple[float, float]:
    """alpha, beta ~ U(delta_ts, 1) / 2, once per batch."""
    alpha, beta = np.random.default_rng(seed).uniform(delta_ts, 1.0, size=2) / 2
    return float(alpha), float(beta)


def temporal_scale_fusion(batch: WindowBatch, delta_ts: float, seed: int,
                          history=None, alpha: Optional[float] = None, beta: Optional[float] = None):
    """Blend recent, day-lagged and week-lagged windows.

    ``history`` overrides ``batch.history`` (an already-masked view). A
    flagged lag gets weight zero for that sample; its share returns to the
    recent window.
    """
    if alpha is None or beta is None:
        a0, b0 = fusion_coefficients(delta_ts, seed)
        alpha = a0 if alpha is None else alpha
        beta = b0 if beta is None else beta
    h = as_tensor(batch.history) if history is None else history
    day, week = as_tensor(batch.day_lag), as_tensor(batch.week_lag)
    shape = (-1,) + (1,) * (h.dim() - 1)
    a = torch.as_tensor(np.where(batch.day_flag, 0.0, alpha), dtype=h.dtype).reshape(shape)
    b = torch.as_tensor(np.where(batch.week_flag, 0.0, beta), dtype=h.dtype).reshape(shape)
    fused = (1 - a - b) * h + a * day + b * week
    skip = torch.as_tensor(batch.day_flag & batch.week_flag).reshape(shape)
    return torch.where(skip, h, fused), alpha, beta


def basic_augment(batch: WindowBatch, graph: GraphSpec, cfg: AugmentationConfig,
                  seed: Optional[int] = None) -> tuple[torch.Tensor, torch.Tensor]:
    """Edge mask on the connectivity, attribute mask on the history, then temporal fusion."""
    seed = cfg.seed if seed is None else seed
    adj = edge_mask(graph.a_con, cfg.edge_mask_rate, derive_seed(seed, 1))
    masked = attr_mask(batch.history, cfg.attr_mask_rate, derive_seed(seed, 2))
    view, _, _ = temporal_scale_fusion(batch, cfg.delta_ts, derive_seed(seed, 3), history=masked)
    return view, adj


class ViewGenerator(nn.Module):
    """Two mean-aggregation GNN rounds followed by 3-way logits per node."""

    def __init__(self, d_feat: int, hidden: int = 16):
        super().__init__()
        self.layer1 = nn.Linear(2 * d_feat, hidden)
        self.layer2 = nn.Linear(2 * hidden, hidden)
        self.logits = nn.Linear(hidden, 3)
        self.pinned: Optional[int] = None

    def pin(self, choice: Optional[int]) -> None:
        """Force every node to ``choice`` (or release with ``None``)."""
        self.pinned = choice

    @staticmethod
    def _neighbor_mean(h, a):
        off = a * (1 - torch.eye(a.shape[0], dtype=a.dtype))
        deg = off.sum(1, keepdim=True)
        return (off @ h) / torch.where(deg > 0, deg, torch.ones_like(deg))

    def node_logits(self, history: torch.Tensor, a_con: torch.Tensor) -> torch.Tensor:
        n = history.shape[2]
        x = history.mean(0).permute(1, 0, 2).reshape(n, -1)
        h = torch.tanh(self.layer1(torch.cat([x, self._neighbor_mean(x, a_con)], dim=1)))
        h = torch.tanh(self.layer2(torch.cat([h, self._neighbor_mean(h, a_con)], dim=1)))
        logits = self.logits(h)
        if self.pinned is not None:
            pinned = torch.full_like(logits, -1e4)
            pinned[:, self.pinned] = 0.0
            logits = pinned + (logits - logits.detach())
        return logits


def apply_choices(x: torch.Tensor, a_con: torch.Tensor, choices: torch.Tensor):
    """Zero chosen nodes' features / incident edges; self-loops are kept."""
    keep_feat = (1 - choices[:, ATTR_MASK]).reshape(1, 1, -1, 1)
    keep_edge = 1 - choices[:, EDGE_MASK]
    eye = torch.eye(a_con.shape[0], dtype=a_con.dtype)
    adj = a_con * (1 - eye) * torch.outer(keep_edge, keep_edge) + a_con * eye
    return x * keep_feat, adj


def view_generator_forward(history, graph: GraphSpec, generator: ViewGenerator, temperature: float,
                           seed: int, hard: bool = True, noise: Optional[bool] = None):
    """Per-node augmentation choices and the resulting strong view (before fusion)."""
    history = as_tensor(history)
    a_con = as_tensor(graph.a_con)
    logits = generator.node_logits(history, a_con)
    if not torch.isfinite(logits).all():
        raise NumericalError(f"non-finite view-generator logits (batch seed {seed})")
    noise = generator.training if noise is None else noise
    choices = gumbel_softmax(logits, temperature, hard=hard, seed=seed, noise=noise)
    view, adj = apply_choices(history, a_con, choices)
    return view, adj, choices


def strong_augment(batch: WindowBatch, graph: GraphSpec, generator: ViewGenerator,
                   cfg: AugmentationConfig, seed: Optional[int] = None, hard: bool = True):
    seed = cfg.seed if seed is None else seed
    view, adj, choices = view_generator_forward(batch.history, graph, generator,
                                                cfg.generator_temperature, derive_seed(seed, 4), hard=hard)
    fused, _, _ = temporal_scale_fusion(batch, cfg.delta_ts, derive_seed(seed, 5), history=view)
    return fused, adj, choices


def augment_views(batch: WindowBatch, graph: GraphSpec, generator: ViewGenerator,
                  cfg: AugmentationConfig, seed: int) -> AugmentedViews:
    basic, basic_adj = basic_augment(batch, graph, cfg, seed)
    strong, strong_adj, choices = strong_augment(batch, graph, generator, cfg, seed)
    alpha, beta = fusion_coefficients(cfg.delta_ts, derive_seed(seed, 3))
    return AugmentedViews(basic=basic, strong=strong, basic_adj_mask=basic_adj, strong_adj=strong_adj,
                          strong_edge_choices=choices, alpha=alpha, beta=beta)
