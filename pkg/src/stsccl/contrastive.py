"""Contrastive objectives.

Stage one: each view's last-step node vector predicts the other view's
future per-step representations (a log-bilinear InfoNCE over every
sample/node pair at the same horizon). Stage two: node-level NT-Xent between
projected views, with geographic neighbours and the most semantically
similar nodes removed from each node's negatives.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .exceptions import ConfigError, DomainError
from .graph_data import GraphSpec

log = logging.getLogger(__name__)


@dataclass
class ContrastiveConfig:
    delta: float = 0.1
    top_u: int = 4
    d_proj: int = 16
    filter_matrix: str = "con"
    filter_radius: Optional[float] = None

    def __post_init__(self):
        if self.delta <= 0:
            raise ConfigError(f"cl.delta must be positive, got {self.delta}")
        if self.top_u < 0:
            raise ConfigError(f"cl.top_u must be nonnegative, got {self.top_u}")
        if self.filter_matrix not in ("con", "dist"):
            raise ConfigError(f"cl.filter_matrix must be 'con' or 'dist', got {self.filter_matrix!r}")


class ProjectionHead(nn.Module):
    def __init__(self, d_in: int, d_proj: int = 16, d_hidden: Optional[int] = None):
        super().__init__()
        d_hidden = d_hidden or d_in
        self.net = nn.Sequential(nn.Linear(d_in, d_hidden), nn.GELU(), nn.Linear(d_hidden, d_proj))

    def forward(self, c: torch.Tensor) -> torch.Tensor:
        return self.net(c)


def projection_head(c: torch.Tensor, head: ProjectionHead) -> torch.Tensor:
    return head(c)


class ContrastiveHeads(nn.Module):
    """Per-horizon affine maps for the mutual-view task plus the projection head."""

    def __init__(self, d_model: int, horizon: int, d_proj: int = 16, delta: float = 0.1):
        super().__init__()
        if delta <= 0:
            raise ConfigError(f"delta must be positive, got {delta}")
        self.w_k = nn.ModuleList(nn.Linear(d_model, d_model) for _ in range(horizon))
        self.proj = ProjectionHead(d_model, d_proj)
        self.delta = delta


def info_nce_from_scores(scores: torch.Tensor) -> torch.Tensor:
    """Mean of ``-log softmax(row)[i]`` with the positive on the diagonal."""
    target = torch.arange(scores.shape[0])
    return F.cross_entropy(scores, target)


def sts_loss(c: torch.Tensor, z_other: torch.Tensor, w_k: Sequence[nn.Module]) -> torch.Tensor:
    """Mutual-view prediction loss.

    ``c`` is ``[B, N, d]``; ``z_other`` holds the other view's
    representations at future offsets 1..K, ``[B, K, N, d]``. At horizon k
    the candidates are every (sample, node) target at that horizon.
    """
    k_steps = z_other.shape[1]
    if k_steps == 0:
        raise ConfigError("sts_loss needs at least one horizon step")
    if len(w_k) < k_steps:
        raise ConfigError(f"{len(w_k)} horizon maps for {k_steps} steps")
    d = c.shape[-1]
    total = 0
    for k in range(k_steps):
        pred = w_k[k](c).reshape(-1, d)
        target = z_other[:, k].reshape(-1, z_other.shape[-1])
        total = total + info_nce_from_scores(pred @ target.T)
    return total / k_steps


def _check_prob(m: np.ndarray, name: str) -> None:
    if (m < 0).any() or not np.allclose(m.sum(-1), 1.0, atol=1e-9, rtol=0):
        raise DomainError(f"{name} must be a probability vector (nonnegative, sums to 1)")


def _xlog2(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x > 0, x * np.log2(np.where(x > 0, x / y, 1.0)), 0.0)


def js_similarity(m_i, m_j) -> float:
    """1 - Jensen-Shannon divergence in bits, so the score lies in [0, 1]."""
    m_i, m_j = np.asarray(m_i, dtype=np.float64), np.asarray(m_j, dtype=np.float64)
    _check_prob(m_i, "m_i")
    _check_prob(m_j, "m_j")
    mid = (m_i + m_j) / 2
    js = 0.5 * (_xlog2(m_i, mid).sum() + _xlog2(m_j, mid).sum())
    return float(1.0 - np.clip(js, 0.0, 1.0))


def js_similarity_matrix(semantic: np.ndarray) -> np.ndarray:
    m = np.asarray(semantic, dtype=np.float64)
    _check_prob(m, "semantic rows")
    a, b = m[:, None, :], m[None, :, :]
    mid = (a + b) / 2
    js = 0.5 * (_xlog2(a, mid).sum(-1) + _xlog2(b, mid).sum(-1))
    return 1.0 - np.clip(js, 0.0, 1.0)


@dataclass
class NegativeFilter:
    allowed: np.ndarray
    u: int
    spatial: np.ndarray
    semantic: np.ndarray
    fell_back: np.ndarray

    def negatives(self, i: int) -> list[int]:
        return np.flatnonzero(self.allowed[i]).tolist()


def spatial_neighbors(graph: GraphSpec, matrix: str = "con", radius: Optional[float] = None) -> np.ndarray:
    """Binary geographic-neighbour relation from connectivity or a distance radius."""
    if matrix == "con":
        return graph.a_con > 0
    if matrix == "dist":
        if radius is None:
            raise ConfigError("distance filtering needs a radius")
        if graph.a_dist is not None:
            dist = graph.a_dist
        else:
            diff = graph.coords[:, None, :] - graph.coords[None, :, :]
            dist = np.sqrt((diff ** 2).sum(-1))
        return dist <= radius
    raise ConfigError(f"filter matrix must be 'con' or 'dist', got {matrix!r}")


def build_negative_filter(graph: GraphSpec, batch_nodes: Optional[Sequence[int]] = None, u: int = 4,
                          matrix: str = "con", radius: Optional[float] = None) -> NegativeFilter:
    """Acceptable negatives per node: not itself, not a neighbour, not among its Top-u most similar.

    Ties in similarity exclude the lower node index first. A node left with
    no negatives falls back to excluding only itself.
    """
    nodes = np.arange(graph.n_nodes) if batch_nodes is None else np.asarray(batch_nodes)
    n = len(nodes)
    if not 0 <= u < n:
        raise ConfigError(f"top-u must satisfy 0 <= u < {n}, got {u}")
    spatial = spatial_neighbors(graph, matrix, radius)[np.ix_(nodes, nodes)]
    sim = js_similarity_matrix(graph.semantic[nodes])
    semantic = np.zeros((n, n), dtype=bool)
    for i in range(n):
        others = np.array([j for j in range(n) if j != i], dtype=np.int64)
        order = np.lexsort((others, -sim[i, others]))
        semantic[i, others[order[:u]]] = True
    eye = np.eye(n, dtype=bool)
    allowed = ~(eye | spatial | semantic)
    fell_back = ~allowed.any(axis=1)
    if fell_back.any():
        log.warning("negative filter left %d node(s) without negatives; excluding only self for them",
                    int(fell_back.sum()))
        allowed[fell_back] = ~eye[fell_back]
    return NegativeFilter(allowed=allowed, u=u, spatial=spatial, semantic=semantic, fell_back=fell_back)


def unfiltered_negatives(n: int) -> np.ndarray:
    return ~np.eye(n, dtype=bool)


def _cosine_matrix(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    na, nb = a.norm(dim=-1, keepdim=True), b.norm(dim=-1, keepdim=True)
    if (na == 0).any() or (nb == 0).any():
        raise DomainError("zero-norm representation row; cosine similarity undefined")
    return (a / na) @ (b / nb).transpose(-2, -1)


def semantic_contextual_loss(h_b: torch.Tensor, h_s: torch.Tensor, negatives, delta: float = 0.1) -> torch.Tensor:
    """Node-level NT-Xent restricted to allowed negatives.

    ``h_b``/``h_s`` are ``[N, d]`` or ``[B, N, d]``; ``negatives`` is a
    :class:`NegativeFilter` or an ``N x N`` boolean mask. The positive pair is
    always part of the denominator, so a node without negatives contributes 0.
    """
    if delta <= 0:
        raise ConfigError(f"delta must be positive, got {delta}")
    allowed = negatives.allowed if isinstance(negatives, NegativeFilter) else negatives
    allowed = torch.as_tensor(np.asarray(allowed), dtype=torch.bool)
    n = h_b.shape[-2]
    eye = torch.eye(n, dtype=torch.bool)
    logits = _cosine_matrix(h_b, h_s) / delta
    masked = logits.masked_fill(~(allowed | eye), float("-inf"))
    positive = torch.diagonal(logits, dim1=-2, dim2=-1)
    return (torch.logsumexp(masked, dim=-1) - positive).mean()


def basic_graph_contrastive_loss(s_b: torch.Tensor, s_s: torch.Tensor, sigma: float = 0.1) -> torch.Tensor:
    """Unfiltered NT-Xent: every other node is a negative, positive kept in the denominator."""
    if sigma <= 0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    sims = F.cosine_similarity(s_b.unsqueeze(-2), s_s.unsqueeze(-3), dim=-1, eps=0.0)
    n = sims.shape[-1]
    logits = (sims / sigma).reshape(-1, n)
    target = torch.arange(n).repeat(logits.shape[0] // n)
    return F.cross_entropy(logits, target)
