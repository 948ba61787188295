"""Synchronous spatial-temporal encoder, one-shot decoder and shared primitives.

Each encoder block runs sparse self-attention along time for every node,
then a graph convolution along nodes for every time step. The graph used by
the convolution is the elementwise product of the view's connectivity mask
and a row-stochastic adjacency generated from the block's own input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn.functional as F
from torch import nn

from ._util import derive_seed, row_normalize, torch_generator
from .exceptions import ConfigError, NumericalError


@dataclass
class EncoderConfig:
    d_in: int = 1
    d_model: int = 32
    n_heads: int = 4
    n_blocks: int = 4
    n_decoder_blocks: int = 4
    probsparse_factor: float = 5.0
    omega: float = 0.5
    diffusion_steps: int = 2
    gamma_min: float = 0.1
    gamma_max: float = 10.0
    n_scales: int = 4
    dense_threshold: int = 16
    static_graph: bool = False

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.d_model % 2:
            raise ConfigError("d_model must be even for sinusoidal embeddings")
        if self.omega <= 0:
            raise ConfigError(f"omega must be positive, got {self.omega}")
        if self.gamma_min >= self.gamma_max:
            raise ConfigError("gamma_min must be below gamma_max")


@dataclass
class EncoderOutput:
    z_seq: torch.Tensor    # B x P x N x d_model
    c_vec: torch.Tensor    # B x N x d_model, last time position
    a_dyn: torch.Tensor    # B x N x N, from the final block
    a_fused: torch.Tensor  # adjacency mask times a_dyn


def gumbel_softmax(logits: torch.Tensor, temperature: float, hard: bool = False,
                   seed: Optional[int] = None, noise: bool = True) -> torch.Tensor:
    """Relaxed categorical sample along the last axis.

    With ``hard=True`` the forward value is exactly one-hot while gradients
    follow the soft sample (straight-through). ``noise=False`` gives the
    deterministic tempered softmax used at evaluation time.
    """
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    if not torch.isfinite(logits).all():
        raise NumericalError("non-finite logits passed to gumbel_softmax")
    if noise:
        gen = torch_generator(seed) if seed is not None else None
        u = torch.rand(logits.shape, generator=gen, dtype=logits.dtype)
        tiny = torch.finfo(logits.dtype).tiny
        u = u.clamp(min=tiny, max=1.0 - torch.finfo(logits.dtype).eps)
        logits = logits - torch.log(-torch.log(u))
    soft = torch.softmax(logits / temperature, dim=-1)
    if not hard:
        return soft
    index = soft.argmax(dim=-1, keepdim=True)
    one_hot = torch.zeros_like(soft).scatter_(-1, index, 1.0)
    # soft - soft.detach() is exactly zero, so the forward value stays one-hot
    return one_hot + (soft - soft.detach())


def temporal_pe(p: int, d_model: int, dtype=torch.float64) -> torch.Tensor:
    """Fixed sinusoidal embedding over ``p`` time positions with base ``2p``."""
    if d_model % 2:
        raise ConfigError(f"d_model must be even, got {d_model}")
    pos = torch.arange(p, dtype=dtype)[:, None]
    j = torch.arange(d_model // 2, dtype=dtype)
    freq = (2.0 * p) ** (2 * j / d_model)
    pe = torch.empty(p, d_model, dtype=dtype)
    pe[:, 0::2] = torch.sin(pos / freq)
    pe[:, 1::2] = torch.cos(pos / freq)
    return pe


def sinusoid_features(coords: torch.Tensor, gamma_min: float, gamma_max: float, n_scales: int) -> torch.Tensor:
    """sin/cos of each coordinate over geometrically spaced wavelengths in [gamma_min, gamma_max]."""
    if gamma_min >= gamma_max:
        raise ConfigError("gamma_min must be below gamma_max")
    if n_scales == 1:
        scales = torch.tensor([gamma_min], dtype=coords.dtype)
    else:
        ratio = torch.arange(n_scales, dtype=coords.dtype) / (n_scales - 1)
        scales = gamma_min * (gamma_max / gamma_min) ** ratio
    phase = coords[:, :, None] / scales
    return torch.cat([torch.sin(phase), torch.cos(phase)], dim=-1).reshape(coords.shape[0], -1)


class SpatialPE(nn.Module):
    """Location embedding: coordinate sinusoids, affine reshape, one graph smoothing pass."""

    def __init__(self, d_model: int, gamma_min: float = 0.1, gamma_max: float = 10.0, n_scales: int = 4):
        super().__init__()
        if gamma_min >= gamma_max:
            raise ConfigError("gamma_min must be below gamma_max")
        self.gamma_min, self.gamma_max, self.n_scales = gamma_min, gamma_max, n_scales
        self.fc = nn.Linear(4 * n_scales, d_model)
        self.gcn = nn.Linear(d_model, d_model, bias=False)

    def location_embedding(self, coords: torch.Tensor) -> torch.Tensor:
        return self.fc(sinusoid_features(coords, self.gamma_min, self.gamma_max, self.n_scales))

    def forward(self, coords: torch.Tensor, a_con: torch.Tensor) -> torch.Tensor:
        return row_normalize(a_con) @ self.gcn(self.location_embedding(coords))


def dense_attention(q, k, v, causal: bool = False):
    scores = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    if causal:
        lq, lk = scores.shape[-2:]
        mask = torch.ones(lq, lk, dtype=torch.bool).triu(1)
        scores = scores.masked_fill(mask, float("-inf"))
    return torch.softmax(scores, dim=-1) @ v


def probsparse_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, factor: float = 5.0,
                         seed: Optional[int] = None, dense_threshold: int = 16) -> torch.Tensor:
    """Sparse query attention over the last two axes ``(L, d)``.

    The ``u = ceil(factor * ln L)`` queries with the largest max-minus-mean
    score against a random key sample attend to all keys; the others return
    the mean of ``v``. Sequences no longer than ``dense_threshold`` use dense
    attention.
    """
    l_q, l_k = q.shape[-2], k.shape[-2]
    if l_q <= dense_threshold:
        return dense_attention(q, k, v)
    u = min(l_q, math.ceil(factor * math.log(l_q)))
    n_sample = min(l_k, math.ceil(factor * math.log(l_k)))
    gen = torch_generator(seed) if seed is not None else None
    sample = torch.randint(l_k, (l_q, n_sample), generator=gen)
    k_sample = k[..., sample, :]
    qk = (q.unsqueeze(-2) * k_sample).sum(-1)
    sparsity = qk.max(dim=-1).values - qk.mean(dim=-1)
    top = sparsity.topk(u, dim=-1).indices
    idx = top.unsqueeze(-1).expand(*top.shape, q.shape[-1])
    q_top = q.gather(-2, idx)
    out_top = dense_attention(q_top, k, v)
    context = v.mean(dim=-2, keepdim=True).expand(*v.shape[:-2], l_q, v.shape[-1])
    idx_v = top.unsqueeze(-1).expand(*top.shape, v.shape[-1])
    return context.scatter(-2, idx_v, out_top)


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int, sparse: bool = True, factor: float = 5.0,
                 dense_threshold: int = 16):
        super().__init__()
        self.n_heads = n_heads
        self.sparse, self.factor, self.dense_threshold = sparse, factor, dense_threshold
        self.q = nn.Linear(d_model, d_model)
        self.k = nn.Linear(d_model, d_model)
        self.v = nn.Linear(d_model, d_model)
        self.out = nn.Linear(d_model, d_model)

    def _split(self, x):
        b, l, d = x.shape
        return x.reshape(b, l, self.n_heads, d // self.n_heads).transpose(1, 2)

    def forward(self, x_q, x_kv, seed: Optional[int] = None, causal: bool = False):
        q, k, v = self._split(self.q(x_q)), self._split(self.k(x_kv)), self._split(self.v(x_kv))
        if self.sparse and not causal:
            h = probsparse_attention(q, k, v, self.factor, seed, self.dense_threshold)
        else:
            h = dense_attention(q, k, v, causal=causal)
        b, _, l, dh = h.shape
        return self.out(h.transpose(1, 2).reshape(b, l, self.n_heads * dh))


class DynamicGraphGenerator(nn.Module):
    """Input-conditioned row-stochastic adjacency from diffusion features.

    Node features are pooled over time (one graph per sample, so a
    forecast never depends on what else shares its batch), diffused over
    the random-walk transition of the given adjacency, passed through an
    MLP, scored pairwise and row-softmaxed; a relaxed Gumbel sample of that
    matrix is the returned adjacency.
    """

    def __init__(self, d_model: int, diffusion_steps: int = 2, d_hidden: Optional[int] = None):
        super().__init__()
        d_hidden = d_hidden or d_model
        self.diffusion = nn.Parameter(torch.empty(diffusion_steps + 1, d_model, d_hidden))
        for w in self.diffusion:
            nn.init.xavier_uniform_(w)
        self.mlp = nn.Sequential(nn.Linear(d_hidden, d_hidden), nn.Tanh(), nn.Linear(d_hidden, d_hidden))

    def intermediate(self, z: torch.Tensor, adj: torch.Tensor) -> torch.Tensor:
        """Row-softmaxed pairwise scores before Gumbel resampling."""
        return torch.softmax(self._scores(z, adj), dim=-1)

    def _scores(self, z, adj):
        pooled = z.mean(dim=-3) if z.dim() > 2 else z
        walk = row_normalize(adj)
        h, power = 0, pooled
        for step, w in enumerate(self.diffusion):
            if step:
                power = walk @ power
            h = h + power @ w
        e = self.mlp(h)
        scores = e @ e.transpose(-2, -1) / math.sqrt(e.shape[-1])
        if not torch.isfinite(scores).all():
            raise NumericalError("non-finite scores in dynamic graph generator")
        return scores

    def forward(self, z: torch.Tensor, adj: torch.Tensor, omega: float = 0.5,
                seed: Optional[int] = None, noise: bool = True) -> torch.Tensor:
        log_a = torch.log_softmax(self._scores(z, adj), dim=-1)
        return gumbel_softmax(log_a, omega, hard=False, seed=seed, noise=noise)


def fused_adjacency(a_con: torch.Tensor, a_dyn: torch.Tensor) -> torch.Tensor:
    return a_con * a_dyn


def di_gcn(x: torch.Tensor, a_con: torch.Tensor, a_dyn: torch.Tensor, weight: torch.Tensor) -> torch.Tensor:
    """GELU(A' X W) over the node axis (second to last) with A' the renormalized fused adjacency.

    ``a_dyn`` is ``N x N`` or one matrix per sample, ``B x N x N``, for ``x``
    of shape ``B x P x N x d``.
    """
    a = row_normalize(fused_adjacency(a_con, a_dyn))
    if a.dim() == 3 and x.dim() == 4:
        a = a.unsqueeze(1)
    return F.gelu(a @ x @ weight)


class STSCMBlock(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        d = cfg.d_model
        self.static_graph = cfg.static_graph
        self.omega = cfg.omega
        self.attn = MultiHeadAttention(d, cfg.n_heads, sparse=True, factor=cfg.probsparse_factor,
                                       dense_threshold=cfg.dense_threshold)
        self.norm_time = nn.LayerNorm(d)
        self.norm_space = nn.LayerNorm(d)
        self.graph = DynamicGraphGenerator(d, cfg.diffusion_steps)
        self.gcn_weight = nn.Parameter(torch.empty(d, d))
        nn.init.xavier_uniform_(self.gcn_weight)

    def forward(self, z: torch.Tensor, adj: torch.Tensor, seed: int = 0):
        b, p, n, d = z.shape
        x = z.permute(0, 2, 1, 3).reshape(b * n, p, d)
        x = self.norm_time(x + self.attn(x, x, seed=derive_seed(seed, 1)))
        z = x.reshape(b, n, p, d).permute(0, 2, 1, 3)
        if self.static_graph:
            a_dyn = row_normalize(adj).expand(b, n, n)
        else:
            a_dyn = self.graph(z, adj, self.omega, seed=derive_seed(seed, 2), noise=self.training)
        z = self.norm_space(z + di_gcn(z, adj, a_dyn, self.gcn_weight))
        return z, a_dyn


class STSCMEncoder(nn.Module):
    """Stack of synchronous blocks; returns per-step and last-step node representations."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.input_proj = nn.Linear(cfg.d_in, cfg.d_model)
        self.spatial_pe = SpatialPE(cfg.d_model, cfg.gamma_min, cfg.gamma_max, cfg.n_scales)
        self.blocks = nn.ModuleList(STSCMBlock(cfg) for _ in range(cfg.n_blocks))

    def forward(self, view: torch.Tensor, adj: torch.Tensor, coords: torch.Tensor,
                a_con: torch.Tensor, seed: int = 0) -> EncoderOutput:
        if view.dim() != 4:
            raise ValueError(f"view must be B x P x N x d_in, got {tuple(view.shape)}")
        p = view.shape[1]
        z = self.input_proj(view)
        z = z + temporal_pe(p, self.cfg.d_model, z.dtype)[:, None, :]
        z = z + self.spatial_pe(coords, a_con)
        a_dyn = None
        for i, block in enumerate(self.blocks):
            z, a_dyn = block(z, adj, seed=derive_seed(seed, 10 + i))
        if not torch.isfinite(z).all():
            raise NumericalError("encoder produced non-finite representations")
        return EncoderOutput(z_seq=z, c_vec=z[:, -1], a_dyn=a_dyn, a_fused=fused_adjacency(adj, a_dyn))


class DecoderBlock(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.self_attn = MultiHeadAttention(d_model, n_heads, sparse=False)
        self.cross_attn = MultiHeadAttention(d_model, n_heads, sparse=False)
        self.ffn = nn.Sequential(nn.Linear(d_model, 2 * d_model), nn.GELU(), nn.Linear(2 * d_model, d_model))
        self.norms = nn.ModuleList(nn.LayerNorm(d_model) for _ in range(3))

    def forward(self, q, memory):
        q = self.norms[0](q + self.self_attn(q, q, causal=True))
        q = self.norms[1](q + self.cross_attn(q, memory))
        return self.norms[2](q + self.ffn(q))


class Decoder(nn.Module):
    """Learned horizon slots cross-attending into the encoder sequence, all steps at once."""

    def __init__(self, cfg: EncoderConfig, horizon: int, d_out: Optional[int] = None):
        super().__init__()
        self.horizon = horizon
        self.slots = nn.Parameter(0.1 * torch.randn(horizon, cfg.d_model))
        self.blocks = nn.ModuleList(DecoderBlock(cfg.d_model, cfg.n_heads) for _ in range(cfg.n_decoder_blocks))
        self.head = nn.Linear(cfg.d_model, d_out or cfg.d_in)

    def forward(self, z_seq) -> torch.Tensor:
        if isinstance(z_seq, EncoderOutput):
            z_seq = z_seq.z_seq
        b, p, n, d = z_seq.shape
        memory = z_seq.permute(0, 2, 1, 3).reshape(b * n, p, d)
        q = (self.slots + temporal_pe(self.horizon, d, z_seq.dtype)).expand(b * n, -1, -1)
        for block in self.blocks:
            q = block(q, memory)
        out = self.head(q)
        return out.reshape(b, n, self.horizon, -1).permute(0, 2, 1, 3)
