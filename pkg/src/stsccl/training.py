"""Joint training: prediction loss plus weighted contrastive losses, one optimizer."""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ._util import as_tensor, derive_seed
from .augmentation import (AugmentationConfig, ViewGenerator, apply_choices, attr_mask, basic_augment,
                           strong_augment)
from .contrastive import (ContrastiveConfig, ContrastiveHeads, build_negative_filter, semantic_contextual_loss,
                          sts_loss, unfiltered_negatives)
from .encoder_decoder import Decoder, EncoderConfig, STSCMEncoder
from .exceptions import ConfigError, NumericalError
from .graph_data import GraphSpec, Scaler, TrafficSeries, WindowBatch, chronological_split, make_windows, scaled

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1

VARIANTS = ("sts_cm_only", "sts_cm_mvp", "full", "no_neg_filter", "no_di_gcn", "ba_only", "sa_only")
VARIANT_LABELS = {
    "sts_cm_only": "STS-CM only",
    "sts_cm_mvp": "STS-CM+MVP",
    "full": "STS-CM+MVP+SC-CM (full)",
    "no_neg_filter": "w/o negative filtering",
    "no_di_gcn": "w/o DI-GCN",
    "ba_only": "BA-only",
    "sa_only": "SA-only",
}


@dataclass
class TrainConfig:
    epsilon: float = 0.5
    batch_size: int = 64
    epochs: int = 100
    lr: float = 1e-4
    weight_decay: float = 1e-4
    seed: int = 0
    p: int = 12
    k: int = 3
    patience: int = 10
    grad_clip: float = 5.0
    checkpoint_every: int = 0
    variant: str = "full"

    def __post_init__(self):
        if not 0 <= self.epsilon <= 1:
            raise ConfigError(f"train.epsilon must lie in [0, 1], got {self.epsilon}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.p < 1 or self.k < 1 or self.batch_size < 1:
            raise ConfigError("p, k and batch_size must be positive")
        if self.lr <= 0 or self.weight_decay < 0:
            raise ConfigError("lr must be positive and weight_decay nonnegative")


@dataclass
class Wiring:
    use_sts: bool = True
    use_sc: bool = True
    filter_negatives: bool = True
    static_graph: bool = False
    views: tuple = ("basic", "strong")


def ablation_variant(name: str) -> Wiring:
    """Component switches for the named ablation row."""
    table = {
        "full": Wiring(),
        "sts_cm_only": Wiring(use_sts=False, use_sc=False),
        "sts_cm_mvp": Wiring(use_sc=False),
        "no_neg_filter": Wiring(filter_negatives=False),
        "no_di_gcn": Wiring(static_graph=True),
        "ba_only": Wiring(views=("basic", "basic")),
        "sa_only": Wiring(views=("strong", "strong")),
    }
    if name not in table:
        raise ConfigError(f"unknown variant {name!r}; choose from {VARIANTS}")
    return table[name]


@dataclass
class LossBundle:
    l_pred: float
    l_sts_b: float
    l_sts_s: float
    l_sc: float
    total: float
    epsilon: float
    epoch: int = 0
    step: int = 0

    def recomposed(self) -> float:
        return self.l_pred + self.epsilon * (self.l_sts_b + self.l_sts_s + self.l_sc)


def prediction_loss(pred: torch.Tensor, truth: torch.Tensor) -> torch.Tensor:
    if pred.shape != truth.shape:
        raise ValueError(f"prediction shape {tuple(pred.shape)} != truth shape {tuple(truth.shape)}")
    return F.mse_loss(pred, truth)


class STSCCL(nn.Module):
    """All trainable parts: encoder, decoder, contrastive heads and view generator."""

    def __init__(self, model_cfg: EncoderConfig, aug_cfg: AugmentationConfig, cl_cfg: ContrastiveConfig,
                 p: int, k: int):
        super().__init__()
        self.encoder = STSCMEncoder(model_cfg)
        self.decoder = Decoder(model_cfg, k)
        self.heads = ContrastiveHeads(model_cfg.d_model, k, cl_cfg.d_proj, cl_cfg.delta)
        self.generator = ViewGenerator(p * model_cfg.d_in, aug_cfg.generator_hidden_dim)

    def parameter_groups(self) -> dict[str, list[nn.Parameter]]:
        return {
            "encoder": list(self.encoder.parameters()),
            "decoder": list(self.decoder.parameters()),
            "projection": list(self.heads.proj.parameters()),
            "horizon_maps": list(self.heads.w_k.parameters()),
            "view_generator": list(self.generator.parameters()),
        }


@dataclass
class Settings:
    """Every configuration section in one place."""
    model: EncoderConfig = field(default_factory=EncoderConfig)
    aug: AugmentationConfig = field(default_factory=AugmentationConfig)
    cl: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self) -> dict:
        return {name: asdict(getattr(self, name)) for name in ("model", "aug", "cl", "train")}

    @classmethod
    def from_dict(cls, d: dict) -> "Settings":
        return cls(model=EncoderConfig(**d["model"]), aug=AugmentationConfig(**d["aug"]),
                   cl=ContrastiveConfig(**d["cl"]), train=TrainConfig(**d["train"]))

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


class Trainer:
    """Holds the model, optimizer and precomputed graph tensors; mutates only in ``train_step``."""

    def __init__(self, settings: Settings, graph: GraphSpec, d_in: int = 1):
        wiring = ablation_variant(settings.train.variant)
        model_cfg = replace(settings.model, d_in=d_in, static_graph=settings.model.static_graph or wiring.static_graph)
        self.settings = replace(settings, model=model_cfg)
        self.wiring = wiring
        self.graph = graph
        tc = self.settings.train
        with torch.random.fork_rng():
            torch.manual_seed(tc.seed)
            self.model = STSCCL(model_cfg, self.settings.aug, self.settings.cl, tc.p, tc.k).double()
        self.optimizer = torch.optim.AdamW(self.model.parameters(), lr=tc.lr, weight_decay=tc.weight_decay)
        self.a_con = as_tensor(graph.a_con)
        self.coords = as_tensor(graph.coords)
        n = graph.n_nodes
        if wiring.filter_negatives:
            u = min(self.settings.cl.top_u, n - 1)
            self.negatives = build_negative_filter(graph, u=u, matrix=self.settings.cl.filter_matrix,
                                                   radius=self.settings.cl.filter_radius).allowed
        else:
            self.negatives = unfiltered_negatives(n)
        self.step_count = 0

    # -- views -----------------------------------------------------------------

    def _view(self, mode: str, batch: WindowBatch, seed: int):
        aug = self.settings.aug
        if mode == "basic":
            view, adj = basic_augment(batch, self.graph, aug, seed)
            return view, adj, ("basic", derive_seed(seed, 2))
        view, adj, choices = strong_augment(batch, self.graph, self.model.generator, aug, seed)
        return view, adj, ("strong", choices.detach())

    def _target_sequence(self, batch: WindowBatch, adj, transform, seed: int) -> torch.Tensor:
        """The other view's representations at offsets 1..K, computed without gradient."""
        k = batch.future.shape[1]
        full = np.concatenate([batch.history, batch.future], axis=1)
        window = as_tensor(full[:, -max(batch.history.shape[1], k):])
        kind, info = transform
        if kind == "basic":
            window = attr_mask(window, self.settings.aug.attr_mask_rate, info)
        else:
            window, _ = apply_choices(window, self.a_con, info)
        with torch.no_grad():
            out = self.model.encoder(window, adj.detach(), self.coords, self.a_con, seed=seed)
        return out.z_seq[:, -k:]

    # -- objective -------------------------------------------------------------

    def compute_losses(self, batch: WindowBatch, seed: int) -> dict[str, torch.Tensor]:
        eps = self.settings.train.epsilon
        mode_b, mode_s = self.wiring.views
        view_b, adj_b, tf_b = self._view(mode_b, batch, derive_seed(seed, 1))
        view_s, adj_s, tf_s = self._view(mode_s, batch, derive_seed(seed, 2))
        enc = self.model.encoder
        out_b = enc(view_b, adj_b, self.coords, self.a_con, seed=derive_seed(seed, 3))
        pred = self.model.decoder(out_b.z_seq)
        l_pred = prediction_loss(pred, as_tensor(batch.future))

        zero = torch.zeros((), dtype=l_pred.dtype)
        l_sts_b = l_sts_s = l_sc = zero
        if self.wiring.use_sts or self.wiring.use_sc:
            with torch.set_grad_enabled(torch.is_grad_enabled() and eps > 0):
                out_s = enc(view_s, adj_s, self.coords, self.a_con, seed=derive_seed(seed, 4))
                heads = self.model.heads
                if self.wiring.use_sts:
                    z_s = self._target_sequence(batch, adj_s, tf_s, derive_seed(seed, 5))
                    z_b = self._target_sequence(batch, adj_b, tf_b, derive_seed(seed, 6))
                    l_sts_b = sts_loss(out_b.c_vec, z_s, heads.w_k)
                    l_sts_s = sts_loss(out_s.c_vec, z_b, heads.w_k)
                if self.wiring.use_sc:
                    h_b, h_s = heads.proj(out_b.c_vec), heads.proj(out_s.c_vec)
                    l_sc = semantic_contextual_loss(h_b, h_s, self.negatives, heads.delta)
        total = l_pred + eps * (l_sts_b + l_sts_s + l_sc) if eps > 0 else l_pred
        return dict(l_pred=l_pred, l_sts_b=l_sts_b, l_sts_s=l_sts_s, l_sc=l_sc, total=total)

    def step_seed(self, step: Optional[int] = None) -> int:
        return derive_seed(self.settings.train.seed, 7, self.step_count if step is None else step)

    def train_step(self, batch: WindowBatch, epoch: int = 0) -> LossBundle:
        self.model.train()
        try:
            losses = self.compute_losses(batch, self.step_seed())
        except NumericalError as err:
            raise NumericalError(f"step {self.step_count} (anchors {batch.anchors[:4].tolist()}...): {err}") from err
        total = losses["total"]
        if not torch.isfinite(total):
            parts = {k: float(v) for k, v in losses.items()}
            raise NumericalError(f"non-finite total loss at step {self.step_count}: {parts}")
        self.optimizer.zero_grad(set_to_none=True)
        total.backward()
        nn.utils.clip_grad_norm_(self.model.parameters(), self.settings.train.grad_clip)
        self.optimizer.step()
        parts = {k: float(v.detach()) for k, v in losses.items()}
        bundle = LossBundle(**parts, epsilon=self.settings.train.epsilon, epoch=epoch, step=self.step_count)
        self.step_count += 1
        return bundle

    # -- inference -------------------------------------------------------------

    @torch.no_grad()
    def predict(self, history) -> torch.Tensor:
        """Forecast from raw (un-augmented) history on the full connectivity graph."""
        self.model.eval()
        x = as_tensor(history)
        out = self.model.encoder(x, self.a_con, self.coords, self.a_con, seed=0)
        return self.model.decoder(out.z_seq)

    def validation_loss(self, batches: Iterable[WindowBatch]) -> float:
        total, count = 0.0, 0
        for batch in batches:
            pred = self.predict(batch.history)
            total += float(((pred - as_tensor(batch.future)) ** 2).sum())
            count += pred.numel()
        return total / count

    # -- persistence -----------------------------------------------------------

    def state(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "settings": self.settings.to_dict(),
            "config_hash": self.settings.config_hash(),
            "params": copy.deepcopy(self.model.state_dict()),
            "optimizer": copy.deepcopy(self.optimizer.state_dict()),
            "rng": {"step_count": self.step_count, "torch": torch.get_rng_state()},
        }

    def load_state(self, state: dict) -> None:
        if state.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {state.get('version')}")
        self.model.load_state_dict(state["params"])
        self.optimizer.load_state_dict(state["optimizer"])
        self.step_count = int(state["rng"]["step_count"])


@dataclass
class FitResult:
    trainer: Trainer
    history: list[LossBundle]
    val_history: list[float]
    best_state: dict
    best_epoch: int
    scaler: Scaler
    splits: tuple

    @property
    def best_val(self) -> float:
        return min(self.val_history)


def fit(series: TrafficSeries, graph: GraphSpec, settings: Settings, splits=None,
        checkpoint_dir: Optional[Path] = None) -> FitResult:
    """Epoch loop with per-epoch validation, best-checkpoint retention and early stopping."""
    tc = settings.train
    splits = splits or chronological_split(series)
    train_rng, val_rng, _ = splits
    scaler = Scaler.fit(series.values[train_rng.start:train_rng.stop])
    data = scaled(series, scaler)
    trainer = Trainer(settings, graph, d_in=series.n_channels)
    history, val_history = [], []
    best_state, best_epoch, best_val, stale = None, -1, math.inf, 0
    for epoch in range(tc.epochs):
        for batch in make_windows(data, train_rng, tc.p, tc.k, tc.batch_size, seed=derive_seed(tc.seed, 8, epoch)):
            history.append(trainer.train_step(batch, epoch))
        val = trainer.validation_loss(make_windows(data, val_rng, tc.p, tc.k, tc.batch_size, shuffle=False))
        val_history.append(val)
        log.info("epoch %d  train %.5f  val %.5f", epoch, history[-1].total, val)
        if val < best_val:
            best_val, best_epoch, stale = val, epoch, 0
            best_state = trainer.state()
        else:
            stale += 1
        if checkpoint_dir and tc.checkpoint_every and (epoch + 1) % tc.checkpoint_every == 0:
            save_checkpoint(Path(checkpoint_dir) / f"epoch_{epoch + 1}.pt", trainer.state(), scaler, splits)
        if stale >= tc.patience:
            log.info("early stop after epoch %d", epoch)
            break
    best_state["val_l_pred"] = best_val
    return FitResult(trainer, history, val_history, best_state, best_epoch, scaler, splits)


def save_checkpoint(path, state: dict, scaler: Scaler, splits) -> None:
    payload = dict(state)
    payload["scaler"] = asdict(scaler)
    payload["splits"] = [(r.start, r.stop) for r in splits]
    torch.save(payload, path)


def load_checkpoint(path, graph: GraphSpec, d_in: int = 1) -> tuple[Trainer, Scaler, tuple]:
    payload = torch.load(path, weights_only=False)
    trainer = Trainer(Settings.from_dict(payload["settings"]), graph, d_in=d_in)
    trainer.load_state(payload)
    scaler = Scaler(**payload["scaler"])
    splits = tuple(range(a, b) for a, b in payload["splits"])
    return trainer, scaler, splits
