from __future__ import annotations

import numpy as np
import torch


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic child seed for a (seed, key, ...) path."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *(int(k) & 0xFFFFFFFF for k in keys)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def torch_generator(seed: int) -> torch.Generator:
    return torch.Generator().manual_seed(int(seed))


def row_normalize(a: torch.Tensor) -> torch.Tensor:
    """Divide rows by their sums; an all-zero row becomes a pure self-loop."""
    sums = a.sum(-1, keepdim=True)
    eye = torch.eye(a.shape[-1], dtype=a.dtype, device=a.device)
    safe = torch.where(sums > 0, sums, torch.ones_like(sums))
    return torch.where(sums > 0, a / safe, eye)


def as_tensor(x, dtype=torch.float64) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.to(dtype)
    return torch.tensor(np.asarray(x), dtype=dtype)
