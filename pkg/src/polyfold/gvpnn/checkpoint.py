"""Model checkpoints in the flat float32 tensor format."""

from __future__ import annotations

import torch

from ..tensorfile import read_tensors, write_tensors
from .model import ModelConfig, MultiStateGVP

MAGIC = b"PFCK"


def save_checkpoint(model: MultiStateGVP, path, extra: dict = None) -> None:
    tensors = {name: t.detach().cpu().float().numpy() for name, t in model.state_dict().items()}
    meta = {"kind": "multistate_gvp", "config": model.config.to_dict(), **(extra or {})}
    write_tensors(path, tensors, meta, MAGIC)


def load_checkpoint(path) -> tuple:
    """Return ``(model, meta)``; the model is float32 in eval mode."""
    tensors, meta = read_tensors(path, MAGIC)
    model = MultiStateGVP(ModelConfig(**meta["config"])).float()
    state = {k: torch.from_numpy(v) for k, v in tensors.items()}
    model.load_state_dict(state, strict=True)
    model.eval()
    return model, meta
