"""Teacher-forced cross-entropy training."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from ..errors import NonFiniteLoss
from .model import NUM_AA, MultiStateGVP, decode_logits, run_encoder, _tokens

logger = logging.getLogger(__name__)


def sequence_loss(model: MultiStateGVP, mg, sequence=None) -> tuple:
    """Summed cross-entropy and the count of scored positions (non-standard residues skipped)."""
    sequence = mg.native if sequence is None else sequence
    pooled = run_encoder(mg, model)
    logits = decode_logits(pooled, mg, sequence, model)
    tokens = _tokens(sequence, logits.shape[0])
    valid = tokens < NUM_AA
    if not valid.any():
        return logits.sum() * 0.0, 0
    return F.cross_entropy(logits[valid], tokens[valid], reduction="sum"), int(valid.sum())


def batch_loss(model: MultiStateGVP, batch: Sequence) -> torch.Tensor:
    """Mean per-position cross-entropy over every scored position in the batch.

    Items are MultiGraphs (scored against their native sequence) or
    ``(MultiGraph, sequence)`` pairs.
    """
    total, count = None, 0
    for item in batch:
        mg, seq = item if isinstance(item, tuple) else (item, None)
        loss, n = sequence_loss(model, mg, seq)
        total = loss if total is None else total + loss
        count += n
    return total / max(count, 1)


def make_optimizer(model: MultiStateGVP, lr: float = 1e-3) -> torch.optim.Optimizer:
    return torch.optim.Adam(model.parameters(), lr=lr, betas=(0.9, 0.999))


def train_step(model: MultiStateGVP, optimizer: torch.optim.Optimizer, batch: Sequence,
               seed: Optional[int] = None) -> float:
    """One Adam step on ``batch``; returns the pre-step loss.

    ``seed`` fixes the dropout masks without touching the global RNG.
    """
    model.train()
    with torch.random.fork_rng(devices=[]):
        if seed is not None:
            torch.manual_seed(seed)
        optimizer.zero_grad()
        loss = batch_loss(model, batch)
        if not torch.isfinite(loss):
            raise NonFiniteLoss(f"loss is {loss.item()}; check features and learning rate")
        loss.backward()
        optimizer.step()
    return float(loss.item())


@torch.no_grad()
def evaluate_loss(model: MultiStateGVP, batch: Sequence) -> float:
    model.eval()
    return float(batch_loss(model, batch).item())


@dataclass
class FitResult:
    history: list = field(default_factory=list)
    best_epoch: Optional[int] = None
    best_metric: float = float("inf")
    best_state: Optional[dict] = None


def fit(model: MultiStateGVP, train_batches: Callable[[int], Sequence], epochs: int, lr: float = 1e-3,
        seed: int = 0, validate: Optional[Callable[[MultiStateGVP], float]] = None,
        val_every: int = 3) -> FitResult:
    """Train for ``epochs``; every ``val_every`` epochs keep the weights with the lowest ``validate`` score.

    ``train_batches(epoch)`` returns the epoch's list of batches, so noise
    can be re-drawn per epoch. Without ``validate`` the final weights win.
    """
    opt = make_optimizer(model, lr)
    result = FitResult()
    step = 0
    for epoch in range(1, epochs + 1):
        losses = []
        for batch in train_batches(epoch):
            losses.append(train_step(model, opt, batch, seed=seed * 1_000_003 + step))
            step += 1
        entry = {"epoch": epoch, "train_loss": float(np.mean(losses)) if losses else float("nan")}
        if validate is not None and epoch % val_every == 0:
            metric = float(validate(model))
            entry["val_metric"] = metric
            if metric < result.best_metric:
                result.best_metric = metric
                result.best_epoch = epoch
                result.best_state = copy.deepcopy(model.state_dict())
        logger.info("epoch %d %s", epoch, entry)
        result.history.append(entry)
    if result.best_state is not None:
        model.load_state_dict(result.best_state)
    else:
        result.best_epoch = epochs
    return result
