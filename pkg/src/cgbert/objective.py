"""Negative evidence lower bound: Gaussian KL plus teacher-forced reconstruction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model as M
from . import numerics as nx
from .numerics import Tensor
from .text import Batch


@dataclass(frozen=True)
class LossBreakdown:
    kl: float
    recon: float
    total: float
    kl_weight: float

    def as_record(self, step: int) -> dict:
        return {"step": step, "kl": self.kl, "recon": self.recon, "total": self.total}


def kl_gaussian_standard(mu, log_var) -> Tensor:
    """KL(N(mu, exp(log_var)) || N(0, I)) summed over the last axis."""
    mu, log_var = nx.as_tensor(mu), nx.as_tensor(log_var)
    terms = mu * mu + nx.exp(log_var) - log_var - 1.0
    return terms.sum(axis=-1) * 0.5


def reconstruction_targets(batch: Batch, reduction: str = "mean") -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Flat (row index, target id, weight) triples for every predicted utterance token.

    Prediction rows run from the intent's closing [SEP] through the last
    utterance word.  With ``reduction="mean"`` each example's targets are
    weighted 1 / (t2_len * B), giving the batch mean of per-example token
    means; ``"sum"`` weights 1 / B, the batch mean of sequence NLLs.
    """
    if reduction not in ("mean", "sum"):
        raise ValueError(f"reduction must be 'mean' or 'sum', got {reduction!r}")
    if np.any(batch.t2_lens < 1):
        raise ValueError("reconstruction needs at least one utterance token per example")
    W, B = batch.width, batch.size
    rows, targets, weights = [], [], []
    for b in range(B):
        t1, t2 = int(batch.t1_lens[b]), int(batch.t2_lens[b])
        pred = np.arange(t1 - 1, t1 + t2 - 1)
        rows.append(b * W + pred)
        targets.append(batch.token_ids[b, pred + 1])
        weights.append(np.full(t2, 1.0 / ((t2 if reduction == "mean" else 1) * B)))
    return np.concatenate(rows), np.concatenate(targets), np.concatenate(weights)


def reconstruction_loss(logits: Tensor, batch: Batch, reduction: str = "mean") -> Tensor:
    """Cross-entropy over utterance targets; intent span and latent slot excluded."""
    B, W, V = logits.shape
    rows, targets, weights = reconstruction_targets(batch, reduction)
    flat = logits.reshape(B * W, V)
    return nx.cross_entropy(flat[rows], targets, weights)


def kl_schedule(step: int, anneal_steps: int) -> float:
    """Linear 0 -> 1 warm-up over ``anneal_steps``; constant 1 when annealing is off."""
    if anneal_steps <= 0:
        return 1.0
    return min(1.0, step / anneal_steps)


def elbo_loss(batch: Batch, params, cfg: M.ModelConfig, kl_weight: float, eps: np.ndarray, rng=None, reduction="mean"):
    """Forward pass of the negative ELBO; returns (total, recon, kl) tensors.

    ``eps`` [B, d_h] is the injected standard-normal noise; ``rng`` enables dropout.
    """
    H0 = M.embed(batch, params)
    h_cls, _ = M.encode(H0, M.encoder_attention_mask(batch), params, cfg, rng)
    stats = M.latent_head(h_cls, params, eps)
    logits = M.decode_forward(stats.z, H0, batch, params, cfg, rng)
    recon = reconstruction_loss(logits, batch, reduction)
    kl = kl_gaussian_standard(stats.mu, stats.log_var).mean()
    total = recon + kl * kl_weight if kl_weight else recon
    return total, recon, kl


def elbo_step(
    batch: Batch, params, cfg: M.ModelConfig, kl_weight: float, rng: np.random.Generator, train=True, reduction="mean"
):
    """One Monte-Carlo ELBO evaluation with gradients.

    Draws a fresh latent noise vector per example from ``rng``; dropout noise
    comes from the same stream when ``train`` is set.
    """
    if batch.size == 0:
        raise ValueError("empty batch")
    eps = rng.standard_normal((batch.size, cfg.d_h))
    nx.zero_grad(params)
    total, recon, kl = elbo_loss(batch, params, cfg, kl_weight, eps, rng if train else None, reduction)
    grads = nx.backward(total, params)
    breakdown = LossBreakdown(
        kl=float(kl.data), recon=float(recon.data), total=float(total.data), kl_weight=float(kl_weight)
    )
    return breakdown, grads
