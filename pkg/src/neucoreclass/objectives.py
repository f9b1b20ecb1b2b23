"""Proxy-task losses and their uncertainty-weighted combination.

All functions take torch tensors and are differentiable. Per-sample task
losses come with their per-transformation terms, shape ``(B, K)``, whose
row means are the task losses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .exceptions import InvalidDistribution, NonPositiveTemperature, ShapeMismatch
from .model import TASKS

NORM_EPS = 1e-8
P_MIN = 1e-12


@dataclass
class LossBreakdown:
    """Per-sample task losses, their per-transformation terms and the
    combined loss. Tasks that were not evaluated are absent."""

    per_sample: dict
    per_transformation: dict
    combined: torch.Tensor

    def __getitem__(self, task):
        return self.per_sample[task]


def _check_tau(tau):
    if not tau > 0:
        raise NonPositiveTemperature(f"temperature must be positive, got {tau}")


def _normalize(z):
    return z / z.norm(dim=-1, keepdim=True).clamp_min(NORM_EPS)


def cosine_similarity(z_a, z_b):
    """Cosine similarity along the last axis, norms clamped at 1e-8."""
    return (_normalize(z_a) * _normalize(z_b)).sum(-1)


def similarity(z_a, z_b, tau: float):
    """``exp(cos(z_a, z_b) / tau)``."""
    _check_tau(tau)
    z_a = torch.as_tensor(z_a, dtype=torch.float64) if not torch.is_tensor(z_a) else z_a
    z_b = torch.as_tensor(z_b, dtype=torch.float64) if not torch.is_tensor(z_b) else z_b
    return torch.exp(cosine_similarity(z_a, z_b) / tau)


def contrastive_terms(latents, tau: float):
    """Log of the positive and negative similarity sums for every view.

    ``log_pos[i, k] = log sum_j h(z_i^k, z_j^k)`` over the whole batch,
    including ``j = i``; ``log_neg[i, k] = log sum_{q != k} sum_j h(z_i^k, z_j^q)``.
    """
    _check_tau(tau)
    if latents.dim() != 3:
        raise ShapeMismatch(f"expected latents (B, K, D), got {tuple(latents.shape)}")
    b, k, _ = latents.shape
    if k < 2:
        raise ShapeMismatch("contrastive loss needs at least 2 transformations")
    zn = _normalize(latents)
    logits = torch.einsum("ikd,jqd->ikjq", zn, zn) / tau  # (B, K, B, K)
    same = torch.eye(k, dtype=torch.bool, device=latents.device)  # [k, q]
    same = same[None, :, None, :].expand(b, k, b, k)
    neg_inf = torch.tensor(float("-inf"), dtype=logits.dtype, device=logits.device)
    log_pos = torch.logsumexp(torch.where(same, logits, neg_inf).reshape(b, k, -1), dim=-1)
    log_neg = torch.logsumexp(torch.where(same, neg_inf, logits).reshape(b, k, -1), dim=-1)
    return log_pos, log_neg


def contrastive_loss(latents, tau: float):
    """Returns ``(loss (B,), per_transformation (B, K))`` with
    ``c_k = -log(Pos_k / (Pos_k + Neg_k))``."""
    log_pos, log_neg = contrastive_terms(latents, tau)
    per_k = torch.logaddexp(log_pos, log_neg) - log_pos
    return per_k.mean(dim=1), per_k


def reconstruction_loss(originals, reconstructions):
    """Mean squared error over (C, L) between each sample and each of its
    K reconstructions."""
    if reconstructions.dim() != 4 or originals.dim() != 3 or \
            reconstructions.shape[:1] + reconstructions.shape[2:] != originals.shape:
        raise ShapeMismatch(
            f"reconstructions {tuple(reconstructions.shape)} do not match "
            f"originals {tuple(originals.shape)}"
        )
    per_k = (reconstructions - originals.unsqueeze(1)).pow(2).mean(dim=(2, 3))
    return per_k.mean(dim=1), per_k


def _check_square(t, what):
    if t.dim() != 3 or t.shape[1] != t.shape[2]:
        raise ShapeMismatch(f"expected {what} of shape (B, K, K), got {tuple(t.shape)}")


def classification_loss(probs):
    """Cross-entropy of predicting transformation ``k`` for view ``k``.

    ``probs`` are softmax outputs ``(B, K, K)``; probabilities are floored at
    1e-12 before the log.
    """
    _check_square(probs, "probabilities")
    sums = probs.sum(-1)
    if torch.any((sums - 1).abs() > 1e-4) or torch.any(probs < 0):
        raise InvalidDistribution("classifier rows are not probability distributions")
    diag = torch.diagonal(probs, dim1=1, dim2=2)
    per_k = -torch.log(diag.clamp_min(P_MIN))
    return per_k.mean(dim=1), per_k


def classification_loss_from_logits(logits):
    """Same as :func:`classification_loss` but from raw logits (stable)."""
    _check_square(logits, "logits")
    log_probs = torch.log_softmax(logits, dim=-1)
    diag = torch.diagonal(log_probs, dim1=1, dim2=2)
    per_k = -diag.clamp_min(math.log(P_MIN))
    return per_k.mean(dim=1), per_k


def task_weight(weights, task):
    """``1 / (2 sigma^2)`` written in terms of log-sigma."""
    return 0.5 * torch.exp(-2.0 * weights.log_sigma(task))


def sigma_penalty(weights, task):
    """``ln(1 + sigma)``."""
    return torch.log1p(torch.exp(weights.log_sigma(task)))


def combined_loss(fragments: dict, weights, tasks=None):
    """Uncertainty-weighted per-sample loss.

    ``fragments`` maps task name to a per-sample loss ``(B,)``. Only tasks in
    ``tasks`` (default: those present in ``fragments``) contribute, both their
    weighted loss and their ``ln(1 + sigma)`` penalty.
    """
    tasks = [t for t in TASKS if t in fragments] if tasks is None else list(tasks)
    if not tasks:
        raise ValueError("at least one task must be enabled")
    total = None
    for t in tasks:
        term = task_weight(weights, t) * fragments[t] + sigma_penalty(weights, t)
        total = term if total is None else total + term
    return total


def compute_losses(model, x, tau: float, tasks=TASKS) -> LossBreakdown:
    """Forward ``x`` through ``model`` and evaluate the enabled task losses."""
    out = model(x, tasks=tasks)
    per_sample, per_k = {}, {}
    if "con" in tasks:
        per_sample["con"], per_k["con"] = contrastive_loss(out["latents"], tau)
    if "rec" in tasks:
        per_sample["rec"], per_k["rec"] = reconstruction_loss(x, out["reconstructions"])
    if "class" in tasks:
        per_sample["class"], per_k["class"] = classification_loss_from_logits(out["logits"])
    return LossBreakdown(per_sample, per_k, combined_loss(per_sample, model.weights, tasks))
