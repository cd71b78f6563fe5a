"""Pairwise sigmoid contrastive loss with identity or Jaccard pair targets,
and the class-weighted BCE used by the supervised baseline."""
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .encoders import EmbeddingBatch
from .kernels import jaccard_matrix
from .vocab import to_matrix

LOSS_MODES = ("standard", "jaccard")
MIN_CLASS_WEIGHT = 0.5
MAX_CLASS_WEIGHT = 50.0


def jaccard_similarity(a, b) -> float:
    a, b = set(a), set(b)
    union = a | b
    if not union:
        return 1.0
    return len(a & b) / len(union)


@dataclass(frozen=True)
class TargetMatrix:
    values: np.ndarray
    mode: str

    @property
    def n(self) -> int:
        return self.values.shape[0]


def build_target_matrix(label_sets: Sequence, mode: str = "jaccard") -> TargetMatrix:
    if mode not in LOSS_MODES:
        raise ValueError(f"unknown loss mode {mode!r}")
    n = len(label_sets)
    if n < 1:
        raise ValueError("need at least one label set")
    if mode == "standard":
        return TargetMatrix(np.eye(n), mode)
    return TargetMatrix(jaccard_matrix(to_matrix(label_sets)), mode)


def pair_logits(batch: EmbeddingBatch) -> torch.Tensor:
    return batch.zimg @ batch.ztxt.T * torch.exp(batch.t_prime) + batch.b


def sigmoid_contrastive_loss(batch: EmbeddingBatch, targets: TargetMatrix) -> torch.Tensor:
    """``-sum(log_sigmoid((2T - 1) * logits)) / n`` over all n^2 pairs.

    With Jaccard targets the pair labels are continuous in [-1, 1]; a pair at
    J = 0.5 contributes a constant log 2.
    """
    n = batch.zimg.shape[0]
    if batch.ztxt.shape[0] != n or targets.values.shape != (n, n):
        raise ValueError(f"batch of {n} rows vs target matrix {targets.values.shape}")
    logits = pair_logits(batch)
    labels = 2.0 * torch.as_tensor(targets.values, dtype=logits.dtype) - 1.0
    # logsigmoid uses the overflow-safe split at 0
    return -F.logsigmoid(labels * logits).sum() / n


def class_weights(truth) -> np.ndarray:
    """Inverse-frequency positive weights ``n / (2 n_pos)`` clipped to [0.5, 50]."""
    truth = np.asarray(truth)
    n_pos = truth.sum(axis=0).astype(np.float64)
    with np.errstate(divide="ignore"):
        w = truth.shape[0] / (2.0 * n_pos)
    return np.clip(w, MIN_CLASS_WEIGHT, MAX_CLASS_WEIGHT)


def weighted_bce_loss(logits: torch.Tensor, truth, weights) -> torch.Tensor:
    """Mean over cells of ``-w_c y log s(z) - (1 - y) log(1 - s(z))``."""
    truth = torch.as_tensor(truth, dtype=logits.dtype)
    weights = torch.as_tensor(weights, dtype=logits.dtype)
    if truth.shape != logits.shape or weights.shape != logits.shape[-1:]:
        raise ValueError(f"shape mismatch: logits {tuple(logits.shape)}, truth {tuple(truth.shape)}, "
                         f"weights {tuple(weights.shape)}")
    if not (torch.isfinite(logits).all() and torch.isfinite(truth).all()):
        raise ValueError("non-finite logits or targets")
    if not (weights > 0).all():
        raise ValueError("class weights must be positive")
    return F.binary_cross_entropy_with_logits(logits, truth, pos_weight=weights)
