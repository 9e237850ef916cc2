"""Training objectives: token cross-entropy, the two contrastive losses,
their weighted combination, and the distillation MSE.

Conventions pinned here (and mirrored by the scalar oracles in
:mod:`cnerlab.reference`):

* CE averages -log p(gold) per sentence over unmasked tokens, then over
  sentences; gold probabilities are floored at 1e-30 before the log.
* Label-contrastive loss: a token's positives are all other tokens in the
  batch with the same gold label; the denominator runs over every other
  token.  Tokens with no positive are skipped and the batch loss averages
  over the remaining tokens (0 if none qualify).  O-labeled tokens
  participate unless the caller filters them out.
* Translation-contrastive loss: one positive per anchor (its aligned
  translation), denominator over every other sentence vector, averaged over
  all 2N anchors.
* Both contrastive losses divide cosine similarities by a temperature and
  are evaluated through log-sum-exp.
* Distillation MSE averages squared differences over the label axis, then
  tokens, then sentences; the teacher side is a constant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

LOG_PROB_FLOOR = 1e-30


class TooFewTokensError(ValueError):
    pass


class InvalidPairingError(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.5
    beta: float = 0.25
    tau_lcl: float = 0.1
    tau_tcl: float = 0.1

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")
        if self.tau_lcl <= 0 or self.tau_tcl <= 0:
            raise ValueError("temperatures must be > 0")


@dataclass
class LossBreakdown:
    l_ce: float
    l_lcl: float
    l_tcl: float
    l_total: float
    l_kd: float | None = None


def ce_loss(probs: Tensor, gold: np.ndarray, mask: np.ndarray) -> Tensor:
    """Two-level mean of -log p(gold): over unmasked tokens, then sentences."""
    gold = np.asarray(gold, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    batch, length, n_labels = probs.shape
    one_hot = np.zeros((batch, length, n_labels))
    rows, cols = np.meshgrid(np.arange(batch), np.arange(length), indexing="ij")
    one_hot[rows, cols, gold] = 1.0
    picked = ad.sum(ad.mul(probs, one_hot), axis=-1)
    log_p = ad.log(ad.clamp_min(picked, LOG_PROB_FLOOR))
    token_weights = -mask.astype(np.float64) / np.maximum(mask.sum(axis=1, keepdims=True), 1)
    per_sentence = ad.sum(ad.mul(log_p, token_weights), axis=-1)
    return ad.scale(ad.sum(per_sentence), 1.0 / batch)


def lcl_loss(h: Tensor, labels: np.ndarray, tau: float) -> Tensor:
    """Label-contrastive loss over the batch's M unmasked token vectors."""
    labels = np.asarray(labels, dtype=np.int64)
    m = h.shape[0]
    if m < 2:
        raise TooFewTokensError("label contrast needs at least 2 tokens")
    logits = ad.scale(ad.cosine_matrix(h), 1.0 / tau)
    eye = np.eye(m, dtype=bool)
    lse = ad.logsumexp(ad.masked_fill(logits, eye, -np.inf))
    pos_mask = (labels[:, None] == labels[None, :]) & ~eye
    counts = pos_mask.sum(axis=1)
    eligible = counts > 0
    if not eligible.any():
        return Tensor(0.0)
    pos_mean = ad.sum(ad.mul(logits, pos_mask / np.maximum(counts, 1)[:, None]), axis=-1)
    anchor_weights = eligible / eligible.sum()
    return ad.sum(ad.mul(ad.sub(lse, pos_mean), anchor_weights))


def tcl_loss(r: Tensor, pairing: np.ndarray, tau: float) -> Tensor:
    """Translation-contrastive loss over 2N pooled sentence vectors."""
    pairing = np.asarray(pairing, dtype=np.int64)
    n2 = r.shape[0]
    if n2 < 2:
        raise InvalidPairingError("need at least one sentence pair")
    if pairing.shape != (n2,) or (pairing == np.arange(n2)).any() or (
        pairing[pairing] != np.arange(n2)
    ).any():
        raise InvalidPairingError("pairing must be a fixed-point-free involution")
    logits = ad.scale(ad.cosine_matrix(r), 1.0 / tau)
    eye = np.eye(n2, dtype=bool)
    lse = ad.logsumexp(ad.masked_fill(logits, eye, -np.inf))
    partner_mask = np.zeros((n2, n2))
    partner_mask[np.arange(n2), pairing] = 1.0
    positive = ad.sum(ad.mul(logits, partner_mask), axis=-1)
    return ad.scale(ad.sum(ad.sub(lse, positive)), 1.0 / n2)


def joint_loss(l_ce: Tensor, l_lcl: Tensor, l_tcl: Tensor, weights: LossWeights) -> Tensor:
    """alpha * CE + beta * (LCL + TCL)."""
    return ad.add(
        ad.scale(l_ce, weights.alpha),
        ad.scale(ad.add(l_lcl, l_tcl), weights.beta),
    )


def kd_mse_loss(student_probs: Tensor, teacher_probs: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean squared error between probability rows; teacher is a constant."""
    teacher = np.asarray(teacher_probs, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if teacher.shape != student_probs.shape:
        raise ad.ShapeMismatchError(
            f"teacher {teacher.shape} vs student {student_probs.shape}"
        )
    batch, length, n_labels = student_probs.shape
    diff = ad.sub(student_probs, teacher)
    per_token = ad.scale(ad.sum(ad.mul(diff, diff), axis=-1), 1.0 / n_labels)
    token_weights = mask / np.maximum(mask.sum(axis=1, keepdims=True), 1)
    per_sentence = ad.sum(ad.mul(per_token, token_weights), axis=-1)
    return ad.scale(ad.sum(per_sentence), 1.0 / batch)
