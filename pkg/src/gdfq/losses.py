"""Classification and distillation losses."""
from __future__ import annotations

import numpy as np

from gdfq import autodiff as ad
from gdfq.autodiff import Tensor
from gdfq.errors import DimensionError


def cross_entropy_loss(logits: Tensor, labels) -> Tensor:
    """Mean of ``-log softmax(logits)[label]`` over the batch."""
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise IndexError(f"label out of range [0, {c})")
    onehot = np.zeros((n, c))
    onehot[np.arange(n), labels] = 1.0
    logp = ad.log_softmax(logits, axis=1)
    return ad.neg(ad.mean(ad.sum(ad.mul(logp, onehot), axis=1)))


def kl_divergence_loss(student_logits: Tensor, teacher_logits) -> Tensor:
    """Batch mean of KL(softmax(student) || softmax(teacher)).

    The teacher side is a constant; no gradient reaches it.
    """
    teacher = teacher_logits.data if isinstance(teacher_logits, Tensor) else np.asarray(teacher_logits)
    if student_logits.shape != teacher.shape:
        raise DimensionError(f"logit shapes differ: {student_logits.shape} vs {teacher.shape}")
    t_shift = teacher - teacher.max(axis=1, keepdims=True)
    log_m = t_shift - np.log(np.exp(t_shift).sum(axis=1, keepdims=True))
    log_q = ad.log_softmax(student_logits, axis=1)
    q = ad.exp(log_q)
    return ad.mean(ad.sum(ad.mul(q, ad.sub(log_q, log_m)), axis=1))


def bns_loss(batch_means, batch_spreads, target_means, target_spreads) -> Tensor:
    """Sum over BN layers of squared L2 gaps in per-feature mean and spread."""
    total = Tensor(0.0)
    for mu_r, s_r, mu, s in zip(batch_means, batch_spreads, target_means, target_spreads):
        total = ad.add(total, ad.sum(ad.square(ad.sub(mu_r, mu))))
        total = ad.add(total, ad.sum(ad.square(ad.sub(s_r, s))))
    return total
