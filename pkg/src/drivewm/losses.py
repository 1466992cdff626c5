"""Training objectives as plain numeric functions with closed-form gradients.

Each loss returns a :class:`LossValue` whose ``grad`` is the derivative with
respect to the model output argument (``v_pred`` or the logits).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, softmax

from .errors import MaskedTokenPresent, NoMaskedPositions, PreconditionError, ShapeMismatch

DEFAULT_KD_T = 2.0
DEFAULT_KD_T_TARGET = 0.2
DEFAULT_KD_LAMBDA = 0.5


@dataclass(frozen=True)
class LossValue:
    value: float
    grad: np.ndarray | None = None

    def __float__(self) -> float:
        return self.value


def fm_loss(v_pred: np.ndarray, x: np.ndarray, eps: np.ndarray) -> LossValue:
    """Mean squared error between predicted velocity and ``eps - x``."""
    v_pred, x, eps = (np.asarray(a, dtype=float) for a in (v_pred, x, eps))
    if not v_pred.shape == x.shape == eps.shape:
        raise ShapeMismatch(f"shapes differ: {v_pred.shape}, {x.shape}, {eps.shape}")
    r = v_pred - (eps - x)
    return LossValue(float(np.mean(r * r)), 2.0 * r / r.size)


def masked_ce_loss(logits: np.ndarray, targets: np.ndarray, mask: np.ndarray) -> LossValue:
    """Cross-entropy over masked positions (``mask == 0``), averaged over them.

    ``logits`` is ``(..., K)``; ``targets`` and ``mask`` share the leading shape.
    Revealed positions contribute neither loss nor gradient.
    """
    logits = np.asarray(logits, dtype=float)
    targets = np.asarray(targets)
    mask = np.asarray(mask)
    if logits.shape[:-1] != targets.shape or targets.shape != mask.shape:
        raise ShapeMismatch(
            f"logits {logits.shape}, targets {targets.shape} and mask {mask.shape} disagree"
        )
    K = logits.shape[-1]
    if np.any(targets >= K) or np.any(targets < 0):
        raise MaskedTokenPresent(f"targets must be real token ids in [0, {K})")
    sel = ~mask.astype(bool)
    n = int(sel.sum())
    if n == 0:
        raise NoMaskedPositions("mask reveals every position; nothing to score")
    logp = log_softmax(logits, axis=-1)
    nll = -np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    grad = np.exp(logp)
    np.put_along_axis(grad, targets[..., None],
                      np.take_along_axis(grad, targets[..., None], axis=-1) - 1.0, axis=-1)
    grad = np.where(sel[..., None], grad / n, 0.0)
    return LossValue(float(nll[sel].sum() / n), grad)


def kd_soft_target_loss(u: np.ndarray, s: np.ndarray, T: float = DEFAULT_KD_T,
                        T_target: float = DEFAULT_KD_T_TARGET) -> LossValue:
    """Soft-target distillation from codebook similarity rows.

    ``p_out = softmax(u / T)``, ``p_target = softmax(s / T_target)``, and the
    loss is ``T * T_target * sum_positions KL(p_target || p_out)``, summed (not
    averaged) over positions.  Gradient w.r.t. ``u`` is
    ``T_target * (p_out - p_target)``.
    """
    u = np.asarray(u, dtype=float)
    s = np.asarray(s, dtype=float)
    if u.shape != s.shape:
        raise ShapeMismatch(f"logits {u.shape} and similarity rows {s.shape} differ")
    if not (T > 0 and T_target > 0):
        raise PreconditionError("temperatures must be positive")
    log_po = log_softmax(u / T, axis=-1)
    log_pt = log_softmax(s / T_target, axis=-1)
    pt = np.exp(log_pt)
    kl = np.sum(pt * (log_pt - log_po), axis=-1)
    value = T * T_target * float(np.sum(kl))
    grad = T_target * (softmax(u / T, axis=-1) - pt)
    return LossValue(value, grad)


def similarity_targets(targets: np.ndarray, similarity: np.ndarray) -> np.ndarray:
    """Similarity-matrix rows for each target token, shape ``(..., K)``."""
    return np.asarray(similarity)[np.asarray(targets)]


def combined_mgm_loss(ce: LossValue, kd: LossValue, lam: float = DEFAULT_KD_LAMBDA) -> LossValue:
    value = ce.value + lam * kd.value
    grad = None
    if ce.grad is not None and kd.grad is not None:
        if ce.grad.shape != kd.grad.shape:
            raise ShapeMismatch(f"gradient shapes differ: {ce.grad.shape} vs {kd.grad.shape}")
        grad = ce.grad + lam * kd.grad
    if not np.isfinite(value):
        raise PreconditionError("combined loss is not finite")
    return LossValue(value, grad)
