"""Attack objectives.  Every loss returns ``(value, gradient)``."""

from typing import NamedTuple

import numpy as np

NORM_FLOOR = 1e-12


class DegenerateVectorError(ValueError):
    """Raised when a cosine similarity is requested for a near-zero vector."""


class LossBreakdown(NamedTuple):
    adv: float
    sim: float
    total: float
    cos_to_label: float


def cosine_similarity(a, b):
    """Cosine similarity of ``a`` and ``b`` and its gradient w.r.t. ``a``.

    The gradient is written as ``(b/|b| - cos * a/|a|) / |a|`` so that it is
    exactly zero when ``a`` and ``b`` are bitwise equal.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    aa = np.dot(a.ravel(), a.ravel())
    bb = np.dot(b.ravel(), b.ravel())
    na = np.sqrt(aa)
    nb = np.sqrt(bb)
    if na <= NORM_FLOOR or nb <= NORM_FLOOR:
        raise DegenerateVectorError("cosine similarity of a near-zero vector")
    cos = np.dot(a.ravel(), b.ravel()) / np.sqrt(aa * bb)
    cos = min(max(float(cos), -1.0), 1.0)
    grad = (b / nb - cos * (a / na)) / na
    return cos, grad.astype(a.dtype, copy=False)


def one_hot(label, k, dtype=np.float64):
    c = np.zeros(k, dtype=dtype)
    c[label] = 1
    return c


def adversarial_loss(logits, label, kappa):
    """Cosine hinge ``max(cos(logits, e_label) + kappa, 0)``.

    The subgradient at the kink is taken as zero.
    """
    logits = np.asarray(logits)
    k = logits.shape[-1]
    if not 0 <= label < k:
        raise ValueError(f"label {label} out of range for {k} classes")
    if not 0 <= kappa <= 1:
        raise ValueError(f"kappa must lie in [0, 1], got {kappa}")
    cos, grad = cosine_similarity(logits, one_hot(label, k, logits.dtype))
    margin = cos + kappa
    if margin > 0:
        return margin, grad
    return 0.0, np.zeros_like(logits)


def similarity_loss(original_coeffs, adv_coeffs):
    """``1 - cos(adv, original)`` with gradient w.r.t. ``adv_coeffs``."""
    cos, grad = cosine_similarity(adv_coeffs, original_coeffs)
    return 1.0 - cos, -grad


def total_loss(adv, sim, lam, cos_to_label=float("nan")):
    """Combine ``(value, grad)`` pairs into ``L_adv + lam * L_sim``.

    The two gradients live on different spaces (logits and DCT
    coefficients), so they are returned side by side rather than summed:
    ``(breakdown, (grad_logits, lam * grad_coeffs))``.
    """
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    adv_value, adv_grad = adv
    sim_value, sim_grad = sim
    total = adv_value + lam * sim_value
    breakdown = LossBreakdown(float(adv_value), float(sim_value), float(total), float(cos_to_label))
    return breakdown, (adv_grad, lam * sim_grad)


def log_softmax(logits):
    logits = np.asarray(logits)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy_adversarial_loss(logits, label):
    """``log softmax(logits)[label]``; minimizing it maximizes cross-entropy."""
    logits = np.asarray(logits)
    k = logits.shape[-1]
    if not 0 <= label < k:
        raise ValueError(f"label {label} out of range for {k} classes")
    logp = log_softmax(logits)
    grad = one_hot(label, k, logits.dtype) - np.exp(logp)
    return float(logp[label]), grad
