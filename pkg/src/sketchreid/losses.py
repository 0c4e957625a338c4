"""Per-branch cross-entropy, triplet margin loss, and their weighted total."""

from dataclasses import dataclass

import numpy as np

from sketchreid.errors import ContractViolation

LOG_CLAMP = 1e-300

# Counts how often cross_entropy had to clamp a vanishing target probability.
clamp_events = 0


def reset_clamp_counter():
    global clamp_events
    clamp_events = 0


@dataclass(frozen=True)
class LossWeights:
    margin: float = 5.0
    eta: float = 10.0

    def __post_init__(self):
        if self.margin <= 0 or self.eta < 0:
            raise ContractViolation("margin must be > 0 and eta >= 0")


def softmax(logits):
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()


def cross_entropy(prob, target):
    """-log prob[target]; backward to logits is prob - onehot."""
    global clamp_events
    if target < 0 or target >= prob.shape[0]:
        raise ContractViolation(f"target {target} outside {prob.shape[0]} classes")
    p = prob[target]
    if p < LOG_CLAMP:
        clamp_events += 1
        p = LOG_CLAMP
    return -np.log(p)


def cross_entropy_logit_grad(prob, target):
    g = prob.copy()
    g[target] -= 1.0
    return g


def triplet_margin(anchor, positive, negative, margin):
    """max(0, m + ||a-p|| - ||a-n||) with plain Euclidean distances."""
    if not (anchor.shape == positive.shape == negative.shape) or anchor.size == 0:
        raise ContractViolation("triplet features must be nonempty and equal length")
    d_ap = np.linalg.norm(anchor - positive)
    d_an = np.linalg.norm(anchor - negative)
    return max(0.0, margin + d_ap - d_an)


def triplet_margin_backward(anchor, positive, negative, margin):
    """Returns (loss, d_anchor, d_positive, d_negative).

    Subgradient 0 when the hinge is inactive and for a zero-distance pair.
    """
    ap = anchor - positive
    an = anchor - negative
    d_ap = np.linalg.norm(ap)
    d_an = np.linalg.norm(an)
    loss = margin + d_ap - d_an
    zero = np.zeros_like(anchor)
    if loss <= 0.0:
        return 0.0, zero, zero.copy(), zero.copy()
    u_ap = ap / d_ap if d_ap > 0 else zero
    u_an = an / d_an if d_an > 0 else zero
    return loss, u_ap - u_an, -u_ap, u_an


def total_loss(branch_probs, target, triplet_value, weights, expected_branches):
    """Sum of per-branch cross-entropies plus eta * triplet term."""
    if len(branch_probs) != expected_branches:
        raise ContractViolation(
            f"expected {expected_branches} branch distributions, got {len(branch_probs)}")
    ce = sum(cross_entropy(p, target) for p in branch_probs)
    return ce + weights.eta * triplet_value
