"""Scalar training objectives and their gradients.

Each stream pays a pairwise similarity-preserving cost plus a quantization
penalty tying the relaxed embedding to the binary codes; the fused stream
additionally pays a focal classification cost. All sums are raw (not
normalized by n or n^2), so learning rates are tuned accordingly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Probabilities are clamped to [PROB_EPS, 1 - PROB_EPS] before any log.
PROB_EPS = 1e-12


@dataclass
class HyperParams:
    """Objective weights; rho defaults to the code length k."""

    k: int
    rho: float | None = None
    alpha: float = 1.0
    lam: float = 1.0
    mu: float = 1.0
    gamma_focal: float = 2.0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("code length k must be >= 1")
        if self.rho is None:
            self.rho = float(self.k)
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if min(self.alpha, self.lam, self.mu, self.gamma_focal) < 0:
            raise ValueError("alpha, lam, mu and gamma_focal must be >= 0")


def _check_codes(b: np.ndarray) -> None:
    if not np.all(np.abs(b) == 1.0):
        raise ValueError("code matrix entries must be exactly -1 or +1")


def pairwise_loss(u: np.ndarray, b: np.ndarray, s: np.ndarray, rho: float):
    """Similarity fit sum_ij (u_i . b_j - rho*s_ij)^2 and its d/dU.

    u, b are k x n (columns are samples); s is the n x n +1/-1 similarity.
    """
    u = np.asarray(u, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if u.shape != b.shape or s.shape != (u.shape[1], u.shape[1]):
        raise ValueError("shape mismatch: u %s, b %s, s %s" % (u.shape, b.shape, s.shape))
    _check_codes(b)
    e = u.T @ b - rho * s
    return float((e * e).sum()), 2.0 * (b @ e.T)


def quantization_loss(b: np.ndarray, u: np.ndarray, alpha: float):
    """Penalty alpha * ||B - U||_F^2 and its gradient -2*alpha*(B - U)."""
    b = np.asarray(b, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if b.shape != u.shape:
        raise ValueError("shape mismatch: b %s vs u %s" % (b.shape, u.shape))
    diff = b - u
    return float(alpha * (diff * diff).sum()), -2.0 * alpha * diff


def _label_distribution(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.float64)
    totals = labels.sum(axis=1, keepdims=True)
    if np.any(totals == 0):
        raise ValueError("label rows must contain at least one 1")
    return labels / totals


def cross_entropy(p: np.ndarray, labels: np.ndarray):
    """Plain cross-entropy against the row-normalized label distribution."""
    p = np.asarray(p, dtype=np.float64)
    y = _label_distribution(labels)
    pc = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    return float(-(y * np.log(pc)).sum())


def focal_loss(p: np.ndarray, labels: np.ndarray, gamma: float):
    """Focal classification cost and its gradient w.r.t. pre-softmax logits.

    Per sample and class the cost is -y * (1 - p_hat)^gamma * log(p), where
    p_hat is p at labeled classes and 1-p elsewhere, and y is the label row
    normalized to a distribution (multi-hot rows share unit mass). With
    gamma=0 this is bit-for-bit the cross-entropy on the same clamped
    probabilities.
    """
    p = np.asarray(p, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if p.shape != labels.shape:
        raise ValueError("shape mismatch: p %s vs labels %s" % (p.shape, labels.shape))
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    row_sums = p.sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > 1e-9):
        raise ValueError("probability rows must sum to 1")
    y = _label_distribution(labels)
    pc = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    p_hat = np.where(labels == 1, pc, 1.0 - pc)
    weight = (1.0 - p_hat) ** gamma
    value = float(-(y * weight * np.log(pc)).sum())

    # d/dp of each term; zero wherever y is zero. The gamma=0 branch avoids
    # the 0 * log singularity exactly.
    if gamma == 0:
        dcost_dp = -y / pc
    else:
        one_minus = 1.0 - pc
        dcost_dp = y * (gamma * one_minus ** (gamma - 1.0) * np.log(pc)
                        - one_minus**gamma / pc)
    # Chain through softmax: dz = p * (w - sum_t(w * p)) row-wise.
    inner = (dcost_dp * p).sum(axis=1, keepdims=True)
    d_logits = p * (dcost_dp - inner)
    return value, d_logits


def stream_loss(u: np.ndarray, b: np.ndarray, s: np.ndarray, hp: HyperParams):
    """Pairwise plus quantization cost of one stream; gradient w.r.t. U."""
    pair_val, pair_grad = pairwise_loss(u, b, s, hp.rho)
    quant_val, quant_grad = quantization_loss(b, u, hp.alpha)
    return pair_val + quant_val, pair_grad + quant_grad


def joint_loss(u_v, u_l, u_f, b, s, p, labels, hp: HyperParams):
    """Collaborative objective L1 + lam*L2 + mu*L3 with per-stream breakdown.

    L1/L2/L3 are the visual, label and fused stream costs; L3 includes the
    focal term. Returns (total, (L1, L2, L3)) with the breakdown unweighted.
    """
    l1, _ = stream_loss(u_v, b, s, hp)
    l2, _ = stream_loss(u_l, b, s, hp)
    l3_stream, _ = stream_loss(u_f, b, s, hp)
    l3 = l3_stream + focal_loss(p, labels, hp.gamma_focal)[0]
    total = l1 + hp.lam * l2 + hp.mu * l3
    return total, (l1, l2, l3)
