"""Discrete cyclic coordinate descent over the binary code matrix.

With all network outputs fixed, the code-dependent part of every stream cost
collapses to

    f(B) = ||Ubar^T B||_F^2 - 2 Tr(B^T Q),      Q = rho*Ubar*S + alpha*Ubar.

Updating one bit row z (one bit position across all samples) with the rest
fixed, the quadratic term contributes only a constant on the hypercube
(z_j^2 = 1), so f is linear in z and the row minimizer is closed-form:

    z = sgn(q - u (U')^T B')        with sgn(0) = +1,

where u, q are the corresponding rows of Ubar, Q and U', B' drop that row.
Row optimality and sweep monotonicity are enforced in-loop and verified
against exhaustive enumeration in the tests.

Multi-stream solves reuse the single-stream row update: a weighted sum of
quadratic terms sum_s w_s ||Ubar_s^T B||^2 equals ||V^T B||^2 for V the
column-stacked sqrt(w_s)*Ubar_s, and the Q terms add linearly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import HyperParams

DEFAULT_MAX_SWEEPS = 10
DEFAULT_TOL = 1e-6

# Slack for the in-loop monotonicity assertion, relative to objective scale.
_MONO_SLACK = 1e-9


@dataclass
class DccProblem:
    """One fixed-embedding code optimization instance.

    ubar gathers the (weighted, column-stacked) activated embeddings whose
    Gram term the solve minimizes; q is the combined linear coefficient
    matrix, aligned with the codes.
    """

    ubar: np.ndarray
    q: np.ndarray
    rho: float
    alpha: float


def _check_embedding(ubar: np.ndarray, name: str = "embedding") -> np.ndarray:
    ubar = np.asarray(ubar, dtype=np.float64)
    if not np.all(np.isfinite(ubar)):
        raise FloatingPointError("non-finite %s" % name)
    if not np.all(np.abs(ubar) < 1.0):
        raise ValueError("%s must be activated (entries in (-1, 1))" % name)
    return ubar


def build_q(ubar: np.ndarray, s: np.ndarray, rho: float, alpha: float) -> np.ndarray:
    """Linear coefficient matrix Q = rho * Ubar S + alpha * Ubar."""
    ubar = np.asarray(ubar, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if ubar.ndim != 2 or s.shape != (ubar.shape[1], ubar.shape[1]):
        raise ValueError("shape mismatch: ubar %s vs s %s" % (ubar.shape, s.shape))
    return rho * (ubar @ s) + alpha * ubar


def dcc_objective(b: np.ndarray, ubar: np.ndarray, q: np.ndarray) -> float:
    """||Ubar^T B||_F^2 - 2 Tr(B^T Q); the stream cost minus B-free constants."""
    b = np.asarray(b, dtype=np.float64)
    ubar = np.asarray(ubar, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if b.ndim != 2 or q.shape != b.shape or ubar.ndim != 2 \
            or ubar.shape[0] != b.shape[0]:
        raise ValueError("shape mismatch: b %s, ubar %s, q %s"
                         % (b.shape, ubar.shape, q.shape))
    g = ubar.T @ b
    return float((g * g).sum() - 2.0 * (b * q).sum())


def _row_scores(b: np.ndarray, ubar: np.ndarray, q: np.ndarray, r: int) -> np.ndarray:
    """Per-bit linear coefficients q_r - u_r (U')^T B' for row r."""
    rest = np.arange(b.shape[0]) != r
    cross = (ubar[r] @ ubar[rest].T) @ b[rest]
    return q[r] - cross


def update_row(b: np.ndarray, ubar: np.ndarray, q: np.ndarray, r: int) -> np.ndarray:
    """Replace bit row r with its exact minimizer; other rows untouched."""
    b = np.asarray(b, dtype=np.float64)
    if not 0 <= r < b.shape[0]:
        raise IndexError("row index %d out of range for k=%d" % (r, b.shape[0]))
    scores = _row_scores(b, ubar, q, r)
    out = b.copy()
    out[r] = np.where(scores >= 0.0, 1.0, -1.0)
    return out


def dcc_sweep(b: np.ndarray, ubar: np.ndarray, q: np.ndarray,
              order=None) -> np.ndarray:
    """One pass of row updates in the given order (default ascending).

    The objective change of each row update is checked in-loop: flipping row
    z_old -> z_new changes f by -2 * scores . (z_new - z_old), which the
    closed-form minimizer makes non-positive.
    """
    b = np.asarray(b, dtype=np.float64).copy()
    k = b.shape[0]
    if order is None:
        order = np.arange(k)
    order = np.asarray(order, dtype=np.int64)
    if not np.array_equal(np.sort(order), np.arange(k)):
        raise ValueError("order must be a permutation of 0..k-1")
    slack = _MONO_SLACK * max(1.0, abs(dcc_objective(b, ubar, q)))
    for r in order:
        scores = _row_scores(b, ubar, q, r)
        new_row = np.where(scores >= 0.0, 1.0, -1.0)
        delta = -2.0 * float(scores @ (new_row - b[r]))
        if delta > slack:
            raise AssertionError("row update increased the objective (delta=%g)" % delta)
        b[r] = new_row
    return b


def solve_b(u_v, u_l, u_f, s, hp: HyperParams,
            max_sweeps: int = DEFAULT_MAX_SWEEPS, tol: float = DEFAULT_TOL,
            order=None) -> np.ndarray:
    """Minimize the code-dependent part of the joint objective by DCC.

    u_v, u_l, u_f are activated k x n embeddings weighted 1, lam, mu; a
    stream whose weight is zero may be passed as None. The solve is
    warm-started from the sign of the weighted embedding sum and stops when
    the relative objective decrease falls below tol or after max_sweeps.
    """
    streams = []
    for weight, ubar, name in ((1.0, u_v, "visual"), (hp.lam, u_l, "label"),
                               (hp.mu, u_f, "fused")):
        if weight == 0.0:
            continue
        if ubar is None:
            raise ValueError("%s stream has weight %g but no embedding" % (name, weight))
        streams.append((weight, _check_embedding(ubar, name + " embedding")))
    if not streams:
        raise ValueError("at least the visual stream must be active")
    shape = streams[0][1].shape
    if any(ub.shape != shape for _, ub in streams):
        raise ValueError("stream embeddings must share one k x n shape")

    stacked = np.concatenate([np.sqrt(w) * ub for w, ub in streams], axis=1)
    q_total = np.zeros(shape)
    warm = np.zeros(shape)
    for w, ub in streams:
        q_total += w * build_q(ub, s, hp.rho, hp.alpha)
        warm += w * ub
    problem = DccProblem(stacked, q_total, hp.rho, hp.alpha)
    b = np.where(warm >= 0.0, 1.0, -1.0)

    prev = dcc_objective(b, problem.ubar, problem.q)
    for _ in range(max_sweeps):
        b = dcc_sweep(b, problem.ubar, problem.q, order)
        cur = dcc_objective(b, problem.ubar, problem.q)
        if cur > prev + _MONO_SLACK * max(1.0, abs(prev)):
            raise AssertionError("sweep increased the objective")
        if prev - cur <= tol * max(1.0, abs(prev)):
            break
        prev = cur
    return b
