"""Second-order multiclass objectives: per-sample gradients and diagonal hessians w.r.t. margins."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax

HESS_FLOOR = 1e-16


def softmax(margins: np.ndarray) -> np.ndarray:
    z = np.asarray(margins, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _onehot(labels: np.ndarray, k: int) -> np.ndarray:
    return np.eye(k)[labels]


def _sample_weights(labels: np.ndarray, class_weights) -> np.ndarray:
    if class_weights is None:
        return np.ones(len(labels))
    return np.asarray(class_weights, dtype=np.float64)[labels]


def _as_batch(margins, label):
    m = np.asarray(margins, dtype=np.float64)
    single = m.ndim == 1
    m = np.atleast_2d(m)
    y = np.atleast_1d(np.asarray(label, dtype=np.int64))
    return m, y, single


def softmax_loss(margins, labels, class_weights=None) -> np.ndarray:
    """Per-sample weighted cross-entropy, w * -log p_label."""
    m, y, _ = _as_batch(margins, labels)
    lp = log_softmax(m, axis=1)[np.arange(len(y)), y]
    return -_sample_weights(y, class_weights) * lp


def weighted_softmax_objective(margins, label, class_weights=None):
    """grad_c = w (p_c - [c = y]); hess_c = w p_c (1 - p_c), floored at 1e-16.

    Accepts a single margin vector with a scalar label, or an (n, K) batch.
    """
    m, y, single = _as_batch(margins, label)
    w = _sample_weights(y, class_weights)[:, None]
    p = softmax(m)
    grad = w * (p - _onehot(y, m.shape[1]))
    hess = np.maximum(w * p * (1.0 - p), HESS_FLOOR)
    return (grad[0], hess[0]) if single else (grad, hess)


def focal_loss(margins, labels, gamma: float = 2.0, class_weights=None) -> np.ndarray:
    """Per-sample w * -(1 - p_t)^gamma log p_t."""
    m, y, _ = _as_batch(margins, labels)
    lp = log_softmax(m, axis=1)
    log_pt = lp[np.arange(len(y)), y]
    q = _one_minus_pt(np.exp(lp), y)
    return -_sample_weights(y, class_weights) * q**gamma * log_pt


def _one_minus_pt(p: np.ndarray, y: np.ndarray) -> np.ndarray:
    # sum of the other probabilities keeps precision when p_t is close to 1
    other = p.copy()
    other[np.arange(len(y)), y] = 0.0
    return other.sum(axis=1)


def focal_derivatives(margins, label, gamma: float = 2.0, class_weights=None):
    """Unfloored analytic gradient and diagonal hessian of the focal loss."""
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    m, y, single = _as_batch(margins, label)
    n, k = m.shape
    lp = log_softmax(m, axis=1)
    p = np.exp(lp)
    rows = np.arange(n)
    pt = p[rows, y]
    log_pt = lp[rows, y]
    q = _one_minus_pt(p, y)
    w = _sample_weights(y, class_weights)

    # a (numerically) perfectly classified sample contributes nothing
    done = q <= 1e-300
    qs = np.where(done, 1.0, q)
    r = log_pt / qs  # log p_t / (1 - p_t), finite as q -> 0
    qg = qs**gamma
    qg1 = qs ** (gamma - 1)
    # loss as a function of p_t: f(p) = -(1-p)^g log p, with (1-p)^(g-2) log p = q^(g-1) r
    f1 = (gamma * qg * r if gamma else 0.0) - qg / pt
    f2 = (-gamma * (gamma - 1) * qg1 * r if gamma * (gamma - 1) else 0.0) + qg / pt**2
    if gamma:
        f2 = f2 + 2 * gamma * qg1 / pt

    a = _onehot(y, k) - p  # d p_t / d z_c = p_t * a_c
    dpt = pt[:, None] * a
    d2pt = pt[:, None] * (a * a - p * (1 - p))
    grad = w[:, None] * f1[:, None] * dpt
    hess = w[:, None] * (f2[:, None] * dpt * dpt + f1[:, None] * d2pt)
    grad[done] = 0.0
    hess[done] = 0.0
    return (grad[0], hess[0]) if single else (grad, hess)


def focal_objective(margins, label, gamma: float = 2.0, class_weights=None):
    grad, hess = focal_derivatives(margins, label, gamma, class_weights)
    return grad, np.maximum(hess, HESS_FLOOR)


@dataclass(frozen=True)
class Objective:
    """Gradient/hessian provider for boosting. ``gamma=None`` selects weighted softmax."""

    class_weights: tuple[float, float, float] | None = None
    gamma: float | None = None

    @property
    def name(self) -> str:
        return "softmax" if self.gamma is None else f"focal(gamma={self.gamma:g})"

    def gradients(self, margins: np.ndarray, labels: np.ndarray):
        if self.gamma is None:
            return weighted_softmax_objective(margins, labels, self.class_weights)
        return focal_objective(margins, labels, self.gamma, self.class_weights)

    def loss(self, margins: np.ndarray, labels: np.ndarray) -> np.ndarray:
        if self.gamma is None:
            return softmax_loss(margins, labels, self.class_weights)
        return focal_loss(margins, labels, self.gamma, self.class_weights)


def softmax_objective(class_weights=None) -> Objective:
    return Objective(tuple(class_weights) if class_weights is not None else None)


def focal(gamma: float = 2.0, class_weights=None) -> Objective:
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    return Objective(tuple(class_weights) if class_weights is not None else None, float(gamma))
