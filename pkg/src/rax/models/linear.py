"""Regularised multinomial logistic regression baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax

from ..schema import canonical_schema

N_CLASSES = 3


@dataclass
class LinearModel:
    weights: np.ndarray  # (K, d) over standardised features
    bias: np.ndarray  # (K,)
    means: np.ndarray
    scales: np.ndarray
    l2: float
    schema_hash: int
    converged: bool = False
    n_iter: int = 0
    grad_norm: float = float("nan")

    kind = "linear"
    n_classes = N_CLASSES

    @property
    def n_features(self) -> int:
        return len(self.means)

    def standardize(self, X: np.ndarray) -> np.ndarray:
        Z = (np.asarray(X, np.float64) - self.means) / self.scales
        # missing values sit at the training mean
        return np.nan_to_num(Z, nan=0.0)

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        return self.standardize(X) @ self.weights.T + self.bias

    def iter_trees(self):
        return iter(())


def _objective(theta, Z, Y, sw, l2, k, d):
    W = theta[: k * d].reshape(k, d)
    b = theta[k * d :]
    S = Z @ W.T + b
    lp = log_softmax(S, axis=1)
    loss = -(sw * (Y * lp).sum(axis=1)).sum() + 0.5 * l2 * (W * W).sum()
    R = sw[:, None] * (np.exp(lp) - Y)
    gW = R.T @ Z + l2 * W
    gb = R.sum(axis=0)
    return loss, np.concatenate([gW.ravel(), gb]), np.exp(lp)


def _hessian(Z, P, sw, l2, k, d):
    Zt = np.hstack([Z, np.ones((len(Z), 1))])
    m = d + 1
    Hfull = np.zeros((k, m, k, m))
    for c in range(k):
        for j in range(c, k):
            a = sw * P[:, c] * ((c == j) - P[:, j])
            blk = (Zt * a[:, None]).T @ Zt
            Hfull[c, :, j, :] = blk
            Hfull[j, :, c, :] = blk.T
    for c in range(k):
        Hfull[c, :d, c, :d] += l2 * np.eye(d)
    # reorder from (class, [weights, bias]) blocks to theta layout [W.ravel(), b]
    perm = [c * m + i for c in range(k) for i in range(d)] + [c * m + d for c in range(k)]
    H = Hfull.reshape(k * m, k * m)
    return H[np.ix_(perm, perm)]


def fit_logistic(
    X,
    labels,
    l2: float = 1.0,
    sample_weight=None,
    tol: float = 1e-6,
    max_iter: int = 500,
    schema_hash: int | None = None,
) -> LinearModel:
    """Minimise sum_i w_i * CE_i + (l2/2)||W||^2 (bias unpenalised) by damped Newton
    iterations until the gradient 2-norm is <= tol or ``max_iter`` is reached."""
    X = np.asarray(X, np.float64)
    y = np.asarray(labels, np.int64)
    if len(np.unique(y)) < 2:
        raise ValueError("logistic regression needs at least two classes present")
    n, d = X.shape
    k = N_CLASSES
    means = np.nanmean(X, axis=0) if n else np.zeros(d)
    means = np.nan_to_num(means)
    scales = np.nanstd(X, axis=0)
    scales = np.where(np.isfinite(scales) & (scales > 0), scales, 1.0)
    model = LinearModel(
        np.zeros((k, d)), np.zeros(k), means, scales, float(l2),
        canonical_schema().schema_hash if schema_hash is None else schema_hash,
    )
    Z = model.standardize(X)
    Y = np.eye(k)[y]
    sw = np.ones(n) if sample_weight is None else np.asarray(sample_weight, np.float64)

    theta = np.zeros(k * d + k)
    prior = np.maximum(np.bincount(y, weights=sw, minlength=k), 1e-300)
    theta[k * d :] = np.log(prior / prior.sum())
    loss, g, P = _objective(theta, Z, Y, sw, l2, k, d)
    it = 0
    for it in range(1, max_iter + 1):
        if np.linalg.norm(g) <= tol:
            it -= 1
            break
        H = _hessian(Z, P, sw, l2, k, d)
        step = -np.linalg.lstsq(H, g, rcond=None)[0]
        slope = g @ step
        if not slope < 0:
            step, slope = -g, -(g @ g)
        t = 1.0
        while True:
            cand = theta + t * step
            new_loss, new_g, new_P = _objective(cand, Z, Y, sw, l2, k, d)
            if new_loss <= loss + 1e-4 * t * slope or t < 1e-12:
                break
            t *= 0.5
        if new_loss > loss:
            break
        theta, loss, g, P = cand, new_loss, new_g, new_P
    model.weights = theta[: k * d].reshape(k, d).copy()
    model.bias = theta[k * d :].copy()
    model.grad_norm = float(np.linalg.norm(g))
    model.converged = model.grad_norm <= tol
    model.n_iter = it
    return model
