import numpy as np
from scipy.special import log_softmax

from rax.models import fit_logistic, predict_class, predict_proba


def _loss(W, b, Z, y, l2):
    lp = log_softmax(Z @ W.T + b, axis=1)
    return -lp[np.arange(len(y)), y].sum() + 0.5 * l2 * (W * W).sum()


def gradient_descent_oracle(Z, y, l2, k=2, steps=200000, lr=0.02):
    """Plain full-batch gradient descent on the two-class softmax problem."""
    n, d = Z.shape
    W, b = np.zeros((k, d)), np.zeros(k)
    Y = np.eye(k)[y]
    for _ in range(steps):
        P = np.exp(log_softmax(Z @ W.T + b, axis=1))
        R = P - Y
        gW, gb = R.T @ Z + l2 * W, R.sum(axis=0)
        if np.sqrt((gW * gW).sum() + (gb * gb).sum()) < 1e-11:
            break
        W -= lr * gW
        b -= lr * gb
    return _loss(W, b, Z, y, l2)


def test_matches_independent_minimizer():
    x = np.array([-2.0, -1.5, -1.0, -0.7, -0.2, 0.3, 0.6, 1.1, 1.4, 2.2])
    y = (x > 0).astype(int)
    model = fit_logistic(x[:, None], y, l2=1.0, tol=1e-10)
    assert model.converged
    Z = model.standardize(x[:, None])
    ours = _loss(model.weights, model.bias, Z, y, 1.0)
    # the absent third class has bias -> -inf; its weight row is pinned at 0 by the penalty
    assert np.abs(model.weights[2]).max() < 1e-8
    oracle = gradient_descent_oracle((x[:, None] - x.mean()) / x.std(), y, 1.0)
    assert abs(ours - oracle) <= 1e-6


def test_strong_penalty_gives_prior():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(500, 3))
    y = rng.choice(3, 500, p=[0.6, 0.3, 0.1])
    model = fit_logistic(X, y, l2=1e12)
    assert np.abs(model.weights).max() < 1e-8
    prior = np.bincount(y, minlength=3) / 500
    np.testing.assert_allclose(predict_proba(model, X), np.tile(prior, (500, 1)), atol=1e-6)


def test_scales_positive_and_argmax():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(300, 4))
    X[:, 3] = 5.0
    X[rng.random(X.shape) < 0.05] = np.nan
    y = np.digitize(X[:, 0] + rng.normal(0, 0.3, 300), [-0.5, 0.8])
    model = fit_logistic(X, y)
    assert np.all(model.scales > 0)
    assert np.array_equal(predict_class(model, X), np.argmax(model.decision_function(X), axis=1))


def test_sample_weights_shift_prediction_mass():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(1000, 2))
    y = np.where(X[:, 0] > 1.6, 2, (X[:, 1] > 0).astype(int))
    plain = fit_logistic(X, y)
    w = np.array([1.0, 1.0, 15.0])[y]
    weighted = fit_logistic(X, y, sample_weight=w)
    assert predict_proba(weighted, X)[:, 2].mean() > predict_proba(plain, X)[:, 2].mean()
