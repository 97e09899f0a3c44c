import numpy as np
import pytest

from levelsets.mlp import make_mlp


def _adam_fit(mlp, loss_grad, steps, lr=0.01):
    """Tiny full-batch Adam driver for building trained test fixtures."""
    theta = mlp.get_params()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    for t in range(1, steps + 1):
        g = loss_grad(mlp)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        mhat = m / (1 - 0.9**t)
        vhat = v / (1 - 0.999**t)
        theta = theta - lr * mhat / (np.sqrt(vhat) + 1e-8)
        mlp.set_params(theta)
    return mlp


def fit_binary_classifier(X, y, widths=(32, 32), steps=400, lr=0.01, seed=5):
    """Train a scalar-output relu net with logistic loss; y in {-1, +1}."""
    mlp = make_mlp(X.shape[1], list(widths), 1, rng=np.random.default_rng(seed))
    n = X.shape[0]

    def loss_grad(net):
        F = net.forward(X)[:, 0]
        dF = -y / (1.0 + np.exp(y * F)) / n
        return net.vjp_params_batch(X, dF[:, None])

    _adam_fit(mlp, loss_grad, steps, lr)
    return mlp


@pytest.fixture(scope="session")
def circle_net():
    """Scalar relu net trained so its zero set approximates the radius-0.6 circle."""
    rng = np.random.default_rng(42)
    X = rng.uniform(-1, 1, size=(512, 2))
    y = np.where(np.linalg.norm(X, axis=1) < 0.6, 1.0, -1.0)
    net = fit_binary_classifier(X, y, widths=(32, 32), steps=600, lr=0.02, seed=7)
    acc = np.mean(np.sign(net.forward(X)[:, 0]) * y > 0)
    assert acc > 0.97, f"fixture net failed to train (acc={acc})"
    return net
