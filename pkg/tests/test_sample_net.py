import numpy as np
import pytest

from levelsets.mlp import Mlp, make_mlp
from levelsets.projection import ProjectionConfig, project
from levelsets.sample_net import (
    SampleHandle,
    handles_from_records,
    sample_grad,
    sample_grads_total,
    sample_position,
    sample_positions,
    sample_velocity_matrix,
)


def random_net_with_handles(seed, d=3, l=1, widths=(16, 16), n=6, activation="softplus"):
    rng = np.random.default_rng(seed)
    mlp = make_mlp(d, list(widths), l, activation=activation, rng=rng)
    seeds = rng.normal(size=(n, d)) * 0.5
    recs = project(mlp, seeds, ProjectionConfig(max_iters=30, residual_tol=1e-9))
    handles = handles_from_records(recs)
    return mlp, handles


def scalar_theta_net():
    """F(x; theta) = w x + b with w=1, b=-1, so F = x - 1 and p=1 is a zero."""
    mlp = Mlp([np.array([[1.0]])], [np.array([-1.0])])
    h = SampleHandle(p=np.array([1.0]), pinv=np.array([[1.0]]), c=np.array([0.0]))
    return mlp, h


def test_anchoring_exact_bitwise():
    mlp, handles = random_net_with_handles(0, n=8)
    pos = sample_positions(mlp, handles)
    for i, h in enumerate(handles):
        assert np.array_equal(pos[i], h.p)
        assert np.array_equal(sample_position(mlp, h), h.p)


def test_scalar_example_position_and_grad():
    mlp, h = scalar_theta_net()
    # position at w=1 anchors at p=1; at other w it is p(w) = 2 - w
    for w in (0.7, 1.0, 1.5):
        m = mlp.clone()
        m.weights[0][0, 0] = w
        assert np.allclose(sample_position(m, h), 2.0 - w, atol=1e-15)
        # F(p(w); w) = -(w-1)^2: stationary to first order at w=1
        assert np.allclose(m.forward_one(sample_position(m, h)), -((w - 1.0) ** 2), atol=1e-15)
    g = sample_grad(mlp, h, np.array([1.0]))
    # params are [w, b]; dp/dw = -x|_{x=p} = -1, dp/db = -1
    assert np.allclose(g, [-1.0, -1.0], atol=1e-15)


def test_sample_grad_matches_finite_differences():
    for seed in range(4):
        mlp, handles = random_net_with_handles(seed, widths=(12, 12), n=3)
        theta0 = mlp.get_params()
        rng = np.random.default_rng(100 + seed)
        for h in handles:
            v = rng.normal(size=3)
            g = sample_grad(mlp, h, v)
            delta = rng.normal(size=mlp.n_params)
            delta /= np.linalg.norm(delta)
            eps = 1e-6
            m = mlp.clone()
            m.set_params(theta0 + eps * delta)
            pp = sample_position(m, h)
            m.set_params(theta0 - eps * delta)
            pm = sample_position(m, h)
            fd = float(v @ (pp - pm)) / (2 * eps)
            an = float(g @ delta)
            assert abs(an - fd) / max(abs(fd), 1e-9) < 1e-4


def test_first_order_stationarity_eq6():
    mlp, handles = random_net_with_handles(7, d=4, l=2, widths=(10, 10), n=4)
    rng = np.random.default_rng(3)
    for h in handles:
        V = sample_velocity_matrix(mlp, h)  # (d, m)
        A = mlp.jacobian_input(h.p[None, :])[0]  # (l, d)
        Dtheta = np.stack([mlp.vjp_params(h.p, e) for e in np.eye(2)])  # (l, m)
        for _ in range(25):
            delta = rng.normal(size=mlp.n_params)
            delta /= np.linalg.norm(delta)
            resid = A @ (V @ delta) + Dtheta @ delta
            assert np.linalg.norm(resid) <= 1e-8


def test_second_order_residual_decay():
    mlp, handles = random_net_with_handles(11, widths=(14, 14), n=4)
    theta0 = mlp.get_params()
    rng = np.random.default_rng(5)
    ratios = []
    for h in handles:
        delta = rng.normal(size=mlp.n_params)
        delta *= 1e-2 / np.linalg.norm(delta)

        def resid(scale):
            m = mlp.clone()
            m.set_params(theta0 + scale * delta)
            pos = sample_position(m, h)
            return np.linalg.norm(m.forward(pos[None, :])[0] - h.c)

        r1, r2 = resid(1.0), resid(0.5)
        if r2 > 1e-13:  # avoid ratios polluted by rounding noise
            ratios.append(r1 / r2)
    assert len(ratios) >= 2
    med = np.median(ratios)
    assert 3.0 < med < 5.0


def test_lemma2_velocity_columns_orthogonal_to_level_set():
    mlp, handles = random_net_with_handles(13, d=4, l=2, widths=(10, 10), n=4)
    for h in handles:
        V = sample_velocity_matrix(mlp, h)
        A = mlp.jacobian_input(h.p[None, :])[0]
        pinv = np.linalg.pinv(A)
        tangential = V - pinv @ (A @ V)
        assert np.abs(np.linalg.norm(tangential, axis=0)).max() <= 1e-8


def test_velocity_matrix_affine_closed_form():
    rng = np.random.default_rng(17)
    A = rng.normal(size=(2, 4))
    b = rng.normal(size=2)
    mlp = Mlp([A], [b])
    recs = project(mlp, rng.normal(size=(3, 4)), ProjectionConfig(max_iters=2))
    for h in handles_from_records(recs):
        # hand-derived: Dtheta F has dF_k/dW_ij = delta_ki p_j, dF_k/db_i = delta_ki
        Dtheta = np.zeros((2, mlp.n_params))
        for k in range(2):
            Dtheta[k, 4 * k : 4 * (k + 1)] = h.p
            Dtheta[k, 8 + k] = 1.0
        expected = -A.T @ np.linalg.solve(A @ A.T, Dtheta)
        V = sample_velocity_matrix(mlp, h)
        assert np.abs(V - expected).max() < 1e-12


def test_velocity_rows_match_sample_grad_bitwise():
    mlp, handles = random_net_with_handles(19, n=2)
    h = handles[0]
    V = sample_velocity_matrix(mlp, h)
    for i in range(3):
        assert np.array_equal(V[i], sample_grad(mlp, h, np.eye(3)[i]))


def test_velocity_matrix_size_guard():
    class Big:
        input_dim, output_dim, n_params = 3, 1, 10**6

    h = SampleHandle(p=np.zeros(3), pinv=np.zeros((3, 1)), c=np.zeros(1))
    with pytest.raises(ValueError, match="refusing"):
        sample_velocity_matrix(Big(), h)


def test_batch_consistency():
    mlp, handles = random_net_with_handles(23, n=7)
    pos = sample_positions(mlp, handles)
    for i, h in enumerate(handles):
        assert np.array_equal(pos[i], sample_position(mlp, h))
    rng = np.random.default_rng(0)
    cots = rng.normal(size=(7, 3))
    total = sample_grads_total(mlp, handles, cots)
    singles = sum(sample_grad(mlp, h, cots[i]) for i, h in enumerate(handles))
    assert np.abs(total - singles).max() < 1e-12


def test_linear_alternative_oracle_agrees_to_first_order():
    # the O(m)-storage linear model p + Dp (theta - theta0) must match the
    # sample network to first order: their difference shrinks ~4x when the
    # parameter step is halved
    mlp, handles = random_net_with_handles(29, widths=(12, 12), n=3)
    theta0 = mlp.get_params()
    rng = np.random.default_rng(31)
    h = handles[0]
    V = sample_velocity_matrix(mlp, h)
    delta = rng.normal(size=mlp.n_params)
    delta *= 1e-2 / np.linalg.norm(delta)

    def gap(scale):
        m = mlp.clone()
        m.set_params(theta0 + scale * delta)
        lin = h.p + V @ (scale * delta)
        return np.linalg.norm(sample_position(m, h) - lin)

    g1, g2 = gap(1.0), gap(0.5)
    assert g1 < 1e-3
    if g2 > 1e-13:
        assert 2.5 < g1 / g2 < 6.0
