import numpy as np
import pytest

from levelsets.losses import (
    MarginField,
    ReconConfig,
    RobustConfig,
    SvmConfig,
    adversarial_margin_loss,
    adversarial_margin_terms,
    build_recon_handles,
    cross_entropy,
    cross_entropy_input_grad,
    geometric_svm,
    geometric_svm_terms,
    margin_logit,
    output_hinge,
    reconstruction_terms,
    robust_hinge_term,
    scalar_binary_view,
    soft_svm_affine,
)
from levelsets.mlp import Mlp, make_mlp
from levelsets.projection import ProjectionConfig, project
from levelsets.reconstruction import PointCloud
from levelsets.sample_net import SampleHandle, handles_from_records


def logit_net(rows):
    """A 'network' returning fixed logits regardless of x (weights 0)."""
    rows = np.asarray(rows, float)
    return Mlp([np.zeros((rows.size, 2))], [rows])


def fd_theta_grad(loss_fn, mlp, n_dirs=4, eps=1e-6, seed=0):
    """Directional finite differences of a theta -> loss map."""
    rng = np.random.default_rng(seed)
    theta0 = mlp.get_params()
    out = []
    for _ in range(n_dirs):
        delta = rng.normal(size=mlp.n_params)
        delta /= np.linalg.norm(delta)
        m = mlp.clone()
        m.set_params(theta0 + eps * delta)
        lp = loss_fn(m)
        m.set_params(theta0 - eps * delta)
        lm = loss_fn(m)
        out.append((delta, (lp - lm) / (2 * eps)))
    return out


# -- margin logit ---------------------------------------------------------------


def test_margin_logit_direct():
    net = logit_net([3.0, 1.0, 0.0])
    v, gx, gtheta = margin_logit(net, np.zeros(2), 0)
    assert v == 2.0
    assert np.array_equal(gx, np.zeros(2))


def test_margin_logit_boundary_tie():
    net = logit_net([2.0, 2.0, 0.0])
    v, _, _ = margin_logit(net, np.zeros(2), 0)
    assert v == 0.0
    v1, _, _ = margin_logit(net, np.zeros(2), 1)
    assert v1 == 0.0


def test_margin_logit_binary_scalar_convention():
    rng = np.random.default_rng(0)
    mlp = make_mlp(2, [8], 1, rng=rng)
    x = rng.normal(size=2)
    v1, _, _ = margin_logit(mlp, x, 1)
    v0, _, _ = margin_logit(mlp, x, 0)
    F = mlp.forward_one(x)[0]
    assert v1 == F and v0 == -F


def test_margin_field_tie_breaks_lowest_index():
    net = logit_net([0.0, 5.0, 5.0])
    view = MarginField(net, 0)
    cot = view._cotangents(net.forward(np.zeros((1, 2))))
    assert np.array_equal(cot[0], [1.0, -1.0, 0.0])


# -- baselines -------------------------------------------------------------------


def test_cross_entropy_uniform_logits():
    for C in (2, 3, 7):
        net = logit_net(np.zeros(C))
        loss, _ = cross_entropy(net, np.zeros((5, 2)), np.zeros(5, dtype=int))
        assert loss == pytest.approx(np.log(C), abs=1e-12)


def test_output_hinge_satisfied_margin():
    net = logit_net([2.0, 0.5, 0.0])
    loss, grad = output_hinge(net, np.zeros((3, 2)), np.zeros(3, dtype=int))
    assert loss == 0.0
    assert np.array_equal(grad, np.zeros(net.n_params))


def test_soft_svm_hand_values():
    w, b = np.array([3.0, 4.0]), 0.0
    X = np.array([[1.0, 1.0]])
    assert soft_svm_affine(w, b, X, [1], 0.0) == 0.0
    assert soft_svm_affine(w, b, X, [-1], 0.0) == 8.0


def test_soft_svm_separable_zero():
    rng = np.random.default_rng(1)
    X = np.concatenate([rng.normal(size=(20, 2)) + 5, rng.normal(size=(20, 2)) - 5])
    y = np.array([1.0] * 20 + [-1.0] * 20)
    w = np.array([10.0, 10.0])
    assert soft_svm_affine(w, 0.0, X, y, 0.0) == 0.0


@pytest.mark.parametrize("l", [1, 3])
def test_baseline_grads_match_fd(l):
    rng = np.random.default_rng(2)
    mlp = make_mlp(3, [10, 10], l, activation="softplus", rng=rng)
    X = rng.normal(size=(12, 3))
    y = rng.integers(0, l, size=12) if l > 1 else rng.choice([-1.0, 1.0], size=12)
    for fn in (cross_entropy, output_hinge):
        loss, grad = fn(mlp, X, y)
        for delta, fd in fd_theta_grad(lambda m: fn(m, X, y)[0], mlp, seed=3):
            an = float(grad @ delta)
            assert abs(an - fd) / max(abs(fd), 1e-8) < 1e-5


def test_cross_entropy_input_grad_matches_fd():
    rng = np.random.default_rng(3)
    mlp = make_mlp(2, [10], 3, activation="softplus", rng=rng)
    X = rng.normal(size=(6, 2))
    y = rng.integers(0, 3, size=6)
    G = cross_entropy_input_grad(mlp, X, y)
    eps = 1e-6
    for i in range(6):
        for j in range(2):
            e = np.zeros(2)
            e[j] = eps
            lp, _ = cross_entropy(mlp, (X[i] + e)[None, :], y[i : i + 1])
            lm, _ = cross_entropy(mlp, (X[i] - e)[None, :], y[i : i + 1])
            assert abs(G[i, j] - (lp - lm) / (2 * eps)) < 1e-6


# -- geometric svm ----------------------------------------------------------------


def random_separable(rng, n=12, d=3, margin=1.0):
    w = rng.normal(size=d)
    w /= np.linalg.norm(w)
    b = rng.normal() * 0.2
    X = rng.normal(size=(n, d)) * 2.0
    g = X @ w + b
    y = np.where(g >= 0, 1.0, -1.0)
    return X, y


def test_geometric_svm_reduces_to_soft_svm():
    rng = np.random.default_rng(4)
    cfg = SvmConfig(lam=0.05, alpha=-2.0, dist_norm="l2")
    for _ in range(100):
        d = rng.integers(2, 6)
        w = rng.normal(size=d)
        if np.linalg.norm(w) < 0.3:
            continue
        b = rng.normal()
        X = rng.normal(size=(10, d))
        y = rng.choice([-1.0, 1.0], size=10)
        field = Mlp([w[None, :]], [np.array([b])])
        loss, _, info = geometric_svm(field, X, y, cfg, ProjectionConfig(max_iters=3))
        assert info["fallback_count"] == 0
        oracle = soft_svm_affine(w, b, X, y, cfg.lam)
        assert abs(loss - oracle) <= 1e-8


def test_geometric_svm_boundary_example_hinge_one():
    w = np.array([1.0, 0.0])
    field = Mlp([w[None, :]], [np.zeros(1)])
    X = np.array([[0.0, 0.3]])  # exactly on the decision boundary
    loss, _, info = geometric_svm(field, X, [1.0], SvmConfig(lam=0.0, alpha=-2.0, dist_norm="l2"))
    assert info["dist"][0] == 0.0
    assert info["hinge"][0] == pytest.approx(1.0, abs=1e-12)


def test_geometric_svm_terms_grad_matches_fd():
    rng = np.random.default_rng(5)
    mlp = make_mlp(2, [12, 12], 1, activation="softplus", rng=rng)
    X, y = random_separable(rng, n=8, d=2)
    # rescale the output layer so the -1/0/+1 level sets all exist near the data
    F = mlp.forward(X)[:, 0]
    scale = 3.0 / max(F.std(), 1e-3)
    mlp.weights[-1] *= scale
    mlp.biases[-1] = (mlp.biases[-1] - np.median(F)) * scale
    pc = ProjectionConfig(max_iters=40, residual_tol=1e-10)
    recs0 = project(mlp, X, pc, targets=0.0)
    P0 = np.stack([r.p for r in recs0])
    recs1 = project(mlp, P0, pc, targets=1.0)
    recsm1 = project(mlp, P0, pc, targets=-1.0)
    keep = [i for i in range(8) if recs0[i].converged and recs1[i].converged and recsm1[i].converged]
    assert len(keep) >= 4
    h0 = handles_from_records([recs0[i] for i in keep])
    h1 = handles_from_records([recs1[i] for i in keep])
    hm1 = handles_from_records([recsm1[i] for i in keep])
    Xk, yk = X[keep], y[keep]
    for cfg in (SvmConfig(lam=0.01, alpha=-1.0, dist_norm="linf"),
                SvmConfig(lam=0.01, alpha=-2.0, dist_norm="l2")):
        loss, grad, _ = geometric_svm_terms(mlp, Xk, yk, h0, h1, hm1, cfg)
        for delta, fd in fd_theta_grad(
            lambda m: geometric_svm_terms(m, Xk, yk, h0, h1, hm1, cfg)[0], mlp, seed=6
        ):
            an = float(grad @ delta)
            assert abs(an - fd) / max(abs(fd), 1e-8) < 1e-4


def test_svm_lambda_ramp():
    cfg = SvmConfig(lam=0.2, lambda_schedule=(0.01, 0.2, 50))
    assert cfg.lam_at(0) == 0.01
    assert cfg.lam_at(25) == pytest.approx(0.105)
    assert cfg.lam_at(50) == 0.2
    assert cfg.lam_at(500) == 0.2


# -- adversarial margin loss -------------------------------------------------------


def test_rho_axis_selection():
    # x=(0,0), p=(0.1,0.3), gradient (0.2,-0.9): axis 2 wins, rho = 0.3
    pinv = np.array([[0.2], [-0.9]])  # proportional to the gradient
    h = SampleHandle(p=np.array([0.1, 0.3]), pinv=pinv / (pinv**2).sum(), c=np.zeros(1))
    istar = int(np.argmax(np.abs(h.pinv[:, 0])))
    assert istar == 1
    rho = abs(0.0 - h.p[istar])
    assert rho == pytest.approx(0.3)


def test_robust_hinge_satisfied_and_misclassified():
    eps = 0.2
    assert robust_hinge_term(eps, 1.0, +1.0, 0.3) == 0.0
    val = robust_hinge_term(eps, 2.0, -1.0, 0.1)
    assert val == pytest.approx(2.0 * (eps + 0.1))
    assert val > eps


def test_robust_hinge_monotone_in_rho():
    eps = 0.5
    rhos = np.linspace(0, 1, 50)
    vals = [robust_hinge_term(eps, 1.3, +1.0, r) for r in rhos]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_adversarial_margin_loss_runs_and_grad_fd(circle_net):
    rng = np.random.default_rng(7)
    X = rng.uniform(-0.9, 0.9, size=(10, 2))
    y = np.where(np.linalg.norm(X, axis=1) < 0.6, 1.0, -1.0)
    cfg = RobustConfig(eps_train=0.2)
    loss, grad, info = adversarial_margin_loss(circle_net, X, y, cfg,
                                               ProjectionConfig(max_iters=25))
    assert info["skipped"] <= 2
    assert np.isfinite(loss) and loss >= 0.0
    # frozen-handle FD check via the terms function on one class group
    view = MarginField(circle_net, 1)
    idx = np.flatnonzero(y > 0)
    recs = project(view, X[idx], ProjectionConfig(max_iters=30))
    keep = [i for i, r in enumerate(recs) if r.converged]
    handles = handles_from_records([recs[i] for i in keep])
    istars = np.array([int(np.argmax(np.abs(h.pinv[:, 0]))) for h in handles])
    Xk = X[idx][keep]
    f0 = view.forward(Xk)[:, 0]
    s = np.where(f0 >= 0, 1.0, -1.0)
    lam = np.ones(len(keep))
    loss0, grad0, _ = adversarial_margin_terms(view, Xk, s, lam, handles, istars,
                                               cfg.eps_train, len(keep))
    for delta, fd in fd_theta_grad(
        lambda m: adversarial_margin_terms(MarginField(m, 1), Xk, s, lam, handles,
                                           istars, cfg.eps_train, len(keep))[0],
        circle_net, seed=8,
    ):
        an = float(grad0 @ delta)
        assert abs(an - fd) / max(abs(fd), 1e-8) < 1e-4


# -- reconstruction loss --------------------------------------------------------------


def circle_cloud(n=64, r=1.0):
    t = np.linspace(0, 2 * np.pi, n, endpoint=False)
    return PointCloud(np.stack([r * np.cos(t), r * np.sin(t)], axis=1))


def test_reconstruction_perfect_fit_zero_loss():
    # a field whose zero set is the x-axis, cloud points on the x-axis
    field = Mlp([np.array([[0.0, 1.0]])], [np.zeros(1)])
    cloud = PointCloud(np.stack([np.linspace(-1, 1, 32), np.zeros(32)], axis=1))
    cfg = ReconConfig(levels=(0.0,), sigma=0.0)
    rng = np.random.default_rng(0)
    handles = build_recon_handles(field, cloud.points, cfg, ProjectionConfig(), rng)
    # cloud spacing (~0.065) bounds the achievable distance term
    loss, grad, info = reconstruction_terms(field, handles, cloud, cloud.points, cfg, lam=1.0)
    assert info["data_term"] == 0.0
    assert loss <= 0.04


def test_reconstruction_signed_distance_levels():
    # exact signed distance to the unit circle: every level term vanishes up
    # to cloud sampling resolution
    class SDF:
        input_dim, output_dim = 2, 1
        n_params = 0

        def forward(self, X):
            return (np.linalg.norm(X, axis=1) - 1.0)[:, None]

        def jacobian_input(self, X):
            n = np.linalg.norm(X, axis=1, keepdims=True)
            return (X / np.where(n > 0, n, 1.0))[:, None, :]

        def vjp_params_batch(self, X, V):
            return np.zeros(0)

    cloud = circle_cloud(512)
    cfg = ReconConfig(levels=(0.0, 0.3, -0.3), sigma=0.05)
    rng = np.random.default_rng(1)
    handles = build_recon_handles(SDF(), cloud.points, cfg, ProjectionConfig(max_iters=30), rng)
    assert set(handles) == {0.0, 0.3, -0.3}
    loss, _, info = reconstruction_terms(SDF(), handles, cloud, cloud.points, cfg, lam=1.0)
    for t, term in info["level_terms"].items():
        assert term < 0.01


def test_reconstruction_terms_grad_matches_fd():
    rng = np.random.default_rng(9)
    mlp = make_mlp(2, [10, 10], 1, activation="softplus", rng=rng)
    cloud = circle_cloud(48, r=0.8)
    cfg = ReconConfig(levels=(0.0, 0.2), sigma=0.05)
    handles = build_recon_handles(mlp, cloud.points[:16], cfg,
                                  ProjectionConfig(max_iters=30), rng)
    Xb = cloud.points[:16]
    loss, grad, _ = reconstruction_terms(mlp, handles, cloud, Xb, cfg, lam=2.0)
    for delta, fd in fd_theta_grad(
        lambda m: reconstruction_terms(m, handles, cloud, Xb, cfg, lam=2.0)[0], mlp, seed=10
    ):
        an = float(grad @ delta)
        assert abs(an - fd) / max(abs(fd), 1e-8) < 1e-4


def test_reconstruction_permutation_invariance():
    rng = np.random.default_rng(11)
    mlp = make_mlp(2, [8], 1, rng=rng)
    pts = rng.normal(size=(32, 2))
    cfg = ReconConfig(levels=(0.0,), sigma=0.0)
    handles = build_recon_handles(mlp, pts[:8], cfg, ProjectionConfig(), rng)
    cloud_a = PointCloud(pts)
    cloud_b = PointCloud(pts[::-1].copy())
    la, _, _ = reconstruction_terms(mlp, handles, cloud_a, pts[:8], cfg, lam=1.0)
    lb, _, _ = reconstruction_terms(mlp, handles, cloud_b, pts[:8], cfg, lam=1.0)
    assert la == pytest.approx(lb, abs=1e-12)
    perm = {t: [hs[i] for i in rng.permutation(len(hs))] for t, hs in handles.items()}
    lc, _, _ = reconstruction_terms(mlp, perm, cloud_a, pts[:8], cfg, lam=1.0)
    assert la == pytest.approx(lc, abs=1e-12)


def test_recon_config_validation_and_ramp():
    with pytest.raises(ValueError, match="level set 0"):
        ReconConfig(levels=(0.5,))
    cfg = ReconConfig(levels=(0.0,), lam_start=1.0, lam_end=5.0, lam_epochs=1000)
    assert cfg.lam_at(0) == 1.0
    assert cfg.lam_at(500) == 3.0
    assert cfg.lam_at(2000) == 5.0


def test_scalar_binary_view_two_logit():
    rng = np.random.default_rng(12)
    mlp = make_mlp(2, [8], 2, rng=rng)
    view = scalar_binary_view(mlp)
    X = rng.normal(size=(5, 2))
    logits = mlp.forward(X)
    assert np.allclose(view.forward(X)[:, 0], logits[:, 1] - logits[:, 0], atol=1e-14)
