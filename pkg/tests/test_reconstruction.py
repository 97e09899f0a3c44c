import numpy as np
import pytest

from levelsets.mlp import Mlp
from levelsets.reconstruction import (
    PointCloud,
    chamfer,
    dist_to_cloud,
    extract_curve,
    extract_isosurface,
    hausdorff,
    load_cloud,
    save_cloud,
    save_mesh,
)


class FieldFn:
    """Wrap an analytic function as a scalar/vector field for extraction."""

    def __init__(self, fn, input_dim, output_dim=1):
        self.fn = fn
        self.input_dim = input_dim
        self.output_dim = output_dim

    def forward(self, X):
        out = np.asarray(self.fn(np.asarray(X, float)))
        return out if out.ndim == 2 else out[:, None]

    def jacobian_input(self, X, h=1e-7):
        X = np.asarray(X, float)
        J = np.zeros((X.shape[0], self.output_dim, self.input_dim))
        for i in range(self.input_dim):
            e = np.zeros(self.input_dim)
            e[i] = h
            J[:, :, i] = (self.forward(X + e) - self.forward(X - e)) / (2 * h)
        return J


def brute_nn(points, q):
    d = np.linalg.norm(points - q, axis=1)
    i = int(np.argmin(d))
    return float(d[i]), i


def brute_chamfer(A, B, norm):
    def dmat(P, Q):
        diff = P[:, None, :] - Q[None, :, :]
        return np.abs(diff).sum(-1) if norm == "l1" else np.sqrt((diff**2).sum(-1))

    return float(dmat(A, B).min(axis=1).mean() + dmat(B, A).min(axis=1).mean())


def brute_hausdorff(A, B, norm):
    diff = A[:, None, :] - B[None, :, :]
    d = np.abs(diff).sum(-1) if norm == "l1" else np.sqrt((diff**2).sum(-1))
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


def test_load_cloud_basic(tmp_path):
    p = tmp_path / "c.xyz"
    p.write_text("0 0 0\n1 0 0\n")
    cloud = load_cloud(p)
    assert len(cloud) == 2
    assert np.array_equal(cloud.points, [[0, 0, 0], [1, 0, 0]])


def test_load_cloud_empty_and_malformed(tmp_path):
    p = tmp_path / "bad.xyz"
    p.write_text("")
    with pytest.raises(ValueError, match="no points"):
        load_cloud(p)
    p.write_text("0 0 0\n1 oops 0\n")
    with pytest.raises(ValueError, match="line 2"):
        load_cloud(p)


def test_cloud_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(100_000, 3)) * np.pi
    p = tmp_path / "big.xyz"
    save_cloud(pts, p)
    back = load_cloud(p)
    assert np.array_equal(back.points, pts)


def test_dist_to_cloud_exact_point():
    cloud = PointCloud([[0.0, 0.0], [1.0, 1.0]])
    d, i = dist_to_cloud(cloud, np.array([1.0, 1.0]))
    assert d == 0.0 and i == 1


def test_dist_to_cloud_circle():
    theta = np.linspace(0, 2 * np.pi, 4096, endpoint=False)
    cloud = PointCloud(np.stack([np.cos(theta), np.sin(theta)], axis=1))
    d, _ = dist_to_cloud(cloud, np.array([2.0, 0.0]))
    gap = 2 * np.pi / 4096
    assert abs(d - 1.0) <= gap


def test_kdtree_matches_brute_force():
    rng = np.random.default_rng(1)
    cloud = PointCloud(rng.normal(size=(500, 3)))
    Q = rng.normal(size=(1000, 3))
    d, i = dist_to_cloud(cloud, Q)
    for k in range(Q.shape[0]):
        bd, bi = brute_nn(cloud.points, Q[k])
        assert d[k] == bd and i[k] == bi


def test_marching_squares_circle():
    f = FieldFn(lambda X: (X**2).sum(1) - 1.0, 2)
    mesh = extract_isosurface(f, [[-2, 2], [-2, 2]], 200)
    assert mesh.vertices.shape[0] > 100
    r = np.linalg.norm(mesh.vertices, axis=1)
    assert np.abs(r - 1.0).max() <= 1e-3
    chains = mesh.polylines()
    assert len(chains) == 1 and chains[0][1]  # a single closed loop


def test_marching_squares_constant_positive_empty():
    f = FieldFn(lambda X: np.ones(X.shape[0]), 2)
    with pytest.warns(UserWarning, match="empty mesh"):
        mesh = extract_isosurface(f, [[-1, 1], [-1, 1]], 16)
    assert mesh.is_empty()


def test_marching_squares_linear_exact():
    f = FieldFn(lambda X: X[:, 0].copy(), 2)
    mesh = extract_isosurface(f, [[-1, 1], [-1, 1]], 33)
    assert mesh.vertices.shape[0] > 0
    assert np.abs(mesh.vertices[:, 0]).max() == 0.0


def test_marching_squares_resolution_refinement():
    f = FieldFn(lambda X: (X**2).sum(1) - 1.0, 2)
    means = []
    for res in (25, 50, 100, 200):
        mesh = extract_isosurface(f, [[-2, 2], [-2, 2]], res)
        means.append(np.abs(f.forward(mesh.vertices)[:, 0]).mean())
    assert means[0] > means[1] > means[2] > means[3]


def test_marching_cubes_sphere():
    f = FieldFn(lambda X: (X**2).sum(1) - 1.0, 3)
    mesh = extract_isosurface(f, [[-1.5, 1.5]] * 3, 40)
    assert mesh.triangles.shape[0] > 100
    r = np.linalg.norm(mesh.vertices, axis=1)
    assert np.abs(r - 1.0).max() < 5e-3


def test_marching_cubes_level_offset():
    f = FieldFn(lambda X: (X**2).sum(1), 3)
    mesh = extract_isosurface(f, [[-2, 2]] * 3, 40, level=1.0)
    r = np.linalg.norm(mesh.vertices, axis=1)
    assert np.abs(r - 1.0).max() < 5e-3


def test_extract_curve_circle_in_plane():
    # F = (x3, x1^2 + x2^2 - 1): zero set is the unit circle in the x1x2-plane
    def fn(X):
        return np.stack([X[:, 2], X[:, 0] ** 2 + X[:, 1] ** 2 - 1.0], axis=1)

    def jac(X):
        J = np.zeros((X.shape[0], 2, 3))
        J[:, 0, 2] = 1.0
        J[:, 1, 0] = 2 * X[:, 0]
        J[:, 1, 1] = 2 * X[:, 1]
        return J

    f = FieldFn(fn, 3, 2)
    f.jacobian_input = jac
    chains = extract_curve(f, [[-1.5, 1.5]] * 3, resolution=12)
    pts = np.concatenate(chains)
    assert pts.shape[0] > 20
    F = fn(pts)
    assert np.abs(F).max() <= 1e-6
    # covers the circle: chamfer to a dense analytic sampling is small
    t = np.linspace(0, 2 * np.pi, 512, endpoint=False)
    gt = np.stack([np.cos(t), np.sin(t), np.zeros_like(t)], axis=1)
    assert chamfer(pts, gt) < 0.3


def test_extract_curve_axis():
    def fn(X):
        return X[:, :2].copy()

    def jac(X):
        J = np.zeros((X.shape[0], 2, 3))
        J[:, 0, 0] = 1.0
        J[:, 1, 1] = 1.0
        return J

    f = FieldFn(fn, 3, 2)
    f.jacobian_input = jac
    chains = extract_curve(f, [[-1, 1]] * 3, resolution=8)
    pts = np.concatenate(chains)
    assert np.abs(pts[:, :2]).max() <= 1e-9
    assert pts[:, 2].max() > 0.5 and pts[:, 2].min() < -0.5


def test_extract_curve_disjoint_zero_sets_empty():
    # F = (x3 - 5, x3 + 5): the two level sets never intersect
    def fn(X):
        return np.stack([X[:, 2] - 5.0, X[:, 2] + 5.0], axis=1)

    def jac(X):
        J = np.zeros((X.shape[0], 2, 3))
        J[:, 0, 2] = 1.0
        J[:, 1, 2] = 1.0
        return J

    f = FieldFn(fn, 3, 2)
    f.jacobian_input = jac
    with pytest.warns(UserWarning, match="fewer than 2"):
        chains = extract_curve(f, [[-1, 1]] * 3, resolution=6)
    assert chains == []


def test_chamfer_hausdorff_trivial():
    A = np.array([[0.0, 0.0]])
    B = np.array([[3.0, 4.0]])
    assert chamfer(A, A) == 0.0 and hausdorff(A, A) == 0.0
    assert chamfer(A, B, "l2") == 10.0
    assert hausdorff(A, B, "l2") == 5.0
    assert chamfer(A, B, "l1") == 14.0


def test_chamfer_hausdorff_match_brute_force():
    rng = np.random.default_rng(2)
    A = rng.normal(size=(100, 3))
    B = rng.normal(size=(100, 3))
    for norm in ("l1", "l2"):
        assert chamfer(A, B, norm) == pytest.approx(brute_chamfer(A, B, norm), abs=1e-12)
        assert hausdorff(A, B, norm) == pytest.approx(brute_hausdorff(A, B, norm), abs=1e-12)


def test_chamfer_symmetry():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(40, 2))
    B = rng.normal(size=(60, 2))
    assert chamfer(A, B) == chamfer(B, A)


def test_chamfer_empty_errors():
    with pytest.raises(ValueError, match="nonempty"):
        chamfer(np.zeros((0, 2)), np.zeros((3, 2)))


def test_save_mesh_obj(tmp_path):
    f = FieldFn(lambda X: (X**2).sum(1) - 1.0, 3)
    mesh = extract_isosurface(f, [[-1.5, 1.5]] * 3, 12)
    path = tmp_path / "s.obj"
    save_mesh(mesh, path)
    lines = path.read_text().strip().split("\n")
    nv = sum(1 for ln in lines if ln.startswith("v "))
    nf = sum(1 for ln in lines if ln.startswith("f "))
    assert nv == mesh.vertices.shape[0]
    assert nf == mesh.triangles.shape[0]


def test_mlp_field_extraction(circle_net):
    mesh = extract_isosurface(circle_net, [[-1, 1], [-1, 1]], 150)
    assert not mesh.is_empty()
    r = np.linalg.norm(mesh.vertices, axis=1)
    assert abs(np.median(r) - 0.6) < 0.1
