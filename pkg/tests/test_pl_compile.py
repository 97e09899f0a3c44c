import numpy as np
import pytest

from levelsets.pl_compile import (
    PLHypersurface,
    box_triangles,
    compile_surface,
    compile_to_mlp,
    enumerate_lambda,
    eval_f,
    facet_samples,
    load_surface,
    square_polygon,
    verification_report,
)


def star_polygon(k, seed):
    """Random simple polygon: sorted angles with varied radii (star-shaped)."""
    rng = np.random.default_rng(seed)
    ang = np.sort(rng.uniform(0, 2 * np.pi, size=k))
    if np.min(np.diff(ang, append=ang[0] + 2 * np.pi)) < 0.05:
        return star_polygon(k, seed + 1000)
    r = rng.uniform(0.5, 1.5, size=k)
    return np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)


def l_shape():
    return PLHypersurface.from_polygon(
        [[0, 0], [2, 0], [2, 1], [1, 1], [1, 2], [0, 2]])


def test_square_lambda_is_all_minus_one():
    sq = square_polygon()
    lam_set = enumerate_lambda(sq)
    assert len(lam_set) == 1
    assert np.array_equal(lam_set.lambdas[0], -np.ones(4))


def test_convex_polygons_single_minimal_vector():
    for k, seed in ((5, 0), (8, 1)):
        rng = np.random.default_rng(seed)
        ang = np.sort(rng.uniform(0, 2 * np.pi, size=k))
        poly = np.stack([np.cos(ang), np.sin(ang)], axis=1)  # convex (on a circle)
        surf = PLHypersurface.from_polygon(poly)
        lam_set = enumerate_lambda(surf)
        assert len(lam_set) == 1
        assert np.array_equal(lam_set.lambdas[0], -np.ones(surf.k))


def test_l_shape_gets_zero_extended_vector():
    surf = l_shape()
    lam_set = enumerate_lambda(surf)
    minimal = [l for l in lam_set.lambdas if not np.any(l == 0)]
    merged = [l for l in lam_set.lambdas if np.any(l == 0)]
    assert len(minimal) == 3  # the three unit cells of the L
    assert len(merged) >= 1   # cells sharing the y=1 plane merge


def test_eval_f_square_hand_values():
    sq = square_polygon()
    lam_set = enumerate_lambda(sq)
    assert eval_f(sq, lam_set, np.array([[0.5, 0.5]]))[0] == pytest.approx(0.5, abs=1e-15)
    assert eval_f(sq, lam_set, np.array([[1.5, 0.5]]))[0] == pytest.approx(-0.5, abs=1e-15)
    # on a facet the minimum is pinned at zero
    assert eval_f(sq, lam_set, np.array([[1.0, 0.25]]))[0] == 0.0


def test_max_gadget_exact():
    # max{3,5} via one compile of a 2-term expression: use a 1-cell surface
    # and check the relu identity numerically instead
    a, b = 3.0, 5.0
    val = max(a - b, 0.0) / 2 + max(b - a, 0.0) / 2 + (a + b) / 2
    assert val == 5.0


def test_compile_square_values_and_facets():
    sq = square_polygon()
    mlp, lam_set = compile_surface(sq)
    assert mlp.activation == "relu"
    F = mlp.forward(np.array([[0.5, 0.5], [1.5, 0.5]]))[:, 0]
    assert abs(F[0] - 0.5) <= 1e-12
    assert abs(F[1] + 0.5) <= 1e-12
    mids = np.array([fv.mean(axis=0) for fv in sq.facet_vertices])
    assert np.abs(mlp.forward(mids)[:, 0]).max() <= 1e-12


def test_compiled_net_matches_eval_f_everywhere():
    rng = np.random.default_rng(3)
    for seed, k in ((0, 5), (1, 7), (2, 10)):
        surf = PLHypersurface.from_polygon(star_polygon(k, seed))
        mlp, lam_set = compile_surface(surf)
        X = rng.uniform(-2, 2, size=(20000, 2))
        f_ref = eval_f(surf, lam_set, X)
        f_net = mlp.forward(X)[:, 0]
        assert np.abs(f_net - f_ref).max() <= 1e-10 * (1.0 + np.abs(f_ref)).max()


def test_sign_matches_oracle_star_polygons():
    for seed in range(5):
        surf = PLHypersurface.from_polygon(star_polygon(8, 10 + seed))
        mlp, lam_set = compile_surface(surf)
        rng = np.random.default_rng(100 + seed)
        X = rng.uniform(-2, 2, size=(10000, 2))
        f = mlp.forward(X)[:, 0]
        inside = surf.contains(X)
        decided = np.abs(f) > 1e-9
        assert np.all(np.sign(f[decided]) == np.where(inside[decided], 1.0, -1.0))


def test_union_coverage_monte_carlo():
    # interiors of the admissible cells = interior of the polygon: membership
    # via f > 0 agrees with even-odd ray casting away from the zero set
    for seed in (21, 22):
        surf = PLHypersurface.from_polygon(star_polygon(9, seed))
        lam_set = enumerate_lambda(surf)
        rng = np.random.default_rng(seed)
        X = rng.uniform(-1.8, 1.8, size=(10000, 2))
        f = eval_f(surf, lam_set, X)
        inside = surf.contains(X)
        decided = np.abs(f) > 1e-9
        assert np.all((f[decided] > 0) == inside[decided])


def test_zero_set_on_facet_grids():
    for seed in (31, 32):
        surf = PLHypersurface.from_polygon(star_polygon(6, seed))
        mlp, _ = compile_surface(surf)
        pts = facet_samples(surf, per_facet=25)
        assert np.abs(mlp.forward(pts)[:, 0]).max() <= 1e-10


def test_gadget_tree_matches_sequential_fold():
    # balanced-tree max over a vector vs functools.reduce in float
    rng = np.random.default_rng(4)
    vals = rng.normal(size=11)
    tree = vals.copy()
    work = list(tree)
    while len(work) > 1:
        nxt = []
        for i in range(0, len(work) - 1, 2):
            a, b = work[i], work[i + 1]
            nxt.append(max(a - b, 0.0) / 2 + max(b - a, 0.0) / 2 + (a + b) / 2)
        if len(work) % 2:
            nxt.append(work[-1])
        work = nxt
    assert abs(work[0] - vals.max()) <= 8 * np.finfo(float).eps * max(1.0, abs(vals).max())


def test_unit_cube_compile():
    verts, faces = box_triangles(0.0, 1.0)
    surf = PLHypersurface.from_triangles(verts, faces)
    assert surf.k == 6  # coplanar triangles share planes
    mlp, lam_set = compile_surface(surf)
    assert len(lam_set) == 1
    inside = np.array([[0.5, 0.5, 0.5], [0.25, 0.9, 0.1]])
    outside = np.array([[1.5, 0.5, 0.5], [-0.1, 0.2, 0.3]])
    assert np.all(mlp.forward(inside)[:, 0] > 0)
    assert np.all(mlp.forward(outside)[:, 0] < 0)
    assert mlp.forward(np.array([[0.5, 0.5, 0.5]]))[0, 0] == pytest.approx(0.5, abs=1e-12)
    pts = facet_samples(surf, per_facet=30)
    assert np.abs(mlp.forward(pts)[:, 0]).max() <= 1e-10


def test_verification_report(tmp_path):
    surf = PLHypersurface.from_polygon(star_polygon(7, 40))
    mlp, lam_set = compile_surface(surf)
    path = tmp_path / "report.csv"
    stats = verification_report(surf, lam_set, mlp, n_points=2000, path=path)
    assert stats["max_abs_err"] <= 1e-10
    assert stats["sign_agreement"] == 1.0
    header = path.read_text().splitlines()[0]
    assert header == "x_0,x_1,f_ref,f_net,inside"


def test_k_guard():
    surf = PLHypersurface.from_polygon(star_polygon(17, 50))
    if surf.k > 16:
        with pytest.raises(ValueError, match="refusing"):
            enumerate_lambda(surf)


def test_load_surface_polygon(tmp_path):
    p = tmp_path / "poly.txt"
    p.write_text("0 0\n1 0\n1 1\n0 1\n")
    surf = load_surface(p)
    assert surf.dim == 2 and surf.k == 4
    assert surf.contains(np.array([[0.5, 0.5]]))[0]


def test_load_surface_triangles(tmp_path):
    verts, faces = box_triangles()
    lines = ["v " + " ".join(map(str, v)) for v in verts]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in faces]
    p = tmp_path / "cube.txt"
    p.write_text("\n".join(lines) + "\n")
    surf = load_surface(p)
    assert surf.dim == 3 and surf.k == 6


def test_non_watertight_rejected():
    with pytest.raises(ValueError, match="watertight|degenerate"):
        # self-intersecting bowtie: the even-odd oracle disagrees with facets
        PLHypersurface.from_polygon([[0, 0], [1, 1], [1, 0], [0, 1]])
