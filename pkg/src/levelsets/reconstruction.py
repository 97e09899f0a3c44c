"""Point clouds, iso-set extraction and point-set metrics.

Covers the geometry side of level-set reconstruction: kd-tree indexed
point clouds, marching squares (2D) / marching cubes (3D) extraction of
iso-sets of scalar fields, projection-based extraction of codimension-2
curves, and Chamfer / Hausdorff distances between point sets.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.spatial import cKDTree

from ._mc_tables import MC_EDGE_TABLE, MC_TRI_TABLE
from .projection import ProjectionConfig, project

_EVAL_CHUNK = 65536


class PointCloud:
    """N points in R^d (d in {2,3}) with an exact nearest-neighbor index."""

    def __init__(self, points):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] not in (2, 3):
            raise ValueError(f"expected (N, 2) or (N, 3) points, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("cloud contains non-finite coordinates")
        self.points = pts
        self._tree = None

    def __len__(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def tree(self):
        if self._tree is None:
            self._tree = cKDTree(self.points)
        return self._tree

    def bounds(self, inflate=0.0):
        lo = self.points.min(axis=0)
        hi = self.points.max(axis=0)
        pad = inflate * (hi - lo)
        return np.stack([lo - pad, hi + pad], axis=1)


def load_cloud(path):
    """Read whitespace-separated coordinates, one point per line."""
    pts = []
    width = None
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = s.split()
            try:
                row = [float(v) for v in parts]
            except ValueError:
                raise ValueError(f"{path}: malformed line {lineno}: {s!r}") from None
            if width is None:
                width = len(row)
                if width not in (2, 3):
                    raise ValueError(f"{path}: line {lineno}: expected 2 or 3 coordinates, got {width}")
            elif len(row) != width:
                raise ValueError(f"{path}: line {lineno}: expected {width} coordinates, got {len(row)}")
            pts.append(row)
    if not pts:
        raise ValueError(f"{path}: no points")
    return PointCloud(np.array(pts))


def save_cloud(points, path):
    """Write points with 17 significant digits (bit-exact float round trip)."""
    pts = np.asarray(points, dtype=np.float64)
    with open(path, "w") as f:
        for row in pts:
            f.write(" ".join(format(v, ".17g") for v in row) + "\n")


def dist_to_cloud(cloud, x):
    """Exact Euclidean nearest distance(s) and nearest index(es)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    q = x[None, :] if single else x
    if q.shape[1] != cloud.dim:
        raise ValueError(f"query dim {q.shape[1]} != cloud dim {cloud.dim}")
    d, i = cloud.tree.query(q)
    return (float(d[0]), int(i[0])) if single else (d, i)


# -- iso-set extraction -------------------------------------------------------


@dataclass
class IsoMesh:
    """Extracted iso-set: a 2D segment soup or a 3D triangle mesh."""

    vertices: np.ndarray                      # (V, dim)
    edges: np.ndarray = dc_field(default_factory=lambda: np.zeros((0, 2), dtype=int))
    triangles: np.ndarray = dc_field(default_factory=lambda: np.zeros((0, 3), dtype=int))
    level: float = 0.0

    @property
    def dim(self):
        return self.vertices.shape[1] if self.vertices.size else 0

    def is_empty(self):
        return self.vertices.shape[0] == 0

    def polylines(self):
        """Chain 2D segments into polylines; returns list of (chain, closed)."""
        if self.edges.shape[0] == 0:
            return []
        adj = {}
        for a, b in self.edges:
            adj.setdefault(int(a), []).append(int(b))
            adj.setdefault(int(b), []).append(int(a))
        visited_edges = set()

        def walk(start, nxt):
            chain = [start, nxt]
            visited_edges.add((min(start, nxt), max(start, nxt)))
            while True:
                cur, prev = chain[-1], chain[-2]
                options = [v for v in adj[cur]
                           if v != prev and (min(cur, v), max(cur, v)) not in visited_edges]
                if not options:
                    return chain
                v = min(options)
                visited_edges.add((min(cur, v), max(cur, v)))
                chain.append(v)
                if v == start:
                    return chain

        chains = []
        endpoints = sorted(v for v, nb in adj.items() if len(nb) == 1)
        for v in endpoints:
            for nxt in sorted(adj[v]):
                if (min(v, nxt), max(v, nxt)) not in visited_edges:
                    chains.append(walk(v, nxt))
        for v in sorted(adj):
            for nxt in sorted(adj[v]):
                if (min(v, nxt), max(v, nxt)) not in visited_edges:
                    chains.append(walk(v, nxt))
        out = []
        for chain in chains:
            closed = chain[0] == chain[-1]
            out.append((self.vertices[np.array(chain)], closed))
        return out


def _eval_field(field, X):
    fn = field.forward if hasattr(field, "forward") else field
    out = np.empty(X.shape[0])
    for s in range(0, X.shape[0], _EVAL_CHUNK):
        v = np.asarray(fn(X[s : s + _EVAL_CHUNK]))
        out[s : s + _EVAL_CHUNK] = v[:, 0] if v.ndim == 2 else v
    return out


def _resolution_tuple(resolution, dim):
    res = (resolution,) * dim if np.isscalar(resolution) else tuple(resolution)
    if len(res) != dim or any(r < 2 for r in res):
        raise ValueError(f"resolution must be >= 2 per axis, got {resolution}")
    return res


_MS_SEGMENTS = {
    0: [], 15: [],
    1: [(3, 0)], 2: [(0, 1)], 4: [(1, 2)], 8: [(2, 3)],
    3: [(3, 1)], 6: [(0, 2)], 12: [(1, 3)], 9: [(2, 0)],
    7: [(3, 2)], 14: [(0, 3)], 13: [(1, 0)], 11: [(2, 1)],
    # cases 5 and 10 are ambiguous and resolved by the cell-center sample
}


def _marching_squares(field, bounds, res, level):
    nx, ny = res
    xs = np.linspace(bounds[0, 0], bounds[0, 1], nx)
    ys = np.linspace(bounds[1, 0], bounds[1, 1], ny)
    XX, YY = np.meshgrid(xs, ys, indexing="ij")
    grid = np.stack([XX.ravel(), YY.ravel()], axis=1)
    vals = (_eval_field(field, grid) - level).reshape(nx, ny)
    pos = vals > 0.0  # f == level counts as not positive

    # corner order per cell: v0=(i,j) v1=(i+1,j) v2=(i+1,j+1) v3=(i,j+1)
    # edge order: e0 bottom (v0,v1), e1 right (v1,v2), e2 top (v3,v2), e3 left (v0,v3)
    code = (
        pos[:-1, :-1].astype(int)
        | (pos[1:, :-1].astype(int) << 1)
        | (pos[1:, 1:].astype(int) << 2)
        | (pos[:-1, 1:].astype(int) << 3)
    )

    ambiguous = np.argwhere((code == 5) | (code == 10))
    center_pos = {}
    if ambiguous.size:
        centers = np.stack(
            [0.5 * (xs[ambiguous[:, 0]] + xs[ambiguous[:, 0] + 1]),
             0.5 * (ys[ambiguous[:, 1]] + ys[ambiguous[:, 1] + 1])], axis=1)
        cvals = _eval_field(field, centers) - level
        for (i, j), cv in zip(ambiguous, cvals):
            center_pos[(int(i), int(j))] = cv > 0.0

    vertex_index = {}
    vertices = []

    def edge_vertex(i0, j0, i1, j1):
        key = (i0, j0, i1, j1)
        idx = vertex_index.get(key)
        if idx is not None:
            return idx
        fa, fb = vals[i0, j0], vals[i1, j1]
        t = fa / (fa - fb)
        p = np.array([xs[i0] + t * (xs[i1] - xs[i0]), ys[j0] + t * (ys[j1] - ys[j0])])
        vertex_index[key] = len(vertices)
        vertices.append(p)
        return len(vertices) - 1

    segs = []
    cells = np.argwhere(code > 0)
    for i, j in cells:
        c = int(code[i, j])
        if c == 15:
            continue
        cell_edges = {
            0: (int(i), int(j), int(i) + 1, int(j)),
            1: (int(i) + 1, int(j), int(i) + 1, int(j) + 1),
            2: (int(i), int(j) + 1, int(i) + 1, int(j) + 1),
            3: (int(i), int(j), int(i), int(j) + 1),
        }
        if c in (5, 10):
            cp = center_pos[(int(i), int(j))]
            if c == 5:  # v0, v2 positive
                pairs = [(0, 1), (2, 3)] if cp else [(3, 0), (1, 2)]
            else:  # v1, v3 positive
                pairs = [(3, 0), (1, 2)] if cp else [(0, 1), (2, 3)]
        else:
            pairs = _MS_SEGMENTS[c]
        for ea, eb in pairs:
            segs.append((edge_vertex(*cell_edges[ea]), edge_vertex(*cell_edges[eb])))

    V = np.array(vertices) if vertices else np.zeros((0, 2))
    E = np.array(segs, dtype=int) if segs else np.zeros((0, 2), dtype=int)
    return IsoMesh(vertices=V, edges=E, level=level)


# cube corner offsets in the Bourke layout
_MC_CORNERS = np.array([
    (0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
    (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1),
])
_MC_EDGE_ENDS = [
    (0, 1), (1, 2), (2, 3), (3, 0),
    (4, 5), (5, 6), (6, 7), (7, 4),
    (0, 4), (1, 5), (2, 6), (3, 7),
]


def _marching_cubes(field, bounds, res, level):
    nx, ny, nz = res
    xs = np.linspace(bounds[0, 0], bounds[0, 1], nx)
    ys = np.linspace(bounds[1, 0], bounds[1, 1], ny)
    zs = np.linspace(bounds[2, 0], bounds[2, 1], nz)
    XX, YY, ZZ = np.meshgrid(xs, ys, zs, indexing="ij")
    grid = np.stack([XX.ravel(), YY.ravel(), ZZ.ravel()], axis=1)
    vals = (_eval_field(field, grid) - level).reshape(nx, ny, nz)
    below = vals < 0.0

    corner_vals = np.stack(
        [below[dx : nx - 1 + dx, dy : ny - 1 + dy, dz : nz - 1 + dz]
         for dx, dy, dz in _MC_CORNERS])
    code = np.zeros((nx - 1, ny - 1, nz - 1), dtype=int)
    for bit in range(8):
        code |= corner_vals[bit].astype(int) << bit

    vertex_index = {}
    vertices = []

    def edge_vertex(ci, cj, ck, e):
        a, b = _MC_EDGE_ENDS[e]
        ia = (ci + _MC_CORNERS[a][0], cj + _MC_CORNERS[a][1], ck + _MC_CORNERS[a][2])
        ib = (ci + _MC_CORNERS[b][0], cj + _MC_CORNERS[b][1], ck + _MC_CORNERS[b][2])
        key = (ia, ib)
        idx = vertex_index.get(key)
        if idx is not None:
            return idx
        fa, fb = vals[ia], vals[ib]
        t = fa / (fa - fb)
        pa = np.array([xs[ia[0]], ys[ia[1]], zs[ia[2]]])
        pb = np.array([xs[ib[0]], ys[ib[1]], zs[ib[2]]])
        vertex_index[key] = len(vertices)
        vertices.append(pa + t * (pb - pa))
        return len(vertices) - 1

    tris = []
    cells = np.argwhere((code > 0) & (code < 255))
    for ci, cj, ck in cells:
        c = int(code[ci, cj, ck])
        if MC_EDGE_TABLE[c] == 0:
            continue
        row = MC_TRI_TABLE[c]
        for t0 in range(0, 16, 3):
            if row[t0] == -1:
                break
            tris.append(tuple(edge_vertex(int(ci), int(cj), int(ck), row[t0 + kk]) for kk in range(3)))

    V = np.array(vertices) if vertices else np.zeros((0, 3))
    T = np.array(tris, dtype=int) if tris else np.zeros((0, 3), dtype=int)
    return IsoMesh(vertices=V, triangles=T, level=level)


def extract_isosurface(field, bounds, resolution, level=0.0):
    """Marching squares / cubes extraction of {F = level} on a regular grid.

    ``field`` is a scalar network (or any callable); ``bounds`` is (dim, 2).
    Emits a warning and an empty mesh when the grid sees no sign change.
    Ambiguous 2D saddle cells are resolved by the sign of a cell-center
    sample; 3D uses the standard 256-case tables as-is.
    """
    bounds = np.asarray(bounds, dtype=np.float64)
    if bounds.ndim != 2 or bounds.shape[1] != 2 or bounds.shape[0] not in (2, 3):
        raise ValueError(f"bounds must be (2,2) or (3,2), got {bounds.shape}")
    if hasattr(field, "output_dim") and field.output_dim != 1:
        raise ValueError("iso-set extraction needs a scalar field")
    dim = bounds.shape[0]
    res = _resolution_tuple(resolution, dim)
    mesh = _marching_squares(field, bounds, res, level) if dim == 2 else \
        _marching_cubes(field, bounds, res, level)
    if mesh.is_empty():
        warnings.warn(f"no {level}-crossing found in the grid; empty mesh", stacklevel=2)
    return mesh


def extract_curve(field, bounds, resolution=16, proj_cfg=None, link_factor=2.0):
    """Extract the joint zero curve of a 2-output field in R^3.

    Grid seeds are Newton-projected onto {F1 = F2 = 0}; converged points are
    chained into polylines by nearest-neighbor linking within ``link_factor``
    times the median nearest-neighbor spacing. Returns a list of (k_i, 3)
    arrays; open curves are allowed.
    """
    if field.output_dim != 2 or field.input_dim != 3:
        raise ValueError("curve extraction needs a field R^3 -> R^2")
    bounds = np.asarray(bounds, dtype=np.float64)
    res = _resolution_tuple(resolution, 3)
    axes = [np.linspace(bounds[i, 0], bounds[i, 1], res[i]) for i in range(3)]
    G = np.meshgrid(*axes, indexing="ij")
    seeds = np.stack([g.ravel() for g in G], axis=1)
    cfg = proj_cfg or ProjectionConfig(max_iters=30, residual_tol=1e-9)
    recs = project(field, seeds, cfg)
    pts = np.array([r.p for r in recs if r.converged and np.abs(r.c).max() <= 1e-6])
    inside = np.all((pts >= bounds[:, 0]) & (pts <= bounds[:, 1]), axis=1) if pts.size else []
    pts = pts[inside] if pts.size else pts
    if pts.shape[0] < 2:
        warnings.warn("curve extraction recovered fewer than 2 points", stacklevel=2)
        return []

    # thin near-duplicates so chaining spacing is meaningful
    keep = []
    tree = cKDTree(pts)
    scale = float(np.linalg.norm(bounds[:, 1] - bounds[:, 0]))
    taken = np.zeros(pts.shape[0], dtype=bool)
    for i in range(pts.shape[0]):
        if taken[i]:
            continue
        keep.append(i)
        for j in tree.query_ball_point(pts[i], 1e-4 * scale):
            taken[j] = True
    pts = pts[np.array(keep)]
    if pts.shape[0] < 2:
        return [pts]

    tree = cKDTree(pts)
    nn_d, _ = tree.query(pts, k=2)
    link = link_factor * float(np.median(nn_d[:, 1]))

    used = np.zeros(pts.shape[0], dtype=bool)
    chains = []
    for start in range(pts.shape[0]):
        if used[start]:
            continue
        chain = [start]
        used[start] = True
        for _ in range(2):  # extend forward, then flip and extend the other way
            while True:
                cands = tree.query_ball_point(pts[chain[-1]], link)
                cands = [c for c in sorted(cands) if not used[c]]
                if not cands:
                    break
                nxt = min(cands, key=lambda c: float(np.linalg.norm(pts[c] - pts[chain[-1]])))
                chain.append(nxt)
                used[nxt] = True
            chain.reverse()
        chains.append(pts[np.array(chain)])
    chains.sort(key=lambda c: -c.shape[0])
    return chains


# -- metrics ------------------------------------------------------------------


def _norm_p(norm):
    if norm in ("l2", "L2"):
        return 2
    if norm in ("l1", "L1"):
        return 1
    raise ValueError(f"unknown norm {norm!r}; use 'l1' or 'l2'")


def chamfer(A, B, norm="l2"):
    """Symmetric Chamfer distance: mean nearest distance A->B plus B->A.

    Per-point distances use the L1 or L2 norm. No scaling is applied here;
    report formatting multiplies by 1e3 where that convention is wanted.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise ValueError("chamfer distance needs nonempty point sets")
    p = _norm_p(norm)
    dab, _ = cKDTree(B).query(A, p=p)
    dba, _ = cKDTree(A).query(B, p=p)
    return float(dab.mean() + dba.mean())


def hausdorff(A, B, norm="l2"):
    """Max of the two directed nearest-neighbor maxima."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise ValueError("hausdorff distance needs nonempty point sets")
    p = _norm_p(norm)
    dab, _ = cKDTree(B).query(A, p=p)
    dba, _ = cKDTree(A).query(B, p=p)
    return float(max(dab.max(), dba.max()))


# -- mesh / polyline io -------------------------------------------------------


def save_mesh(mesh, path):
    """OBJ for triangle meshes; plain coordinate lines for 2D segment soups."""
    with open(path, "w") as f:
        if mesh.triangles.shape[0] > 0 or mesh.dim == 3:
            for v in mesh.vertices:
                f.write("v " + " ".join(format(x, ".17g") for x in v) + "\n")
            for t in mesh.triangles:
                f.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")
        else:
            for chain, closed in mesh.polylines():
                for v in chain:
                    f.write(" ".join(format(x, ".17g") for x in v) + "\n")
                if closed:
                    f.write("# closed\n")
                f.write("\n")


def save_polylines(chains, path):
    """XYZ polyline: one point per line, blank line between chains."""
    with open(path, "w") as f:
        for chain in chains:
            for v in chain:
                f.write(" ".join(format(x, ".17g") for x in v) + "\n")
            f.write("\n")
