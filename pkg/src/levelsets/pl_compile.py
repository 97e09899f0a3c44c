"""Exact compilation of watertight piecewise-linear hypersurfaces to ReLU nets.

A watertight PL hypersurface bounds a polytope P. With oriented supporting
planes h_i(x) = a_i.x + b_i (outward normals), the function

    f(x) = max over admissible sign vectors of  min_i  lambda_i h_i(x)

is positive inside P, negative outside, and zero exactly on the surface
(up to measure-zero slices of the supporting planes through the interior).
Admissible sign vectors are those whose half-space intersection lies inside
P; they are found by enumerating {-1,1}^k cells and merging cells that
share a facet into zero-extended vectors. The max-min expression is then
lowered to a ReLU MLP with the pairwise identity
max{a,b} = relu(a-b)/2 + relu(b-a)/2 + (a+b)/2 (min dually), assembled as
balanced binary trees, which reproduces f to a few ulps.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .mlp import Mlp

_K_GUARD = 16
_COMPILE_BUDGET = 4096  # max |Lambda| * k
_EVAL_CHUNK = 32768


@dataclass
class SignVectorSet:
    lambdas: np.ndarray  # (L, k) entries in {-1, 0, 1}

    def __len__(self):
        return self.lambdas.shape[0]


class PLHypersurface:
    """Oriented supporting planes plus facets and an inside/outside oracle.

    2D surfaces are polygon loops (facets are segments); 3D surfaces are
    triangle lists. Point membership uses even-odd ray casting over the
    facets, which needs no orientation information and therefore serves as
    an oracle independent of the plane bookkeeping.
    """

    def __init__(self, planes, facet_vertices, facet_planes, dim):
        self.planes = [(np.asarray(a, float), float(b)) for a, b in planes]
        self.facet_vertices = [np.asarray(v, float) for v in facet_vertices]
        self.facet_planes = list(facet_planes)
        self.dim = dim
        self.k = len(self.planes)

    @property
    def normals(self):
        return np.stack([a for a, _ in self.planes])

    @property
    def offsets(self):
        return np.array([b for _, b in self.planes])

    def plane_values(self, X):
        return np.einsum("nd,kd->nk", np.asarray(X, float), self.normals) + self.offsets

    def all_vertices(self):
        return np.concatenate([fv.reshape(-1, self.dim) for fv in self.facet_vertices])

    def scale(self):
        V = self.all_vertices()
        return float(np.linalg.norm(V.max(axis=0) - V.min(axis=0)))

    # -- membership oracle --------------------------------------------------

    def contains(self, X):
        X = np.atleast_2d(np.asarray(X, float))
        return self._contains2d(X) if self.dim == 2 else self._contains3d(X)

    def _contains2d(self, X):
        inside = np.zeros(X.shape[0], dtype=bool)
        for seg in self.facet_vertices:
            (x0, y0), (x1, y1) = seg
            straddle = (y0 > X[:, 1]) != (y1 > X[:, 1])
            if not straddle.any():
                continue
            xs = x0 + (X[straddle, 1] - y0) * (x1 - x0) / (y1 - y0)
            hit = X[straddle, 0] < xs
            idx = np.flatnonzero(straddle)[hit]
            inside[idx] = ~inside[idx]
        return inside

    def _contains3d(self, X):
        # fixed, non-axis-aligned ray direction; even-odd over triangles
        ray = np.array([0.5773502691896258, 0.577350269189626, 0.5773502691896227])
        count = np.zeros(X.shape[0], dtype=int)
        for tri in self.facet_vertices:
            v0, v1, v2 = tri
            e1, e2 = v1 - v0, v2 - v0
            pvec = np.cross(ray, e2)
            det = e1 @ pvec
            if abs(det) < 1e-14:
                continue
            tvec = X - v0
            u = (tvec @ pvec) / det
            qvec = np.cross(tvec, np.broadcast_to(e1, tvec.shape))
            v = (qvec @ ray) / det
            t = (qvec @ e2) / det
            hit = (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 1e-12)
            count += hit
        return count % 2 == 1

    # -- constructors ---------------------------------------------------------

    @classmethod
    def from_polygon(cls, vertices):
        """Simple polygon loop (k, 2); orientation handled automatically."""
        V = np.asarray(vertices, dtype=np.float64)
        if V.ndim != 2 or V.shape[1] != 2 or V.shape[0] < 3:
            raise ValueError(f"polygon needs at least 3 (x, y) vertices, got {V.shape}")
        area2 = float(np.sum(V[:, 0] * np.roll(V[:, 1], -1) - np.roll(V[:, 0], -1) * V[:, 1]))
        ccw = area2 > 0
        segs, planes_raw = [], []
        for i in range(V.shape[0]):
            p0, p1 = V[i], V[(i + 1) % V.shape[0]]
            t = p1 - p0
            nrm = np.linalg.norm(t)
            if nrm < 1e-14:
                raise ValueError(f"degenerate polygon edge at vertex {i}")
            n = np.array([t[1], -t[0]]) / nrm  # right of travel = outward for ccw
            if not ccw:
                n = -n
            planes_raw.append((n, -float(n @ p0)))
            segs.append(np.stack([p0, p1]))
        surface = cls._dedup(planes_raw, segs, dim=2)
        surface._check_watertight()
        return surface

    @classmethod
    def from_triangles(cls, vertices, faces):
        """Triangle surface in R^3; outward orientation fixed by ray casting."""
        V = np.asarray(vertices, dtype=np.float64)
        F = np.asarray(faces, dtype=int)
        if V.ndim != 2 or V.shape[1] != 3 or F.ndim != 2 or F.shape[1] != 3:
            raise ValueError("need (n,3) vertices and (m,3) triangle indices")
        tris, planes_raw = [], []
        # orientation probe needs the oracle, which only needs the facets
        probe = cls([], [V[f] for f in F], [], dim=3)
        scale = float(np.linalg.norm(V.max(axis=0) - V.min(axis=0)))
        for f in F:
            tri = V[f]
            n = np.cross(tri[1] - tri[0], tri[2] - tri[0])
            nn = np.linalg.norm(n)
            if nn < 1e-14 * scale**2:
                raise ValueError(f"degenerate triangle {f}")
            n = n / nn
            centroid = tri.mean(axis=0)
            if probe.contains(centroid + 1e-5 * scale * n)[0]:
                n = -n  # flip so the normal points outside
            planes_raw.append((n, -float(n @ centroid)))
            tris.append(tri)
        surface = cls._dedup(planes_raw, tris, dim=3)
        surface._check_watertight()
        return surface

    @classmethod
    def _dedup(cls, planes_raw, facets, dim):
        """Merge facets supported by the same oriented plane."""
        planes, facet_planes = [], []
        keys = {}
        for (a, b), _ in zip(planes_raw, facets):
            key = tuple(np.round(np.concatenate([a, [b]]), 9))
            if key not in keys:
                keys[key] = len(planes)
                planes.append((a, b))
            facet_planes.append(keys[key])
        return cls(planes, facets, facet_planes, dim)

    def _check_watertight(self, delta_rel=1e-5):
        """The outward side of each facet must be outside, the inward inside."""
        scale = self.scale()
        for fv, pi in zip(self.facet_vertices, self.facet_planes):
            mid = fv.mean(axis=0)
            n = self.planes[pi][0]
            out_ok = not self.contains(mid + delta_rel * scale * n)[0]
            in_ok = self.contains(mid - delta_rel * scale * n)[0]
            if not (out_ok and in_ok):
                raise ValueError(
                    "surface is not watertight: the membership oracle disagrees "
                    f"with the facet at {np.round(mid, 6)}"
                )


def square_polygon(lo=0.0, hi=1.0):
    return PLHypersurface.from_polygon(
        [[lo, lo], [hi, lo], [hi, hi], [lo, hi]])


def box_triangles(lo=0.0, hi=1.0):
    """Vertices and faces of an axis-aligned cube surface."""
    c = np.array(list(itertools.product([lo, hi], repeat=3)))
    quads = [  # vertex index bits are (x, y, z), x most significant
        (0, 1, 3, 2), (4, 6, 7, 5),
        (0, 4, 5, 1), (2, 3, 7, 6),
        (0, 2, 6, 4), (1, 5, 7, 3),
    ]
    faces = []
    for q in quads:
        faces.append((q[0], q[1], q[2]))
        faces.append((q[0], q[2], q[3]))
    return c, np.array(faces)


# -- sign-vector enumeration ----------------------------------------------------


def enumerate_lambda(surface, feas_tol_rel=1e-9):
    """All sign vectors whose half-space intersections lie inside the surface.

    Enumerates the 2^k minimal cells, keeps those that are full-dimensional,
    bounded and inside (tested on the centroid of the cell's vertex set
    against the membership oracle), then merges cells differing in exactly
    one sign into the zero-extended vectors of the shared facet.
    """
    k = surface.k
    if k > _K_GUARD:
        raise ValueError(f"refusing to enumerate 2^{k} sign vectors (limit {_K_GUARD})")
    d = surface.dim
    A = surface.normals
    B = surface.offsets
    scale = surface.scale()
    tol = feas_tol_rel * max(scale, 1.0)

    # bounding box planes, well clear of the surface
    allv = surface.all_vertices()
    lo = allv.min(axis=0) - scale
    hi = allv.max(axis=0) + scale
    box_planes = []
    for i in range(d):
        e = np.zeros(d)
        e[i] = 1.0
        box_planes.append((e, -hi[i]))       # x_i <= hi
        box_planes.append((-e, lo[i]))       # x_i >= lo
    Abox = np.stack([a for a, _ in box_planes])
    Bbox = np.array([b for _, b in box_planes])

    Aall = np.concatenate([A, Abox])
    Ball = np.concatenate([B, Bbox])
    n_all = Aall.shape[0]

    verts, on_box = [], []
    for combo in itertools.combinations(range(n_all), d):
        M = Aall[list(combo)]
        rhs = -Ball[list(combo)]
        det = np.linalg.det(M)
        if abs(det) < 1e-12:
            continue
        v = np.linalg.solve(M, rhs)
        if np.abs(v).max() > 100 * scale + np.abs(allv).max():
            continue
        verts.append(v)
        on_box.append(any(c >= k for c in combo))
    V = np.stack(verts)
    on_box = np.array(on_box)
    H = V @ A.T + B                  # (n_verts, k)
    Hbox = V @ Abox.T + Bbox
    in_box = np.all(Hbox <= tol, axis=1)

    signs = np.array(list(itertools.product([-1.0, 1.0], repeat=k)))  # (2^k, k)
    survivors = []
    for j0 in range(0, signs.shape[0], 1024):
        S = signs[j0 : j0 + 1024]
        feas = np.all(H[:, None, :] * S[None, :, :] >= -tol, axis=2)  # (V, B)
        feas &= in_box[:, None]
        for jj in range(S.shape[0]):
            vidx = np.flatnonzero(feas[:, jj])
            if vidx.size < d + 1:
                continue
            if on_box[vidx].any():
                continue  # the cell escapes the box: cannot lie inside the surface
            c = V[vidx].mean(axis=0)
            hv = S[jj] * (A @ c + B)
            if hv.min() <= tol:
                continue  # degenerate (lower-dimensional) cell
            if not surface.contains(c)[0]:
                continue
            survivors.append(tuple(int(s) for s in S[jj]))

    # zero-extension: cells differing in one sign share that facet; their
    # union is the vector with a zero there
    lam_set = set(survivors)
    while True:
        added = False
        for lam in sorted(lam_set):
            for i in range(k):
                if lam[i] == 0:
                    continue
                mu = list(lam)
                mu[i] = -lam[i]
                if tuple(mu) in lam_set:
                    mu[i] = 0
                    z = tuple(mu)
                    if z not in lam_set:
                        lam_set.add(z)
                        added = True
        if not added:
            break
    if not lam_set:
        raise ValueError("no admissible sign vectors found; is the surface watertight?")
    return SignVectorSet(np.array(sorted(lam_set), dtype=np.float64))


def eval_f(surface, lam_set, X):
    """Reference max-min evaluation of the compiled function, shape (n,)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    lam = lam_set.lambdas
    chunk = max(256, min(_EVAL_CHUNK, 4_000_000 // lam.size))
    out = np.empty(X.shape[0])
    for s in range(0, X.shape[0], chunk):
        H = surface.plane_values(X[s : s + chunk])  # (n, k)
        terms = lam[None, :, :] * H[:, None, :]     # (n, L, k)
        out[s : s + chunk] = terms.min(axis=2).max(axis=1)
    return out


# -- relu lowering ----------------------------------------------------------------


def _reduction_round(M, v, groups, ops):
    """One tree level: pair up nodes in every group through a ReLU layer.

    M (nodes x width) and v (nodes,) express node values as an affine map of
    the previous layer's activations. Returns the layer (W, b), the new
    (M', v'), and the shrunken groups.
    """
    W_rows, b_rows = [], []
    comb_rows = []
    new_groups, new_ops = [], []
    unit_count = 0
    node_count = 0
    for nodes, op in zip(groups, ops):
        new_nodes = []
        i = 0
        while i < len(nodes):
            if i + 1 < len(nodes):
                a, b = nodes[i], nodes[i + 1]
                W_rows += [M[a] - M[b], M[b] - M[a], 0.5 * (M[a] + M[b]), -0.5 * (M[a] + M[b])]
                b_rows += [v[a] - v[b], v[b] - v[a], 0.5 * (v[a] + v[b]), -0.5 * (v[a] + v[b])]
                sgn = 0.5 if op == "max" else -0.5
                comb_rows.append((unit_count, [sgn, sgn, 1.0, -1.0]))
                unit_count += 4
                i += 2
            else:
                a = nodes[i]
                W_rows += [M[a], -M[a]]
                b_rows += [v[a], -v[a]]
                comb_rows.append((unit_count, [1.0, -1.0]))
                unit_count += 2
                i += 1
            new_nodes.append(node_count)
            node_count += 1
        new_groups.append(new_nodes)
        new_ops.append(op)
    W = np.stack(W_rows)
    b = np.array(b_rows)
    C = np.zeros((node_count, unit_count))
    for node, (start, coeffs) in enumerate(comb_rows):
        C[node, start : start + len(coeffs)] = coeffs
    return (W, b), C, np.zeros(node_count), new_groups, new_ops


def compile_to_mlp(surface, lam_set):
    """Lower the max-min expression to an exact ReLU MLP.

    The first linear layer emits every lambda_i * h_i(x); balanced binary
    min-trees collapse each sign vector's terms, and a final max-tree
    collapses across sign vectors. The network output matches eval_f to a
    few machine epsilons at every input.
    """
    lam = lam_set.lambdas
    L, k = lam.shape
    if L * k > _COMPILE_BUDGET:
        raise ValueError(f"compile budget exceeded: |Lambda|*k = {L * k} > {_COMPILE_BUDGET}")
    A = surface.normals
    B = surface.offsets
    # node values: lambda_i * h_i(x) per (lambda, i), affine in x
    M = (lam[:, :, None] * A[None, :, :]).reshape(L * k, surface.dim)
    v = (lam * B[None, :]).reshape(L * k)
    groups = [list(range(j * k, (j + 1) * k)) for j in range(L)]
    ops = ["min"] * L

    weights, biases = [], []
    while True:
        if all(len(g) == 1 for g in groups):
            if len(groups) == 1:
                break
            groups = [[g[0] for g in groups]]
            ops = ["max"]
            if len(groups[0]) == 1:
                break
        (W, b), M, v, groups, ops = _reduction_round(M, v, groups, ops)
        weights.append(W)
        biases.append(b)
    weights.append(M[0][None, :])
    biases.append(np.array([v[0]]))
    return Mlp(weights, biases, activation="relu")


def compile_surface(surface):
    """Convenience: enumerate sign vectors and compile in one call."""
    lam_set = enumerate_lambda(surface)
    return compile_to_mlp(surface, lam_set), lam_set


# -- text io ------------------------------------------------------------------------


def load_surface(path):
    """Facet-vertex text file: either a 2D polygon loop (one "x y" per line)
    or a 3D triangle list ("v x y z" and 1-based "f i j k" lines)."""
    verts2d, verts3d, faces = [], [], []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = s.split()
            try:
                if parts[0] == "v":
                    verts3d.append([float(x) for x in parts[1:4]])
                elif parts[0] == "f":
                    faces.append([int(x) - 1 for x in parts[1:4]])
                else:
                    verts2d.append([float(x) for x in parts[:2]])
            except (ValueError, IndexError):
                raise ValueError(f"{path}: malformed line {lineno}: {s!r}") from None
    if verts3d:
        if not faces:
            raise ValueError(f"{path}: triangle vertices without faces")
        return PLHypersurface.from_triangles(np.array(verts3d), np.array(faces))
    if len(verts2d) < 3:
        raise ValueError(f"{path}: need at least 3 polygon vertices")
    return PLHypersurface.from_polygon(np.array(verts2d))


def verification_report(surface, lam_set, mlp, n_points=10000, rng_seed=0, path=None):
    """Sweep random points; compare the net against eval_f and the oracle.

    Returns a dict of agreement stats; optionally writes a CSV of rows
    (coords, f_ref, f_net, inside).
    """
    rng = np.random.default_rng(rng_seed)
    allv = surface.all_vertices()
    lo = allv.min(axis=0)
    hi = allv.max(axis=0)
    pad = 0.25 * (hi - lo)
    X = rng.uniform(lo - pad, hi + pad, size=(n_points, surface.dim))
    f_ref = eval_f(surface, lam_set, X)
    f_net = mlp.forward(X)[:, 0]
    inside = surface.contains(X)
    max_abs_err = float(np.abs(f_net - f_ref).max())
    decided = np.abs(f_ref) > 1e-9
    sign_ok = np.sign(f_ref[decided]) == np.where(inside[decided], 1.0, -1.0)
    stats = {
        "n_points": n_points,
        "max_abs_err": max_abs_err,
        "sign_agreement": float(np.mean(sign_ok)) if decided.any() else 1.0,
        "decided_fraction": float(np.mean(decided)),
    }
    if path is not None:
        with open(path, "w") as f:
            cols = [f"x_{i}" for i in range(surface.dim)]
            f.write(",".join(cols + ["f_ref", "f_net", "inside"]) + "\n")
            for i in range(n_points):
                row = [format(c, ".17g") for c in X[i]] + [
                    format(f_ref[i], ".17g"),
                    format(f_net[i], ".17g"),
                    str(int(inside[i])),
                ]
                f.write(",".join(row) + "\n")
    return stats


def facet_samples(surface, per_facet=20, rng_seed=0):
    """Deterministic barycentric grids on every facet (for zero-set checks)."""
    rng = np.random.default_rng(rng_seed)
    pts = []
    for fv in surface.facet_vertices:
        if surface.dim == 2:
            t = np.linspace(0.0, 1.0, per_facet)
            pts.append(fv[0][None, :] + t[:, None] * (fv[1] - fv[0])[None, :])
        else:
            u = rng.uniform(0, 1, size=(per_facet, 2))
            flip = u.sum(axis=1) > 1
            u[flip] = 1 - u[flip]
            pts.append(fv[0] + u[:, :1] * (fv[1] - fv[0]) + u[:, 1:] * (fv[2] - fv[0]))
    return np.concatenate(pts)
