"""Dataset builders: synthetic 2D fixtures, point-cloud fixtures, and the
IDX image-file reader (MNIST-style) with binary class merging."""

from __future__ import annotations

import struct

import numpy as np
from scipy.interpolate import CubicSpline

from ..errors import DataError


# -- synthetic classification fixtures -----------------------------------------


def figure1_points():
    """The 16-point binary toy set in [0, 0.5]^2: a positive cluster ringed
    by negative examples."""
    rng = np.random.default_rng(20240601)
    ang_in = np.arange(8) * (2 * np.pi / 8)
    inner = 0.25 + 0.055 * np.stack([np.cos(ang_in), np.sin(ang_in)], axis=1)
    ang_out = ang_in + np.pi / 8
    outer = 0.25 + 0.185 * np.stack([np.cos(ang_out), np.sin(ang_out)], axis=1)
    X = np.concatenate([inner, outer])
    X = X + rng.uniform(-0.02, 0.02, size=X.shape)
    y = np.array([1.0] * 8 + [-1.0] * 8)
    return np.clip(X, 0.0, 0.5), y


def two_moons(n=200, noise=0.06, scale=1.0, seed=0):
    """Two interleaved half circles with +-1 labels."""
    rng = np.random.default_rng(seed)
    n1 = n // 2
    n2 = n - n1
    t1 = rng.uniform(0, np.pi, n1)
    t2 = rng.uniform(0, np.pi, n2)
    upper = np.stack([np.cos(t1), np.sin(t1)], axis=1)
    lower = np.stack([1.0 - np.cos(t2), 0.5 - np.sin(t2)], axis=1)
    X = np.concatenate([upper, lower]) * scale
    X += noise * scale * rng.standard_normal(X.shape)
    y = np.array([1.0] * n1 + [-1.0] * n2)
    perm = rng.permutation(n)
    return X[perm], y[perm]


def ring_binary(n=512, radius=0.2, box=0.35, seed=0):
    """Uniform points in [-box, box]^2 labeled by a circle of the given radius."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(-box, box, size=(n, 2))
    y = np.where(np.linalg.norm(X, axis=1) < radius, 1.0, -1.0)
    return X, y


# -- point-cloud fixtures --------------------------------------------------------


def circle_cloud(n=256, radius=1.0, noise=0.0, seed=0):
    """Points on (or near) a circle, plus a dense ground-truth sampling."""
    rng = np.random.default_rng(seed)
    t = rng.uniform(0, 2 * np.pi, n)
    X = radius * np.stack([np.cos(t), np.sin(t)], axis=1)
    if noise:
        X += noise * rng.standard_normal(X.shape)
    tg = np.linspace(0, 2 * np.pi, 2048, endpoint=False)
    gt = radius * np.stack([np.cos(tg), np.sin(tg)], axis=1)
    return X, gt


def farthest_point_sample(points, n, seed=0):
    """Greedy farthest point subsampling; deterministic given the seed."""
    pts = np.asarray(points, dtype=np.float64)
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(pts.shape[0]))]
    dist = np.linalg.norm(pts - pts[chosen[0]], axis=1)
    while len(chosen) < min(n, pts.shape[0]):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(pts - pts[nxt], axis=1))
    return pts[np.array(chosen)]


def spline_curve_cloud(n=300, noise=0.01, seed=0, dense=4000):
    """A closed cubic-spline space curve through 6 random anchors in
    [-1, 1]^3; the cloud is a farthest-point subsample with small noise.
    Returns (cloud, dense ground-truth samples)."""
    rng = np.random.default_rng(seed)
    anchors = rng.uniform(-0.8, 0.8, size=(6, 3))
    anchors = np.concatenate([anchors, anchors[:1]])  # close the loop
    t = np.linspace(0.0, 1.0, anchors.shape[0])
    spline = CubicSpline(t, anchors, bc_type="periodic")
    tg = np.linspace(0.0, 1.0, dense, endpoint=False)
    gt = spline(tg)
    cloud = farthest_point_sample(gt, n, seed=seed)
    cloud = cloud + noise * rng.standard_normal(cloud.shape)
    return cloud, gt


# -- idx (mnist-style) ingestion ---------------------------------------------------


def _read_idx(path, expected_magic):
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from None
    if len(blob) < 4:
        raise DataError(f"{path}: truncated IDX header")
    magic = struct.unpack(">I", blob[:4])[0]
    if magic != expected_magic:
        raise DataError(f"{path}: expected IDX magic {expected_magic}, got {magic}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(blob) < header:
        raise DataError(f"{path}: truncated IDX dimension header")
    dims = struct.unpack(f">{ndim}I", blob[4:header])
    count = int(np.prod(dims))
    data = np.frombuffer(blob, dtype=np.uint8, count=-1, offset=header)
    if data.size < count:
        raise DataError(f"{path}: truncated IDX payload ({data.size} < {count})")
    return data[:count].reshape(dims)


def ingest_idx(images_path, labels_path, subset=None, merge_map=None, seed=0):
    """Flattened [0,1] image vectors plus labels from an IDX file pair.

    ``merge_map`` remaps digit labels (e.g. {0: -1, ..., 9: +1}) for binary
    tasks; ``subset`` draws that many examples without replacement,
    deterministically for a given seed.
    """
    images = _read_idx(images_path, 2051)
    labels = _read_idx(labels_path, 2049)
    if images.shape[0] != labels.shape[0]:
        raise DataError(
            f"image/label count mismatch: {images.shape[0]} vs {labels.shape[0]}")
    X = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    y = labels.astype(np.int64)
    if merge_map is not None:
        missing = sorted(set(np.unique(y)) - set(merge_map))
        if missing:
            raise DataError(f"merge map lacks labels {missing}")
        y = np.array([merge_map[int(v)] for v in y], dtype=np.float64)
    if subset is not None:
        if subset > X.shape[0]:
            raise DataError(f"subset {subset} exceeds dataset size {X.shape[0]}")
        idx = np.random.default_rng(seed).choice(X.shape[0], size=subset, replace=False)
        X, y = X[idx], y[idx]
    return X, y
