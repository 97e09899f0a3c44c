"""Move seed points onto a chosen level set of a network.

The workhorse is the generalized Newton iteration
``p <- p - pinv(D_x F(p)) (F(p) - target)`` with the Moore-Penrose
pseudo-inverse computed by an explicit 1x1 or 2x2 solve. A regula-falsi
variant is available for scalar fields when a sign-changing bracket is
known. Failed seeds are kept with their final level value; callers decide
what to do with them.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

_RANK_TOL = 1e-9


@dataclass
class ProjectionConfig:
    max_iters: int = 20
    residual_tol: float = 1e-6
    pinv_reg: float = 1e-12
    target_level: float | np.ndarray = 0.0
    method: str = "newton"  # or "false_position" (used as a fallback by trainers)

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.residual_tol <= 0 or self.pinv_reg < 0:
            raise ValueError("tolerances must be positive")


@dataclass
class ProjectionRecord:
    """Final point of one projection attempt, with everything the sample
    network needs frozen at the current parameters."""

    p: np.ndarray            # (d,)
    c: np.ndarray            # (l,) level value F(p) at the final point
    pinv: np.ndarray         # (d, l) pseudo-inverse of D_x F(p)
    converged: bool
    iters: int
    seed_index: int = 0


def pinv_small(A, reg=0.0):
    """Moore-Penrose pseudo-inverse A^T (A A^T + reg I)^-1 for 1 or 2 rows.

    Returns (pinv, rank_ok); rank_ok is False when some row norm falls
    below 1e-9, in which case the caller should mark the projection failed.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] not in (1, 2):
        raise ValueError(f"expected (l, d) matrix with l in {{1,2}}, got {A.shape}")
    pinv, ok = _pinv_small_batch(A[None], reg)
    return pinv[0], bool(ok[0])


def _pinv_small_batch(A, reg):
    """(n, l, d) -> ((n, d, l), (n,) rank flags)."""
    n, l, d = A.shape
    row_norms = np.sqrt(np.einsum("nld,nld->nl", A, A))
    ok = np.all(row_norms >= _RANK_TOL, axis=1)
    if l == 1:
        denom = row_norms[:, 0] ** 2 + reg
        denom = np.where(denom > 0, denom, 1.0)
        pinv = A[:, 0, :] / denom[:, None]
        return pinv[:, :, None], ok
    G = np.einsum("nid,njd->nij", A, A)
    G[:, 0, 0] += reg
    G[:, 1, 1] += reg
    det = G[:, 0, 0] * G[:, 1, 1] - G[:, 0, 1] * G[:, 1, 0]
    ok = ok & (det > 0) & np.isfinite(det)
    safe = np.where(det != 0, det, 1.0)
    Ginv = np.empty_like(G)
    Ginv[:, 0, 0] = G[:, 1, 1] / safe
    Ginv[:, 1, 1] = G[:, 0, 0] / safe
    Ginv[:, 0, 1] = -G[:, 0, 1] / safe
    Ginv[:, 1, 0] = -G[:, 1, 0] / safe
    pinv = np.einsum("nld,nlk->ndk", A, Ginv)
    return pinv, ok


def _as_targets(target, n, l):
    t = np.asarray(target, dtype=np.float64)
    if t.ndim == 0:
        return np.full((n, l), float(t))
    if t.shape == (l,):
        return np.tile(t, (n, 1))
    if t.shape == (n, l):
        return t
    raise ValueError(f"target level must be scalar, ({l},) or ({n},{l}); got {t.shape}")


def newton_step(field, p, target=0.0, reg=0.0):
    """One generalized Newton step toward the target level.

    Returns (p_next, ok). For affine fields the step lands exactly on the
    target level set (it is the orthogonal projection). A rank-deficient
    Jacobian yields a zero step and ok=False.
    """
    p = np.asarray(p, dtype=np.float64)
    F = field.forward(p[None, :])[0]
    A = field.jacobian_input(p[None, :])[0]
    pinv, ok = pinv_small(A, reg)
    if not ok:
        return p.copy(), False
    t = _as_targets(target, 1, F.size)[0]
    return p - pinv @ (F - t), True


def project(field, seeds, cfg=None, targets=None):
    """Project every seed onto the target level set; one record per seed.

    Iterates generalized Newton steps, at most cfg.max_iters, stopping a
    seed once its residual norm drops below cfg.residual_tol. Seeds that
    fail (rank deficiency, divergence guard, or iteration budget) still
    produce records carrying their final point and level value. Steps whose
    length exceeds 10x the seed bounding-box diagonal are rejected and the
    seed is marked failed at its pre-step point.
    """
    cfg = cfg or ProjectionConfig()
    P = np.array(seeds, dtype=np.float64)
    if P.ndim != 2:
        raise ValueError(f"seeds must be (n, d), got {P.shape}")
    if not np.all(np.isfinite(P)):
        raise ValueError("seeds must be finite")
    n, d = P.shape
    l = field.output_dim
    T = _as_targets(cfg.target_level if targets is None else targets, n, l)

    span = P.max(axis=0) - P.min(axis=0) if n > 1 else np.zeros(d)
    guard = 10.0 * max(float(np.linalg.norm(span)), 1.0)

    converged = np.zeros(n, dtype=bool)
    failed = np.zeros(n, dtype=bool)
    iters = np.zeros(n, dtype=int)

    for _ in range(cfg.max_iters):
        active = ~converged & ~failed
        if not active.any():
            break
        idx = np.flatnonzero(active)
        Pa = P[idx]
        resid = field.forward(Pa) - T[idx]
        rnorm = np.linalg.norm(resid, axis=1)
        done = rnorm <= cfg.residual_tol
        converged[idx[done]] = True
        idx = idx[~done]
        if idx.size == 0:
            continue
        Pa, resid = Pa[~done], resid[~done]
        A = field.jacobian_input(Pa)
        pinv, ok = _pinv_small_batch(A, cfg.pinv_reg)
        failed[idx[~ok]] = True
        idx, Pa, resid, pinv = idx[ok], Pa[ok], resid[ok], pinv[ok]
        if idx.size == 0:
            continue
        step = -np.einsum("ndl,nl->nd", pinv, resid)
        too_far = np.linalg.norm(step, axis=1) > guard
        failed[idx[too_far]] = True
        idx, Pa, step = idx[~too_far], Pa[~too_far], step[~too_far]
        P[idx] = Pa + step
        iters[idx] += 1

    # final state: level value, pseudo-inverse and convergence at the last iterate
    C = field.forward(P)
    A = field.jacobian_input(P)
    PINV, ok = _pinv_small_batch(A, cfg.pinv_reg)
    rnorm = np.linalg.norm(C - T, axis=1)
    converged = (rnorm <= cfg.residual_tol) & ~failed
    return [
        ProjectionRecord(
            p=P[i].copy(),
            c=C[i].copy(),
            pinv=PINV[i].copy(),
            converged=bool(converged[i]),
            iters=int(iters[i]),
            seed_index=i,
        )
        for i in range(n)
    ]


def project_false_position(field, x, x_adv, max_iters=40, residual_tol=1e-6, pinv_reg=0.0):
    """Regula falsi along the segment [x, x_adv] for a scalar field.

    Requires opposite signs of F at the endpoints; the returned point never
    leaves the segment.
    """
    if field.output_dim != 1:
        raise ValueError("false-position projection needs a scalar field")
    x = np.asarray(x, dtype=np.float64)
    x_adv = np.asarray(x_adv, dtype=np.float64)
    fa = float(field.forward(x[None, :])[0, 0])
    fb = float(field.forward(x_adv[None, :])[0, 0])
    if fa == 0.0:
        return _finalize_fp(field, x, 0, True, pinv_reg)
    if fb == 0.0:
        return _finalize_fp(field, x_adv, 0, True, pinv_reg)
    if np.sign(fa) == np.sign(fb):
        raise ValueError(f"no bracket: F has the same sign at both endpoints ({fa:g}, {fb:g})")
    ta, tb = 0.0, 1.0
    best_t, best_f = (ta, fa) if abs(fa) < abs(fb) else (tb, fb)
    seg = x_adv - x
    it = 0
    for it in range(1, max_iters + 1):
        tm = ta - fa * (tb - ta) / (fb - fa)
        fm = float(field.forward((x + tm * seg)[None, :])[0, 0])
        if abs(fm) < abs(best_f):
            best_t, best_f = tm, fm
        if abs(fm) <= residual_tol:
            break
        if np.sign(fm) == np.sign(fa):
            ta, fa = tm, fm
        else:
            tb, fb = tm, fm
    return _finalize_fp(field, x + best_t * seg, it, abs(best_f) <= residual_tol, pinv_reg)


def _finalize_fp(field, p, iters, converged, reg):
    c = field.forward(p[None, :])[0]
    A = field.jacobian_input(p[None, :])[0]
    pinv, ok = pinv_small(A, reg)
    return ProjectionRecord(p=p.copy(), c=c, pinv=pinv, converged=converged and ok, iters=iters)


def sample_seeds(strategy, source, n, sigma=0.0, rng_seed=0):
    """Draw n projection seeds.

    strategy "uniform": source is a (d, 2) array (or pair of vectors) of
    box bounds; rows are i.i.d. uniform in the box.
    strategy "gaussian_perturb": source is a data batch; rows are data rows
    resampled with replacement plus N(0, sigma^2 I) noise.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(rng_seed)
    if strategy == "uniform":
        bounds = np.asarray(source, dtype=np.float64)
        if bounds.ndim == 2 and bounds.shape[1] == 2:
            lo, hi = bounds[:, 0], bounds[:, 1]
        elif bounds.ndim == 2 and bounds.shape[0] == 2:
            lo, hi = bounds[0], bounds[1]
        else:
            raise ValueError(f"uniform bounds must be (d,2) or (2,d), got {bounds.shape}")
        return rng.uniform(lo, hi, size=(n, lo.size))
    if strategy == "gaussian_perturb":
        data = np.asarray(source, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] == 0:
            raise ValueError("gaussian_perturb needs a nonempty (N, d) data batch")
        rows = data[rng.integers(0, data.shape[0], size=n)]
        return rows + sigma * rng.standard_normal(rows.shape)
    raise ValueError(f"unknown seed strategy {strategy!r}")


def records_to_csv(records, path_or_buf):
    """Write records as CSV: seed index, point coords, level values, converged, iters."""
    if not records:
        raise ValueError("no records to write")
    d = records[0].p.size
    l = records[0].c.size
    header = (
        ["seed_index"]
        + [f"p_{i}" for i in range(d)]
        + [f"c_{i}" for i in range(l)]
        + ["converged", "iters"]
    )
    own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
    f = open(path_or_buf, "w") if own else path_or_buf
    try:
        f.write(",".join(header) + "\n")
        for r in records:
            row = (
                [str(r.seed_index)]
                + [format(v, ".17g") for v in r.p]
                + [format(v, ".17g") for v in r.c]
                + [str(int(r.converged)), str(r.iters)]
            )
            f.write(",".join(row) + "\n")
    finally:
        if own:
            f.close()


def records_to_csv_string(records):
    buf = io.StringIO()
    records_to_csv(records, buf)
    return buf.getvalue()
