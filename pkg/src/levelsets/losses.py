"""Losses over level-set samples, plus the standard baselines.

Three sample-network losses: a geometric soft-margin SVM whose margin is
measured between adjacent level sets in input space, a robustness loss
that pushes the decision boundary out of an L-inf ball around each
example, and a reconstruction loss that pins level sets at prescribed
distances from a point cloud. Gradients flow through frozen sample
handles (the ``*_terms`` functions), exactly as during training where
projections are refreshed between optimizer steps and treated as
constants within one step.

Sign conventions (deterministic tie-breaks): sign(0) = +1 everywhere a
classification sign is taken; argmax / argmin ties resolve to the lowest
index.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .projection import ProjectionConfig, project, project_false_position
from .sample_net import handles_from_records, sample_grads_total, sample_positions

_DELTA_FLOOR = 1e-12


# -- scalar views of classifiers ---------------------------------------------


class MarginField:
    """Scalar field F_j(x) = f_j(x) - max_{i != j} f_i(x) over a classifier.

    Its zero level set is the class-j decision boundary. For scalar base
    networks the view is +F for positive labels and -F otherwise. Exposes
    the same forward / jacobian / VJP surface as an Mlp, so projection and
    sample-network machinery apply unchanged.
    """

    def __init__(self, base, label):
        self.base = base
        self.input_dim = base.input_dim
        self.output_dim = 1
        if base.output_dim == 1:
            self.label = 1 if label > 0 else 0
        else:
            if not 0 <= int(label) < base.output_dim:
                raise ValueError(f"label {label} out of range for {base.output_dim} logits")
            self.label = int(label)

    @property
    def n_params(self):
        return self.base.n_params

    def _cotangents(self, logits):
        """Rows e_j - e_{i*}; for scalar bases a constant +-1."""
        n, l = logits.shape
        if l == 1:
            return np.full((n, 1), 1.0 if self.label == 1 else -1.0)
        masked = logits.copy()
        masked[:, self.label] = -np.inf
        istar = np.argmax(masked, axis=1)
        cot = np.zeros((n, l))
        cot[np.arange(n), self.label] = 1.0
        cot[np.arange(n), istar] -= 1.0
        return cot

    def forward(self, X):
        logits = self.base.forward(X)
        if logits.shape[1] == 1:
            return logits if self.label == 1 else -logits
        masked = logits.copy()
        masked[:, self.label] = -np.inf
        return (logits[:, self.label] - masked.max(axis=1))[:, None]

    def jacobian_input(self, X):
        logits = self.base.forward(X)
        J = self.base.jacobian_input(X)
        cot = self._cotangents(logits)
        return np.einsum("nl,nld->nd", cot, J)[:, None, :]

    def vjp_params_batch(self, X, V):
        logits = self.base.forward(X)
        cot = self._cotangents(logits)
        return self.base.vjp_params_batch(X, V[:, 0:1] * cot)

    def vjp_params(self, x, v):
        return self.vjp_params_batch(np.asarray(x, float)[None, :], np.asarray(v, float)[None, :])


def scalar_binary_view(mlp):
    """The scalar decision field of a binary classifier: F itself for
    one-output nets, f_1 - f_0 for two-logit nets."""
    if mlp.output_dim == 1:
        return mlp
    if mlp.output_dim == 2:
        return MarginField(mlp, 1)
    raise ValueError("binary view needs a 1- or 2-output network")


def margin_logit(mlp, x, label):
    """Margin value F_j(x) with its input gradient and parameter gradient."""
    view = MarginField(mlp, label)
    x = np.asarray(x, dtype=np.float64)
    value = float(view.forward(x[None, :])[0, 0])
    grad_x = view.jacobian_input(x[None, :])[0, 0]
    grad_theta = view.vjp_params(x, np.ones(1))
    return value, grad_x, grad_theta


# -- baselines ----------------------------------------------------------------


def _binary_pm1(labels):
    y = np.asarray(labels)
    return np.where(y > 0, 1.0, -1.0)


def cross_entropy(mlp, X, labels):
    """Softmax cross-entropy (logistic loss for scalar nets); returns
    (loss, parameter gradient)."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    logits = mlp.forward(X)
    if mlp.output_dim == 1:
        y = _binary_pm1(labels)
        z = -y * logits[:, 0]
        loss = float(np.mean(np.logaddexp(0.0, z)))
        dF = (-y / (1.0 + np.exp(-z))) / n
        return loss, mlp.vjp_params_batch(X, dF[:, None])
    y = np.asarray(labels, dtype=int)
    lse = _logsumexp(logits)
    loss = float(np.mean(lse - logits[np.arange(n), y]))
    probs = np.exp(logits - lse[:, None])
    dlogits = probs.copy()
    dlogits[np.arange(n), y] -= 1.0
    return loss, mlp.vjp_params_batch(X, dlogits / n)


def _logsumexp(logits):
    m = logits.max(axis=1)
    return m + np.log(np.exp(logits - m[:, None]).sum(axis=1))


def cross_entropy_input_grad(mlp, X, labels):
    """d(cross entropy)/dx per example, shape (n, d); used by PGD."""
    X = np.asarray(X, dtype=np.float64)
    logits = mlp.forward(X)
    J = mlp.jacobian_input(X)
    if mlp.output_dim == 1:
        y = _binary_pm1(labels)
        dF = -y / (1.0 + np.exp(y * logits[:, 0]))
        return dF[:, None] * J[:, 0, :]
    y = np.asarray(labels, dtype=int)
    lse = _logsumexp(logits)
    dlogits = np.exp(logits - lse[:, None])
    dlogits[np.arange(X.shape[0]), y] -= 1.0
    return np.einsum("nl,nld->nd", dlogits, J)


def output_hinge(mlp, X, labels):
    """Multiclass output-space hinge max{0, 1 - F_y(x)}; returns (loss, grad)."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    logits = mlp.forward(X)
    if mlp.output_dim == 1:
        y = _binary_pm1(labels)
        margins = y * logits[:, 0]
        active = margins < 1.0
        loss = float(np.mean(np.maximum(0.0, 1.0 - margins)))
        dF = np.where(active, -y, 0.0) / n
        return loss, mlp.vjp_params_batch(X, dF[:, None])
    y = np.asarray(labels, dtype=int)
    masked = logits.copy()
    masked[np.arange(n), y] = -np.inf
    istar = np.argmax(masked, axis=1)
    margins = logits[np.arange(n), y] - masked[np.arange(n), istar]
    active = margins < 1.0
    loss = float(np.mean(np.maximum(0.0, 1.0 - margins)))
    dlogits = np.zeros_like(logits)
    rows = np.arange(n)[active]
    dlogits[rows, y[active]] = -1.0 / n
    dlogits[rows, istar[active]] = 1.0 / n
    return loss, mlp.vjp_params_batch(X, dlogits)


def soft_svm_affine(w, b, X, y, lam):
    """Classic soft-margin SVM objective for an affine classifier; the
    reduction oracle for the geometric loss."""
    w = np.asarray(w, dtype=np.float64)
    y = _binary_pm1(y)
    margins = y * (X @ w + b)
    return float(np.mean(np.maximum(0.0, 1.0 - margins)) + lam * (w @ w))


# -- geometric SVM -------------------------------------------------------------


@dataclass
class SvmConfig:
    lam: float = 0.001
    alpha: float = -1.0
    dist_norm: str = "linf"  # or "l2"
    lambda_schedule: tuple | None = None  # (start, end, epochs)

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.dist_norm not in ("linf", "l2"):
            raise ValueError(f"dist_norm must be 'linf' or 'l2', got {self.dist_norm!r}")
        if self.lambda_schedule is not None and self.lambda_schedule[2] < 1:
            raise ValueError("lambda ramp needs at least one epoch")

    def lam_at(self, epoch):
        if self.lambda_schedule is None:
            return self.lam
        start, end, ramp = self.lambda_schedule
        f = min(max(epoch / ramp, 0.0), 1.0)
        return start + f * (end - start)


def _row_norms(U, kind):
    if kind == "l2":
        return np.linalg.norm(U, axis=1)
    return np.abs(U).max(axis=1)


def _row_norm_grads(U, kind):
    """Subgradient rows of the norm; L-inf picks the first max coordinate."""
    if kind == "l2":
        n = np.linalg.norm(U, axis=1)
        safe = np.where(n > 0, n, 1.0)
        return U / safe[:, None]
    G = np.zeros_like(U)
    istar = np.argmax(np.abs(U), axis=1)
    rows = np.arange(U.shape[0])
    G[rows, istar] = np.sign(U[rows, istar])
    return G


def geometric_svm_terms(field, X, y, h0, h1, hm1, cfg, lam=None, n_total=None):
    """Geometric SVM loss over frozen sample handles; returns (loss, grad, info).

    ``h0/h1/hm1`` are the per-example handles on the 0 / +1 / -1 level sets.
    ``n_total`` rescales the means when some examples were diverted to a
    fallback loss by the caller.
    """
    X = np.asarray(X, dtype=np.float64)
    y = _binary_pm1(y)
    n = X.shape[0]
    N = n_total or n
    lam = cfg.lam if lam is None else lam

    P0 = sample_positions(field, h0)
    P1 = sample_positions(field, h1)
    Pm1 = sample_positions(field, hm1)

    g = field.forward(X)[:, 0]
    s = np.where(y * g >= 0.0, 1.0, -1.0)

    v = X - P0
    dist = _row_norms(v, cfg.dist_norm)
    um1 = P0 - Pm1
    u1 = P0 - P1
    nm1 = _row_norms(um1, cfg.dist_norm)
    n1 = _row_norms(u1, cfg.dist_norm)
    take_m1 = nm1 <= n1  # tie -> the S_{-1} branch
    delta_raw = np.where(take_m1, nm1, n1)
    delta = np.maximum(delta_raw, _DELTA_FLOOR)

    ratio = s * dist / delta
    hinge = np.maximum(0.0, 1.0 - ratio)
    active = hinge > 0.0
    loss_hinge = float(hinge.sum() / N)
    loss_reg = float(lam * np.sum(delta**cfg.alpha) / N)

    # cotangents on the three position sets
    d_dist = np.where(active, -s / delta, 0.0) / N
    d_delta = np.where(active, s * dist / delta**2, 0.0) / N
    d_delta = d_delta + lam * cfg.alpha * delta ** (cfg.alpha - 1.0) / N
    d_delta = np.where(delta_raw >= _DELTA_FLOOR, d_delta, 0.0)

    gv = _row_norm_grads(v, cfg.dist_norm)
    gm1 = _row_norm_grads(um1, cfg.dist_norm)
    g1 = _row_norm_grads(u1, cfg.dist_norm)

    cot0 = -d_dist[:, None] * gv
    cot1 = np.zeros_like(P1)
    cotm1 = np.zeros_like(Pm1)
    branch_grad = np.where(take_m1[:, None], gm1, g1)
    cot0 += d_delta[:, None] * branch_grad
    cotm1 -= np.where(take_m1[:, None], d_delta[:, None] * gm1, 0.0)
    cot1 -= np.where(take_m1[:, None], 0.0, d_delta[:, None] * g1)

    grad = sample_grads_total(field, list(h0) + list(h1) + list(hm1),
                              np.concatenate([cot0, cot1, cotm1]))
    info = {"dist": dist, "delta": delta, "hinge": hinge, "margin_sign": s}
    return loss_hinge + loss_reg, grad, info


def geometric_svm(field, X, y, cfg, proj_cfg=None, lam=None, fallback=True):
    """Project, build handles, and evaluate the geometric SVM loss.

    Each example is projected onto the zero set, and that boundary point is
    re-projected onto the +1 and -1 level sets; the margin is the smaller
    of the two level-set gaps. Examples whose projections fail fall back to
    cross-entropy for this evaluation (count reported in info).
    """
    proj_cfg = proj_cfg or ProjectionConfig()
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    recs0 = project(field, X, proj_cfg, targets=0.0)
    P0 = np.stack([r.p for r in recs0])
    recs1 = project(field, P0, proj_cfg, targets=1.0)
    recsm1 = project(field, P0, proj_cfg, targets=-1.0)
    ok = np.array([a.converged and b.converged and c.converged
                   for a, b, c in zip(recs0, recs1, recsm1)])
    if not fallback:
        ok = np.ones(n, dtype=bool)
    info = {"fallback_count": int(n - ok.sum())}
    loss = 0.0
    grad = np.zeros(field.n_params)
    if ok.any():
        idx = np.flatnonzero(ok)
        l, g, sub = geometric_svm_terms(
            field,
            X[idx],
            np.asarray(y)[idx],
            handles_from_records([recs0[i] for i in idx]),
            handles_from_records([recs1[i] for i in idx]),
            handles_from_records([recsm1[i] for i in idx]),
            cfg,
            lam=lam,
            n_total=n,
        )
        loss += l
        grad += g
        info.update(sub)
    if (~ok).any():
        idx = np.flatnonzero(~ok)
        base = getattr(field, "base", field)
        yb = np.asarray(y)[idx]
        if base.output_dim > 1:
            yb = (np.asarray(yb) > 0).astype(int)
        ce, ce_grad = cross_entropy(base, X[idx], yb)
        loss += ce * idx.size / n
        grad += ce_grad * idx.size / n
    return loss, grad, info


# -- robustness loss ------------------------------------------------------------


@dataclass
class RobustConfig:
    eps_train: float = 0.3
    lambda_correct: float = 1.0
    lambda_incorrect: float = 1.0

    def __post_init__(self):
        if self.eps_train <= 0:
            raise ValueError("eps_train must be > 0")


def robust_hinge_term(eps, lam, s, rho):
    """One example's contribution lam * max(0, eps - s * rho)."""
    return lam * max(0.0, eps - s * rho)


def _probe_opposite_sign(view, x, f0, eps, steps=12):
    """Walk along the signed-gradient direction that reduces |the margin|
    until the margin changes sign; returns the bracket endpoint or None."""
    step = max(eps / 2.0, 1e-3)
    sgn = np.sign(f0) if f0 != 0 else 1.0
    cur = x.copy()
    for _ in range(steps):
        grad = view.jacobian_input(cur[None, :])[0, 0]
        cur = cur - step * sgn * np.sign(grad)
        f = float(view.forward(cur[None, :])[0, 0])
        if np.sign(f) != sgn and f != 0.0 or (f == 0.0):
            return cur
    return None


def adversarial_margin_terms(view, X, s, lam_j, handles, istars, eps, N):
    """Robust hinge over frozen boundary handles for one class group."""
    P = sample_positions(view, handles)
    rows = np.arange(X.shape[0])
    rho = np.abs(X[rows, istars] - P[rows, istars])
    hinge = np.maximum(0.0, eps - s * rho)
    loss = float((lam_j * hinge).sum() / N)
    active = hinge > 0.0
    coeff = np.where(active, -lam_j * s, 0.0) / N
    diff = P[rows, istars] - X[rows, istars]
    rho_sign = np.where(diff >= 0.0, 1.0, -1.0)  # sign(0) = +1
    cot = np.zeros_like(P)
    cot[rows, istars] = coeff * rho_sign
    grad = sample_grads_total(view, handles, cot)
    return loss, grad, rho


def adversarial_margin_loss(mlp, X, y, cfg, proj_cfg=None, fp_iters=40):
    """Input-space margin loss for robust training; returns (loss, grad, info).

    Each example needs one sample on its class decision boundary; Newton
    projection is tried first, then regula falsi along a signed-gradient
    probe direction. Examples with no boundary sample are skipped (the
    classifier looks constant-sign along the probe) and counted.
    """
    proj_cfg = proj_cfg or ProjectionConfig()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    N = X.shape[0]
    loss = 0.0
    grad = np.zeros(mlp.n_params)
    skipped = 0
    rhos = np.full(N, np.nan)
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        view = MarginField(mlp, cls)
        f0 = view.forward(X[idx])[:, 0]
        s = np.where(f0 >= 0.0, 1.0, -1.0)
        lam_j = np.where(f0 >= 0.0, cfg.lambda_correct, cfg.lambda_incorrect)
        recs = project(view, X[idx], proj_cfg, targets=0.0)
        keep, handles, istars = [], [], []
        for k, rec in enumerate(recs):
            if not rec.converged:
                x_adv = _probe_opposite_sign(view, X[idx[k]], f0[k], cfg.eps_train)
                if x_adv is None:
                    skipped += 1
                    continue
                try:
                    rec = project_false_position(view, X[idx[k]], x_adv, max_iters=fp_iters,
                                                 residual_tol=proj_cfg.residual_tol)
                except ValueError:
                    skipped += 1
                    continue
                if not rec.converged:
                    skipped += 1
                    continue
            keep.append(k)
            handles.append(handles_from_records([rec])[0])
            istars.append(int(np.argmax(np.abs(rec.pinv[:, 0]))))
        if not keep:
            continue
        keep = np.array(keep)
        l, g, rho = adversarial_margin_terms(
            view, X[idx[keep]], s[keep], lam_j[keep], handles,
            np.array(istars), cfg.eps_train, N)
        loss += l
        grad += g
        rhos[idx[keep]] = rho
    return loss, grad, {"skipped": skipped, "rho": rhos}


# -- reconstruction loss ---------------------------------------------------------


@dataclass
class ReconConfig:
    levels: tuple = (0.0,)
    p_norm: float = 1.0
    lam_start: float = 1.0
    lam_end: float = 5.0
    lam_epochs: int = 1000
    sigma: float = 0.1
    samples_per_level: int = 0  # 0 -> split the batch in half, per the training recipe

    def __post_init__(self):
        if 0.0 not in self.levels:
            raise ValueError("the level set 0 must be among the target levels")
        if self.p_norm < 1:
            raise ValueError("p_norm must be >= 1")

    def lam_at(self, epoch):
        f = min(max(epoch / max(self.lam_epochs, 1), 0.0), 1.0)
        return self.lam_start + f * (self.lam_end - self.lam_start)


def build_recon_handles(field, batch_X, cfg, proj_cfg, rng):
    """Seed level-set samples from a noisy batch and project them.

    Half the noisy batch goes to the zero set, the other half round-robins
    over the nonzero target levels (scalar fields only). Failed scalar
    projections are kept with their achieved level; vector-valued fields
    keep converged samples only. Returns {intended level: [handles]}.
    """
    batch_X = np.asarray(batch_X, dtype=np.float64)
    seeds = batch_X + cfg.sigma * rng.standard_normal(batch_X.shape)
    nonzero = [t for t in cfg.levels if t != 0.0]
    l = field.output_dim
    if l == 1 and nonzero:
        n0 = max(seeds.shape[0] // 2, 1)
        if cfg.samples_per_level > 0:
            n0 = max(seeds.shape[0] - cfg.samples_per_level * len(nonzero), 1)
        order = rng.permutation(seeds.shape[0])
        groups = {0.0: order[:n0]}
        rest = order[n0:]
        for i, t in enumerate(nonzero):
            groups[t] = rest[i::len(nonzero)]
    else:
        groups = {0.0: np.arange(seeds.shape[0])}
    out = {}
    for t, idx in groups.items():
        if idx.size == 0:
            continue
        recs = project(field, seeds[idx], proj_cfg, targets=t)
        if l > 1:
            recs = [r for r in recs if r.converged]
        if recs:
            out[t] = handles_from_records(recs)
    return out


def reconstruction_terms(field, handles_by_level, cloud, X_batch, cfg, lam):
    """Reconstruction loss over frozen handles; returns (loss, grad, info).

    Level term per t: (mean over samples |dist(p(theta), X) - target|^p)^(1/p)
    with target = |achieved level| for scalar fields (failed projections keep
    their own level) and 0 for vector fields. Data term: lam * mean |F| over
    the batch.
    """
    X_batch = np.asarray(X_batch, dtype=np.float64)
    l = field.output_dim
    p = cfg.p_norm
    loss = 0.0
    grad = np.zeros(field.n_params)
    level_terms = {}
    for t in sorted(handles_by_level):
        handles = handles_by_level[t]
        P = sample_positions(field, handles)
        dists, nearest = cloud.tree.query(P)
        targets = np.array([abs(float(h.c[0])) for h in handles]) if l == 1 else np.zeros(len(handles))
        r = dists - targets
        absr = np.abs(r)
        mean_p = float(np.mean(absr**p))
        term = mean_p ** (1.0 / p)
        level_terms[t] = term
        loss += term
        if mean_p > 0.0:
            dmean = (mean_p ** (1.0 / p - 1.0)) / p if p != 1.0 else 1.0
            dr = dmean * p * absr ** (p - 1.0) * np.where(r >= 0, 1.0, -1.0) / len(handles)
            diff = P - cloud.points[nearest]
            safe = np.where(dists > 0, dists, 1.0)
            cot = dr[:, None] * diff / safe[:, None]
            cot[dists == 0.0] = 0.0
            grad += sample_grads_total(field, handles, cot)
    F = field.forward(X_batch)
    nb = X_batch.shape[0]
    if l == 1:
        data_term = float(np.mean(np.abs(F[:, 0])))
        cotF = np.where(F >= 0, 1.0, -1.0) * (lam / nb)
    else:
        norms = np.linalg.norm(F, axis=1)
        data_term = float(np.mean(norms))
        safe = np.where(norms > 0, norms, 1.0)
        cotF = (F / safe[:, None]) * (lam / nb)
        cotF[norms == 0.0] = 0.0
    loss += lam * data_term
    grad += field.vjp_params_batch(X_batch, cotF)
    info = {"level_terms": level_terms, "data_term": data_term, "lam": lam}
    return loss, grad, info


def reconstruction_loss(field, cloud, X_batch, cfg, proj_cfg=None, rng=None, lam=None):
    """Sample level sets from a noisy batch and evaluate the loss."""
    proj_cfg = proj_cfg or ProjectionConfig(max_iters=10)
    rng = rng or np.random.default_rng(0)
    lam = cfg.lam_start if lam is None else lam
    handles = build_recon_handles(field, X_batch, cfg, proj_cfg, rng)
    missing = [t for t in cfg.levels if t not in handles]
    if missing:
        warnings.warn(f"no samples recovered for levels {missing}; terms omitted", stacklevel=2)
    loss, grad, info = reconstruction_terms(field, handles, cloud, X_batch, cfg, lam)
    info["missing_levels"] = missing
    return loss, grad, info
