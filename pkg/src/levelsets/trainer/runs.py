"""End-to-end training loops writing deterministic run directories.

A run directory holds: config.txt (canonical snapshot), data.csv (the
training data, so plots and attacks can be reproduced), metrics.csv
(one row per epoch), optional eval.csv / final.csv, checkpoints, and SVG
plots. Re-running with the same config and seed reproduces the CSVs
byte for byte: all randomness flows from seeded generators, batches are
deterministic, and floats are printed with %.17g.
"""

from __future__ import annotations

import os
import warnings

import numpy as np

from ..errors import ConfigError, DataError
from ..losses import (
    ReconConfig,
    RobustConfig,
    SvmConfig,
    adversarial_margin_loss,
    cross_entropy,
    geometric_svm,
    output_hinge,
    reconstruction_loss,
    scalar_binary_view,
)
from ..mlp import load_checkpoint, make_mlp, save_checkpoint
from ..projection import ProjectionConfig
from ..reconstruction import (
    PointCloud,
    chamfer,
    extract_curve,
    extract_isosurface,
    save_mesh,
    save_polylines,
)
from . import datasets
from .attacks import AttackConfig, predict, robust_accuracy
from .config import format_config, parse_ramp, parse_schedule, require
from .optim import OptimConfig, OptimState, optimize_step
from .plots import loss_curves_svg, scatter_contours_svg

_F = ".17g"


class RunDirectory:
    """Filesystem home of one training run."""

    def __init__(self, path, cfg=None):
        self.path = str(path)
        os.makedirs(self.path, exist_ok=True)
        if cfg is not None:
            with open(self.file("config.txt"), "w") as f:
                f.write(format_config(cfg))

    def file(self, name):
        return os.path.join(self.path, name)

    def write_csv(self, name, columns, rows):
        with open(self.file(name), "w") as f:
            f.write(",".join(columns) + "\n")
            for row in rows:
                f.write(",".join(
                    format(v, _F) if isinstance(v, float) else str(v) for v in row) + "\n")

    def read_csv(self, name):
        with open(self.file(name)) as f:
            lines = [ln for ln in f.read().splitlines() if ln]
        cols = lines[0].split(",")
        data = {c: [] for c in cols}
        for ln in lines[1:]:
            for c, v in zip(cols, ln.split(",")):
                data[c].append(float(v))
        return data

    def save_points(self, name, X, y=None):
        with open(self.file(name), "w") as f:
            for i in range(len(X)):
                row = [format(v, _F) for v in X[i]]
                if y is not None:
                    row.append(format(float(y[i]), _F))
                f.write(" ".join(row) + "\n")

    def load_points(self, name, labeled):
        rows = []
        with open(self.file(name)) as f:
            for ln in f:
                if ln.strip():
                    rows.append([float(v) for v in ln.split()])
        arr = np.array(rows)
        if labeled:
            return arr[:, :-1], arr[:, -1]
        return arr, None


# -- shared plumbing -----------------------------------------------------------


def _child_seed(seed, stream):
    return int(np.random.SeedSequence([int(seed), stream]).generate_state(1)[0])


def _build_net(cfg, input_dim):
    widths = require(cfg, "widths")
    if isinstance(widths, (int, float)):
        widths = [int(widths)]
    return make_mlp(
        input_dim,
        [int(w) for w in widths],
        int(cfg.get("output_dim", 1)),
        activation=cfg.get("activation", "relu"),
        beta=float(cfg.get("softplus_beta", 100.0)),
        skips=cfg.get("skips", ()),
        seed=_child_seed(require(cfg, "seed"), 17),
    )


def _optim(cfg):
    opt = OptimConfig(
        method=cfg.get("optimizer", "adam"),
        lr=float(cfg.get("lr", 0.001)),
        momentum=float(cfg.get("momentum", 0.9)),
        weight_decay=float(cfg.get("weight_decay", 0.0)),
        lr_schedule=parse_schedule(cfg.get("lr_schedule", ())),
        epochs=int(require(cfg, "epochs")),
        batch_size=int(cfg.get("batch_size", 32)),
        rng_seed=int(require(cfg, "seed")),
    )
    return opt, OptimState()


def _rng(cfg, stream):
    return np.random.default_rng([int(require(cfg, "seed")), stream])


def _batches(n, batch_size, rng):
    perm = rng.permutation(n)
    for s in range(0, n, batch_size):
        yield perm[s : s + batch_size]


def _labels_as_classes(mlp, y):
    if mlp.output_dim == 1:
        return y
    return (np.asarray(y) > 0).astype(int)


def _accuracy(mlp, X, y):
    if len(X) == 0:
        return float("nan")
    pred = predict(mlp, X)
    if mlp.output_dim == 1:
        return float(np.mean(pred == np.where(np.asarray(y) > 0, 1, -1)))
    return float(np.mean(pred == _labels_as_classes(mlp, y)))


def classifier_data(cfg):
    """(X, y, X_test, y_test) per the dataset config; tests may be empty."""
    name = require(cfg, "dataset")
    seed = int(require(cfg, "seed"))
    empty = np.zeros((0, 2)), np.zeros(0)
    if name == "figure1":
        X, y = datasets.figure1_points()
        return X, y, *empty
    if name == "two_moons":
        X, y = datasets.two_moons(
            n=int(cfg.get("moons_n", 200)),
            noise=float(cfg.get("moons_noise", 0.06)),
            scale=float(cfg.get("moons_scale", 1.0)),
            seed=_child_seed(seed, 31),
        )
        Xte, yte = datasets.two_moons(
            n=int(cfg.get("moons_test_n", 400)),
            noise=float(cfg.get("moons_noise", 0.06)),
            scale=float(cfg.get("moons_scale", 1.0)),
            seed=_child_seed(seed, 32),
        )
        return X, y, Xte, yte
    if name == "ring":
        X, y = datasets.ring_binary(
            n=int(cfg.get("ring_n", 512)),
            radius=float(cfg.get("ring_radius", 0.2)),
            box=float(cfg.get("ring_box", 0.35)),
            seed=_child_seed(seed, 33),
        )
        return X, y, *empty
    if name == "idx":
        merge = cfg.get("merge_map")
        if isinstance(merge, str):
            merge = {int(k): float(v) for k, v in
                     (pair.split(":") for pair in merge.split(";"))}
        X, y = datasets.ingest_idx(
            require(cfg, "idx_images"),
            require(cfg, "idx_labels"),
            subset=cfg.get("subset"),
            merge_map=merge,
            seed=seed,
        )
        return X, y, np.zeros((0, X.shape[1])), np.zeros(0)
    raise ConfigError(f"unknown classifier dataset {name!r}")


# -- training loops ---------------------------------------------------------------


def train_classifier(cfg, out_dir):
    """Geometric-SVM or baseline classifier training."""
    run = RunDirectory(out_dir, cfg)
    X, y, Xte, yte = classifier_data(cfg)
    mlp = _build_net(cfg, X.shape[1])
    loss_kind = cfg.get("loss", "geometric_svm")
    opt, state = _optim(cfg)
    proj_cfg = ProjectionConfig(max_iters=int(cfg.get("proj_iters", 20)))
    ramp = parse_ramp(cfg.get("svm_lambda_ramp"))
    svm_cfg = SvmConfig(
        lam=float(cfg.get("svm_lambda", 0.001)),
        alpha=float(cfg.get("svm_alpha", -1.0)),
        dist_norm=cfg.get("svm_dist", "linf"),
        lambda_schedule=ramp,
    )
    view = scalar_binary_view(mlp)
    rng = _rng(cfg, 1)
    rows = []
    for epoch in range(opt.epochs):
        lr = opt.lr_at(epoch)
        lam = svm_cfg.lam_at(epoch)
        total, fallbacks = 0.0, 0
        for idx in _batches(X.shape[0], opt.batch_size, rng):
            Xb, yb = X[idx], y[idx]
            if loss_kind == "geometric_svm":
                loss, grad, info = geometric_svm(view, Xb, yb, svm_cfg, proj_cfg, lam=lam)
                fallbacks += info["fallback_count"]
            elif loss_kind == "cross_entropy":
                loss, grad = cross_entropy(mlp, Xb, _labels_as_classes(mlp, yb))
            elif loss_kind == "output_hinge":
                loss, grad = output_hinge(mlp, Xb, _labels_as_classes(mlp, yb))
            else:
                raise ConfigError(f"unknown loss {loss_kind!r}")
            optimize_step(mlp, grad, state, opt, lr)
            total += loss * idx.size
        row = [epoch, total / X.shape[0], _accuracy(mlp, X, y)]
        if len(Xte):
            row.append(_accuracy(mlp, Xte, yte))
        if loss_kind == "geometric_svm":
            row.append(fallbacks)
        rows.append(row)
        _maybe_checkpoint(run, mlp, cfg, epoch, opt.epochs)
    cols = ["epoch", "loss", "train_acc"]
    if len(Xte):
        cols.append("test_acc")
    if loss_kind == "geometric_svm":
        cols.append("fallbacks")
    run.write_csv("metrics.csv", cols, rows)
    run.save_points("data.csv", X, y)
    save_checkpoint(mlp, run.file("checkpoint_final.nlvl"))
    if cfg.get("plots"):
        emit_plots(run.path)
    return run


def train_robust(cfg, out_dir):
    """Adversarially robust training with the input-space margin loss."""
    run = RunDirectory(out_dir, cfg)
    X, y, Xte, yte = classifier_data(cfg)
    mlp = _build_net(cfg, X.shape[1])
    opt, state = _optim(cfg)
    proj_cfg = ProjectionConfig(max_iters=int(cfg.get("proj_iters", 20)))
    rcfg = RobustConfig(
        eps_train=float(require(cfg, "eps_train")),
        lambda_correct=float(cfg.get("lambda_correct", 1.0)),
        lambda_incorrect=float(cfg.get("lambda_incorrect", 1.0)),
    )
    fp_iters = int(cfg.get("fp_iters", 40))
    attack = _attack_config(cfg)
    box = _data_box(X)
    rng = _rng(cfg, 2)
    rows, eval_rows = [], []
    eval_every = int(cfg.get("eval_every", 0))
    for epoch in range(opt.epochs):
        lr = opt.lr_at(epoch)
        total, skipped = 0.0, 0
        for idx in _batches(X.shape[0], opt.batch_size, rng):
            loss, grad, info = adversarial_margin_loss(
                mlp, X[idx], y[idx], rcfg, proj_cfg, fp_iters=fp_iters)
            skipped += info["skipped"]
            optimize_step(mlp, grad, state, opt, lr)
            total += loss * idx.size
        rows.append([epoch, total / X.shape[0], _accuracy(mlp, X, y), skipped])
        if eval_every and (epoch + 1) % eval_every == 0:
            eval_rows.append([epoch] + _robust_eval(mlp, Xte, yte, attack, box))
        _maybe_checkpoint(run, mlp, cfg, epoch, opt.epochs)
    run.write_csv("metrics.csv", ["epoch", "loss", "train_acc", "skipped"], rows)
    final = _robust_eval(mlp, Xte, yte, attack, box)
    eval_rows.append([opt.epochs - 1] + final)
    run.write_csv("eval.csv", ["epoch", "robust_xent", "robust_margin"], eval_rows)
    run.write_csv("final.csv", ["test_acc", "robust_xent", "robust_margin"],
                  [[_accuracy(mlp, Xte, yte), final[0], final[1]]])
    run.save_points("data.csv", X, y)
    save_checkpoint(mlp, run.file("checkpoint_final.nlvl"))
    if cfg.get("plots"):
        emit_plots(run.path)
    return run


def _attack_config(cfg, objective="xent"):
    return AttackConfig(
        eps_attack=float(cfg.get("eval_eps", 0.15)),
        steps=int(cfg.get("eval_steps", 40)),
        step_size=float(cfg.get("eval_step_size", 0.01)),
        objective=objective,
        random_start=bool(cfg.get("eval_random_start", True)),
        restarts=int(cfg.get("eval_restarts", 1)),
    )


def _data_box(X):
    return (X.min(axis=0) - 0.5, X.max(axis=0) + 0.5)


def _robust_eval(mlp, Xte, yte, attack, box):
    if not len(Xte):
        return [float("nan"), float("nan")]
    out = []
    for obj, seed in (("xent", 101), ("margin", 102)):
        a = AttackConfig(attack.eps_attack, attack.steps, attack.step_size, obj,
                         attack.random_start, attack.restarts)
        out.append(robust_accuracy(mlp, Xte, yte, a, clip_box=box, rng_seed=seed))
    return out


def recon_data(cfg):
    name = require(cfg, "dataset")
    seed = int(require(cfg, "seed"))
    child = _child_seed(seed, 41)
    if name == "circle":
        return datasets.circle_cloud(
            n=int(cfg.get("cloud_n", 256)),
            radius=float(cfg.get("cloud_radius", 1.0)),
            noise=float(cfg.get("cloud_noise", 0.0)),
            seed=child,
        )
    if name == "spline":
        return datasets.spline_curve_cloud(
            n=int(cfg.get("cloud_n", 300)),
            noise=float(cfg.get("cloud_noise", 0.01)),
            seed=child,
        )
    if name == "cloud_file":
        from ..reconstruction import load_cloud

        path = require(cfg, "cloud_path")
        try:
            cloud = load_cloud(path)
        except OSError as e:
            raise DataError(f"cannot read cloud {path}: {e}") from None
        return cloud.points, cloud.points
    raise ConfigError(f"unknown reconstruction dataset {name!r}")


def train_reconstruction(cfg, out_dir):
    """Level-set reconstruction of a point cloud."""
    run = RunDirectory(out_dir, cfg)
    X, gt = recon_data(cfg)
    cloud = PointCloud(X)
    mlp = _build_net(cfg, X.shape[1])
    opt, state = _optim(cfg)
    proj_cfg = ProjectionConfig(max_iters=int(cfg.get("proj_iters", 10)))
    ramp = parse_ramp(cfg.get("recon_lambda_ramp", "1:5:1000"))
    levels = cfg.get("recon_levels", [0.0])
    if isinstance(levels, (int, float)):
        levels = [float(levels)]
    rcfg = ReconConfig(
        levels=tuple(float(t) for t in levels),
        p_norm=float(cfg.get("recon_p", 1.0)),
        lam_start=ramp[0],
        lam_end=ramp[1],
        lam_epochs=ramp[2],
        sigma=float(cfg.get("recon_sigma", 0.1)),
    )
    rng = _rng(cfg, 3)
    rows = []
    for epoch in range(opt.epochs):
        lr = opt.lr_at(epoch)
        lam = rcfg.lam_at(epoch)
        total, data_total, nb = 0.0, 0.0, 0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # missing-level warnings are routine early on
            for idx in _batches(X.shape[0], opt.batch_size, rng):
                loss, grad, info = reconstruction_loss(
                    mlp, cloud, X[idx], rcfg, proj_cfg, rng=rng, lam=lam)
                optimize_step(mlp, grad, state, opt, lr)
                total += loss
                data_total += info["data_term"]
                nb += 1
        rows.append([epoch, total / nb, data_total / nb, lam])
        _maybe_checkpoint(run, mlp, cfg, epoch, opt.epochs)
    run.write_csv("metrics.csv", ["epoch", "loss", "data_term", "lambda"], rows)
    run.save_points("data.csv", X)
    save_checkpoint(mlp, run.file("checkpoint_final.nlvl"))
    _finalize_recon(run, cfg, mlp, cloud, gt)
    if cfg.get("plots"):
        emit_plots(run.path)
    return run


def _finalize_recon(run, cfg, mlp, cloud, gt):
    """Extract the zero set, save it, and score it against the reference."""
    bounds = cloud.bounds(inflate=0.3)
    res = int(cfg.get("extract_res", 100))
    pts = np.zeros((0, cloud.dim))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if mlp.output_dim == 1:
            mesh = extract_isosurface(mlp, bounds, res)
            pts = mesh.vertices
            if cloud.dim == 3:
                save_mesh(mesh, run.file("zero_set.obj"))
            else:
                save_mesh(mesh, run.file("zero_set.xyz"))
        else:
            chains = extract_curve(mlp, bounds, resolution=res,
                                   proj_cfg=ProjectionConfig(max_iters=30, residual_tol=1e-9))
            if chains:
                pts = np.concatenate(chains)
                save_polylines(chains, run.file("zero_set.xyz"))
    if pts.shape[0] > 0:
        c1 = chamfer(pts, gt, "l1")
        c2 = chamfer(pts, gt, "l2")
        rows = [[c1, c2, c1 * 1e3, c2 * 1e3]]
    else:
        rows = [[float("nan")] * 4]
    run.write_csv("final.csv",
                  ["chamfer_l1", "chamfer_l2", "chamfer_l1_x1e3", "chamfer_l2_x1e3"], rows)


def _maybe_checkpoint(run, mlp, cfg, epoch, total_epochs):
    every = int(cfg.get("checkpoint_every", 0))
    if every and (epoch + 1) % every == 0 and epoch + 1 < total_epochs:
        save_checkpoint(mlp, run.file(f"checkpoint_epoch{epoch + 1:05d}.nlvl"))


# -- plotting from a finished run ------------------------------------------------


def emit_plots(run_path):
    """Regenerate the run's SVG plots from its stored files; returns paths."""
    run = RunDirectory(run_path)
    cfg = {}
    if os.path.exists(run.file("config.txt")):
        from .config import parse_config_text

        with open(run.file("config.txt")) as f:
            cfg = parse_config_text(f.read(), origin="config.txt")
    written = []

    series = {}
    if os.path.exists(run.file("metrics.csv")):
        data = run.read_csv("metrics.csv")
        series = {k: v for k, v in data.items() if k != "epoch"}
    loss_path = run.file("loss_curves.svg")
    loss_curves_svg(loss_path, series, title="training curves")
    written.append(loss_path)

    task = cfg.get("task", "classifier")
    ckpt = run.file("checkpoint_final.nlvl")
    if not os.path.exists(ckpt) or not os.path.exists(run.file("data.csv")):
        return written
    mlp = load_checkpoint(ckpt)
    labeled = task in ("classifier", "robust")
    X, y = run.load_points("data.csv", labeled=labeled)
    if X.shape[1] != 2:
        return written

    lo = X.min(axis=0)
    hi = X.max(axis=0)
    pad = 0.25 * np.maximum(hi - lo, 0.2)
    bounds = [[lo[0] - pad[0], hi[0] + pad[0]], [lo[1] - pad[1], hi[1] + pad[1]]]
    contours = []
    field = scalar_binary_view(mlp) if mlp.output_dim in (1, 2) else None
    if field is not None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            for level in (0.0, 1.0, -1.0) if labeled else (0.0,):
                mesh = extract_isosurface(field, bounds, 200, level=level)
                chains = mesh.polylines()
                if chains:
                    contours.append((level, chains))
    contour_path = run.file("level_sets.svg")
    scatter_contours_svg(contour_path, X, y if labeled else np.ones(len(X)),
                         contours, bounds,
                         title=f"{task}: data and level sets")
    written.append(contour_path)
    return written
