"""Command-line entry point.

Subcommands: train-classifier, train-robust, train-recon, project, attack,
extract, compile-pl, eval-metrics, plot. Exit codes: 0 success, 2 config
error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from ..errors import ConfigError, DataError, NumericalError
from ..mlp import load_checkpoint, save_checkpoint
from ..projection import ProjectionConfig, project, records_to_csv, sample_seeds
from ..reconstruction import chamfer, extract_isosurface, hausdorff, load_cloud, save_mesh
from ..pl_compile import compile_surface, eval_f, facet_samples, load_surface, verification_report
from .attacks import AttackConfig, pgd_attack, robust_accuracy
from .config import load_config
from .runs import RunDirectory, emit_plots, train_classifier, train_reconstruction, train_robust


def _load_net(path):
    try:
        return load_checkpoint(path)
    except (OSError, ValueError) as e:
        raise DataError(f"cannot load checkpoint {path}: {e}") from None


def _load_points(path):
    try:
        return load_cloud(path).points
    except (OSError, ValueError) as e:
        raise DataError(f"cannot load points {path}: {e}") from None


def _parse_bounds(text, dim=None):
    try:
        rows = [[float(v) for v in part.split(":")] for part in text.split(",")]
        bounds = np.array(rows)
        assert bounds.shape[1] == 2
    except (ValueError, AssertionError):
        raise ConfigError(f"bad bounds {text!r}; expected 'lo:hi,lo:hi[,lo:hi]'") from None
    if dim is not None and bounds.shape[0] != dim:
        raise ConfigError(f"bounds have {bounds.shape[0]} axes, network expects {dim}")
    return bounds


def _overrides(args):
    out = {"seed": args.seed}
    for kv in args.set or []:
        if "=" not in kv:
            raise ConfigError(f"--set expects key=value, got {kv!r}")
        key, _, val = kv.partition("=")
        from .config import parse_value

        out[key.strip()] = parse_value(val)
    if args.preset:
        out["preset"] = args.preset
    return out


def _add_train_parser(sub, name, help_text):
    p = sub.add_parser(name, help=help_text)
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--preset", default=None, help="named preset to start from")
    p.add_argument("--seed", type=int, required=True, help="run seed (mandatory)")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config key (repeatable)")
    return p


def build_parser():
    ap = argparse.ArgumentParser(prog="levelsets",
                                 description="level-set sampling, training and compilation toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    _add_train_parser(sub, "train-classifier", "geometric-SVM or baseline classification")
    _add_train_parser(sub, "train-robust", "robust training with the margin loss")
    _add_train_parser(sub, "train-recon", "point-cloud reconstruction")

    p = sub.add_parser("project", help="project seeds onto a network level set")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--strategy", choices=["uniform", "gaussian_perturb"], default="uniform")
    p.add_argument("--bounds", help="uniform box, e.g. '-1:1,-1:1'")
    p.add_argument("--cloud", help="data file for gaussian_perturb seeds")
    p.add_argument("--sigma", type=float, default=0.01)
    p.add_argument("--target", type=float, default=0.0)
    p.add_argument("--max-iters", type=int, default=20)
    p.add_argument("--out", required=True, help="records CSV path")

    p = sub.add_parser("attack", help="PGD-attack a checkpoint on labeled data")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--run", help="run directory holding data.csv")
    p.add_argument("--data", help="labeled points file (coords then label per line)")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--steps", type=int, default=40)
    p.add_argument("--step-size", type=float, default=0.01)
    p.add_argument("--objective", choices=["xent", "margin"], default="xent")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write adversarial points CSV here")

    p = sub.add_parser("extract", help="extract an iso-set as a mesh or polyline")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--bounds", required=True)
    p.add_argument("--res", type=int, default=100)
    p.add_argument("--level", type=float, default=0.0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("compile-pl", help="compile a PL hypersurface to a ReLU net")
    p.add_argument("--surface", required=True, help="facet-vertex text file")
    p.add_argument("--out", required=True, help="output checkpoint")
    p.add_argument("--report", help="verification CSV path")
    p.add_argument("--points", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("eval-metrics", help="Chamfer/Hausdorff between two point files")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--out", help="CSV output (values also printed)")

    p = sub.add_parser("plot", help="emit SVG plots for a finished run")
    p.add_argument("--run", required=True)
    return ap


def _cmd_project(args):
    mlp = _load_net(args.checkpoint)
    if args.strategy == "uniform":
        if not args.bounds:
            raise ConfigError("uniform seeding needs --bounds")
        source = _parse_bounds(args.bounds, mlp.input_dim)
    else:
        if not args.cloud:
            raise ConfigError("gaussian_perturb seeding needs --cloud")
        source = _load_points(args.cloud)
    seeds = sample_seeds(args.strategy, source, args.n, sigma=args.sigma, rng_seed=args.seed)
    cfg = ProjectionConfig(max_iters=args.max_iters, target_level=args.target)
    recs = project(mlp, seeds, cfg)
    records_to_csv(recs, args.out)
    rate = float(np.mean([r.converged for r in recs]))
    print(f"projected {len(recs)} seeds, convergence rate {rate:.3f} -> {args.out}")
    return 0


def _cmd_attack(args):
    mlp = _load_net(args.checkpoint)
    if args.run:
        X, y = RunDirectory(args.run).load_points("data.csv", labeled=True)
    elif args.data:
        pts = _load_points(args.data)
        X, y = pts[:, :-1], pts[:, -1]
    else:
        raise ConfigError("attack needs --run or --data")
    cfg = AttackConfig(eps_attack=args.eps, steps=args.steps, step_size=args.step_size,
                       objective=args.objective)
    box = (X.min(axis=0) - 0.5, X.max(axis=0) + 0.5)
    acc = robust_accuracy(mlp, X, y, cfg, clip_box=box, rng_seed=args.seed)
    print(f"robust accuracy ({args.objective}, eps={args.eps}): {acc:.4f}")
    if args.out:
        adv = pgd_attack(mlp, X, y, cfg, clip_box=box, rng_seed=args.seed)
        with open(args.out, "w") as f:
            for row, label in zip(adv, y):
                f.write(" ".join(format(v, ".17g") for v in row) +
                        f" {format(float(label), '.17g')}\n")
    return 0


def _cmd_extract(args):
    mlp = _load_net(args.checkpoint)
    bounds = _parse_bounds(args.bounds, mlp.input_dim)
    mesh = extract_isosurface(mlp, bounds, args.res, level=args.level)
    if mesh.is_empty():
        raise NumericalError("no level crossing found in the grid")
    save_mesh(mesh, args.out)
    print(f"extracted {mesh.vertices.shape[0]} vertices -> {args.out}")
    return 0


def _cmd_compile_pl(args):
    try:
        surface = load_surface(args.surface)
    except (OSError, ValueError) as e:
        raise DataError(f"cannot load surface {args.surface}: {e}") from None
    mlp, lam_set = compile_surface(surface)
    save_checkpoint(mlp, args.out)
    stats = verification_report(surface, lam_set, mlp, n_points=args.points,
                                rng_seed=args.seed, path=args.report)
    zero_err = float(np.abs(mlp.forward(facet_samples(surface))[:, 0]).max())
    print(f"compiled {surface.k} planes, |Lambda|={len(lam_set)}, "
          f"max |net - reference| = {stats['max_abs_err']:.3g}, "
          f"sign agreement = {stats['sign_agreement']:.4f}, "
          f"max |F| on facets = {zero_err:.3g}")
    if stats["sign_agreement"] < 1.0:
        raise NumericalError("compiled network disagrees with the membership oracle")
    return 0


def _cmd_eval_metrics(args):
    A = _load_points(args.a)
    B = _load_points(args.b)
    vals = {
        "chamfer_l1": chamfer(A, B, "l1"),
        "chamfer_l2": chamfer(A, B, "l2"),
        "hausdorff_l2": hausdorff(A, B, "l2"),
    }
    for k, v in vals.items():
        print(f"{k}: {v:.6g}   (x1e3: {v * 1e3:.6g})")
    if args.out:
        with open(args.out, "w") as f:
            cols = list(vals) + [k + "_x1e3" for k in vals]
            f.write(",".join(cols) + "\n")
            f.write(",".join([format(v, ".17g") for v in vals.values()]
                             + [format(v * 1e3, ".17g") for v in vals.values()]) + "\n")
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command in ("train-classifier", "train-robust", "train-recon"):
            cfg = load_config(args.config, _overrides(args))
            runner = {
                "train-classifier": train_classifier,
                "train-robust": train_robust,
                "train-recon": train_reconstruction,
            }[args.command]
            run = runner(cfg, args.out)
            print(f"run complete -> {run.path}")
            return 0
        if args.command == "project":
            return _cmd_project(args)
        if args.command == "attack":
            return _cmd_attack(args)
        if args.command == "extract":
            return _cmd_extract(args)
        if args.command == "compile-pl":
            return _cmd_compile_pl(args)
        if args.command == "eval-metrics":
            return _cmd_eval_metrics(args)
        if args.command == "plot":
            paths = emit_plots(args.run)
            print("\n".join(paths))
            return 0
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (DataError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except (NumericalError, ValueError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
