"""Key=value run configuration with named presets.

Config files are plain text, one ``key = value`` per line, # comments.
Values parse as bool / int / float / comma lists, with colon-separated
schedule syntax left to the consumers (e.g. ``lr_schedule = 500:0.5,1500:0.5``
or ``recon_lambda_ramp = 1:5:1000``). A ``preset`` key merges a named
preset underneath the file's own keys, so files only list overrides.
Every preset pins its training recipe's published hyperparameters.
"""

from __future__ import annotations

from ..errors import ConfigError

PRESETS = {
    # 16-point toy set, geometric SVM: adam lr 0.001, 1000 epochs, batch 1,
    # lambda 0.001, 20 projection iterations
    "figure1": {
        "task": "classifier",
        "dataset": "figure1",
        "loss": "geometric_svm",
        "widths": [64, 64, 64],
        "output_dim": 2,
        "activation": "relu",
        "optimizer": "adam",
        "lr": 0.001,
        "epochs": 1000,
        "batch_size": 1,
        "svm_lambda": 0.001,
        "svm_alpha": -1.0,
        "svm_dist": "linf",
        "proj_iters": 20,
        "plots": True,
    },
    # same fixture under the cross-entropy baseline
    "figure1_xent": {
        "task": "classifier",
        "dataset": "figure1",
        "loss": "cross_entropy",
        "widths": [64, 64, 64],
        "output_dim": 2,
        "activation": "relu",
        "optimizer": "adam",
        "lr": 0.001,
        "epochs": 1000,
        "batch_size": 1,
        "plots": True,
    },
    # binary-merged image classification, geometric SVM: SGD (Nesterov)
    # momentum 0.9, weight decay 1e-4, lr 0.02 halved on a schedule,
    # lambda ramping 0.01 -> 0.2 over 50 epochs, 20 projection iterations
    "idx_binary_svm": {
        "task": "classifier",
        "dataset": "idx",
        "loss": "geometric_svm",
        "widths": [64, 64],
        "output_dim": 2,
        "activation": "relu",
        "optimizer": "sgd_momentum",
        "lr": 0.02,
        "momentum": 0.9,
        "weight_decay": 1e-4,
        "lr_schedule": "50:0.5,100:0.5,120:0.5,140:0.5,160:0.5,180:0.5",
        "epochs": 200,
        "batch_size": 256,
        "svm_lambda_ramp": "0.01:0.2:50",
        "svm_alpha": -1.0,
        "svm_dist": "linf",
        "proj_iters": 20,
    },
    # two-moons robust training: margin loss at eps_train with false-position
    # fallback (40 iterations); evaluated under PGD-40 at eps 0.15, step 0.01
    "two_moons_robust": {
        "task": "robust",
        "dataset": "two_moons",
        "moons_n": 200,
        "moons_noise": 0.05,
        "moons_scale": 1.0,
        "widths": [32, 32],
        "output_dim": 1,
        "activation": "relu",
        "optimizer": "adam",
        "lr": 0.005,
        "epochs": 120,
        "batch_size": 32,
        "eps_train": 0.2,
        "lambda_correct": 1.0,
        "lambda_incorrect": 1.0,
        "proj_iters": 20,
        "fp_iters": 40,
        "eval_eps": 0.15,
        "eval_steps": 40,
        "eval_step_size": 0.01,
        "eval_every": 0,
        "plots": True,
    },
    # two-moons cross-entropy baseline, same evaluation
    "two_moons_xent": {
        "task": "classifier",
        "dataset": "two_moons",
        "moons_n": 200,
        "moons_noise": 0.05,
        "moons_scale": 1.0,
        "loss": "cross_entropy",
        "widths": [32, 32],
        "output_dim": 1,
        "activation": "relu",
        "optimizer": "adam",
        "lr": 0.005,
        "epochs": 120,
        "batch_size": 32,
        "eval_eps": 0.15,
        "eval_steps": 40,
        "eval_step_size": 0.01,
        "plots": True,
    },
    # circle cloud reconstruction: adam lr 0.001 halved at 500/1500/3500,
    # batch 10, 10 projection iterations, noise sigma 0.1, lambda 1 -> 5
    # over 1000 epochs
    "circle_recon": {
        "task": "recon",
        "dataset": "circle",
        "cloud_n": 256,
        "widths": [64, 64, 64],
        "output_dim": 1,
        "activation": "softplus",
        "optimizer": "adam",
        "lr": 0.001,
        "lr_schedule": "500:0.5,1500:0.5,3500:0.5",
        "epochs": 1000,
        "batch_size": 10,
        "proj_iters": 10,
        "recon_sigma": 0.1,
        "recon_levels": [0.0, 0.15, -0.15, 0.3, -0.3],
        "recon_lambda_ramp": "1:5:1000",
        "recon_p": 1.0,
        "extract_res": 200,
        "plots": True,
    },
    # closed spline curve in R^3 via a 2-output net, zero level only
    "spline_curve_recon": {
        "task": "recon",
        "dataset": "spline",
        "cloud_n": 300,
        "cloud_noise": 0.01,
        "widths": [64, 64, 64],
        "output_dim": 2,
        "activation": "softplus",
        "optimizer": "adam",
        "lr": 0.001,
        "lr_schedule": "500:0.5,1500:0.5,3500:0.5",
        "epochs": 1000,
        "batch_size": 10,
        "proj_iters": 10,
        "recon_sigma": 0.1,
        "recon_levels": [0.0],
        "recon_lambda_ramp": "1:5:1000",
        "recon_p": 1.0,
        "extract_res": 20,
        "plots": True,
    },
    # 2D net trained with cross-entropy inside [-0.35, 0.35]^2, the fixture
    # for level-set sampling-distribution audits
    "ring_xent": {
        "task": "classifier",
        "dataset": "ring",
        "ring_n": 512,
        "ring_radius": 0.2,
        "ring_box": 0.35,
        "loss": "cross_entropy",
        "widths": [32, 32],
        "output_dim": 1,
        "activation": "relu",
        "optimizer": "adam",
        "lr": 0.01,
        "epochs": 300,
        "batch_size": 64,
        "plots": True,
    },
}


def _parse_scalar(s):
    s = s.strip()
    low = s.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        pass
    return s


def parse_value(s):
    s = s.strip()
    if "," in s and ":" not in s:
        return [_parse_scalar(p) for p in s.split(",") if p.strip()]
    return _parse_scalar(s)


def parse_config_text(text, origin="<config>"):
    cfg = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        if "=" not in s:
            raise ConfigError(f"{origin}: line {lineno}: expected 'key = value', got {s!r}")
        key, _, val = s.partition("=")
        cfg[key.strip()] = parse_value(val)
    return cfg


def load_config(path=None, overrides=None):
    """Read a config file (optional), apply its preset, then overrides."""
    cfg = {}
    if path is not None:
        try:
            with open(path) as f:
                cfg = parse_config_text(f.read(), origin=str(path))
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
    if overrides:
        cfg.update({k: v for k, v in overrides.items() if v is not None})
    preset = cfg.pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; available: {sorted(PRESETS)}")
        merged = dict(PRESETS[preset])
        merged.update(cfg)
        cfg = merged
        cfg["preset"] = preset
    return cfg


def require(cfg, key, kind=None):
    if key not in cfg:
        raise ConfigError(f"missing config key {key!r}")
    val = cfg[key]
    if kind is not None and not isinstance(val, kind):
        raise ConfigError(f"config key {key!r} should be {kind}, got {val!r}")
    return val


def parse_schedule(s):
    """'500:0.5,1500:0.5' -> ((500, 0.5), (1500, 0.5))."""
    if not s:
        return ()
    if isinstance(s, (tuple, list)):
        return tuple(tuple(p) for p in s)
    out = []
    for part in str(s).split(","):
        part = part.strip()
        if not part:
            continue
        try:
            e, m = part.split(":")
            out.append((int(e), float(m)))
        except ValueError:
            raise ConfigError(f"bad schedule entry {part!r}; expected epoch:multiplier") from None
    return tuple(out)


def parse_ramp(s):
    """'1:5:1000' -> (1.0, 5.0, 1000)."""
    if s is None:
        return None
    if isinstance(s, (tuple, list)):
        return tuple(s)
    try:
        a, b, n = str(s).split(":")
        return (float(a), float(b), int(n))
    except ValueError:
        raise ConfigError(f"bad ramp {s!r}; expected start:end:epochs") from None


def format_config(cfg):
    """Canonical snapshot text (sorted keys, stable value formatting)."""
    lines = []
    for key in sorted(cfg):
        val = cfg[key]
        if isinstance(val, (list, tuple)):
            val = ",".join(str(v) for v in val)
        lines.append(f"{key} = {val}")
    return "\n".join(lines) + "\n"
