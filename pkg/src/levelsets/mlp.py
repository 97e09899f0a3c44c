"""Minimal float64 MLP engine: forward, input Jacobians, parameter VJPs.

Supports plain fully connected stacks and input-concatenation skip layers
(a skip layer sees [previous activation, network input] as its input).
The last layer is always linear (logits). Outputs are restricted to one
or two channels, which is all the level-set machinery needs.

All affine maps go through non-optimized ``np.einsum`` rather than BLAS
matmul: einsum's summation order does not depend on the batch size, so
evaluating a batch row-by-row is bit-identical to evaluating the whole
batch at once. BLAS does not give that guarantee.
"""

from __future__ import annotations

import struct

import numpy as np

ACT_RELU = "relu"
ACT_SOFTPLUS = "softplus"

_MAGIC = b"NLVL1"


def _affine(X, W, b):
    # row-stable replacement for X @ W.T + b
    return np.einsum("ni,oi->no", X, W) + b


def _act(z, kind, beta):
    if kind == ACT_RELU:
        return np.maximum(z, 0.0)
    bz = beta * z
    # softplus(z) = log(1 + exp(beta z)) / beta, computed without overflow
    return np.where(bz > 30.0, z, np.log1p(np.exp(np.minimum(bz, 30.0))) / beta)


def _dact(z, kind, beta):
    if kind == ACT_RELU:
        # subgradient at the kink fixed to 0
        return (z > 0.0).astype(np.float64)
    bz = np.clip(beta * z, -500.0, 500.0)
    return 1.0 / (1.0 + np.exp(-bz))


class Mlp:
    """A stack of affine layers with ReLU or softplus(beta) activations.

    ``weights[k]`` has shape (out_k, in_k) and ``biases[k]`` shape (out_k,).
    ``skips[k]`` marks layers whose input is the previous activation
    concatenated with the raw network input. No activation after the last
    layer.
    """

    def __init__(self, weights, biases, activation=ACT_RELU, beta=100.0, skips=None):
        if len(weights) != len(biases) or not weights:
            raise ValueError("weights and biases must be equal-length, nonempty lists")
        if activation not in (ACT_RELU, ACT_SOFTPLUS):
            raise ValueError(f"unknown activation {activation!r}")
        self.weights = [np.ascontiguousarray(W, dtype=np.float64) for W in weights]
        self.biases = [np.ascontiguousarray(b, dtype=np.float64) for b in biases]
        self.activation = activation
        self.beta = float(beta)
        self.skips = tuple(bool(s) for s in (skips or [False] * len(weights)))
        if len(self.skips) != len(weights) or self.skips[0]:
            raise ValueError("skips must match layer count and the first layer cannot skip")
        self.input_dim = self.weights[0].shape[1]
        self.output_dim = self.weights[-1].shape[0]
        self._check_dims()

    def _check_dims(self):
        d = self.input_dim
        prev = self.weights[0].shape[0]
        for k in range(1, len(self.weights)):
            expected = prev + d if self.skips[k] else prev
            got = self.weights[k].shape[1]
            if got != expected:
                raise ValueError(
                    f"layer {k} expects input dim {expected} "
                    f"(prev out {prev}{', +skip ' + str(d) if self.skips[k] else ''}), got {got}"
                )
            if self.biases[k].shape != (self.weights[k].shape[0],):
                raise ValueError(f"layer {k} bias shape {self.biases[k].shape} mismatches weight")
            prev = self.weights[k].shape[0]

    # -- shape info ---------------------------------------------------------

    @property
    def n_layers(self):
        return len(self.weights)

    @property
    def n_params(self):
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def layer_dims(self):
        """(in_dim, out_dim) per layer."""
        return [(W.shape[1], W.shape[0]) for W in self.weights]

    def clone(self):
        return Mlp(
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
            self.beta,
            self.skips,
        )

    # -- parameter vector ---------------------------------------------------

    def get_params(self):
        """Flatten to the fixed order: layer-major, weights (row-major) then bias."""
        parts = []
        for W, b in zip(self.weights, self.biases):
            parts.append(W.ravel(order="C"))
            parts.append(b)
        return np.concatenate(parts)

    def set_params(self, vec):
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.n_params,):
            raise ValueError(f"expected param vector of length {self.n_params}, got {vec.shape}")
        off = 0
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[k] = vec[off : off + W.size].reshape(W.shape).copy()
            off += W.size
            self.biases[k] = vec[off : off + b.size].copy()
            off += b.size

    # -- evaluation ---------------------------------------------------------

    def _check_batch(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise ValueError(
                f"expected batch of shape (n, {self.input_dim}), got {X.shape}"
            )
        return X

    def forward(self, X):
        """Evaluate the network on an (n, d) batch; returns (n, l) logits."""
        X = self._check_batch(X)
        a = X
        last = self.n_layers - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            inp = np.concatenate([a, X], axis=1) if self.skips[k] else a
            z = _affine(inp, W, b)
            a = z if k == last else _act(z, self.activation, self.beta)
        return a

    def forward_one(self, x):
        return self.forward(np.asarray(x, dtype=np.float64)[None, :])[0]

    def _forward_cached(self, X):
        """Forward pass keeping per-layer inputs and pre-activations."""
        a = X
        inputs, zs = [], []
        last = self.n_layers - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            inp = np.concatenate([a, X], axis=1) if self.skips[k] else a
            z = _affine(inp, W, b)
            inputs.append(inp)
            zs.append(z)
            a = z if k == last else _act(z, self.activation, self.beta)
        return a, inputs, zs

    def jacobian_input(self, X):
        """Per-point input Jacobians, shape (n, l, d)."""
        X = self._check_batch(X)
        n, d = X.shape
        eye = np.broadcast_to(np.eye(d), (n, d, d))
        M = eye  # d(current activation)/dx, shape (n, width, d)
        last = self.n_layers - 1
        a = X
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if self.skips[k]:
                inp = np.concatenate([a, X], axis=1)
                Min = np.concatenate([M, eye], axis=1)
            else:
                inp, Min = a, M
            z = _affine(inp, W, b)
            DZ = np.einsum("oi,nid->nod", W, Min)
            if k == last:
                return DZ
            M = _dact(z, self.activation, self.beta)[:, :, None] * DZ
            a = _act(z, self.activation, self.beta)
        raise AssertionError("unreachable")

    def vjp_params_batch(self, X, V):
        """Sum over the batch of V[i]^T . d F(x_i; theta)/d theta, flat (m,) vector.

        V has shape (n, l): one output cotangent per point.
        """
        X = self._check_batch(X)
        V = np.asarray(V, dtype=np.float64)
        if V.shape != (X.shape[0], self.output_dim):
            raise ValueError(
                f"expected cotangents of shape ({X.shape[0]}, {self.output_dim}), got {V.shape}"
            )
        _, inputs, zs = self._forward_cached(X)
        gW = [None] * self.n_layers
        gb = [None] * self.n_layers
        delta = V
        for k in range(self.n_layers - 1, -1, -1):
            gW[k] = np.einsum("no,ni->oi", delta, inputs[k])
            gb[k] = delta.sum(axis=0)
            if k == 0:
                break
            g = np.einsum("no,oi->ni", delta, self.weights[k])
            prev_width = self.weights[k - 1].shape[0]
            delta = g[:, :prev_width] * _dact(zs[k - 1], self.activation, self.beta)
        parts = []
        for k in range(self.n_layers):
            parts.append(gW[k].ravel(order="C"))
            parts.append(gb[k])
        return np.concatenate(parts)

    def vjp_params(self, x, cotangent):
        """cotangent^T . d F(x; theta)/d theta for a single point, flat (m,)."""
        x = np.asarray(x, dtype=np.float64)
        v = np.asarray(cotangent, dtype=np.float64)
        if v.shape != (self.output_dim,):
            raise ValueError(f"expected cotangent of length {self.output_dim}, got {v.shape}")
        return self.vjp_params_batch(x[None, :], v[None, :])


# -- operation-style aliases ------------------------------------------------

def forward(mlp, batch):
    return mlp.forward(batch)


def jacobian_input(mlp, batch):
    return mlp.jacobian_input(batch)


def vjp_params(mlp, x, cotangent):
    return mlp.vjp_params(x, cotangent)


# -- construction -----------------------------------------------------------

def make_mlp(input_dim, hidden, output_dim, activation=ACT_RELU, beta=100.0,
             skips=(), rng=None, seed=0):
    """Kaiming-uniform initialized MLP.

    ``hidden`` is a sequence of hidden widths; ``skips`` lists indices of
    hidden layers (1-based within the hidden stack is not used: indices are
    absolute layer indices, 0 = first layer) whose input concatenates the
    raw network input.
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    dims = [input_dim] + list(hidden) + [output_dim]
    skipset = set(skips)
    weights, biases, skipflags = [], [], []
    for k in range(len(dims) - 1):
        skip = k in skipset and k > 0
        fan_in = dims[k] + (input_dim if skip else 0)
        bound = np.sqrt(6.0 / fan_in)
        W = rng.uniform(-bound, bound, size=(dims[k + 1], fan_in))
        b = rng.uniform(-1.0 / np.sqrt(fan_in), 1.0 / np.sqrt(fan_in), size=dims[k + 1])
        weights.append(W)
        biases.append(b)
        skipflags.append(skip)
    return Mlp(weights, biases, activation, beta, skipflags)


def make_fc1(input_dim, output_dim=1, width=512, activation=ACT_RELU, beta=100.0,
             rng=None, seed=0):
    """Four affine layers, three hidden of equal width."""
    return make_mlp(input_dim, [width] * 3, output_dim, activation, beta, (), rng, seed)


def make_fc2(input_dim, output_dim=1, width=509, activation=ACT_RELU, beta=100.0,
             rng=None, seed=0):
    """One plain hidden layer followed by six input-skip hidden layers."""
    return make_mlp(input_dim, [width] * 7, output_dim, activation, beta,
                    skips=range(1, 7), rng=rng, seed=seed)


# -- checkpoint io ----------------------------------------------------------

def save_checkpoint(mlp, path):
    """Binary checkpoint: magic, dims, activation tag, then raw float64 params."""
    act_tag = 0 if mlp.activation == ACT_RELU else 1
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<III", mlp.input_dim, mlp.output_dim, mlp.n_layers))
        for in_dim, out_dim in mlp.layer_dims():
            f.write(struct.pack("<II", in_dim, out_dim))
        f.write(struct.pack("<Bd", act_tag, mlp.beta))
        f.write(mlp.get_params().astype("<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        blob = f.read()
    if blob[: len(_MAGIC)] != _MAGIC:
        raise ValueError(f"bad checkpoint magic in {path}: {blob[:5]!r}")
    off = len(_MAGIC)
    d, l, n_layers = struct.unpack_from("<III", blob, off)
    off += 12
    dims = []
    for _ in range(n_layers):
        dims.append(struct.unpack_from("<II", blob, off))
        off += 8
    act_tag, beta = struct.unpack_from("<Bd", blob, off)
    off += struct.calcsize("<Bd")
    activation = ACT_RELU if act_tag == 0 else ACT_SOFTPLUS
    weights, biases, skips = [], [], []
    prev = d
    for k, (in_dim, out_dim) in enumerate(dims):
        if k == 0:
            if in_dim != d:
                raise ValueError(f"layer 0 input dim {in_dim} != network input dim {d}")
            skip = False
        elif in_dim == prev:
            skip = False
        elif in_dim == prev + d:
            skip = True
        else:
            raise ValueError(f"layer {k} input dim {in_dim} inconsistent with chain ({prev} or {prev + d})")
        weights.append(np.zeros((out_dim, in_dim)))
        biases.append(np.zeros(out_dim))
        skips.append(skip)
        prev = out_dim
    if prev != l:
        raise ValueError(f"last layer out dim {prev} != declared output dim {l}")
    mlp = Mlp(weights, biases, activation, beta, skips)
    m = mlp.n_params
    params = np.frombuffer(blob, dtype="<f8", count=m, offset=off)
    if params.size != m:
        raise ValueError(f"checkpoint truncated: expected {m} parameters")
    mlp.set_params(params.astype(np.float64))
    return mlp
