"""Differentiable positions for level-set samples.

A projected point p with level value c and frozen pseudo-inverse
``pinv = pinv(D_x F(p; theta0))`` defines the sample position

    p(theta) = p - pinv (F(p; theta) - c)

which equals p exactly at theta0 and whose first-order dependence on theta
keeps the sample on its level set. Only p, pinv and c are stored per
sample (O(d) space); gradients reuse the network's parameter VJP.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_VELOCITY_GUARD = 100_000


@dataclass(frozen=True)
class SampleHandle:
    p: np.ndarray     # (d,) frozen position
    pinv: np.ndarray  # (d, l) frozen pseudo-inverse
    c: np.ndarray     # (l,) frozen level value


def handle_from_record(record):
    return SampleHandle(p=record.p, pinv=record.pinv, c=record.c)


def handles_from_records(records):
    return [handle_from_record(r) for r in records]


def _stack(handles):
    P = np.stack([h.p for h in handles])
    PINV = np.stack([h.pinv for h in handles])
    C = np.stack([h.c for h in handles])
    return P, PINV, C


def sample_positions(field, handles):
    """Current positions p_i(theta) for a batch of handles, shape (n, d)."""
    P, PINV, C = _stack(handles)
    F = field.forward(P)
    return P - np.einsum("ndl,nl->nd", PINV, F - C)


def sample_position(field, h):
    if h.p.size != field.input_dim:
        raise ValueError(f"handle dim {h.p.size} != field input dim {field.input_dim}")
    return sample_positions(field, [h])[0]


def sample_grad(field, h, cotangent):
    """cotangent^T . d p(theta)/d theta at the current parameters, flat (m,).

    Computed by back-propagating -pinv^T cotangent through the network's
    parameter VJP; identical to differentiating the sample position with
    pinv and c held constant.
    """
    v = np.asarray(cotangent, dtype=np.float64)
    if v.shape != (h.p.size,):
        raise ValueError(f"expected cotangent of length {h.p.size}, got {v.shape}")
    return field.vjp_params(h.p, -(h.pinv.T @ v))


def sample_grads_total(field, handles, cotangents):
    """Sum over handles of cotangent_i^T . d p_i(theta)/d theta, flat (m,)."""
    P, PINV, _ = _stack(handles)
    cots = np.asarray(cotangents, dtype=np.float64)
    U = -np.einsum("ndl,nd->nl", PINV, cots)
    return field.vjp_params_batch(P, U)


def sample_velocity_matrix(field, h):
    """Full velocity matrix d p(theta)/d theta, shape (d, m). Test-scale only.

    Rows are assembled from unit-cotangent sample_grad calls, so each row is
    bitwise identical to the corresponding sample_grad result.
    """
    m = field.n_params
    if m > _VELOCITY_GUARD:
        raise ValueError(f"refusing to materialize a {h.p.size}x{m} velocity matrix")
    d = h.p.size
    rows = [sample_grad(field, h, np.eye(d)[i]) for i in range(d)]
    return np.stack(rows)
