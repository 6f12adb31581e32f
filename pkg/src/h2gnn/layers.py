"""Differentiable (tape) versions of the Lorentz operations, batched over rows.

Every function takes ``Var`` arrays shaped ``(B, n + 1)`` for points and
mirrors its counterpart in :mod:`h2gnn.lorentz`, which serves as the
reference implementation in tests.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tape, Var
from .lorentz import DEFAULT_K, DEGENERATE_NORM, LorentzLinearParams

TINY = 1e-30


def _sig(dim: int) -> np.ndarray:
    s = np.ones(dim)
    s[0] = -1.0
    return s


def minkowski_inner(x: Var, y: Var) -> Var:
    return ad.dot(x * _sig(x.shape[-1]), y)


def with_time(space: Var, k: float = DEFAULT_K) -> Var:
    """Prepend the time coordinate ``sqrt(||space||^2 - 1/k)``."""
    t = ad.sqrt(ad.sum(space * space, axis=-1, keepdims=True) - 1.0 / k)
    return ad.concat([t, space], axis=-1)


def lift(u: Var, k: float = DEFAULT_K) -> Var:
    """``exp`` at the origin of ``(0, u)``; rows of ``u`` are Euclidean features."""
    c = np.sqrt(-k)
    norm = ad.sqrt(ad.sum(u * u, axis=-1, keepdims=True) + TINY)
    alpha = norm * c
    space = u * (ad.sinh(alpha) / alpha)
    return with_time(space, k)


def to_tangent(p: Var, k: float = DEFAULT_K) -> Var:
    """Log map at the origin, time coordinate dropped."""
    beta = ad.clamp_min(p[:, 0:1] * np.sqrt(-k), 1.0 + 1e-12)
    coef = ad.acosh(beta) / ad.sqrt((beta - 1.0) * (beta + 1.0))
    return p[:, 1:] * coef


def centroid_segments(points: Var, segment_ids, num: int, k: float = DEFAULT_K) -> Var:
    """Unit-weight centroid of every group of rows sharing a segment id.

    Every segment must be nonempty.
    """
    total = ad.segment_sum(points, segment_ids, num)
    # sums of upper-sheet points are timelike, so |<s, s>| = -<s, s>
    sq = -minkowski_inner(total, total)
    denom = ad.sqrt(ad.reshape(sq, (num, 1))) * np.sqrt(-k)
    return total / denom


def centroid_stack(points, k: float = DEFAULT_K) -> Var:
    """Row-wise centroid of several aligned ``(B, n + 1)`` arrays."""
    total = points[0]
    for p in points[1:]:
        total = total + p
    sq = -minkowski_inner(total, total)
    denom = ad.sqrt(ad.reshape(sq, (total.shape[0], 1))) * np.sqrt(-k)
    return total / denom


def init_linear(store: ParamStore, prefix: str, in_dim: int, out_dim: int, rng: np.random.Generator,
                lam: float = 2.0) -> None:
    """Register the parameters of a Lorentz linear layer mapping H^in_dim -> H^out_dim.

    ``lam`` is stored as ``log_lam`` so the scale stays positive under Adam.
    """
    bound = np.sqrt(6.0 / (in_dim + 1 + out_dim))
    store.add(f"{prefix}.W", rng.uniform(-bound, bound, size=(out_dim, in_dim + 1)))
    store.add(f"{prefix}.b", np.zeros(out_dim))
    store.add(f"{prefix}.v", np.zeros(in_dim + 1))
    store.add(f"{prefix}.b_prime", np.zeros(()))
    store.add(f"{prefix}.log_lam", np.log(lam))


def linear_params(store: ParamStore, prefix: str, activation: str = "identity") -> LorentzLinearParams:
    """Snapshot a stored layer as plain numpy parameters."""
    return LorentzLinearParams(
        W=store[f"{prefix}.W"],
        v=store[f"{prefix}.v"],
        b=store[f"{prefix}.b"],
        b_prime=float(store[f"{prefix}.b_prime"]),
        lam=float(np.exp(store[f"{prefix}.log_lam"])),
        activation=activation,
    )


def lorentz_linear(tape: Tape, store: ParamStore, prefix: str, x: Var, activation: str = "identity",
                   k: float = DEFAULT_K) -> Var:
    W = tape.param(store, f"{prefix}.W")
    b = tape.param(store, f"{prefix}.b")
    v = tape.param(store, f"{prefix}.v")
    b_prime = tape.param(store, f"{prefix}.b_prime")
    lam = ad.exp(tape.param(store, f"{prefix}.log_lam"))

    hx = ad.relu(x) if activation == "relu" else x
    u = hx @ W.T + b
    degenerate = np.sqrt(np.sum(u.value**2, axis=-1)) < DEGENERATE_NORM
    if np.any(degenerate):
        fallback = np.zeros(u.shape)
        fallback[degenerate, 0] = 1.0
        u = u + fallback
    norm = ad.sqrt(ad.sum(u * u, axis=-1, keepdims=True))
    gate = ad.sigmoid(ad.reshape(x @ v, (x.shape[0], 1)) + b_prime)
    space = u * (gate * lam / norm)
    return with_time(space, k)
