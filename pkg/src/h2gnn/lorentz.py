"""Lorentz (hyperboloid) model kernels.

Points live on the upper sheet ``<x, x>_H = 1/k`` with ``k < 0``; the first
coordinate is the time coordinate, the rest are space coordinates.  Every
function accepts arrays shaped ``(..., n + 1)`` and broadcasts over the
leading axes.  All arithmetic is float64.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError, GeometryError

DEFAULT_K = -1.0
SMALL_ANGLE = 1e-12
BETA_FLOOR = 1.0 + 1e-12
DEGENERATE_NORM = 1e-12


def _check_curvature(k: float) -> float:
    k = float(k)
    if not k < 0:
        raise ValueError(f"curvature must be negative, got {k}")
    return k


def _signature(dim: int) -> np.ndarray:
    sig = np.ones(dim)
    sig[0] = -1.0
    return sig


def origin(n: int, k: float = DEFAULT_K) -> np.ndarray:
    """Origin of the ``n``-dimensional hyperboloid, ``(1/sqrt(-k), 0, ..., 0)``."""
    k = _check_curvature(k)
    o = np.zeros(n + 1)
    o[0] = 1.0 / np.sqrt(-k)
    return o


def minkowski_inner(x, y) -> np.ndarray:
    """``-x_t y_t + x_s . y_s`` along the last axis."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[-1] != y.shape[-1]:
        raise DimensionError(f"length mismatch: {x.shape[-1]} vs {y.shape[-1]}")
    if x.shape[-1] < 2:
        raise DimensionError("Lorentz vectors need at least 2 coordinates")
    return np.sum(x[..., 1:] * y[..., 1:], axis=-1) - x[..., 0] * y[..., 0]


def lorentz_norm(v) -> np.ndarray:
    """Lorentzian norm ``sqrt(|<v, v>_H|)``."""
    return np.sqrt(np.abs(minkowski_inner(v, v)))


def membership_error(x, k: float = DEFAULT_K) -> np.ndarray:
    """Absolute deviation ``|<x, x>_H - 1/k|``."""
    return np.abs(minkowski_inner(x, x) - 1.0 / k)


def check_on_manifold(x, k: float = DEFAULT_K, rtol: float = 1e-6) -> None:
    """Raise :class:`GeometryError` unless every row lies on the upper sheet.

    The tolerance is relative to ``x_t**2`` since that is the scale at which
    the Minkowski form loses precision.
    """
    x = np.asarray(x, dtype=np.float64)
    err = membership_error(x, k)
    scale = np.maximum(1.0, x[..., 0] ** 2)
    if np.any(err > rtol * scale) or np.any(x[..., 0] <= 0):
        raise GeometryError("point is not on the upper sheet of the hyperboloid")


def _retime(x: np.ndarray, k: float) -> np.ndarray:
    # recompute the time coordinate from the space part; keeps rounding drift off the sheet
    out = x.copy()
    out[..., 0] = np.sqrt(np.sum(x[..., 1:] ** 2, axis=-1) - 1.0 / k)
    return out


def exp_map(x, v, k: float = DEFAULT_K) -> np.ndarray:
    """Exponential map at ``x`` applied to the tangent vector ``v``.

    ``cosh(a) x + sinh(a) v / a`` with ``a = sqrt(|k|) ||v||_H``; below
    ``a = 1e-12`` the first-order limit ``x + v`` is returned.
    """
    k = _check_curvature(k)
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    x, v = np.broadcast_arrays(x, v)
    alpha = np.sqrt(-k) * np.sqrt(np.maximum(minkowski_inner(v, v), 0.0))
    small = alpha < SMALL_ANGLE
    safe = np.where(small, 1.0, alpha)
    coef = np.where(small, 1.0, np.sinh(safe) / safe)
    out = np.cosh(np.where(small, 0.0, alpha))[..., None] * x + coef[..., None] * v
    return _retime(out, k)


def log_map(x, y, k: float = DEFAULT_K) -> np.ndarray:
    """Logarithmic map at ``x`` of ``y``; the inverse of :func:`exp_map`."""
    k = _check_curvature(k)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    beta = k * minkowski_inner(x, y)
    if np.any(beta < 1.0 - 1e-6):
        raise GeometryError(f"beta = k<x, y> = {np.min(beta):.6g} is below 1; points are off the sheet")
    # the clamp guards only the coefficient; the raw beta keeps y - beta x tangent
    bc = np.maximum(beta, BETA_FLOOR)
    coef = np.arccosh(bc) / np.sqrt((bc - 1.0) * (bc + 1.0))
    return coef[..., None] * (y - beta[..., None] * x)


def squared_lorentz_distance(a, b, k: float = DEFAULT_K) -> np.ndarray:
    """``2/k - 2 <a, b>_H``, clipped at zero against rounding."""
    k = _check_curvature(k)
    return np.maximum(2.0 / k - 2.0 * minkowski_inner(a, b), 0.0)


def centroid(points, weights: Optional[Sequence[float]] = None, k: float = DEFAULT_K) -> np.ndarray:
    """Closed-form Lorentzian centroid of ``points`` (shape ``(P, n + 1)``).

    Returns ``sum_j w_j y_j / (sqrt(-k) |||sum_i w_i y_i||_H|)``, the minimiser
    of the weighted sum of squared Lorentzian distances.  Summation runs in
    input order.
    """
    k = _check_curvature(k)
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("centroid needs a nonempty (P, n+1) point array")
    if weights is None:
        total = np.sum(pts, axis=0)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (pts.shape[0],):
            raise DimensionError("one weight per point is required")
        total = np.sum(w[:, None] * pts, axis=0)
    return total / (np.sqrt(-k) * lorentz_norm(total))


@dataclass
class LorentzLinearParams:
    """Parameters of the fully hyperbolic linear layer.

    ``W`` has shape ``(m, n + 1)``, ``v`` shape ``(n + 1,)`` and ``b`` shape
    ``(m,)``; the output lives on the ``m``-dimensional hyperboloid.
    """

    W: np.ndarray
    v: np.ndarray
    b: np.ndarray
    b_prime: float = 0.0
    lam: float = 1.0
    activation: str = "identity"

    def __post_init__(self):
        self.W = np.atleast_2d(np.asarray(self.W, dtype=np.float64))
        self.v = np.asarray(self.v, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if self.activation not in ("identity", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")
        m, n1 = self.W.shape
        if self.v.shape != (n1,) or self.b.shape != (m,):
            raise DimensionError("W, v, b shapes are inconsistent")


def lorentz_linear(p: LorentzLinearParams, x, k: float = DEFAULT_K) -> np.ndarray:
    """Apply the hyperbolic linear layer to ``x`` (shape ``(..., n + 1)``).

    space = lam * sigmoid(v.x + b') * u / ||u||,  u = W h(x) + b
    time  = sqrt(||space||^2 - 1/k)
    """
    k = _check_curvature(k)
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != p.W.shape[1]:
        raise DimensionError(f"input has {x.shape[-1]} coordinates, layer expects {p.W.shape[1]}")
    hx = np.maximum(x, 0.0) if p.activation == "relu" else x
    u = hx @ p.W.T + p.b
    norm = np.linalg.norm(u, axis=-1)
    degenerate = norm < DEGENERATE_NORM
    if np.any(degenerate):
        fallback = np.zeros(u.shape[-1])
        fallback[0] = 1.0
        u = np.where(degenerate[..., None], fallback, u)
        norm = np.where(degenerate, 1.0, norm)
    gate = 1.0 / (1.0 + np.exp(-(x @ p.v + p.b_prime)))
    space = (p.lam * gate / norm)[..., None] * u
    time = np.sqrt(np.sum(space**2, axis=-1) - 1.0 / k)
    return np.concatenate([time[..., None], space], axis=-1)


def lift_from_euclidean(u, k: float = DEFAULT_K) -> np.ndarray:
    """Map a Euclidean feature ``u`` onto the hyperboloid via ``exp`` at the origin."""
    k = _check_curvature(k)
    u = np.asarray(u, dtype=np.float64)
    tangent = np.concatenate([np.zeros(u.shape[:-1] + (1,)), u], axis=-1)
    return exp_map(origin(u.shape[-1], k), tangent, k)


def to_tangent(p, k: float = DEFAULT_K) -> np.ndarray:
    """Log map at the origin with the (zero) time coordinate dropped."""
    k = _check_curvature(k)
    p = np.asarray(p, dtype=np.float64)
    check_on_manifold(p, k)
    return log_map(origin(p.shape[-1] - 1, k), p, k)[..., 1:]


def random_point(rng: np.random.Generator, n: int, scale: float = 1.0, k: float = DEFAULT_K) -> np.ndarray:
    """Lift a Gaussian vector of standard deviation ``scale``; handy for tests and init."""
    return lift_from_euclidean(rng.normal(scale=scale, size=n), k)


def project_to_tangent(x, w, k: float = DEFAULT_K) -> np.ndarray:
    """Orthogonal projection of an ambient vector ``w`` onto the tangent space at ``x``."""
    k = _check_curvature(k)
    return w - (k * minkowski_inner(x, w))[..., None] * x
