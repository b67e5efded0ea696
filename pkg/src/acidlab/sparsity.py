"""Sparsifying filter: gradient transform, soft threshold, and its pseudo-inverse.

The per-pixel refinement sparsify() averages, over the four neighbors of each
pixel, the pseudo-inverse filter applied to the (center, neighbor) pair. This
realizes one pass of the threshold-filtered gradient step used by the ACID
iteration; total variation never increases.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from acidlab.grid import Image, ShapeError, ValidationError


@dataclass(frozen=True)
class ThresholdParams:
    """Soft-threshold level eps > 0."""

    epsilon: float

    def __post_init__(self):
        if not np.isfinite(self.epsilon) or self.epsilon <= 0:
            raise ValidationError(f"epsilon must be finite and positive, got {self.epsilon}")


@dataclass(frozen=True)
class GradientField:
    """Forward differences dx, dy of an image; border entries are exactly 0."""

    dx: np.ndarray
    dy: np.ndarray

    def __post_init__(self):
        if self.dx.shape != self.dy.shape:
            raise ShapeError(f"dx/dy shapes differ: {self.dx.shape} vs {self.dy.shape}")


def gradient_transform(f: Image) -> GradientField:
    """dx(i,j) = f(i,j) - f(i,j-1) for j >= 1 else 0; dy analogous over rows."""
    v = f.values
    dx = np.zeros_like(v)
    dy = np.zeros_like(v)
    dx[:, 1:] = v[:, 1:] - v[:, :-1]
    dy[1:, :] = v[1:, :] - v[:-1, :]
    return GradientField(dx=dx, dy=dy)


def total_variation(f: Image) -> float:
    """Anisotropic TV: sum |dx| + sum |dy| with zero border gradients."""
    g = gradient_transform(f)
    return float(np.sum(np.abs(g.dx)) + np.sum(np.abs(g.dy)))


def soft_threshold(x, epsilon):
    """0 for |x| < eps, else x shrunk toward zero by eps. Vectorizes over x."""
    x = np.asarray(x, dtype=np.float64)
    out = np.where(np.abs(x) < epsilon, 0.0, np.where(x > 0, x - epsilon, x + epsilon))
    # ties |x| = eps shrink to exactly 0 through either branch
    if out.ndim == 0:
        return float(out)
    return out


def soft_threshold_pinv(v_a, v_b, epsilon):
    """Pseudo-inverse of the soft-threshold filter on a neighbor pair.

    Mean of the pair when |v_a - v_b| <= eps (tie included), otherwise v_a
    pulled half a threshold toward v_b. Vectorizes over all arguments.
    """
    v_a = np.asarray(v_a, dtype=np.float64)
    v_b = np.asarray(v_b, dtype=np.float64)
    d = v_a - v_b
    out = np.where(
        np.abs(d) <= epsilon,
        (v_a + v_b) / 2,
        np.where(d > epsilon, v_a - epsilon / 2, v_a + epsilon / 2),
    )
    if out.ndim == 0:
        return float(out)
    return out


# neighbor offsets: right, down, left, up
_SHIFTS = ((0, 1), (1, 0), (0, -1), (-1, 0))


def _padded_neighbors(v: np.ndarray):
    """Yield the four neighbor grids of v with edge replication.

    A missing neighbor is replaced by the center value itself, so constant
    images are fixed points and border behavior matches zero border gradients.
    """
    p = np.pad(v, 1, mode="edge")
    h, w = v.shape
    for dr, dc in _SHIFTS:
        yield p[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]


def sparsify(f_half: Image, params: ThresholdParams) -> Image:
    """Average of the four-neighbor pseudo-inverse filter values per pixel."""
    v = f_half.values
    eps = params.epsilon
    acc = np.zeros_like(v)
    for nb in _padded_neighbors(v):
        acc += soft_threshold_pinv(v, nb, eps)
    return Image(acc / 4.0)
