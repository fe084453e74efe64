"""Small 3-vector helpers on top of plain numpy arrays."""

from __future__ import annotations

import numpy as np

Vec3 = np.ndarray  # shape (3,), float64

ZERO = np.zeros(3)


def vec(x: float = 0.0, y: float = 0.0, z: float = 0.0) -> Vec3:
    return np.array([x, y, z], dtype=float)


def as_vec(v) -> Vec3:
    a = np.asarray(v, dtype=float)
    if a.shape != (3,):
        raise ValueError(f"expected 3-vector, got shape {a.shape}")
    return a


def norm(v: Vec3) -> float:
    return float(np.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]))


def is_finite(v: Vec3) -> bool:
    return bool(np.isfinite(v).all())


def clamp_magnitude(f: Vec3, cap: float) -> Vec3:
    """Scale f down to magnitude cap if it exceeds it; direction is preserved."""
    m = norm(f)
    if m <= cap:
        return f
    return f * (cap / m)
