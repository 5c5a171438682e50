"""Weight tensor field and AD-LBR stencils built by Selling's lattice reduction.

Weight fields are ``(M, N, 3)`` arrays ``(w11, w12, w22)`` in the image frame
(first axis along columns ``j``, second along rows ``i``).  A stencil offset
``(a, b)`` therefore points to the pixel ``(i + b, j + a)``.

For a symmetric positive definite ``W`` and a superbase ``(e0, e1, e2)`` of
Z^2 (``e0 + e1 + e2 = 0``, ``|det(e1, e2)| = 1``) one has

    W = sum_i c_i e_i e_i^T,   c_i = -<e_{i+1}^perp, W e_{i+2}^perp>,

for any superbase.  The weights are nonnegative exactly when the superbase is
obtuse for ``W^{-1}``; the stencil is therefore taken from the Selling
reduction of the adjugate of ``W``.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .grid_image import MaskField

MAX_SELLING_ITERATIONS = 1000


class NotPositiveDefiniteError(ValueError):
    """Raised when a tensor handed to the reduction is not positive definite."""


def build_weight_field(theta: np.ndarray, epsilon: float, mask: MaskField) -> np.ndarray:
    """Identity off the band, ``eps n n^T + t t^T`` on it.

    ``t = (cos theta, sin theta)`` is the structure direction (eigenvalue 1)
    and ``n`` its normal (eigenvalue ``epsilon``), both in the image frame.
    """
    if not 0.0 < epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in (0, 1], got {epsilon}")
    theta = np.asarray(theta, dtype=float)
    if theta.shape != mask.shape:
        raise ValueError(f"theta shape {theta.shape} differs from mask {mask.shape}")
    c, s = np.cos(theta), np.sin(theta)
    band = mask.as_bool()
    w = np.empty(theta.shape + (3,))
    w[..., 0] = np.where(band, c * c + epsilon * s * s, 1.0)
    w[..., 1] = np.where(band, (1.0 - epsilon) * c * s, 0.0)
    w[..., 2] = np.where(band, s * s + epsilon * c * c, 1.0)
    return w


def identity_field(shape) -> np.ndarray:
    w = np.zeros(tuple(shape) + (3,))
    w[..., 0] = 1.0
    w[..., 2] = 1.0
    return w


def weight_matrix(theta: float, epsilon: float) -> np.ndarray:
    """Single ``eps n n^T + t t^T`` tensor with ``t`` at angle ``theta``."""
    c, s = math.cos(theta), math.sin(theta)
    t = np.array([c, s])
    n = np.array([-s, c])
    return np.outer(t, t) + epsilon * np.outer(n, n)


@njit(cache=True)
def _selling(m11, m12, m22, out):
    """Selling reduction of the quadratic form ``m``; writes the superbase to ``out``.

    Returns the number of iterations, or -1 when the guard is exceeded.
    """
    e = np.array([[1, 0], [0, 1], [-1, -1]], dtype=np.int64)
    tol = 1e-14 * (abs(m11) + abs(m22))
    for it in range(MAX_SELLING_ITERATIONS):
        changed = False
        for i in range(3):
            for j in range(i + 1, 3):
                dot = (e[i, 0] * (m11 * e[j, 0] + m12 * e[j, 1])
                       + e[i, 1] * (m12 * e[j, 0] + m22 * e[j, 1]))
                if dot > tol:
                    k = 3 - i - j
                    ei0, ei1 = e[i, 0], e[i, 1]
                    ej0, ej1 = e[j, 0], e[j, 1]
                    e[j, 0], e[j, 1] = -ej0, -ej1
                    e[k, 0], e[k, 1] = ej0 - ei0, ej1 - ei1
                    changed = True
                    break
            if changed:
                break
        if not changed:
            out[:, :] = e
            return it
    return -1


@njit(cache=True)
def _stencil(w11, w12, w22, offsets, weights):
    """AD-LBR offsets and weights of one tensor. Returns False on failure."""
    it = _selling(w22, -w12, w11, offsets)
    if it < 0:
        return False
    clamp = 1e-14 * max(1.0, w11 + w22)
    for i in range(3):
        a = offsets[(i + 1) % 3]
        b = offsets[(i + 2) % 3]
        # perpendiculars: (x, y) -> (-y, x)
        ax, ay = -a[1], a[0]
        bx, by = -b[1], b[0]
        c = -(ax * (w11 * bx + w12 * by) + ay * (w12 * bx + w22 * by))
        if c < 0.0:
            if c < -clamp:
                return False
            c = 0.0
        weights[i] = c
    return True


@njit(cache=True)
def _stencil_field(w, offsets, weights):
    m, n = w.shape[0], w.shape[1]
    for i in range(m):
        for j in range(n):
            w11, w12, w22 = w[i, j, 0], w[i, j, 1], w[i, j, 2]
            if not (w11 > 0.0 and w22 > 0.0 and w11 * w22 - w12 * w12 > 0.0):
                return i * n + j
            if not _stencil(w11, w12, w22, offsets[i, j], weights[i, j]):
                return i * n + j
    return -1


def _check_pd(w: np.ndarray):
    w = np.asarray(w, dtype=float)
    if w.shape != (2, 2) or not np.all(np.isfinite(w)):
        raise ValueError("expected a finite 2x2 matrix")
    if abs(w[0, 1] - w[1, 0]) > 1e-12 * max(1.0, np.abs(w).max()):
        raise ValueError("matrix is not symmetric")
    w11, w12, w22 = w[0, 0], 0.5 * (w[0, 1] + w[1, 0]), w[1, 1]
    if not (w11 > 0 and w22 > 0 and w11 * w22 - w12 * w12 > 0):
        raise NotPositiveDefiniteError(f"matrix is not positive definite: {w.tolist()}")
    return w11, w12, w22


def selling_superbase(m: np.ndarray) -> np.ndarray:
    """Superbase of Z^2 that is obtuse for the quadratic form ``m``.

    Starting from ``((1,0), (0,1), (-1,-1))``, any pair with positive
    ``<e_i, m e_j>`` is replaced via ``(e_i, e_j, e_k) -> (e_i, -e_j, e_j - e_i)``.
    Returns a ``(3, 2)`` integer array.
    """
    m11, m12, m22 = _check_pd(m)
    out = np.zeros((3, 2), dtype=np.int64)
    if _selling(m11, m12, m22, out) < 0:
        raise NotPositiveDefiniteError("Selling reduction did not terminate")
    return out


def stencil_weights(w: np.ndarray):
    """AD-LBR stencil of ``w``: ``(offsets (3, 2) int, weights (3,))``.

    Each weight is the full weight of the undirected pair ``+-e_i``; the
    symmetric half-weights of the six-point stencil are ``weights / 2``.
    """
    w11, w12, w22 = _check_pd(w)
    offsets = np.zeros((3, 2), dtype=np.int64)
    weights = np.zeros(3)
    if not _stencil(w11, w12, w22, offsets, weights):
        raise NotPositiveDefiniteError("lattice reduction produced a negative weight")
    return offsets, weights


def stencil_field(w: np.ndarray):
    """Vectorised :func:`stencil_weights` over an ``(M, N, 3)`` weight field."""
    w = np.ascontiguousarray(w, dtype=float)
    offsets = np.zeros(w.shape[:2] + (3, 2), dtype=np.int64)
    weights = np.zeros(w.shape[:2] + (3,))
    bad = _stencil_field(w, offsets, weights)
    if bad >= 0:
        i, j = divmod(bad, w.shape[1])
        raise NotPositiveDefiniteError(f"weight tensor at pixel ({i}, {j}) is not positive definite")
    return offsets, weights


def anisotropy_ratio(w: np.ndarray) -> float:
    """``sqrt(lam_max / lam_min)`` of a symmetric positive definite tensor."""
    w11, w12, w22 = _check_pd(w)
    half_tr = 0.5 * (w11 + w22)
    rad = math.hypot(0.5 * (w11 - w22), w12)
    return math.sqrt((half_tr + rad) / (half_tr - rad))
