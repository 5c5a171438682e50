"""Sparse generator of the discrete anisotropic osmosis evolution ``u' = A u``.

Diffusion follows the six-point AD-LBR stencil: pixel ``x`` couples to
``x +- e_i`` with half-weight ``c_i(x) / 2``.  The drift is split along the
same edges.  An edge ``(x, y)`` with weight ``c`` contributes

    A[x, y] += c (1/h^2 - delta/2h)    A[x, x] += c (-1/h^2 - delta/2h)
    A[y, x] += c (1/h^2 + delta/2h)    A[y, y] += c (-1/h^2 + delta/2h)

with ``delta = 2 (v_y - v_x) / (h (v_y + v_x))``.  The net flux into ``x`` is
``c H(v_x, v_y) (u_y/v_y - u_x/v_x) / h^2`` where ``H`` is the harmonic
mean, so columns sum to zero, off-diagonals stay positive for every positive
guidance and ``A v = 0`` whenever no edge is switched off by the mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .anisotropy import stencil_field
from .grid_image import MaskField
from .scc import tarjan_scc


@dataclass(frozen=True)
class SparseOperator:
    """Assembled generator with its grid metadata."""

    matrix: sp.csr_matrix
    height: int
    width: int
    h: float = 1.0

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def column_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=0)).ravel()

    def triplets(self):
        coo = self.matrix.tocoo()
        return coo.row, coo.col, coo.data


def edge_drift(v: np.ndarray, x, e, mask: MaskField, h: float = 1.0) -> float:
    """Drift sample on the edge from pixel ``x = (i, j)`` along offset ``e = (a, b)``.

    Offsets are in the image frame, so the edge ends at ``(i + b, j + a)``.
    """
    v = np.asarray(v, dtype=float)
    i, j = x
    a, b = e
    yi, yj = i + b, j + a
    m, n = v.shape
    if not (0 <= i < m and 0 <= j < n and 0 <= yi < m and 0 <= yj < n):
        raise IndexError(f"edge {x} -> {(yi, yj)} leaves the {m}x{n} grid")
    if mask.data[i, j] or mask.data[yi, yj]:
        return 0.0
    vx, vy = v[i, j], v[yi, yj]
    if not (vx > 0 and vy > 0):
        raise ValueError("guidance image must be strictly positive")
    return 2.0 * (vy - vx) / (h * (vy + vx))


def _edge_triplets(v, mask, offsets, weights, h):
    m, n = v.shape
    ii, jj = np.mgrid[0:m, 0:n]
    band = mask.as_bool()
    rows, cols, vals = [], [], []
    inv_h2 = 1.0 / (h * h)
    for k in range(3):
        half = 0.5 * weights[..., k]
        for sign in (1, -1):
            a = sign * offsets[..., k, 0]
            b = sign * offsets[..., k, 1]
            yi, yj = ii + b, jj + a
            keep = (yi >= 0) & (yi < m) & (yj >= 0) & (yj < n) & (half > 0)
            xi_, xj_ = ii[keep], jj[keep]
            yi_, yj_ = yi[keep], yj[keep]
            c = half[keep]
            vx, vy = v[xi_, xj_], v[yi_, yj_]
            delta = 2.0 * (vy - vx) / (h * (vy + vx))
            delta[band[xi_, xj_] | band[yi_, yj_]] = 0.0
            drift = delta / (2.0 * h)
            x_idx = xi_ * n + xj_
            y_idx = yi_ * n + yj_
            rows += [x_idx, x_idx, y_idx, y_idx]
            cols += [y_idx, x_idx, x_idx, y_idx]
            vals += [c * (inv_h2 - drift), c * (-inv_h2 - drift),
                     c * (inv_h2 + drift), c * (-inv_h2 + drift)]
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def assemble(v: np.ndarray, w: np.ndarray, mask: MaskField, h: float = 1.0) -> SparseOperator:
    """Assemble the osmosis generator for guidance channel ``v`` and weights ``w``.

    Edges leaving the grid are dropped, which realises the zero-flux
    boundary condition while keeping exact conservation.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim != 2:
        raise ValueError(f"guidance must be a 2-D channel, got shape {v.shape}")
    if not np.all(v > 0) or not np.all(np.isfinite(v)):
        raise ValueError("guidance image must be finite and strictly positive")
    if w.shape != v.shape + (3,) or mask.shape != v.shape:
        raise ValueError("guidance, weight field and mask dimensions disagree")
    offsets, weights = stencil_field(w)
    rows, cols, vals = _edge_triplets(v, mask, offsets, weights, h)
    size = v.size
    matrix = sp.csr_matrix((vals, (rows, cols)), shape=(size, size))
    matrix.sum_duplicates()
    matrix.sort_indices()
    return SparseOperator(matrix, v.shape[0], v.shape[1], h)


@dataclass(frozen=True)
class GeneratorReport:
    size: int
    max_abs_column_sum: float
    max_abs_entry: float
    min_off_diagonal: float
    scc_count: int

    def satisfies_hypotheses(self, rel_tol: float = 1e-12) -> bool:
        """Zero column sums, nonnegative off-diagonals and irreducibility."""
        return (self.max_abs_column_sum <= rel_tol * self.max_abs_entry
                and self.min_off_diagonal >= -1e-14
                and self.scc_count == 1)

    def lines(self):
        return [f"size              {self.size}",
                f"max |column sum|  {self.max_abs_column_sum:.3e}",
                f"max |entry|       {self.max_abs_entry:.3e}",
                f"min off-diagonal  {self.min_off_diagonal:.3e}",
                f"SCC count         {self.scc_count}"]


def validate_generator(a) -> GeneratorReport:
    """Check the hypotheses of the discrete osmosis theory on an operator.

    Accepts a :class:`SparseOperator`, a scipy sparse matrix or a dense array.
    """
    matrix = a.matrix if isinstance(a, SparseOperator) else sp.csr_matrix(a)
    matrix = sp.csr_matrix(matrix)
    size = matrix.shape[0]
    col_sums = np.asarray(matrix.sum(axis=0)).ravel()
    off = matrix - sp.diags(matrix.diagonal())
    off = sp.csr_matrix(off)
    off.eliminate_zeros()
    min_off = float(off.data.min()) if off.nnz else 0.0
    if off.nnz < size * (size - 1):
        min_off = min(min_off, 0.0)
    count, _ = tarjan_scc(off)
    max_entry = float(np.abs(matrix.data).max()) if matrix.nnz else 0.0
    return GeneratorReport(size=size,
                           max_abs_column_sum=float(np.abs(col_sums).max()) if size else 0.0,
                           max_abs_entry=max_entry,
                           min_off_diagonal=min_off,
                           scc_count=count)


def _forward_differences(r: np.ndarray, h: float):
    """Forward differences along ``j`` and ``i``; backward on the last column/row."""
    dj = np.empty_like(r)
    di = np.empty_like(r)
    dj[:, :-1] = r[:, 1:] - r[:, :-1]
    dj[:, -1] = r[:, -1] - r[:, -2]
    di[:-1, :] = r[1:, :] - r[:-1, :]
    di[-1, :] = r[-1, :] - r[-2, :]
    return dj / h, di / h


def osmosis_energy(u: np.ndarray, v: np.ndarray, w: np.ndarray, h: float = 1.0) -> float:
    """Quadrature of ``int v grad(u/v)^T W grad(u/v)`` on the pixel grid."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape or w.shape != u.shape + (3,):
        raise ValueError("u, v and w dimensions disagree")
    if not (np.all(u > 0) and np.all(v > 0)):
        raise ValueError("osmosis energy needs strictly positive images")
    gj, gi = _forward_differences(u / v, h)
    quad = w[..., 0] * gj * gj + 2.0 * w[..., 1] * gj * gi + w[..., 2] * gi * gi
    return float(np.sum(v * quad) * h * h)


def dump_triplets(a: SparseOperator, path) -> None:
    """Write ``row col value`` lines, one per stored entry."""
    rows, cols, vals = a.triplets()
    order = np.lexsort((cols, rows))
    with open(path, "w") as fh:
        for r, c, x in zip(rows[order], cols[order], vals[order]):
            fh.write(f"{r} {c} {x:.17g}\n")
