"""Uniform lattices over truncated domains and the finite-difference Dirichlet Laplacian.

Nodes sit at ``x = i / m`` for integer lattice vectors ``i``; with ``h = 1/m``
the planes ``x_j = +-1`` are node planes, so the slab walls are resolved
without geometric error. Membership is evaluated in integer arithmetic.

Node order is lexicographic in the lattice coordinates (last axis fastest)
and never depends on anything but the domain, ``m`` and the reduction.

For the cross an optional orthant reduction keeps only nodes with all
``i_j >= 0``. Even symmetry across ``x_j = 0`` turns the missing neighbour at
``i_j = -1`` into a second copy of the one at ``i_j = +1``. The folded
operator is self-adjoint for the orbit-weighted inner product; the stored
matrix is its symmetric similarity transform ``S = D A D^{-1}`` with
``D = diag(sqrt(orbit))``. Use :func:`to_operator_basis` and
:func:`from_operator_basis` to move node values in and out.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np
import scipy.io
import scipy.sparse as sp

from .geometry import DomainSpec, Kind, in_truncated


class Reduction(str, Enum):
    FULL = "full"
    CROSS_ORTHANT = "cross_orthant"


def _as_multiple(value: float, m: int, what: str) -> int:
    k = value * m
    ik = int(round(k))
    if abs(k - ik) > 1e-9:
        raise ValueError(f"{what}={value} is not a multiple of h=1/{m}")
    return ik


@dataclass(frozen=True, eq=False)
class Grid:
    """Interior lattice nodes of a truncated domain.

    Attributes
    ----------
    domain, m, reduction
        What was discretized and how; ``h = 1/m``.
    lattice : (N, n) int array
        Lattice coordinates of the unknowns, lexicographically ordered.
    index : int array
        Dense lookup over the bounding lattice box; ``-1`` marks non-nodes.
    offset : (n,) int array
        Lattice coordinate stored at ``index[0, ..., 0]``.
    orbit : (N,) float array
        Number of full-domain nodes each unknown stands for (1 without reduction).
    """

    domain: DomainSpec
    m: int
    reduction: Reduction
    lattice: np.ndarray
    index: np.ndarray
    offset: np.ndarray
    orbit: np.ndarray = field(repr=False)

    @property
    def h(self) -> float:
        return 1.0 / self.m

    @property
    def n(self) -> int:
        return self.domain.n

    @property
    def count(self) -> int:
        return self.lattice.shape[0]

    @cached_property
    def nodes(self) -> np.ndarray:
        return self.lattice / self.m

    @property
    def cell_volume(self) -> float:
        return self.h**self.n

    def lookup(self, lat: np.ndarray) -> np.ndarray:
        """Dense indices of lattice points (``-1`` where there is no unknown)."""
        lat = np.asarray(lat, dtype=np.int64)
        if self.reduction is Reduction.CROSS_ORTHANT:
            lat = np.abs(lat)
        rel = lat - self.offset
        shape = np.array(self.index.shape)
        ok = np.all((rel >= 0) & (rel < shape), axis=-1)
        out = np.full(lat.shape[:-1], -1, dtype=np.int64)
        if np.any(ok):
            out[ok] = self.index[tuple(rel[ok].T)]
        return out


def _lattice_ranges(d: DomainSpec, m: int, reduction: Reduction) -> list[tuple[int, int]]:
    """Inclusive per-axis lattice bounds that contain every interior node."""
    if d.kind is Kind.BOX:
        ranges = []
        for lo, hi in d.extents:
            ilo = _as_multiple(lo, m, "box extent")
            ihi = _as_multiple(hi, m, "box extent")
            ranges.append((ilo + 1, ihi - 1))
        if math.isfinite(d.R):
            rm = _as_multiple(d.R, m, "R")
            ranges = [(max(a, -rm + 1), min(b, rm - 1)) for a, b in ranges]
        return ranges
    rm = _as_multiple(d.R, m, "R")
    lo = -m + 1 if d.kind is Kind.CORNER else -rm + 1
    if reduction is Reduction.CROSS_ORTHANT:
        lo = 0
    return [(lo, rm - 1)] * d.n


def _member_mask(d: DomainSpec, m: int, lat: np.ndarray) -> np.ndarray:
    if d.kind is Kind.CORNER:
        return np.abs(lat.min(axis=-1)) < m
    if d.kind is Kind.CROSS:
        return np.abs(lat).min(axis=-1) < m
    return np.ones(lat.shape[:-1], dtype=bool)  # box: the ranges already are the box


def build_grid(d: DomainSpec, m: int, reduction: Reduction | str = Reduction.FULL) -> Grid:
    """All lattice points strictly inside the truncated domain.

    Parameters
    ----------
    d : DomainSpec
    m : int
        Subdivisions per unit length (``h = 1/m``), at least 4 for corner and
        cross domains so the slab width holds interior nodes.
    reduction : Reduction
        ``CROSS_ORTHANT`` keeps the closed non-negative orthant (cross only).
    """
    reduction = Reduction(reduction)
    if m < 1 or (d.kind is not Kind.BOX and m < 4):
        raise ValueError(f"m={m} too small (need m >= 4 for corner and cross domains)")
    if reduction is Reduction.CROSS_ORTHANT and d.kind is not Kind.CROSS:
        raise ValueError("orthant reduction is only supported for cross domains")
    ranges = _lattice_ranges(d, m, reduction)
    if any(b < a for a, b in ranges):
        raise ValueError(f"empty grid for {d} at m={m}")
    axes = [np.arange(a, b + 1, dtype=np.int64) for a, b in ranges]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    mask = _member_mask(d, m, mesh)
    if not mask.any():
        raise ValueError(f"empty grid for {d} at m={m}")
    lattice = mesh[mask]  # C order of a boolean mask is lexicographic
    index = np.full(mask.shape, -1, dtype=np.int64)
    index[mask] = np.arange(lattice.shape[0])
    if reduction is Reduction.CROSS_ORTHANT:
        orbit = 2.0 ** np.count_nonzero(lattice, axis=1)
    else:
        orbit = np.ones(lattice.shape[0])
    offset = np.array([a for a, _ in ranges], dtype=np.int64)
    return Grid(d, m, reduction, lattice, index, offset, orbit)


@dataclass(frozen=True, eq=False)
class SparseOperator:
    """Symmetric sparse matrix in CSR form plus the basis scaling of its grid."""

    matrix: sp.csr_matrix
    scale: np.ndarray

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @property
    def row_offsets(self) -> np.ndarray:
        return self.matrix.indptr

    @property
    def column_indices(self) -> np.ndarray:
        return self.matrix.indices

    @property
    def values(self) -> np.ndarray:
        return self.matrix.data

    def __matmul__(self, v):
        return self.matrix @ v

    def asymmetry(self) -> float:
        diff = self.matrix - self.matrix.T
        return float(abs(diff).max()) if diff.nnz else 0.0

    def to_matrix_market(self, path) -> None:
        scipy.io.mmwrite(str(path), self.matrix, symmetry="symmetric", precision=17)


def assemble_dirichlet_laplacian(g: Grid) -> SparseOperator:
    """Second-order ``(2n+1)``-point stencil for ``-Laplace`` with zero boundary values.

    Row ``i`` is ``(2n u_i - sum of neighbour values) / h^2``; neighbours that
    are not unknowns are boundary (or truncation) points and contribute 0.
    """
    n, N = g.n, g.count
    inv_h2 = float(g.m * g.m)
    rows = [np.arange(N)]
    cols = [np.arange(N)]
    vals = [np.full(N, 2 * n * inv_h2)]
    for axis in range(n):
        for step in (-1, 1):
            nb = g.lattice.copy()
            nb[:, axis] += step
            j = g.lookup(nb)  # lookup reflects across x_j = 0 in orthant mode
            keep = j >= 0
            rows.append(np.nonzero(keep)[0])
            cols.append(j[keep])
            vals.append(np.full(int(keep.sum()), -inv_h2))
    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N)
    ).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    scale = np.sqrt(g.orbit)
    if g.reduction is Reduction.CROSS_ORTHANT:
        D = sp.diags(scale)
        Dinv = sp.diags(1.0 / scale)
        A = D @ A @ Dinv
        A = ((A + A.T) * 0.5).tocsr()  # exact symmetry; the two halves agree to rounding
        A.sort_indices()
    return SparseOperator(A, scale)


def to_operator_basis(g: Grid, u: np.ndarray) -> np.ndarray:
    """Node values -> coordinates in which the assembled operator is symmetric."""
    return u * np.sqrt(g.orbit)


def from_operator_basis(g: Grid, y: np.ndarray) -> np.ndarray:
    return y / np.sqrt(g.orbit)


def integrate(g: Grid, values: np.ndarray) -> float:
    """``h^n * sum(orbit * values)``: the full-domain integral of a grid field."""
    values = np.asarray(values, dtype=float)
    if values.shape[0] != g.count:
        raise ValueError(f"field has {values.shape[0]} values, grid has {g.count} nodes")
    return float(g.cell_volume * np.dot(g.orbit, values))


def inner(g: Grid, u: np.ndarray, v: np.ndarray) -> float:
    return integrate(g, np.asarray(u) * np.asarray(v))


def norm(g: Grid, u: np.ndarray) -> float:
    return math.sqrt(inner(g, u, u))


def interpolate(g: Grid, values: np.ndarray, x) -> np.ndarray | float:
    """Multilinear interpolation of node values; boundary corners count as 0.

    ``x`` is one point ``(n,)`` or a batch ``(P, n)``. In orthant mode points in
    any orthant are accepted (the field is even).
    """
    values = np.asarray(values, dtype=float)
    if values.shape[0] != g.count:
        raise ValueError(f"field has {values.shape[0]} values, grid has {g.count} nodes")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    if not np.all(in_truncated(g.domain, pts)):
        raise ValueError("interpolation point outside the truncated domain")
    scaled = pts * g.m
    base = np.floor(scaled).astype(np.int64)
    frac = scaled - base
    out = np.zeros(pts.shape[0])
    for corner in np.ndindex(*(2,) * g.n):
        c = np.array(corner)
        w = np.prod(np.where(c == 1, frac, 1.0 - frac), axis=1)
        live = w > 0
        if not live.any():
            continue
        idx = g.lookup(base[live] + c)
        has = idx >= 0
        contrib = np.zeros(idx.shape[0])
        contrib[has] = values[idx[has]]
        out[live] += w[live] * contrib
    return float(out[0]) if single else out


def write_nodes_csv(g: Grid, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index"] + [f"x{j + 1}" for j in range(g.n)])
        for i, x in enumerate(g.nodes):
            writer.writerow([i] + [repr(float(v)) for v in x])
