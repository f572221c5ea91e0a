"""Batched residual/Jacobian evaluation and sparse global assembly.

Elements are grouped into homogeneous batches (same material, node count,
basis order and quadrature). Each batch is differentiated in one seeded
forward pass, the dense 8x8 blocks are unrolled into COO triplets together
with their global indices, and the triplets are sorted and merged against a
sparsity pattern computed once per mesh.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .element import element_geometry, gradient_operator, residual_kernel

__all__ = [
    "AssemblyError",
    "ElementBatch",
    "SparsityPattern",
    "CooTriplets",
    "CsrMatrix",
    "build_batches",
    "precompute_sparsity",
    "assemble_residual",
    "assemble_jacobian",
    "assemble_diagonal",
    "sort_and_deduplicate",
    "coo_to_csr",
    "apply_dirichlet",
    "dump_triplets",
]

NODES_PER_ELEMENT = 4
BASIS_ORDER = 1


class AssemblyError(RuntimeError):
    """Internal inconsistency between assembled triplets and the precomputed pattern."""


@dataclass(frozen=True, eq=False)
class ElementBatch:
    """Homogeneous group of elements evaluated together.

    ``grad_op`` and ``wdet`` cache the reference-configuration geometry per
    element; they are independent of the displacement state.
    """

    element_ids: np.ndarray
    connectivity: np.ndarray
    dof_map: np.ndarray
    material: object
    quadrature: int = 2
    phases: tuple = ()
    grad_op: np.ndarray = field(default=None, repr=False)
    wdet: np.ndarray = field(default=None, repr=False)

    @property
    def size(self):
        return len(self.element_ids)

    @property
    def signature(self):
        return (self.material, NODES_PER_ELEMENT, BASIS_ORDER, self.quadrature)

    def kernel(self):
        """Residual map ``(E, 8) -> (E, 8)`` for this batch."""
        G, wdet, material = self.grad_op, self.wdet, self.material
        return lambda u_b: residual_kernel(u_b, G, wdet, material)


def build_batches(mesh, materials, quadrature=2):
    """One batch per distinct element signature, in order of first phase label.

    Phases mapped to equal :class:`~batchfem.element.Material` values share a batch.
    """
    phases = np.unique(mesh.material_of)
    missing = [int(p) for p in phases if int(p) not in materials]
    if missing:
        raise KeyError(f"no material given for phase(s) {missing}")

    groups = {}
    for p in phases:
        key = (materials[int(p)], quadrature)
        groups.setdefault(key, []).append(int(p))

    batches = []
    for (material, quad), plist in groups.items():
        ids = np.flatnonzero(np.isin(mesh.material_of, plist))
        conn = mesh.elements[ids]
        dof_map = np.stack([2 * conn, 2 * conn + 1], axis=-1).reshape(len(ids), 8)
        dNdx, wdet = element_geometry(mesh.nodes[conn], quad)
        batches.append(
            ElementBatch(ids, conn, dof_map, material, quad, tuple(plist), gradient_operator(dNdx), wdet)
        )
    return batches


@dataclass(frozen=True, eq=False)
class SparsityPattern:
    rows: np.ndarray
    cols: np.ndarray
    shape: tuple

    @property
    def nnz(self):
        return len(self.rows)


@dataclass(eq=False)
class CooTriplets:
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    shape: tuple
    nnz_pattern: int | None = None

    def __post_init__(self):
        if not len(self.rows) == len(self.cols) == len(self.values):
            raise ValueError("rows, cols and values must have equal length")

    def to_dense(self):
        A = np.zeros(self.shape)
        np.add.at(A, (self.rows, self.cols), self.values)
        return A


@dataclass(eq=False)
class CsrMatrix:
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray
    shape: tuple

    def __post_init__(self):
        self._row_of = None

    @property
    def nnz(self):
        return len(self.values)

    @property
    def row_of(self):
        """Row index of every stored entry."""
        if self._row_of is None:
            self._row_of = np.repeat(np.arange(self.shape[0]), np.diff(self.row_ptr))
        return self._row_of

    def diagonal(self):
        d = np.zeros(min(self.shape))
        mask = self.row_of == self.col_idx
        d[self.row_of[mask]] = self.values[mask]
        return d

    def to_dense(self):
        A = np.zeros(self.shape)
        A[self.row_of, self.col_idx] = self.values
        return A

    def bandwidth(self):
        """Largest ``|i - j|`` over stored entries."""
        if self.nnz == 0:
            return 0
        return int(np.max(np.abs(self.row_of - self.col_idx)))


def _element_triplet_indices(batches):
    rows, cols = [], []
    for b in batches:
        rows.append(np.repeat(b.dof_map, 8, axis=1).ravel())
        cols.append(np.tile(b.dof_map, (1, 8)).ravel())
    return np.concatenate(rows), np.concatenate(cols)


def _lexsort_unique(rows, cols):
    order = np.lexsort((cols, rows))
    r, c = rows[order], cols[order]
    new = np.ones(len(r), dtype=bool)
    new[1:] = (r[1:] != r[:-1]) | (c[1:] != c[:-1])
    return order, r, c, new


def precompute_sparsity(batches, n_dof):
    """Sorted, duplicate-free union of all element DOF blocks."""
    rows, cols = _element_triplet_indices(batches)
    if rows.size and (rows.max() >= n_dof or rows.min() < 0):
        raise ValueError("dof map references a DOF outside [0, n_dof)")
    _, r, c, new = _lexsort_unique(rows, cols)
    r, c = r[new], c[new]
    r.setflags(write=False)
    c.setflags(write=False)
    return SparsityPattern(r, c, (n_dof, n_dof))


def sort_and_deduplicate(values, rows, cols):
    """Sort triplets by ``(row, col)`` and merge duplicates by summation.

    Uses a stable sort, so duplicates are summed in their input order and the
    round-off is reproducible.
    """
    values = np.asarray(values, dtype=np.float64)
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if not len(values) == len(rows) == len(cols):
        raise ValueError("values, rows and cols must have equal length")
    order, r, c, new = _lexsort_unique(rows, cols)
    slot = np.cumsum(new) - 1
    out = np.zeros(int(new.sum()))
    np.add.at(out, slot, values[order])  # sequential, in sorted-stable order
    return out, r[new], c[new]


def assemble_residual(batches, u, n_dof=None):
    u = np.asarray(u, dtype=np.float64)
    if n_dof is not None and u.shape != (n_dof,):
        raise ValueError(f"u has shape {u.shape}, expected ({n_dof},)")
    R = np.zeros(u.shape[0])
    for b in batches:
        r = b.kernel()(u[b.dof_map])
        np.add.at(R, b.dof_map.ravel(), r.ravel())
    return R


def local_jacobians(batch, u):
    """Dense element Jacobians ``(E, 8, 8)`` of one batch at state ``u``."""
    return ad.batched_jacobian(batch.kernel(), u[batch.dof_map])


def assemble_jacobian(batches, u, pattern):
    """Global tangent stiffness as deduplicated COO triplets on ``pattern``."""
    u = np.asarray(u, dtype=np.float64)
    values = np.concatenate([local_jacobians(b, u).ravel() for b in batches])
    rows, cols = _element_triplet_indices(batches)
    data, r, c = sort_and_deduplicate(values, rows, cols)
    if len(r) != pattern.nnz or not (np.array_equal(r, pattern.rows) and np.array_equal(c, pattern.cols)):
        raise AssemblyError("assembled triplets do not match the precomputed sparsity pattern")
    return CooTriplets(pattern.rows, pattern.cols, data, pattern.shape, pattern.nnz)


def assemble_diagonal(batches, u, n_dof):
    """Diagonal of the global tangent, from the diagonals of the element blocks."""
    u = np.asarray(u, dtype=np.float64)
    d = np.zeros(n_dof)
    for b in batches:
        blocks = local_jacobians(b, u)
        np.add.at(d, b.dof_map.ravel(), np.diagonal(blocks, axis1=1, axis2=2).ravel())
    return d


def coo_to_csr(coo):
    """CSR view of sorted, deduplicated triplets. The values array is shared, not copied."""
    rows, cols = np.asarray(coo.rows), np.asarray(coo.cols)
    if len(rows) > 1:
        step_ok = (rows[1:] > rows[:-1]) | ((rows[1:] == rows[:-1]) & (cols[1:] > cols[:-1]))
        if not np.all(step_ok):
            raise ValueError("COO triplets must be sorted by (row, col) and duplicate-free")
    n = coo.shape[0]
    row_ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=row_ptr[1:])
    return CsrMatrix(row_ptr, cols, coo.values, coo.shape)


def apply_dirichlet(matrix, r, spec, u):
    """Symmetric elimination of Dirichlet DOFs from the Newton system ``K d = -r``.

    Free rows pick up ``K[f, d] * (g_d - u_d)``; constrained rows and columns
    are zeroed with a unit diagonal, and ``r[d] = u[d] - g_d`` so the solved
    increment lands exactly on the prescribed value. Returns a new matrix of
    the same type (same pattern, new values) and a new residual.
    """
    n = matrix.shape[0]
    dofs, prescribed = spec.dofs(), spec.values()
    if dofs.size and (dofs.min() < 0 or dofs.max() >= n):
        raise IndexError(f"constrained DOF out of range for a system of size {n}")
    u = np.asarray(u, dtype=np.float64)
    r_mod = np.array(r, dtype=np.float64)

    if isinstance(matrix, CsrMatrix):
        rows, cols = matrix.row_of, matrix.col_idx
    else:
        rows, cols = matrix.rows, matrix.cols
    values = np.array(matrix.values, dtype=np.float64)
    if dofs.size == 0:
        out = _with_values(matrix, values)
        return out, r_mod

    fixed = np.zeros(n, dtype=bool)
    fixed[dofs] = True
    delta = np.zeros(n)
    delta[dofs] = prescribed - u[dofs]

    lift = fixed[cols] & ~fixed[rows]
    np.add.at(r_mod, rows[lift], values[lift] * delta[cols[lift]])

    values[fixed[rows] | fixed[cols]] = 0.0
    diag = fixed[rows] & (rows == cols)
    if np.count_nonzero(diag) != dofs.size:
        raise AssemblyError("a constrained DOF has no diagonal entry in the pattern")
    values[diag] = 1.0
    r_mod[dofs] = u[dofs] - prescribed
    return _with_values(matrix, values), r_mod


def _with_values(matrix, values):
    if isinstance(matrix, CsrMatrix):
        return CsrMatrix(matrix.row_ptr, matrix.col_idx, values, matrix.shape)
    return CooTriplets(matrix.rows, matrix.cols, values, matrix.shape, matrix.nnz_pattern)


def dump_triplets(coo, fh):
    """Write ``row col value`` lines (17 significant digits) to a text stream."""
    for i, j, v in zip(coo.rows, coo.cols, coo.values):
        fh.write(f"{i} {j} {v:.17g}\n")
