"""Assembly-to-solver boundary.

A :class:`HandoffChannel` transfers the assembled COO value array to the
solver side without copying it. While the solver holds the lease the array is
made read-only, so the producer cannot mutate it behind the solver's back.
Each handoff bumps the channel epoch; operators built from an older epoch are
rejected at solve time.

Two interchangeable operators sit on top: an explicit CSR operator, which
supports every preconditioner and direct factorization, and a matrix-free
operator whose action is a batched Jacobian-vector product.
"""
from __future__ import annotations

import enum
import logging
import time

import numpy as np

from . import autodiff as ad
from .assembly import CooTriplets, assemble_diagonal, coo_to_csr
from .krylov import (
    PC,
    IdentityPreconditioner,
    JacobiPreconditioner,
    make_preconditioner,
    solve,
    spmv,
)

__all__ = [
    "LeaseState",
    "LeaseError",
    "StaleEpochError",
    "CapabilityError",
    "HandoffBuffer",
    "HandoffChannel",
    "OperatorKind",
    "LinearOperator",
    "explicit_operator",
    "matrix_free_operator",
    "operator_preconditioner",
    "solve_with_operator",
]

log = logging.getLogger(__name__)


class LeaseState(str, enum.Enum):
    OWNED_BY_ASSEMBLY = "owned_by_assembly"
    LEASED_TO_SOLVER = "leased_to_solver"


class LeaseError(RuntimeError):
    """Violation of the two-state lease protocol."""


class StaleEpochError(LeaseError):
    """Operator built from an assembly epoch that is no longer current."""


class CapabilityError(ValueError):
    """Preconditioner or solver not available for this operator kind."""


class HandoffBuffer:
    """Assembly-produced values plus the pattern they live on.

    ``values`` is the producer's array itself. Use :meth:`write` for
    producer-side updates; it fails while the solver holds the lease.
    """

    def __init__(self, coo, epoch, channel):
        self.coo = coo
        self.values = coo.values
        self.pattern_handle = (coo.rows, coo.cols, len(coo.values))
        self.epoch = epoch
        self.state = LeaseState.OWNED_BY_ASSEMBLY
        self._channel = channel

    @property
    def leased(self):
        return self.state is LeaseState.LEASED_TO_SOLVER

    def write(self, index, value):
        if self.leased:
            raise LeaseError(f"buffer of epoch {self.epoch} is leased to the solver; cannot mutate")
        self.values[index] = value


class HandoffChannel:
    """Serializes handoffs for one assembly/solve pipeline."""

    def __init__(self, debug=False):
        self.epoch = 0
        self.active = None
        self.debug = debug

    def _log(self, msg, *args):
        if self.debug:
            log.debug(msg, *args)

    def handoff(self, coo):
        if not isinstance(coo, CooTriplets):
            raise TypeError("handoff expects deduplicated COO triplets")
        if self.active is not None and self.active.leased:
            raise LeaseError(
                f"handoff while epoch {self.active.epoch} is still leased to the solver"
            )
        if coo.nnz_pattern is not None and len(coo.values) != coo.nnz_pattern:
            raise ValueError("value count does not match the pattern nnz")
        if not coo.values.flags.writeable:
            raise LeaseError("these values are already leased through another buffer")
        self.epoch += 1
        buf = HandoffBuffer(coo, self.epoch, self)
        buf.values.flags.writeable = False
        buf.state = LeaseState.LEASED_TO_SOLVER
        self.active = buf
        self._log("handoff epoch=%d nnz=%d", buf.epoch, len(buf.values))
        return buf

    def release(self, buf):
        if buf is not self.active or not buf.leased:
            raise LeaseError(f"release of a buffer (epoch {buf.epoch}) that is not the active lease")
        buf.values.flags.writeable = True
        buf.state = LeaseState.OWNED_BY_ASSEMBLY
        self._log("release epoch=%d", buf.epoch)

    def check_current(self, epoch):
        if self.active is None or epoch != self.epoch or not self.active.leased:
            raise StaleEpochError(f"operator epoch {epoch} is stale (current epoch {self.epoch})")


class OperatorKind(str, enum.Enum):
    EXPLICIT = "explicit"
    MATRIX_FREE = "matrix_free"


class LinearOperator:
    """``x -> K(u) x`` with an optional explicit CSR behind it."""

    def __init__(self, kind, n, matvec, diagonal, csr=None, epoch=None, channel=None):
        self.kind = OperatorKind(kind)
        self.shape = (n, n)
        self._matvec = matvec
        self._diagonal = diagonal
        self.csr = csr
        self.epoch = epoch
        self.channel = channel

    @property
    def dimension(self):
        return self.shape[0]

    def matvec(self, x):
        return self._matvec(np.asarray(x, dtype=np.float64))

    apply = matvec

    def diagonal(self):
        return self._diagonal()

    def check_current(self):
        if self.channel is not None:
            self.channel.check_current(self.epoch)


def explicit_operator(buffer, pattern=None):
    """CSR-backed operator over a leased buffer. The CSR values alias the buffer."""
    if not buffer.leased:
        raise LeaseError("explicit operator requires a buffer leased to the solver")
    if pattern is not None:
        rows, cols, nnz = buffer.pattern_handle
        if nnz != pattern.nnz or not (
            np.array_equal(rows, pattern.rows) and np.array_equal(cols, pattern.cols)
        ):
            raise ValueError("buffer does not live on the given pattern")
    csr = coo_to_csr(buffer.coo)
    return LinearOperator(
        OperatorKind.EXPLICIT,
        csr.shape[0],
        lambda x: spmv(csr, x),
        csr.diagonal,
        csr=csr,
        epoch=buffer.epoch,
        channel=buffer._channel,
    )


def matrix_free_operator(batches, u, dirichlet, n_dof=None):
    """Matrix-free tangent: batched JVPs of the element kernels, eliminated like :func:`apply_dirichlet`.

    Constrained columns are masked out of the input and constrained rows are
    replaced by the identity.
    """
    u = np.asarray(u, dtype=np.float64).copy()
    n = u.size if n_dof is None else n_dof
    fixed = np.zeros(n, dtype=bool)
    dofs = dirichlet.dofs()
    if dofs.size and (dofs.min() < 0 or dofs.max() >= n):
        raise IndexError("constrained DOF out of range")
    fixed[dofs] = True
    local_u = [u[b.dof_map] for b in batches]

    def matvec(v):
        if v.shape != (n,):
            raise ValueError(f"dimension mismatch: operator ({n}, {n}), vector {v.shape}")
        vf = np.where(fixed, 0.0, v)
        y = np.zeros(n)
        for b, ub in zip(batches, local_u):
            out = b.kernel()(ad.DualVector.seed(ub, vf[b.dof_map]))
            np.add.at(y, b.dof_map.ravel(), out.tangent[..., 0].ravel())
        y[fixed] = v[fixed]
        return y

    diag_cache = []

    def diagonal():
        if not diag_cache:
            d = assemble_diagonal(batches, u, n)
            d[fixed] = 1.0
            diag_cache.append(d)
        return diag_cache[0]

    return LinearOperator(OperatorKind.MATRIX_FREE, n, matvec, diagonal)


def operator_preconditioner(op, kind):
    kind = PC(kind)
    if op.kind is OperatorKind.MATRIX_FREE:
        if kind is PC.ILU0:
            raise CapabilityError("ILU(0) cannot be built for a matrix-free operator")
        if kind is PC.JACOBI:
            return JacobiPreconditioner(op.diagonal())
        return IdentityPreconditioner()
    return make_preconditioner(kind, op.csr)


def solve_with_operator(op, b, config, x0=None):
    """Run the configured linear solver against an operator, enforcing capabilities and epochs."""
    op.check_current()
    if config.method.is_direct:
        if op.kind is OperatorKind.MATRIX_FREE:
            raise CapabilityError("direct factorization needs an explicit operator")
        return solve(op.csr, b, config)
    M = operator_preconditioner(op, config.preconditioner)
    target = op.csr if op.kind is OperatorKind.EXPLICIT else op
    t0 = time.perf_counter()
    x, report = solve(target, b, config, x0, M)
    log.debug("linear solve %s/%s: %d its in %.3fs", config.method.value, config.preconditioner.value,
              report.iterations, time.perf_counter() - t0)
    return x, report
