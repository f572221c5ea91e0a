"""Newton-Raphson driver over the assembled residual."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .assembly import (
    apply_dirichlet,
    assemble_jacobian,
    assemble_residual,
    build_batches,
    precompute_sparsity,
)
from .backend import (
    HandoffChannel,
    OperatorKind,
    explicit_operator,
    matrix_free_operator,
    solve_with_operator,
)
from .element import InvertedElementError
from .krylov import PC, Method, SolverConfig

__all__ = ["NewtonConfig", "NewtonReport", "LoadSteppingReport", "solve_bvp", "load_stepping"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NewtonConfig:
    newton_rtol: float = 1e-10
    newton_atol: float = 1e-14
    max_newton_iter: int = 25
    linear: SolverConfig = field(default_factory=lambda: SolverConfig(Method.CG, PC.JACOBI, 1e-13))
    operator_kind: OperatorKind = OperatorKind.EXPLICIT

    def __post_init__(self):
        object.__setattr__(self, "operator_kind", OperatorKind(self.operator_kind))
        if not (self.newton_rtol > 0 and self.newton_atol > 0):
            raise ValueError("Newton tolerances must be positive")
        if self.max_newton_iter < 1:
            raise ValueError("max_newton_iter must be >= 1")


@dataclass
class NewtonReport:
    converged: bool
    newton_iterations: int
    residual_norms: np.ndarray
    linear_reports: list
    total_time: float
    message: str = ""


@dataclass
class LoadSteppingReport:
    converged: bool
    steps: list
    total_time: float
    failed_step: int | None = None

    @property
    def newton_iterations(self):
        return sum(s.newton_iterations for s in self.steps)


def solve_bvp(mesh, materials, bcs, config=None, u0=None, batches=None):
    """Solve ``R(u) = 0`` subject to Dirichlet data by full Newton steps.

    The initial guess is ``u0`` (zeros by default) with the prescribed values
    written into the constrained DOFs. Convergence is measured on the free-DOF
    residual: ``||R_free(u_k)|| <= max(newton_rtol * ||R_free(u_0)||, newton_atol)``.
    Failures (linear solver, inverted elements, iteration cap) come back as
    ``converged=False`` with a message.
    """
    config = config or NewtonConfig()
    t0 = time.perf_counter()
    bcs.check(mesh)
    n = mesh.n_dof
    batches = batches if batches is not None else build_batches(mesh, materials)
    explicit = config.operator_kind is OperatorKind.EXPLICIT
    pattern = precompute_sparsity(batches, n) if explicit else None
    channel = HandoffChannel()

    dofs, prescribed = bcs.dofs(), bcs.values()
    free = np.ones(n, dtype=bool)
    free[dofs] = False
    u = np.zeros(n) if u0 is None else np.array(u0, dtype=np.float64)
    u[dofs] = prescribed

    try:
        R = assemble_residual(batches, u)
    except InvertedElementError as exc:
        message = f"inverted element in the initial state: {exc}"
        log.warning("newton failed: %s", message)
        return u, NewtonReport(False, 0, np.array([np.inf]), [], time.perf_counter() - t0, message)
    norms = [np.linalg.norm(R[free])]
    target = max(config.newton_rtol * norms[0], config.newton_atol)
    linear_reports = []
    message = ""
    converged = False
    k = 0
    log.info("newton it=0 |R_free|=%.6e", norms[0], extra={"newton_iteration": 0, "residual_norm": norms[0]})

    while True:
        if norms[-1] <= target:
            converged = True
            break
        if k >= config.max_newton_iter:
            message = f"no convergence within {config.max_newton_iter} Newton iterations"
            break
        t_it = time.perf_counter()
        if explicit:
            coo = assemble_jacobian(batches, u, pattern)
            K, rhs = apply_dirichlet(coo, R, bcs, u)
            buf = channel.handoff(K)
            try:
                op = explicit_operator(buf, pattern)
                delta, rep = solve_with_operator(op, -rhs, config.linear)
            finally:
                channel.release(buf)
        else:
            rhs = R.copy()
            rhs[dofs] = u[dofs] - prescribed
            op = matrix_free_operator(batches, u, bcs, n)
            delta, rep = solve_with_operator(op, -rhs, config.linear)
        linear_reports.append(rep)
        if not rep.converged:
            message = f"linear solve failed at Newton iteration {k + 1}: {rep.status}"
            break
        u = u + delta
        k += 1
        try:
            R = assemble_residual(batches, u)
        except InvertedElementError as exc:
            norms.append(np.inf)
            message = f"inverted element after Newton iteration {k}: {exc}"
            break
        norms.append(np.linalg.norm(R[free]))
        log.info(
            "newton it=%d |R_free|=%.6e linear_its=%d time=%.4fs",
            k, norms[-1], rep.iterations, time.perf_counter() - t_it,
            extra={"newton_iteration": k, "residual_norm": norms[-1],
                   "linear_iterations": rep.iterations},
        )

    report = NewtonReport(
        converged, k, np.array(norms), linear_reports, time.perf_counter() - t0, message
    )
    if not converged:
        log.warning("newton failed: %s", message)
    return u, report


def load_stepping(mesh, materials, bcs, config=None, n_steps=1):
    """Ramp the prescribed values linearly over ``n_steps`` Newton solves, warm-starting each."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    t0 = time.perf_counter()
    batches = build_batches(mesh, materials)
    u = None
    steps = []
    for s in range(1, n_steps + 1):
        u, rep = solve_bvp(mesh, materials, bcs.scaled(s / n_steps), config, u0=u, batches=batches)
        steps.append(rep)
        if not rep.converged:
            log.warning("load step %d of %d failed: %s", s, n_steps, rep.message)
            return u, LoadSteppingReport(False, steps, time.perf_counter() - t0, failed_step=s)
    return u, LoadSteppingReport(True, steps, time.perf_counter() - t0)
