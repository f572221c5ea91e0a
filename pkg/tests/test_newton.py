import logging

import numpy as np
import pytest

from batchfem.assembly import apply_dirichlet, assemble_jacobian, assemble_residual, build_batches, precompute_sparsity
from batchfem.backend import OperatorKind
from batchfem.element import Material, Model, default_materials
from batchfem.krylov import PC, Method, SolverConfig
from batchfem.mesh import benchmark_bcs, generate_two_phase_mesh
from batchfem.newton import NewtonConfig, load_stepping, solve_bvp

ALL_LINEAR = {0: Material(Model.LINEAR, 1.0, 0.3), 1: Material(Model.LINEAR, 10.0, 0.3)}


def _mesh(n=4):
    return generate_two_phase_mesh(n, n, inclusion_radius=0.3)


def test_config_validation():
    with pytest.raises(ValueError):
        NewtonConfig(newton_rtol=0.0)
    with pytest.raises(ValueError):
        NewtonConfig(max_newton_iter=0)


def test_zero_strain_converges_immediately():
    m = _mesh()
    u, rep = solve_bvp(m, default_materials(), benchmark_bcs(m, 0.0))
    assert rep.converged and rep.newton_iterations == 0 and np.array_equal(u, np.zeros(m.n_dof))
    assert len(rep.residual_norms) == 1


@pytest.mark.parametrize("kind", list(OperatorKind))
def test_linear_problem_one_iteration(kind):
    m = _mesh(6)
    u, rep = solve_bvp(m, ALL_LINEAR, benchmark_bcs(m, 0.01), NewtonConfig(operator_kind=kind))
    assert rep.converged and rep.newton_iterations == 1
    assert rep.residual_norms[1] / rep.residual_norms[0] <= 10 * 1e-13
    assert len(rep.residual_norms) == rep.newton_iterations + 1


def _chord_oracle(mesh, materials, bcs, alpha=0.8, tol=1e-15, max_it=5000):
    """Damped fixed-point iteration with the frozen initial tangent and dense solves."""
    batches = build_batches(mesh, materials)
    pattern = precompute_sparsity(batches, mesh.n_dof)
    n = mesh.n_dof
    fixed = np.zeros(n, dtype=bool)
    fixed[bcs.dofs()] = True
    free = ~fixed
    u = np.zeros(n)
    u[bcs.dofs()] = bcs.values()
    K0 = assemble_jacobian(batches, np.zeros(n), pattern).to_dense()[np.ix_(free, free)]
    for _ in range(max_it):
        R = assemble_residual(batches, u)[free]
        if np.linalg.norm(R) <= tol:
            return u
        u[free] -= alpha * np.linalg.solve(K0, R)
    raise AssertionError("oracle did not converge")


def test_svk_matches_fixed_point_oracle():
    m = _mesh()
    bcs = benchmark_bcs(m, 0.01)
    u, rep = solve_bvp(m, default_materials(), bcs)
    assert rep.converged
    free = np.setdiff1d(np.arange(m.n_dof), bcs.dofs())
    R = assemble_residual(build_batches(m, default_materials()), u)
    assert np.linalg.norm(R[free]) <= max(1e-10 * rep.residual_norms[0], 1e-14)
    assert np.abs(u - _chord_oracle(m, default_materials(), bcs)).max() <= 1e-7


def superlinear_tail(norms, order=1.7):
    """``r[k+1] <= C r[k]**order`` over the last three norms, with ``C`` fixed by the first pair."""
    a, b, c = norms[-3:]
    C = b / a**order
    return c <= C * b**order


def test_quadratic_tail_4x4():
    m = _mesh()
    _, rep = solve_bvp(m, default_materials(), benchmark_bcs(m, 0.01))
    assert rep.converged and len(rep.residual_norms) >= 4
    assert superlinear_tail(rep.residual_norms)


def test_operator_kinds_agree():
    m = _mesh(8)
    bcs = benchmark_bcs(m, 0.02)
    ue, re = solve_bvp(m, default_materials(), bcs)
    um, rm = solve_bvp(m, default_materials(), bcs, NewtonConfig(operator_kind=OperatorKind.MATRIX_FREE))
    assert re.converged and rm.converged
    assert np.abs(ue - um).max() <= 1e-8


def test_small_load_consistency():
    m = _mesh(6)
    lin = {0: Material(Model.LINEAR, 1.0, 0.3), 1: Material(Model.LINEAR, 10.0, 0.3)}
    errs = []
    for d in (1e-2, 1e-3, 1e-4):
        bcs = benchmark_bcs(m, d)
        u_svk, _ = solve_bvp(m, default_materials(), bcs, NewtonConfig(newton_rtol=1e-13))
        u_lin, _ = solve_bvp(m, lin, bcs)
        errs.append(np.abs(u_svk - u_lin).max())
    orders = np.log10(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.8)


def test_load_stepping():
    m = _mesh()
    bcs = benchmark_bcs(m, 0.01)
    u1, r1 = load_stepping(m, default_materials(), bcs, n_steps=1)
    u0, r0 = solve_bvp(m, default_materials(), bcs)
    assert np.array_equal(u1, u0) and r1.newton_iterations == r0.newton_iterations
    ua, _ = load_stepping(m, ALL_LINEAR, bcs, n_steps=1)
    ub, _ = load_stepping(m, ALL_LINEAR, bcs, n_steps=7)
    assert np.abs(ua - ub).max() <= 1e-12
    with pytest.raises(ValueError):
        load_stepping(m, ALL_LINEAR, bcs, n_steps=0)


def test_load_stepping_large_strain():
    m = _mesh()
    bcs = benchmark_bcs(m, 0.05)
    u5, r5 = load_stepping(m, default_materials(), bcs, n_steps=5)
    u10, r10 = load_stepping(m, default_materials(), bcs, n_steps=10)
    assert r5.converged and r10.converged and len(r5.steps) == 5
    assert np.abs(u5 - u10).max() <= 1e-8


def test_failures_are_reported():
    m = _mesh()
    bcs = benchmark_bcs(m, 0.01)
    _, rep = solve_bvp(m, default_materials(), bcs, NewtonConfig(max_newton_iter=1))
    assert not rep.converged and "Newton iterations" in rep.message
    starve = NewtonConfig(linear=SolverConfig(Method.CG, PC.NONE, 1e-13, max_iter=2))
    _, rep = solve_bvp(m, default_materials(), bcs, starve)
    assert not rep.converged and "linear solve failed" in rep.message
    _, rep = solve_bvp(m, default_materials(), benchmark_bcs(m, -1.5))
    assert not rep.converged and "inverted element in the initial state" in rep.message
    # fine with u0, inverted after the first full step
    lu = NewtonConfig(linear=SolverConfig(Method.DIRECT_LU, rtol=1e-10))
    _, rep = solve_bvp(m, default_materials(), benchmark_bcs(m, -0.2), lu)
    assert not rep.converged and "inverted element after Newton iteration" in rep.message


def test_failed_load_step_index():
    m = _mesh()
    _, rep = load_stepping(m, default_materials(), benchmark_bcs(m, -3.0), n_steps=2)
    assert not rep.converged and rep.failed_step == 1


def test_iteration_log_lines(caplog):
    m = _mesh()
    with caplog.at_level(logging.INFO, logger="batchfem.newton"):
        _, rep = solve_bvp(m, default_materials(), benchmark_bcs(m, 0.01))
    recs = [r for r in caplog.records if hasattr(r, "newton_iteration")]
    assert [r.newton_iteration for r in recs] == list(range(rep.newton_iterations + 1))
    assert all(hasattr(r, "linear_iterations") for r in recs[1:])
