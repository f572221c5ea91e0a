"""Cross-module oracle checks.

Each check returns a :class:`CheckResult`; :func:`run_all` runs the standard
suite. The oracles here are deliberately naive (dense loops, finite
differences, analytic fields) and share no assembly code with the path they
check beyond the element kernel itself.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .assembly import (
    apply_dirichlet,
    assemble_jacobian,
    assemble_residual,
    build_batches,
    coo_to_csr,
    precompute_sparsity,
)
from .backend import HandoffChannel, explicit_operator, matrix_free_operator
from .element import ElementState, Material, Model, default_materials, element_stiffness, gauss_rule, shape_quad4
from .krylov import Method, SolverConfig
from .mesh import Mesh, benchmark_bcs, boundary_dirichlet, generate_two_phase_mesh, refine_series
from .newton import NewtonConfig, solve_bvp

__all__ = [
    "CheckResult",
    "check_ad_vs_fd",
    "check_dense_assembly",
    "check_operator_equivalence",
    "check_patch_test",
    "check_manufactured_convergence",
    "dense_assembly",
    "distorted_patch_mesh",
    "l2_error",
    "run_all",
]

LINEAR = Material(Model.LINEAR, 1.0, 0.3)


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: str
    seconds: float = 0.0
    detail: str = ""

    def line(self):
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag}  {self.name:<28} value={self.value:.3e}  target {self.tolerance}  ({self.seconds:.2f}s) {self.detail}"


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def dense_assembly(mesh, materials, u):
    """Brute-force dense tangent: one element at a time, scattered with a double loop."""
    n = mesh.n_dof
    K = np.zeros((n, n))
    for e, conn in enumerate(mesh.elements):
        dofs = np.ravel([[2 * a, 2 * a + 1] for a in conn])
        state = ElementState(mesh.nodes[conn], u[dofs], materials[int(mesh.material_of[e])])
        Ke = element_stiffness(state)
        for a in range(8):
            for b in range(8):
                K[dofs[a], dofs[b]] += Ke[a, b]
    return K


def _benchmark_state(mesh, scale, seed):
    rng = np.random.default_rng(seed)
    return scale * rng.standard_normal(mesh.n_dof)


@_timed
def check_ad_vs_fd(seed=0, h=1e-6, tol=1e-5):
    """AD-assembled tangent against central differences of the assembled residual (2x2 mesh)."""
    mesh = generate_two_phase_mesh(2, 2, inclusion_center=(0.25, 0.25), inclusion_radius=0.3)
    mats = default_materials()
    batches = build_batches(mesh, mats)
    pattern = precompute_sparsity(batches, mesh.n_dof)
    u = _benchmark_state(mesh, 0.02, seed)
    K = assemble_jacobian(batches, u, pattern).to_dense()
    fd = np.empty_like(K)
    for j in range(mesh.n_dof):
        e = np.zeros(mesh.n_dof)
        e[j] = h
        fd[:, j] = (assemble_residual(batches, u + e) - assemble_residual(batches, u - e)) / (2 * h)
    err = np.abs(K - fd).max() / np.abs(fd).max()
    return CheckResult("AD vs finite differences", bool(err <= tol), err, f"<= {tol:g}")


@_timed
def check_dense_assembly(max_cells=3, seed=1, tol=1e-13, mutate=None):
    """Deduplicated COO expanded to dense vs brute-force dense assembly, all meshes up to ``max_cells``.

    ``mutate`` (optional) is applied to each assembled :class:`CooTriplets`
    before the comparison; used to confirm the check can fail.
    """
    mats = default_materials()
    worst = 0.0
    for nx in range(1, max_cells + 1):
        for ny in range(1, max_cells + 1):
            mesh = generate_two_phase_mesh(nx, ny, inclusion_center=(0.0, 0.0), inclusion_radius=0.6)
            batches = build_batches(mesh, mats)
            pattern = precompute_sparsity(batches, mesh.n_dof)
            u = _benchmark_state(mesh, 0.01, seed + 10 * nx + ny)
            coo = assemble_jacobian(batches, u, pattern)
            if mutate is not None:
                mutate(coo)
            diff = np.abs(coo.to_dense() - dense_assembly(mesh, mats, u)).max()
            worst = max(worst, diff)
    return CheckResult("dense assembly oracle", bool(worst <= tol), worst, f"<= {tol:g} (inf-norm)")


@_timed
def check_operator_equivalence(n_cells=16, n_vectors=20, seed=2, tol=1e-12):
    """Matrix-free apply vs explicit CSR spmv on random vectors, two-phase benchmark mesh."""
    mesh = generate_two_phase_mesh(n_cells, n_cells, inclusion_radius=0.3)
    mats = default_materials()
    bcs = benchmark_bcs(mesh, 0.01)
    batches = build_batches(mesh, mats)
    pattern = precompute_sparsity(batches, mesh.n_dof)
    u = np.zeros(mesh.n_dof)
    u[bcs.dofs()] = bcs.values()
    R = assemble_residual(batches, u)
    K, _ = apply_dirichlet(assemble_jacobian(batches, u, pattern), R, bcs, u)
    channel = HandoffChannel()
    buf = channel.handoff(K)
    try:
        exp = explicit_operator(buf, pattern)
        mf = matrix_free_operator(batches, u, bcs, mesh.n_dof)
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(n_vectors):
            v = rng.standard_normal(mesh.n_dof)
            ye = exp.matvec(v)
            ym = mf.matvec(v)
            worst = max(worst, np.abs(ye - ym).max() / np.abs(ye).max())
    finally:
        channel.release(buf)
    return CheckResult("operator equivalence", bool(worst <= tol), worst, f"<= {tol:g} (rel inf-norm)")


def distorted_patch_mesh():
    """2x2 patch on the unit square with every non-corner node moved off the grid."""
    nodes = np.array(
        [
            [0.0, 0.0], [0.4, 0.0], [1.0, 0.0],
            [0.0, 0.6], [0.55, 0.42], [1.0, 0.45],
            [0.0, 1.0], [0.62, 1.0], [1.0, 1.0],
        ]
    )
    elements = np.array([[0, 1, 4, 3], [1, 2, 5, 4], [3, 4, 7, 6], [4, 5, 8, 7]])
    return Mesh(nodes, elements, np.zeros(4, dtype=np.int64), nx=2, ny=2, lx=1.0, ly=1.0)


@_timed
def check_patch_test(tol=1e-12):
    """A uniform strain field prescribed on the boundary is reproduced at the interior node."""
    mesh = distorted_patch_mesh()
    grad = np.array([[0.3, 0.2], [-0.1, 0.25]])
    shift = np.array([0.05, -0.02])

    def exact(x, y):
        return grad @ np.array([x, y]) + shift

    bcs = boundary_dirichlet(mesh, exact)
    cfg = NewtonConfig(linear=SolverConfig(Method.DIRECT_CHOL, rtol=1e-12))
    u, rep = solve_bvp(mesh, {0: LINEAR}, bcs, cfg)
    ref = np.concatenate([exact(*p) for p in mesh.nodes])
    err = np.abs(u - ref).max()
    ok = rep.converged and err <= tol
    return CheckResult("patch test", bool(ok), err, f"<= {tol:g} (inf-norm)")


def _mms_exact(x, y):
    return np.array([np.exp(x) * np.sin(y), np.exp(x) * np.cos(y)])


def l2_error(mesh, u, exact, order=3):
    """L2 norm of ``u_h - exact`` by element-wise Gauss quadrature."""
    pts, wts = gauss_rule(order)
    total = 0.0
    for conn in mesh.elements:
        X = mesh.nodes[conn]
        U = u[np.ravel([[2 * a, 2 * a + 1] for a in conn])].reshape(4, 2)
        for (xi, eta), w in zip(pts, wts):
            N, dN = shape_quad4(xi, eta)
            J = X.T @ dN
            x = N @ X
            diff = N @ U - exact(*x)
            total += w * np.linalg.det(J) * (diff @ diff)
    return np.sqrt(total)


@_timed
def check_manufactured_convergence(base=16, levels=3, expected=2.0, band=0.1):
    """L2 convergence slope for a body-force-free analytic elasticity field.

    ``u = grad(exp(x) sin(y))`` is harmonic and divergence free, so it solves
    homogeneous isotropic elasticity exactly; it is imposed on the whole
    boundary of single-phase linear-elastic meshes.
    """
    cfg = NewtonConfig(linear=SolverConfig(Method.DIRECT_CHOL, rtol=1e-10))
    hs, errs = [], []
    for mesh in refine_series((base, base), levels):
        bcs = boundary_dirichlet(mesh, _mms_exact)
        u, rep = solve_bvp(mesh, {0: LINEAR}, bcs, cfg)
        if not rep.converged:
            return CheckResult("manufactured convergence", False, np.nan, f"{expected} +/- {band}",
                               detail=rep.message)
        hs.append(mesh.lx / mesh.nx)
        errs.append(l2_error(mesh, u, _mms_exact))
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    ok = abs(slope - expected) <= band
    return CheckResult("manufactured convergence", bool(ok), slope, f"{expected} +/- {band} (slope)",
                       detail="errors " + " ".join(f"{e:.3e}" for e in errs))


DEFAULT_CHECKS = (
    check_ad_vs_fd,
    check_dense_assembly,
    check_operator_equivalence,
    check_patch_test,
    check_manufactured_convergence,
)


def run_all(parallel=False, checks=DEFAULT_CHECKS):
    if parallel:
        with ThreadPoolExecutor() as pool:
            return list(pool.map(lambda c: c(), checks))
    return [c() for c in checks]
