import numpy as np
import pytest
from hypothesis import settings

from batchfem import benchmark_bcs, default_materials, generate_two_phase_mesh
from batchfem.assembly import (
    apply_dirichlet,
    assemble_jacobian,
    assemble_residual,
    build_batches,
    precompute_sparsity,
)

ACCEPTANCE_LINES = []

settings.register_profile("repo", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("repo")


def eliminated_system(n, radius=0.3, strain=0.01, materials=None):
    """Benchmark tangent at the undeformed state, Dirichlet-eliminated: ``(mesh, K_coo, b)``."""
    mesh = generate_two_phase_mesh(n, n, inclusion_radius=radius)
    mats = materials or default_materials()
    bcs = benchmark_bcs(mesh, strain)
    batches = build_batches(mesh, mats)
    pattern = precompute_sparsity(batches, mesh.n_dof)
    u0 = np.zeros(mesh.n_dof)
    K, r = apply_dirichlet(assemble_jacobian(batches, u0, pattern), assemble_residual(batches, u0), bcs, u0)
    return mesh, K, -r


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)
