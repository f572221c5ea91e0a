import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from batchfem import autodiff as ad
from batchfem.assembly import (
    AssemblyError,
    CooTriplets,
    apply_dirichlet,
    assemble_jacobian,
    assemble_residual,
    build_batches,
    coo_to_csr,
    dump_triplets,
    local_jacobians,
    precompute_sparsity,
    sort_and_deduplicate,
)
from batchfem.element import ElementState, Material, Model, default_materials, element_residual
from batchfem.krylov import spmv
from batchfem.mesh import DirichletSpec, benchmark_bcs, generate_two_phase_mesh
from batchfem.verify import dense_assembly

LIN = Material(Model.LINEAR, 1.0, 0.3)


def _setup(nx, ny, mats=None, radius=0.0):
    mesh = generate_two_phase_mesh(nx, ny, inclusion_radius=radius)
    mats = mats or {0: LIN, 1: Material(Model.LINEAR, 10.0, 0.3)}
    batches = build_batches(mesh, mats)
    return mesh, batches, precompute_sparsity(batches, mesh.n_dof)


def test_batches_examples():
    mesh, batches, _ = _setup(4, 4)
    assert len(batches) == 1 and batches[0].size == 16
    mesh = generate_two_phase_mesh(10, 10, inclusion_radius=0.3)
    batches = build_batches(mesh, default_materials())
    assert len(batches) == 2 and sum(b.size for b in batches) == 100
    for b in batches:
        assert np.all(np.diff(b.element_ids) > 0)
        assert np.array_equal(b.dof_map[:, 0::2], 2 * b.connectivity)
        assert np.array_equal(b.dof_map[:, 1::2], 2 * b.connectivity + 1)


def test_identical_materials_share_a_batch_and_cover_all_elements():
    mesh = generate_two_phase_mesh(6, 6, inclusion_radius=0.3)
    batches = build_batches(mesh, {0: LIN, 1: LIN})
    assert len(batches) == 1
    ids = np.sort(np.concatenate([b.element_ids for b in batches]))
    assert np.array_equal(ids, np.arange(mesh.n_elements))
    with pytest.raises(KeyError):
        build_batches(mesh, {0: LIN})


def test_sparsity_examples():
    _, _, p1 = _setup(1, 1)
    assert p1.nnz == 64
    _, _, p2 = _setup(2, 1)
    assert p2.nnz == 2 * 64 - 16
    _, _, p = _setup(3, 2)
    pairs = set(zip(p.rows.tolist(), p.cols.tolist()))
    assert all((j, i) in pairs for i, j in pairs)
    order = np.lexsort((p.cols, p.rows))
    assert np.array_equal(order, np.arange(p.nnz))


def test_residual_examples():
    mesh, batches, _ = _setup(3, 3, default_materials(), radius=0.4)
    assert np.array_equal(assemble_residual(batches, np.zeros(mesh.n_dof)), np.zeros(mesh.n_dof))
    shift = np.tile([0.2, -0.1], mesh.n_nodes)
    assert np.abs(assemble_residual(batches, shift)).max() <= 1e-12


def test_residual_matches_naive_scatter(rng):
    mats = default_materials()
    mesh, batches, _ = _setup(2, 2, mats, radius=0.4)
    u = 0.02 * rng.standard_normal(mesh.n_dof)
    R = np.zeros(mesh.n_dof)
    for e, conn in enumerate(mesh.elements):
        dofs = np.ravel([[2 * a, 2 * a + 1] for a in conn])
        R[dofs] += element_residual(ElementState(mesh.nodes[conn], u[dofs], mats[int(mesh.material_of[e])]))
    assert np.abs(assemble_residual(batches, u) - R).max() <= 1e-15


def test_jacobian_single_element_and_shared_edge(rng):
    mesh, batches, pattern = _setup(1, 1)
    u = 0.01 * rng.standard_normal(8)
    coo = assemble_jacobian(batches, u, pattern)
    dm = batches[0].dof_map[0]
    Ke = ad.jacobian_forward(batches[0].kernel(), u[dm])
    expected = np.zeros((8, 8))
    expected[np.ix_(dm, dm)] = Ke
    assert np.array_equal(coo.to_dense(), expected)

    mesh, batches, pattern = _setup(2, 1)
    u = 0.01 * rng.standard_normal(mesh.n_dof)
    K = assemble_jacobian(batches, u, pattern).to_dense()
    assert np.abs(K - dense_assembly(mesh, {0: LIN}, u)).max() <= 1e-15
    blocks = local_jacobians(batches[0], u)
    shared = np.intersect1d(batches[0].dof_map[0], batches[0].dof_map[1])
    assert shared.size == 4
    la = [list(batches[0].dof_map[0]).index(d) for d in shared]
    lb = [list(batches[0].dof_map[1]).index(d) for d in shared]
    expect = blocks[0][np.ix_(la, la)] + blocks[1][np.ix_(lb, lb)]
    assert np.allclose(K[np.ix_(shared, shared)], expect, rtol=1e-15, atol=0)


def test_linear_jacobian_symmetric_and_pattern_stable(rng):
    mesh, batches, pattern = _setup(4, 3, radius=0.3)
    K1 = assemble_jacobian(batches, np.zeros(mesh.n_dof), pattern)
    assert np.abs(K1.to_dense() - K1.to_dense().T).max() <= 1e-12 * np.abs(K1.values).max()
    svk = build_batches(mesh, default_materials())
    a = assemble_jacobian(svk, 0.01 * rng.standard_normal(mesh.n_dof), pattern)
    b = assemble_jacobian(svk, 0.01 * rng.standard_normal(mesh.n_dof), pattern)
    assert np.array_equal(a.rows, b.rows) and np.array_equal(a.cols, b.cols)


def test_assembly_deterministic(rng):
    mesh, batches, pattern = _setup(5, 5, default_materials(), radius=0.3)
    u = 0.01 * rng.standard_normal(mesh.n_dof)
    a, b = assemble_jacobian(batches, u, pattern), assemble_jacobian(batches, u, pattern)
    assert a.values.tobytes() == b.values.tobytes()
    assert assemble_residual(batches, u).tobytes() == assemble_residual(batches, u).tobytes()


def test_pattern_mismatch_is_fatal():
    _, batches, _ = _setup(2, 2)
    _, _, other = _setup(2, 1)
    with pytest.raises(AssemblyError):
        assemble_jacobian(batches, np.zeros(18), other)


def test_sort_and_deduplicate_examples():
    v, r, c = sort_and_deduplicate([1.0, 2.0, 3.0], [0, 0, 1], [0, 1, 1])
    assert np.array_equal(v, [1.0, 2.0, 3.0]) and np.array_equal(r, [0, 0, 1]) and np.array_equal(c, [0, 1, 1])
    v, r, c = sort_and_deduplicate([1.0, 2.0], [0, 0], [0, 0])
    assert np.array_equal(v, [3.0]) and r.tolist() == [0] and c.tolist() == [0]


def test_sort_and_deduplicate_random_vs_dense(rng):
    rows, cols = rng.integers(0, 20, 1000), rng.integers(0, 20, 1000)
    vals = rng.standard_normal(1000)
    D = np.zeros((20, 20))
    for i, j, x in zip(rows, cols, vals):
        D[i, j] += x
    v, r, c = sort_and_deduplicate(vals, rows, cols)
    assert np.all((np.diff(r) > 0) | ((np.diff(r) == 0) & (np.diff(c) > 0)))
    assert np.allclose(v, D[r, c], rtol=1e-14, atol=1e-14)
    occupied = np.zeros((20, 20), dtype=bool)
    occupied[rows, cols] = True
    assert len(v) == occupied.sum()


@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4), st.floats(-1e3, 1e3)), min_size=1, max_size=60))
def test_dedup_sums_in_input_order(triplets):
    rows, cols, vals = map(np.array, zip(*triplets))
    v, r, c = sort_and_deduplicate(vals, rows, cols)
    for value, i, j in zip(v, r, c):
        acc = 0.0
        for a, b, x in triplets:
            if (a, b) == (i, j):
                acc += x
        assert value == acc  # bitwise: same order of additions


def test_coo_to_csr_examples(rng):
    eye = CooTriplets(np.array([0, 1]), np.array([0, 1]), np.ones(2), (2, 2))
    assert coo_to_csr(eye).row_ptr.tolist() == [0, 1, 2]
    gap = CooTriplets(np.array([0, 2]), np.array([1, 0]), np.array([5.0, 6.0]), (3, 3))
    csr = coo_to_csr(gap)
    assert csr.row_ptr.tolist() == [0, 1, 1, 2]
    assert csr.values is gap.values
    with pytest.raises(ValueError):
        coo_to_csr(CooTriplets(np.array([1, 0]), np.array([0, 0]), np.ones(2), (2, 2)))
    A = np.where(rng.random((50, 50)) < 0.1, rng.standard_normal((50, 50)), 0.0)
    r, c = np.nonzero(A)
    csr = coo_to_csr(CooTriplets(r, c, A[r, c], A.shape))
    x = rng.standard_normal(50)
    assert np.allclose(spmv(csr, x), A @ x, rtol=1e-13, atol=1e-13)


def test_dirichlet_examples(rng):
    mesh, batches, pattern = _setup(1, 1)
    u = rng.standard_normal(8)
    coo = assemble_jacobian(batches, u, pattern)
    R = assemble_residual(batches, u)
    same, r = apply_dirichlet(coo, R, DirichletSpec(), u)
    assert np.array_equal(same.values, coo.values) and np.array_equal(r, R)

    g = rng.standard_normal(8)
    full = DirichletSpec(tuple((n, c, g[2 * n + c]) for n in range(4) for c in range(2)))
    K, r = apply_dirichlet(coo, R, full, u)
    assert np.array_equal(K.to_dense(), np.eye(8))
    assert np.allclose(r, u - g, rtol=0, atol=1e-15)
    with pytest.raises(IndexError):
        apply_dirichlet(coo, R, DirichletSpec(((9, 0, 0.0),)), u)


def test_dirichlet_symmetric_spd_on_benchmark():
    mesh, batches, pattern = _setup(6, 6)
    bcs = benchmark_bcs(mesh, 0.01)
    u = np.zeros(mesh.n_dof)
    assert mesh.n_dof <= 200 - 102  # desk-scale eigenvalue check
    K, _ = apply_dirichlet(assemble_jacobian(batches, u, pattern), assemble_residual(batches, u), bcs, u)
    D = K.to_dense()
    assert np.abs(D - D.T).max() <= 1e-14 * np.abs(D).max()
    assert np.linalg.eigvalsh(D).min() > 0


def test_dirichlet_lift_solves_constrained_problem(rng):
    # the eliminated Newton step from any u lands on the prescribed values
    mesh, batches, pattern = _setup(3, 3)
    bcs = benchmark_bcs(mesh, 0.02)
    u = 0.01 * rng.standard_normal(mesh.n_dof)
    K, r = apply_dirichlet(assemble_jacobian(batches, u, pattern), assemble_residual(batches, u), bcs, u)
    u_new = u + np.linalg.solve(K.to_dense(), -r)
    assert np.allclose(u_new[bcs.dofs()], bcs.values(), atol=1e-14)
    free = np.setdiff1d(np.arange(mesh.n_dof), bcs.dofs())
    assert np.abs(assemble_residual(batches, u_new)[free]).max() <= 1e-12


def test_dump_triplets():
    coo = CooTriplets(np.array([0, 1]), np.array([1, 0]), np.array([0.1, 1 / 3]), (2, 2))
    fh = io.StringIO()
    dump_triplets(coo, fh)
    lines = fh.getvalue().splitlines()
    assert lines[0] == "0 1 0.10000000000000001"
    assert float(lines[1].split()[2]) == 1 / 3
