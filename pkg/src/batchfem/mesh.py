"""Structured two-phase quadrilateral meshes and Dirichlet data."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Mesh",
    "DirichletSpec",
    "generate_two_phase_mesh",
    "benchmark_bcs",
    "refine_series",
    "boundary_dirichlet",
    "format_mesh",
]

MATRIX, INCLUSION = 0, 1
X, Y = 0, 1


def _signed_areas(nodes, elements):
    xy = nodes[elements]  # (E, 4, 2)
    x, y = xy[..., 0], xy[..., 1]
    return 0.5 * np.sum(x * np.roll(y, -1, axis=1) - np.roll(x, -1, axis=1) * y, axis=1)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Bilinear quadrilateral mesh.

    ``elements`` lists four node indices per element in counter-clockwise order;
    ``material_of`` holds one phase label per element (0 matrix, 1 inclusion).
    ``nx, ny, lx, ly`` are set for structured grids and ``None`` otherwise.
    """

    nodes: np.ndarray
    elements: np.ndarray
    material_of: np.ndarray
    nx: int | None = None
    ny: int | None = None
    lx: float | None = None
    ly: float | None = None
    inclusion_center: tuple | None = None
    inclusion_radius: float = 0.0

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=np.float64)
        elements = np.asarray(self.elements, dtype=np.int64)
        material_of = np.asarray(self.material_of, dtype=np.int64)
        if nodes.ndim != 2 or nodes.shape[1] != 2:
            raise ValueError("nodes must have shape (n_nodes, 2)")
        if elements.ndim != 2 or elements.shape[1] != 4:
            raise ValueError("elements must have shape (n_elements, 4)")
        if material_of.shape != (elements.shape[0],):
            raise ValueError("material_of needs one phase label per element")
        if elements.size and (elements.min() < 0 or elements.max() >= nodes.shape[0]):
            raise ValueError("element references a node index out of range")
        if np.any(_signed_areas(nodes, elements) <= 0.0):
            raise ValueError("element vertices must be counter-clockwise with positive area")
        for name, arr in (("nodes", nodes), ("elements", elements), ("material_of", material_of)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_elements(self):
        return self.elements.shape[0]

    @property
    def n_dof(self):
        return 2 * self.nodes.shape[0]

    def node_index(self, i, j):
        """Node at column ``i``, row ``j`` of a structured grid."""
        if self.nx is None:
            raise ValueError("node_index is only defined for structured meshes")
        return i + j * (self.nx + 1)

    def element_areas(self):
        return _signed_areas(self.nodes, self.elements)


@dataclass(frozen=True)
class DirichletSpec:
    """Prescribed displacement components as ``(node, component, value)`` triples."""

    constraints: tuple = field(default_factory=tuple)

    def __post_init__(self):
        cons = tuple((int(n), int(c), float(v)) for n, c, v in self.constraints)
        seen = set()
        for n, c, _ in cons:
            if c not in (X, Y):
                raise ValueError(f"component must be 0 (x) or 1 (y), got {c}")
            if n < 0:
                raise ValueError(f"negative node index {n}")
            if (n, c) in seen:
                raise ValueError(f"duplicate constraint on node {n}, component {c}")
            seen.add((n, c))
        object.__setattr__(self, "constraints", cons)

    def __len__(self):
        return len(self.constraints)

    def dofs(self):
        return np.array([2 * n + c for n, c, _ in self.constraints], dtype=np.int64)

    def values(self):
        return np.array([v for _, _, v in self.constraints], dtype=np.float64)

    def check(self, mesh):
        for n, _, _ in self.constraints:
            if n >= mesh.n_nodes:
                raise ValueError(f"constrained node {n} not in mesh ({mesh.n_nodes} nodes)")

    def scaled(self, factor):
        return DirichletSpec(tuple((n, c, v * factor) for n, c, v in self.constraints))


def generate_two_phase_mesh(nx, ny, lx=1.0, ly=1.0, inclusion_center=None, inclusion_radius=0.0):
    """Structured ``nx`` by ``ny`` grid on ``[0, lx] x [0, ly]`` with a circular inclusion.

    An element belongs to the inclusion (phase 1) iff its centroid lies strictly
    inside the circle. Nodes are numbered row-major, bottom row first.
    """
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ValueError(f"cell counts must be positive integers, got ({nx}, {ny})")
    if not (lx > 0 and ly > 0):
        raise ValueError(f"domain lengths must be positive, got ({lx}, {ly})")
    if inclusion_radius < 0:
        raise ValueError("inclusion radius must be non-negative")
    nx, ny = int(nx), int(ny)
    if inclusion_center is None:
        inclusion_center = (0.5 * lx, 0.5 * ly)

    xs = np.linspace(0.0, lx, nx + 1)
    ys = np.linspace(0.0, ly, ny + 1)
    gx, gy = np.meshgrid(xs, ys)
    nodes = np.column_stack([gx.ravel(), gy.ravel()])

    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    n0 = (i + j * (nx + 1)).ravel()
    elements = np.column_stack([n0, n0 + 1, n0 + nx + 2, n0 + nx + 1])

    centroids = nodes[elements].mean(axis=1)
    dist = np.hypot(centroids[:, 0] - inclusion_center[0], centroids[:, 1] - inclusion_center[1])
    material_of = (dist < inclusion_radius).astype(np.int64)

    return Mesh(
        nodes,
        elements,
        material_of,
        nx=nx,
        ny=ny,
        lx=float(lx),
        ly=float(ly),
        inclusion_center=tuple(map(float, inclusion_center)),
        inclusion_radius=float(inclusion_radius),
    )


def benchmark_bcs(mesh, applied_strain):
    """Uniaxial extension in x.

    Left edge fixed in x, bottom-left node fixed in y, right edge displaced by
    ``applied_strain * lx``.
    """
    if mesh.nx is None:
        raise ValueError("benchmark boundary conditions need a structured mesh")
    nx, ny = mesh.nx, mesh.ny
    ux = applied_strain * mesh.lx
    cons = []
    for j in range(ny + 1):
        cons.append((mesh.node_index(0, j), X, 0.0))
    cons.append((mesh.node_index(0, 0), Y, 0.0))
    for j in range(ny + 1):
        cons.append((mesh.node_index(nx, j), X, ux))
    return DirichletSpec(tuple(cons))


def refine_series(base, levels, lx=1.0, ly=1.0, inclusion_center=None, inclusion_radius=0.0):
    """Meshes with ``(nx * 2**k, ny * 2**k)`` cells for ``k = 0 .. levels-1``."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    nx, ny = base
    return [
        generate_two_phase_mesh(nx * 2**k, ny * 2**k, lx, ly, inclusion_center, inclusion_radius)
        for k in range(levels)
    ]


def boundary_dirichlet(mesh, displacement):
    """Constrain both components of every structured-boundary node to ``displacement(x, y)``."""
    if mesh.nx is None:
        raise ValueError("boundary_dirichlet needs a structured mesh")
    nx, ny = mesh.nx, mesh.ny
    ids = set()
    for i in range(nx + 1):
        ids.add(mesh.node_index(i, 0))
        ids.add(mesh.node_index(i, ny))
    for j in range(ny + 1):
        ids.add(mesh.node_index(0, j))
        ids.add(mesh.node_index(nx, j))
    cons = []
    for n in sorted(ids):
        ux, uy = displacement(*mesh.nodes[n])
        cons.append((n, X, ux))
        cons.append((n, Y, uy))
    return DirichletSpec(tuple(cons))


def format_mesh(mesh):
    """Plain-text listing for debugging (not a stable format)."""
    lines = [f"node {i} {x:.17g} {y:.17g}" for i, (x, y) in enumerate(mesh.nodes)]
    lines += [
        f"elem {e} {a} {b} {c} {d} {p}"
        for e, ((a, b, c, d), p) in enumerate(zip(mesh.elements, mesh.material_of))
    ]
    return "\n".join(lines) + "\n"
