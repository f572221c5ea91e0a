"""Bilinear quadrilateral element with plane-strain constitutive models.

The residual kernel is written against the primitive set of
:mod:`batchfem.autodiff`, so the same function yields residuals (plain
arrays), element stiffness (identity-seeded duals) and Jacobian-vector
products (single-column duals). Every array may carry leading batch axes.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad

__all__ = [
    "Model",
    "Material",
    "ElementState",
    "InvertedElementError",
    "gauss_rule",
    "shape_quad4",
    "element_geometry",
    "gradient_operator",
    "stress_linear",
    "stress_svk",
    "residual_kernel",
    "element_residual",
    "element_stiffness",
    "default_materials",
]

# counter-clockwise reference corners
CORNERS = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])
_I2 = np.eye(2)


class InvertedElementError(ValueError):
    """Non-positive Jacobian determinant (reference map or deformation gradient)."""


class Model(str, enum.Enum):
    LINEAR = "linear_elastic_plane_strain"
    SVK = "st_venant_kirchhoff"


@dataclass(frozen=True)
class Material:
    model: Model
    E: float
    nu: float

    def __post_init__(self):
        object.__setattr__(self, "model", Model(self.model))
        if not self.E > 0:
            raise ValueError(f"Young's modulus must be positive, got {self.E}")
        if not -1.0 < self.nu < 0.5:
            raise ValueError(f"Poisson ratio must lie in (-1, 0.5), got {self.nu}")

    @property
    def lam(self):
        return self.E * self.nu / ((1 + self.nu) * (1 - 2 * self.nu))

    @property
    def mu(self):
        return self.E / (2 * (1 + self.nu))


def default_materials(contrast=10.0, E_matrix=1.0, nu=0.3):
    """Phase 0: SVK matrix; phase 1: linear-elastic inclusion ``contrast`` times stiffer."""
    return {
        0: Material(Model.SVK, E_matrix, nu),
        1: Material(Model.LINEAR, contrast * E_matrix, nu),
    }


@lru_cache(maxsize=None)
def gauss_rule(order=2):
    """Tensor-product Gauss-Legendre points ``(Q, 2)`` and weights ``(Q,)`` on [-1, 1]^2."""
    x, w = np.polynomial.legendre.leggauss(order)
    xi, eta = np.meshgrid(x, x, indexing="ij")
    wts = np.outer(w, w)
    pts = np.column_stack([xi.ravel(), eta.ravel()])
    pts.setflags(write=False)
    wts = wts.ravel()
    wts.setflags(write=False)
    return pts, wts


def shape_quad4(xi, eta):
    """Bilinear shape functions and their reference gradients at ``(xi, eta)``.

    Returns
    -------
    N : (4,) array
    dN : (4, 2) array, columns are d/dxi and d/deta
    """
    sx, sy = CORNERS[:, 0], CORNERS[:, 1]
    N = 0.25 * (1 + xi * sx) * (1 + eta * sy)
    dN = np.column_stack([0.25 * sx * (1 + eta * sy), 0.25 * sy * (1 + xi * sx)])
    return N, dN


def element_geometry(coords, order=2):
    """Physical shape-function gradients and integration weights.

    ``coords`` has shape ``(..., 4, 2)``. Returns ``dNdx`` of shape
    ``(..., Q, 4, 2)`` and ``wdet`` (weight times det J) of shape ``(..., Q)``.
    """
    coords = np.asarray(coords, dtype=np.float64)
    pts, wts = gauss_rule(order)
    dN_ref = np.stack([shape_quad4(xi, eta)[1] for xi, eta in pts])  # (Q, 4, 2)
    J = np.einsum("...ai,qaj->...qij", coords, dN_ref)
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    if np.any(det <= 0.0):
        raise InvertedElementError("reference map has non-positive Jacobian determinant")
    Jinv = np.linalg.inv(J)
    dNdx = np.einsum("qaj,...qji->...qai", dN_ref, Jinv)
    return dNdx, det * wts


def _voigt_matrix(material):
    E, nu = material.E, material.nu
    c = E / ((1 + nu) * (1 - 2 * nu))
    return c * np.array([[1 - nu, nu, 0.0], [nu, 1 - nu, 0.0], [0.0, 0.0, (1 - 2 * nu) / 2]])


def stress_linear(strain, material):
    """Plane-strain Voigt stress ``[sxx, syy, sxy]`` from ``[exx, eyy, gxy]``."""
    if material.model is not Model.LINEAR:
        raise ValueError("stress_linear needs a linear-elastic material")
    return np.asarray(strain, dtype=np.float64) @ _voigt_matrix(material).T


def _det2(F):
    return F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]


def _trace2(A):
    return A[..., 0, 0] + A[..., 1, 1]


def _svk(F, lam, mu):
    if np.any(ad.value_of(_det2(F)) <= 0.0):
        raise InvertedElementError("deformation gradient with det F <= 0")
    C = ad.matmul(F.swapaxes(-1, -2), F)
    E_green = 0.5 * (C - _I2)
    S = lam * _trace2(E_green)[..., None, None] * _I2 + 2.0 * mu * E_green
    return S, E_green


def stress_svk(F, material):
    """Second Piola-Kirchhoff stress and Green-Lagrange strain for a SVK material."""
    if material.model is not Model.SVK:
        raise ValueError("stress_svk needs a St Venant-Kirchhoff material")
    if not isinstance(F, ad.DualVector):
        F = np.asarray(F, dtype=np.float64)
    return _svk(F, material.lam, material.mu)


def gradient_operator(dNdx):
    """Matrices ``G`` with ``vec(grad u) = G @ u_e`` per quadrature point.

    ``dNdx`` has shape ``(..., Q, 4, 2)``; ``G`` has shape ``(..., Q, 4, 8)``
    with rows ordered ``H00, H01, H10, H11`` and ``u_e`` x/y interleaved.
    """
    dNdx = np.asarray(dNdx)
    G = np.zeros(dNdx.shape[:-2] + (4, 8))
    for i in range(2):
        for j in range(2):
            G[..., 2 * i + j, i::2] = dNdx[..., :, j]
    return G


def residual_kernel(u_e, grad_op, wdet, material):
    """Internal nodal force vector for one element or a batch of elements.

    ``u_e`` has shape ``(..., 8)`` (x/y interleaved per node) and may be a
    :class:`~batchfem.autodiff.DualVector`; ``grad_op`` comes from
    :func:`gradient_operator` and ``wdet`` from :func:`element_geometry`.
    """
    G = grad_op
    h = ad.matvec(G, u_e[..., None, :])  # (..., Q, 4)
    H = h.reshape(h.shape[:-1] + (2, 2))
    lam, mu = material.lam, material.mu
    if material.model is Model.LINEAR:
        eps = 0.5 * (H + H.swapaxes(-1, -2))
        P = lam * _trace2(eps)[..., None, None] * _I2 + 2.0 * mu * eps
    else:
        F = H + _I2
        S, _ = _svk(F, lam, mu)
        P = ad.matmul(F, S)
    p = P.reshape(P.shape[:-2] + (4,))
    r_q = ad.matvec(G.swapaxes(-1, -2), p)  # (..., Q, 8)
    return (r_q * wdet[..., None]).sum(axis=-2)


@dataclass(frozen=True, eq=False)
class ElementState:
    coords: np.ndarray
    u_e: np.ndarray
    material: Material

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        u_e = np.asarray(self.u_e, dtype=np.float64)
        if coords.shape != (4, 2) or u_e.shape != (8,):
            raise ValueError("ElementState needs 4x2 coords and an 8-vector of displacements")
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "u_e", u_e)

    def kernel(self, order=2):
        """Closure ``u_e -> r_e`` with the geometry of this element frozen in."""
        dNdx, wdet = element_geometry(self.coords, order)
        G = gradient_operator(dNdx)
        material = self.material
        return lambda u: residual_kernel(u, G, wdet, material)


def element_residual(state, order=2):
    return np.asarray(state.kernel(order)(state.u_e))


def element_stiffness(state, order=2):
    return ad.jacobian_forward(state.kernel(order), state.u_e)
