import numpy as np
import pytest
import sympy as sp
from hypothesis import given
from hypothesis import strategies as st

from batchfem.element import (
    ElementState,
    InvertedElementError,
    Material,
    Model,
    default_materials,
    element_residual,
    element_stiffness,
    shape_quad4,
    stress_linear,
    stress_svk,
)

UNIT = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
PARALLELOGRAM = np.array([[0.0, 0.0], [2.0, 0.3], [2.5, 1.3], [0.5, 1.0]])
DISTORTED = np.array([[0.0, 0.0], [1.2, -0.1], [1.0, 1.1], [-0.2, 0.8]])


def test_material_validation_and_lame():
    m = Material(Model.LINEAR, 2.0, 0.25)
    assert m.lam == pytest.approx(2.0 * 0.25 / (1.25 * 0.5))
    assert m.mu == pytest.approx(2.0 / 2.5)
    for E, nu in ((0.0, 0.3), (1.0, 0.5), (1.0, -1.0)):
        with pytest.raises(ValueError):
            Material(Model.SVK, E, nu)
    mats = default_materials()
    assert mats[1].E / mats[0].E == 10 and mats[0].model is Model.SVK


def test_shape_functions_examples():
    N, _ = shape_quad4(-1.0, -1.0)
    assert np.array_equal(N, [1.0, 0.0, 0.0, 0.0])
    N, _ = shape_quad4(0.0, 0.0)
    assert np.array_equal(N, [0.25] * 4)


@given(st.floats(-1, 1), st.floats(-1, 1))
def test_partition_of_unity(xi, eta):
    N, dN = shape_quad4(xi, eta)
    assert abs(N.sum() - 1.0) <= 1e-15
    assert np.abs(dN.sum(axis=0)).max() <= 1e-15


def test_stress_linear_examples():
    assert np.array_equal(stress_linear(np.zeros(3), Material(Model.LINEAR, 1.0, 0.3)), np.zeros(3))
    assert np.allclose(stress_linear([1.0, 0.0, 0.0], Material(Model.LINEAR, 1.0, 0.0)), [1.0, 0.0, 0.0])
    E, nu = 2.5, 0.3
    c = E / ((1 + nu) * (1 - 2 * nu))
    expected = [c * (1 - nu) * 0.01, c * nu * 0.01, 0.0]
    assert np.allclose(stress_linear([0.01, 0.0, 0.0], Material(Model.LINEAR, E, nu)), expected, rtol=1e-15)
    with pytest.raises(ValueError):
        stress_linear(np.zeros(3), Material(Model.SVK, 1.0, 0.3))


def test_stress_svk_examples():
    mat = Material(Model.SVK, 3.0, 0.3)
    S, Eg = stress_svk(np.eye(2), mat)
    assert np.array_equal(S, np.zeros((2, 2)))
    th = 0.7
    R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    S, Eg = stress_svk(R, mat)
    assert np.abs(Eg).max() <= 1e-15 and np.abs(S).max() <= 1e-14
    with pytest.raises(InvertedElementError):
        stress_svk(np.diag([1.0, -1.0]), mat)


def test_stress_svk_small_strain_limit():
    mat = Material(Model.SVK, 3.0, 0.3)
    lin = Material(Model.LINEAR, 3.0, 0.3)
    errs = []
    for d in (1e-2, 1e-3, 1e-4):
        S, _ = stress_svk(np.diag([1 + d, 1.0]), mat)
        s_lin = stress_linear([d, 0.0, 0.0], lin)
        errs.append(np.abs([S[0, 0] - s_lin[0], S[1, 1] - s_lin[1], S[0, 1]]).max())
    rates = np.log10(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.9)


@pytest.mark.parametrize("model", list(Model))
def test_zero_and_rigid_translation(model):
    mat = Material(model, 1.0, 0.3)
    assert np.array_equal(element_residual(ElementState(DISTORTED, np.zeros(8), mat)), np.zeros(8))
    r = element_residual(ElementState(DISTORTED, np.tile([0.3, -0.2], 4), mat))
    assert np.abs(r).max() <= 1e-13


def _symbolic_unit_square_stiffness(E, nu):
    x, y = sp.symbols("x y")
    N = [(1 - x) * (1 - y), x * (1 - y), x * y, (1 - x) * y]
    B = sp.zeros(3, 8)
    for a, Na in enumerate(N):
        B[0, 2 * a] = sp.diff(Na, x)
        B[1, 2 * a + 1] = sp.diff(Na, y)
        B[2, 2 * a] = sp.diff(Na, y)
        B[2, 2 * a + 1] = sp.diff(Na, x)
    E, nu = sp.Rational(E), sp.Rational(nu)
    c = E / ((1 + nu) * (1 - 2 * nu))
    C = c * sp.Matrix([[1 - nu, nu, 0], [nu, 1 - nu, 0], [0, 0, (1 - 2 * nu) / 2]])
    K = (B.T * C * B).applyfunc(lambda f: sp.integrate(f, (x, 0, 1), (y, 0, 1)))
    return np.array(K.evalf(20), dtype=np.float64)


def test_unit_square_linear_matches_symbolic_stiffness():
    K_ref = _symbolic_unit_square_stiffness("5/2", "3/10")
    mat = Material(Model.LINEAR, 2.5, 0.3)
    grad = np.array([[0.01, 0.004], [-0.002, 0.007]])
    u = np.concatenate([grad @ X for X in UNIT])
    r = element_residual(ElementState(UNIT, u, mat))
    assert np.abs(r - K_ref @ u).max() <= 1e-14 * np.abs(K_ref @ u).max() + 1e-17
    K = element_stiffness(ElementState(UNIT, u, mat))
    assert np.abs(K - K_ref).max() <= 1e-14 * np.abs(K_ref).max()


@pytest.mark.parametrize("model", list(Model))
@given(seed=st.integers(0, 2**31 - 1))
def test_stiffness_symmetric(model, seed):
    u = 0.05 * np.random.default_rng(seed).standard_normal(8)
    K = element_stiffness(ElementState(DISTORTED, u, Material(model, 1.0, 0.3)))
    assert np.linalg.norm(K - K.T) <= 1e-12 * np.linalg.norm(K)


@given(st.floats(-5, 5).filter(lambda a: abs(a) > 1e-3), st.integers(0, 1000))
def test_linear_model_homogeneous(alpha, seed):
    u = np.random.default_rng(seed).standard_normal(8)
    mat = Material(Model.LINEAR, 1.0, 0.3)
    r1 = element_residual(ElementState(DISTORTED, alpha * u, mat))
    r2 = alpha * element_residual(ElementState(DISTORTED, u, mat))
    assert np.abs(r1 - r2).max() <= 1e-14 * np.abs(r2).max()


def test_quadrature_exact_on_parallelogram():
    u = np.random.default_rng(2).standard_normal(8)
    state = ElementState(PARALLELOGRAM, u, Material(Model.LINEAR, 1.0, 0.3))
    r2, r3 = element_residual(state, order=2), element_residual(state, order=3)
    assert np.abs(r2 - r3).max() <= 1e-13 * np.abs(r3).max()


@pytest.mark.parametrize("model", list(Model))
def test_three_rigid_body_modes(model):
    K = element_stiffness(ElementState(DISTORTED, np.zeros(8), Material(model, 1.0, 0.3)))
    ev = np.abs(np.linalg.eigvalsh(0.5 * (K + K.T)))
    small = ev <= 1e-10 * ev.max()
    assert small.sum() == 3


def test_inverted_element_rejected():
    with pytest.raises(InvertedElementError):
        ElementState(UNIT[[0, 3, 2, 1]], np.zeros(8), Material(Model.LINEAR, 1.0, 0.3)).kernel()
    crush = np.array([0.0, 0.0, -2.0, 0.0, -2.0, 0.0, 0.0, 0.0])
    with pytest.raises(InvertedElementError):
        element_residual(ElementState(UNIT, crush, Material(Model.SVK, 1.0, 0.3)))
