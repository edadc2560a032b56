import numpy as np
import pytest

from cgmres.horizon import ControlVector, assemble_F
from cgmres.model import OcpModel
from cgmres.oracle import (OracleSizeError, SingularMatrixError, build_dense_jacobian, dense_solve,
                           symmetry_defect, write_dense)

X0 = np.zeros(2)


class AffineModel(OcpModel):
    """F(U) = G U + c: one state that integrates the control, plus a terminal pin."""

    n_x, m_u, m_psi = 1, 1, 1

    def f(self, t, tau, x, u, p):
        return u

    def L(self, t, tau, x, u, p):
        return 0.5 * u[..., 0] ** 2

    def psi(self, x, p):
        return x - 1.0

    def H_x(self, t, tau, x, lam, u, mu, p):
        return np.zeros(np.shape(x))

    def H_u(self, t, tau, x, lam, u, mu, p):
        return u + lam

    def psi_x(self, x, p):
        return np.ones(np.shape(x)[:-1] + (1, 1))


def test_affine_model_exact_jacobian():
    m = AffineModel()
    N = 6
    d = m.dims(N)
    rng = np.random.default_rng(3)
    U = ControlVector(rng.normal(size=d.m), d)
    c = assemble_F(m, U.with_data(np.zeros(d.m)), np.zeros(1), 0.0)
    G = np.column_stack([assemble_F(m, U.with_data(e), np.zeros(1), 0.0) - c for e in np.eye(d.m)])
    A = build_dense_jacobian(m, U, np.zeros(1), 0.0, h=1e-6)
    np.testing.assert_allclose(A, G, atol=1e-6)


def test_column_count(operating_point):
    model, U = operating_point(5)
    A = build_dense_jacobian(model, U, X0, 0.0)
    assert A.shape == (18, 18)


def test_batched_columns_match_single(operating_point):
    model, U = operating_point(5)
    a = build_dense_jacobian(model, U, X0, 0.0, chunk=128)
    b = build_dense_jacobian(model, U, X0, 0.0, chunk=1)
    np.testing.assert_array_equal(a, b)


def test_size_guard(mintime):
    d = mintime.dims(700)
    with pytest.raises(OracleSizeError):
        build_dense_jacobian(mintime, ControlVector(np.zeros(d.m), d), X0, 0.0)


@pytest.mark.parametrize("N", [5, 10])
def test_benchmark_symmetry(operating_point, N):
    model, U = operating_point(N)
    A = build_dense_jacobian(model, U, X0, 0.0, h=1e-5, central=True)
    assert symmetry_defect(A) <= 1e-5


def test_forward_asymmetry_scales_with_h(operating_point):
    model, U = operating_point(10)
    d4 = symmetry_defect(build_dense_jacobian(model, U, X0, 0.0, h=1e-4))
    d5 = symmetry_defect(build_dense_jacobian(model, U, X0, 0.0, h=1e-5))
    assert 5 <= d4 / d5 <= 20


def test_forward_vs_central(operating_point):
    model, U = operating_point(10)
    h = 1e-5
    fwd = build_dense_jacobian(model, U, X0, 0.0, h=h)
    cen = build_dense_jacobian(model, U, X0, 0.0, h=h, central=True)
    # curvature scale of F is O(10) here
    assert np.max(np.abs(fwd - cen)) <= 10 * h * 10


def test_dense_solve_examples(rng):
    b = rng.normal(size=4)
    np.testing.assert_array_equal(dense_solve(np.eye(4), b), b)
    np.testing.assert_allclose(dense_solve(2 * np.eye(5), np.ones(5)), 0.5 * np.ones(5))
    A = rng.normal(size=(30, 30)) + 6 * np.eye(30)
    x = rng.normal(size=30)
    got = dense_solve(A, A @ x)
    assert np.linalg.norm(got - x) <= 1e-9 * np.linalg.norm(x)
    assert np.linalg.norm(A @ got - A @ x) <= 1e-9 * np.linalg.norm(A @ x)


def test_dense_solve_singular():
    A = np.array([[1.0, 2.0], [2.0, 4.0]])
    with pytest.raises(SingularMatrixError):
        dense_solve(A, np.ones(2))
    with pytest.raises(ValueError):
        dense_solve(np.ones((2, 3)), np.ones(2))


def test_symmetry_defect_examples():
    assert symmetry_defect(np.eye(3)) == 0.0
    assert symmetry_defect(np.array([[0.0, 1.0], [0.0, 0.0]])) == 1.0


def test_write_dense(tmp_path, rng):
    A = rng.normal(size=(4, 4))
    write_dense(A, tmp_path / "A.txt")
    np.testing.assert_array_equal(np.loadtxt(tmp_path / "A.txt"), A)
