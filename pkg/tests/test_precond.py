import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from cgmres.continuation import ForwardDifferenceOperator
from cgmres.horizon import ControlVector, compute_trajectory
from cgmres.model import ContractError, ProblemDims
from cgmres.oracle import build_dense_jacobian, dense_solve
from cgmres.precond import (FactorizationError, SingularBlockError, SparsePreconditioner, apply_inverse,
                            assemble_preconditioner, closed_form_block_inverse, factorize,
                            lu_batched, lu_solve_batched)

X0 = np.zeros(2)


def _assembled(model, U, t=0.0, x=X0):
    traj = compute_trajectory(model, U, x, t)
    return assemble_preconditioner(model, U, x, t, traj)


def _identity_M(N=4, m_u=2, m_c=1, l=3):
    d = ProblemDims(2, m_u, m_c, l - 1, 1, N)
    blocks = np.tile(np.eye(d.block), (N, 1, 1))
    border = np.zeros((d.m, l))
    border[d.m - l:] = np.eye(l)
    return SparsePreconditioner(d, blocks, border)


@settings(max_examples=30)
@given(st.integers(1, 20), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_lu_batched_matches_scipy(nb, s, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(nb, s, s)) + 3 * np.eye(s)
    b = rng.normal(size=(nb, s))
    LU, piv, _ = lu_batched(A)
    x = lu_solve_batched(LU, piv, b)
    for i in range(nb):
        np.testing.assert_allclose(x[i], sla.solve(A[i], b[i]), rtol=1e-10, atol=1e-12)


def test_identity_factors():
    M = _identity_M()
    F = factorize(M)
    r = np.random.default_rng(1).normal(size=M.m)
    np.testing.assert_allclose(apply_inverse(F, r), r, rtol=1e-15)
    np.testing.assert_allclose(F.lu, np.tile(np.eye(3), (4, 1, 1)))
    np.testing.assert_array_equal(apply_inverse(F, np.zeros(M.m)), 0.0)


def test_zero_border_schur_is_corner(rng):
    M = _identity_M()
    M.blocks[:] = rng.normal(size=M.blocks.shape) + 4 * np.eye(3)
    corner = rng.normal(size=(3, 3))
    M.border[M.m - 3:] = corner + corner.T + 6 * np.eye(3)
    F = factorize(M)
    P, L, U = sla.lu(M.corner)
    np.testing.assert_allclose(F.schur_lu[0], np.tril(L, -1) + U, rtol=1e-14)


def test_mintime_block_entries(operating_point):
    model, U = operating_point(20)
    M = _assembled(model, U)
    dtau = 1 / 20
    mu = U.mu[:, 0]
    u, ud = U.u[:, 0], U.u[:, 1]
    c = model.band_center(0.0, np.arange(20) * dtau, U.p[0])
    np.testing.assert_allclose(M.blocks[:, 1, 1], dtau * 2 * mu, rtol=1e-14)
    np.testing.assert_allclose(M.blocks[:, 0, 2], dtau * 2 * (u - c), rtol=1e-14)
    np.testing.assert_allclose(M.blocks[:, 1, 2], dtau * 2 * ud, rtol=1e-14)
    np.testing.assert_array_equal(M.blocks[:, 0, 1], 0.0)
    # u_d rows against the p column: -dtau * w_d
    np.testing.assert_allclose(M.border[1:40:2, 2], -dtau * model.w_d, atol=1e-7)


def test_diagonal_entries_by_formula(mintime):
    """M22 = dtau 2 mu and M25 = -dtau w_d at the documented sample values."""
    N = 100
    data = np.zeros(3 * N + 3)
    data[0:2 * N:2] = 0.8
    data[1:2 * N:2] = 0.2
    data[2 * N:3 * N] = 0.25
    data[-1] = 1.0
    M = _assembled(mintime, ControlVector(data, mintime.dims(N)))
    assert M.blocks[0, 1, 1] == pytest.approx(0.005, rel=1e-14)
    assert M.border[1, 2] == pytest.approx(-5e-5, abs=1e-7)


def test_symmetric_and_matvec(operating_point, rng):
    model, U = operating_point(10)
    M = _assembled(model, U)
    D = M.to_dense()
    np.testing.assert_array_equal(D, D.T)
    v = rng.normal(size=M.m)
    np.testing.assert_allclose(M.matvec(v), D @ v, rtol=1e-13, atol=1e-15)


def test_border_matches_jacobian(operating_point):
    model, U = operating_point(10)
    M = _assembled(model, U)
    A = build_dense_jacobian(model, U, X0, 0.0)
    n0 = M.m - 3
    np.testing.assert_array_equal(M.border[:n0], A[:, n0:][:n0])
    np.testing.assert_allclose(M.corner, A[n0:, n0:], atol=1e-6)


def test_arrow_pattern(operating_point):
    model, U = operating_point(10)
    M = _assembled(model, U)
    P = M.to_dense()[np.ix_(M.permutation(), M.permutation())]
    s, n0 = 3, M.m - 3
    mask = np.zeros_like(P, dtype=bool)
    for i in range(10):
        mask[i * s:(i + 1) * s, i * s:(i + 1) * s] = True
    mask[n0:, :] = mask[:, n0:] = True
    assert not np.any(P[~mask])
    np.testing.assert_array_equal(M.permutation()[:3], [0, 1, 20])   # u_0, u_d0, mu_0


def test_stored_entries_linear(mintime):
    counts = {}
    for N in (50, 100, 200, 400):
        d = mintime.dims(N)
        counts[N] = SparsePreconditioner(d, np.zeros((N, 3, 3)), np.zeros((d.m, 3))).stored_entries()
    for N in (50, 100, 200):
        assert 1.9 <= counts[2 * N] / counts[N] <= 2.1


def test_apply_inverse_matches_dense(operating_point, rng):
    for N in (10, 50):
        model, U = operating_point(N)
        M = _assembled(model, U)
        F = factorize(M)
        assert not F.any_regularized
        r = rng.normal(size=M.m)
        ref = dense_solve(M.to_dense(), r)
        assert np.linalg.norm(apply_inverse(F, r) - ref) <= 1e-10 * np.linalg.norm(ref)


def test_stale_trajectory_rejected(operating_point):
    model, U = operating_point(10)
    traj = compute_trajectory(model, U, X0, 0.0)
    moved = U.with_data(U.data + 1e-3)
    with pytest.raises(ContractError):
        assemble_preconditioner(model, moved, X0, 0.0, traj)


def test_singular_block_gets_ridge(operating_point):
    model, U = operating_point(10)
    M = _assembled(model, U)
    M.blocks[3] = 0.0
    M.blocks[3, 0, 0] = 1.0
    F = factorize(M)
    assert F.regularized[3] and F.regularized.sum() == 1
    assert np.all(np.isfinite(apply_inverse(F, np.ones(M.m))))


def test_singular_schur_raises():
    M = _identity_M()
    M.border[M.m - 3:] = 0.0
    with pytest.raises(FactorizationError):
        factorize(M)


def test_closed_form_examples():
    inv = closed_form_block_inverse(1.0, 1.0, 1.0, 1.0)
    W = np.array([[1.0, 0, 1], [0, 1, 1], [1, 1, 0]])
    np.testing.assert_allclose(W @ inv, np.eye(3), atol=1e-14)
    with pytest.raises(SingularBlockError):
        closed_form_block_inverse(1.0, 0.0, 2.0, 0.0)


def test_closed_form_matches_lu(rng):
    for _ in range(100):
        m11, m13, m22, m23 = rng.uniform(-2, 2, 4)
        W = np.array([[m11, 0, m13], [0, m22, m23], [m13, m23, 0]])
        LU, piv, _ = lu_batched(W[None])
        generic = lu_solve_batched(LU, piv, np.eye(3)[None])[0]
        closed = closed_form_block_inverse(m11, m13, m22, m23)
        assert np.max(np.abs(closed - generic)) <= 1e-12 * np.max(np.abs(generic))


def test_pattern_dump(tmp_path, operating_point):
    model, U = operating_point(5)
    M = _assembled(model, U)
    path = tmp_path / "pattern.txt"
    M.write_pattern(path)
    lines = path.read_text().splitlines()
    n, m, nnz = map(int, lines[0].split())
    assert (n, m) == (18, 18) and nnz == len(lines) - 1
    r, c, v = lines[1].split()
    assert int(r) >= 1 and int(c) >= 1 and float(v) != 0.0


def test_fd_operator_reuse(operating_point):
    model, U = operating_point(5)
    op = ForwardDifferenceOperator(model, U, X0, 0.0, 1e-8)
    traj = compute_trajectory(model, U, X0, 0.0)
    a = assemble_preconditioner(model, U, X0, 0.0, traj, op=op)
    b = assemble_preconditioner(model, U, X0, 0.0, traj, h=1e-8)
    np.testing.assert_array_equal(a.border, b.border)


def test_gap_halves_in_operator_norms(operating_point):
    """||A - M|| in the induced 1-, 2- and inf-norms halves with the step."""
    gaps = {}
    for N in (50, 100):
        model, U = operating_point(N)
        A = build_dense_jacobian(model, U, X0, 0.0, h=1e-8)
        D = A - _assembled(model, U).to_dense()
        gaps[N] = np.array([np.linalg.norm(D, o) for o in (1, 2, np.inf)])
    ratio = gaps[50] / gaps[100]
    assert np.all((1.5 <= ratio) & (ratio <= 2.5)), ratio
