import numpy as np
import pytest
import scipy.sparse as sp

from mhdkit.linalg import (LuSolver, SingularMatrixError, fgmres,
                           fixed_iteration_solver, shift_invert_arnoldi,
                           BlockMatrix, KrylovConfig,
                           write_matrix_market, read_matrix_market)


def test_lu_identity():
    b = np.arange(5.0)
    assert np.allclose(LuSolver(np.eye(5)).solve(b), b)


def test_lu_pivoting():
    A = np.array([[0.0, 1.0], [1.0, 0.0]])
    x = LuSolver(A).solve(np.array([2.0, 3.0]))
    assert np.allclose(x, [3.0, 2.0])


def test_lu_spd_residual():
    rng = np.random.default_rng(0)
    B = rng.standard_normal((50, 50))
    A = B @ B.T + 50 * np.eye(50)
    b = rng.standard_normal(50)
    x = LuSolver(A).solve(b)
    assert np.linalg.norm(A @ x - b) / np.linalg.norm(b) < 1e-12


def test_lu_sparse_roundtrip_many():
    rng = np.random.default_rng(1)
    for _ in range(100):
        n = 30
        A = sp.random(n, n, density=0.2, random_state=rng.integers(1 << 31))
        A = A + sp.diags(np.abs(A).sum(axis=1).A1 + 1.0)
        b = rng.standard_normal(n)
        x = LuSolver(A.tocsr()).solve(b)
        assert np.linalg.norm(A @ x - b) / np.linalg.norm(b) < 1e-11


def test_lu_singular():
    with pytest.raises(SingularMatrixError):
        LuSolver(np.zeros((3, 3)))


def test_fgmres_identity_one_iteration():
    b = np.ones(10)
    res = fgmres(np.eye(10), b, rtol=1e-12)
    assert res.converged and res.iterations == 1


def test_fgmres_exact_preconditioner():
    rng = np.random.default_rng(2)
    A = rng.standard_normal((40, 40)) + 40 * np.eye(40)
    Ainv = np.linalg.inv(A)
    b = rng.standard_normal(40)
    res = fgmres(A, b, M=lambda v: Ainv @ v, rtol=1e-12, atol=0.0)
    assert res.converged and res.iterations <= 2
    assert np.linalg.norm(A @ res.x - b) <= 1e-10 * np.linalg.norm(b)


def test_fgmres_right_preconditioning_solves_original():
    # returned x solves A x = b, not the preconditioned system
    rng = np.random.default_rng(3)
    A = sp.diags(np.linspace(1, 50, 64)).tocsr()
    M = lambda v: v / np.linspace(1, 50, 64) ** 0.7
    b = rng.standard_normal(64)
    res = fgmres(A, b, M=M, rtol=1e-10, atol=0.0)
    assert res.converged
    assert np.linalg.norm(A @ res.x - b) <= 1e-9 * np.linalg.norm(b)


def _laplacian_1d(n):
    e = np.ones(n)
    return sp.diags([-e[:-1], 2 * e, -e[:-1]], [-1, 0, 1]).tocsr() * (n + 1) ** 2


def test_fgmres_laplacian_and_two_level_mg():
    n = 64
    A = _laplacian_1d(n)
    b = np.ones(n)
    plain = fgmres(A, b, restart=30, rtol=1e-8, atol=0.0, maxiter=400)
    assert plain.converged
    # crude 2-level preconditioner: damped Jacobi + coarse solve
    P = sp.lil_matrix((n, n // 2))
    for j in range(n // 2):
        P[2 * j, j] = 0.5
        P[2 * j + 1, j] = 1.0
        if 2 * j + 2 < n:
            P[2 * j + 2, j] = 0.5
    P = P.tocsr()
    Ac = (P.T @ A @ P).tocsc()
    Acinv = LuSolver(Ac)
    d = A.diagonal()

    def mg(v):
        x = 0.6 * v / d
        r = v - A @ x
        x = x + P @ Acinv.solve(P.T @ r)
        r = v - A @ x
        return x + 0.6 * r / d

    pre = fgmres(A, b, M=mg, restart=30, rtol=1e-8, atol=0.0)
    assert pre.converged and pre.iterations < 10
    assert pre.iterations < plain.iterations


def test_fgmres_monotone_history():
    rng = np.random.default_rng(5)
    A = rng.standard_normal((60, 60)) + 12 * np.eye(60)
    b = rng.standard_normal(60)
    res = fgmres(A, b, rtol=1e-10, atol=0.0, restart=60)
    hist = np.array(res.residuals)
    assert np.all(hist[1:] <= hist[:-1] * (1 + 1e-12))


def test_fgmres_nonconvergence_report():
    A = sp.diags(np.linspace(1e-8, 1, 100)).tocsr()
    b = np.ones(100)
    res = fgmres(A, b, rtol=1e-14, atol=0.0, restart=5, maxiter=10)
    assert not res.converged
    assert res.iterations == 10


def test_fixed_iteration_solver_runs_exactly_k():
    count = []
    A = _laplacian_1d(32)

    def track(v):
        count.append(1)
        return v

    solver = fixed_iteration_solver(A, track, iters=2)
    solver(np.ones(32))
    assert len(count) == 2


def test_arnoldi_diagonal():
    A = sp.diags([1.0, 2.0, 3.0]).tocsr()
    res = shift_invert_arnoldi(A, shift=0.0, k=1)
    assert abs(res.values[0] - 1.0) < 1e-10


def test_arnoldi_generalized_degenerate():
    A = sp.diags([2.0, 4.0]).tocsr()
    M = sp.diags([1.0, 2.0]).tocsr()
    res = shift_invert_arnoldi(A, M, shift=0.0, k=2)
    assert np.allclose(sorted(res.values.real), [2.0, 2.0], atol=1e-9)


def test_arnoldi_laplacian_pi_squared():
    n = 100
    h = 1.0 / (n + 1)
    K = _laplacian_1d(n) * h    # stiffness (1/h) tridiag(-1, 2, -1)
    M = sp.diags([np.full(n - 1, h / 6), np.full(n, 4 * h / 6),
                  np.full(n - 1, h / 6)], [-1, 0, 1]).tocsr()
    res = shift_invert_arnoldi(K, M, shift=0.0, k=3)
    lam = np.sort(res.values.real)
    assert abs(lam[0] - np.pi ** 2) / np.pi ** 2 < 0.01


def test_arnoldi_residual_quality():
    rng = np.random.default_rng(7)
    Q, _ = np.linalg.qr(rng.standard_normal((40, 40)))
    A = sp.csr_matrix(Q @ np.diag(np.arange(1, 41.0)) @ Q.T)
    res = shift_invert_arnoldi(A, shift=2.2, k=4)
    # pairs come back sorted by |lambda - shift|
    assert np.allclose(res.values.real[:2], [2.0, 3.0], atol=1e-8)
    assert np.all(res.residuals <= 1e-8)


def test_block_matrix_assembly():
    bm = BlockMatrix(["u", "p"], {"u": 3, "p": 2})
    bm.add("u", "u", sp.identity(3, format="csr"))
    bm.add("u", "p", sp.csr_matrix(np.ones((3, 2))))
    A = bm.tocsr()
    assert A.shape == (5, 5)
    assert np.allclose(A.toarray()[:3, 3:], 1.0)
    assert np.allclose(A.toarray()[3:, 3:], 0.0)
    assert list(bm.group_indices(["p"])) == [3, 4]


def test_krylov_config_validation():
    with pytest.raises(ValueError):
        KrylovConfig(rtol=-1.0)
    cfg = KrylovConfig()
    assert cfg.side == "right"


def test_matrix_market_roundtrip(tmp_path):
    A = sp.random(10, 10, density=0.3, random_state=1).tocsr()
    p = tmp_path / "a.mtx"
    write_matrix_market(p, A)
    B = read_matrix_market(p)
    assert np.abs((A - B)).max() < 1e-15
