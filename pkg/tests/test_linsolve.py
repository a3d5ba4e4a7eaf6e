import threading

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from irwri_kit import linsolve
from irwri_kit.helmholtz import assemble
from irwri_kit.linsolve import (RankDeficiencyWarning, SingularMatrixError, SolverCounters,
                                dense_lstsq_oracle, factorize, solve, solve_multi)
from irwri_kit.wavefield_recon import normal_operator


def random_sparse(n, seed, density=0.05):
    rng = np.random.default_rng(seed)
    M = sp.random(n, n, density=density, random_state=rng, data_rvs=rng.standard_normal)
    M = M + 1j * sp.random(n, n, density=density, random_state=rng, data_rvs=rng.standard_normal)
    return (M + sp.identity(n) * (2 + abs(M).sum(axis=1).max())).tocsc()


def test_identity_solve_is_exact():
    c = SolverCounters()
    F = factorize(sp.identity(7, format="csc"), c)
    b = np.arange(7.0) + 1j
    np.testing.assert_array_equal(solve(F, b), b)
    assert c.snapshot() == (1, 1)


def test_random_residual():
    M = random_sparse(100, 0)
    b = np.random.default_rng(1).standard_normal(100) + 0j
    x = solve(factorize(M, SolverCounters()), b)
    assert np.linalg.norm(M @ x - b) / np.linalg.norm(b) < 1e-10


@settings(max_examples=15, deadline=None)
@given(st.integers(5, 60), st.integers(0, 10_000))
def test_backward_error(n, seed):
    M = random_sparse(n, seed, density=0.2)
    b = np.random.default_rng(seed).standard_normal(n) + 1j
    x = solve(factorize(M, SolverCounters()), b)
    be = np.linalg.norm(M @ x - b) / (abs(M).max() * n * np.linalg.norm(x) + np.linalg.norm(b))
    assert be < 1e-12


def test_normal_operator_multi_rhs(small_setup):
    m, geom, _ = small_setup
    A = assemble(m, 2 * np.pi * 4.0)
    N = normal_operator(A, geom, 1e-3, geom.q_diagonal())
    c = SolverCounters()
    F = factorize(N, c)
    B = np.random.default_rng(2).standard_normal((A.grid.n, 10)) + 1j
    X = solve_multi(F, B)
    assert np.linalg.norm(N @ X - B) / np.linalg.norm(B) < 1e-9
    assert c.snapshot() == (1, 1)


def test_block_equals_columnwise_and_zero():
    M = random_sparse(40, 3)
    c = SolverCounters()
    F = factorize(M, c)
    B = np.random.default_rng(4).standard_normal((40, 2)) + 1j
    X = solve_multi(F, B)
    cols = np.column_stack([solve(F, B[:, 0]), solve(F, B[:, 1])])
    np.testing.assert_allclose(X, cols, rtol=0, atol=1e-14 * np.abs(X).max())
    assert np.all(solve_multi(F, np.zeros((40, 3))) == 0)
    with pytest.raises(ValueError):
        solve_multi(F, np.zeros((41, 1)))


def test_many_rhs_one_factorization(small_setup):
    m, geom, _ = small_setup
    A = assemble(m, 2 * np.pi * 4.0)
    c = SolverCounters()
    F = factorize(normal_operator(A, geom, 1e-2), c)
    solve_multi(F, np.ones((A.grid.n, 64), dtype=complex))
    assert c.factor_count == 1 and c.solve_count == 1


def test_real_factor_complex_rhs():
    M = sp.diags([2.0, 4.0]).tocsc()
    F = factorize(M, SolverCounters())
    np.testing.assert_allclose(solve(F, np.array([2 + 2j, 4j])), [1 + 1j, 1j])


def test_singular_matrix_reports_pivot():
    M = sp.diags([1.0, 0.0, 3.0]).tocsc()
    c = SolverCounters()
    with pytest.raises(SingularMatrixError) as info:
        factorize(M, c)
    assert info.value.pivot == 1
    assert c.factor_count == 0
    with pytest.raises(SingularMatrixError):
        factorize(sp.diags([1.0, 1e-20, 1.0]).tocsc(), c)
    with pytest.raises(ValueError):
        factorize(sp.csc_matrix((2, 3)))


def test_factorization_is_reusable_concurrently():
    M = random_sparse(50, 5)
    c = SolverCounters()
    F = factorize(M, c)
    B = np.random.default_rng(6).standard_normal((50, 4)) + 0j
    ref = solve_multi(F, B)
    out = [None] * 8

    def work(i):
        out[i] = solve_multi(F, B)

    threads = [threading.Thread(target=work, args=(i,)) for i in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for x in out:
        np.testing.assert_array_equal(x, ref)
    assert c.snapshot() == (1, 9)


def test_default_counters_used_when_none():
    before = linsolve.DEFAULT_COUNTERS.factor_count
    factorize(sp.identity(3, format="csc"))
    assert linsolve.DEFAULT_COUNTERS.factor_count == before + 1


def test_lstsq_oracle_basics():
    b = np.array([1.0, 2.0, 3.0]) + 1j
    np.testing.assert_allclose(dense_lstsq_oracle(np.eye(3), b), b)
    rng = np.random.default_rng(7)
    A = rng.standard_normal((8, 4)) + 1j * rng.standard_normal((8, 4))
    x0 = rng.standard_normal(4) + 0j
    np.testing.assert_allclose(dense_lstsq_oracle(A, A @ x0), x0, atol=1e-12)


def test_lstsq_oracle_matches_normal_equations():
    rng = np.random.default_rng(8)
    A = rng.standard_normal((30, 10))
    b = rng.standard_normal(30)
    ne = np.linalg.solve(A.T @ A, A.T @ b)
    np.testing.assert_allclose(dense_lstsq_oracle(A, b), ne, rtol=1e-8)


def test_lstsq_oracle_rank_deficient_minimum_norm():
    A = np.array([[1.0, 1.0], [2.0, 2.0]])
    with pytest.warns(RankDeficiencyWarning):
        x = dense_lstsq_oracle(A, np.array([2.0, 4.0]))
    np.testing.assert_allclose(x, [1.0, 1.0])
