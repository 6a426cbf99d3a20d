import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from fsbs import zq
from fsbs.errors import DegenerateBasis, FormatError, NoSolutionOrRankDeficient, ParamError

from oracles import fraction_det, fraction_gram_schmidt, schoolbook_mod


PRIMES = [3, 5, 7, 257, 12289, 2**31 - 1, 4611686018427387847]


def test_prime_checks():
    assert all(zq.is_prime(p) for p in PRIMES)
    assert not any(zq.is_prime(c) for c in [0, 1, 4, 561, 2**31 - 3, 3215031751])
    for bad in [2, 4, 9, 1]:
        with pytest.raises(ParamError):
            zq.check_modulus(bad)
    with pytest.raises(ParamError):
        zq.check_modulus(2**62 + 135)


def test_mat_mul_mod_examples():
    B = np.array([[3, 9], [-4, 12]])
    assert np.array_equal(zq.mat_mul_mod(np.eye(2, dtype=int), B, 7), B % 7)
    assert zq.mat_mul_mod([[1, 2], [3, 4]], [[1], [1]], 5).tolist() == [[3], [2]]
    with pytest.raises(ValueError):
        zq.mat_mul_mod(np.ones((2, 3), dtype=int), np.ones((2, 2), dtype=int), 5)


def test_mat_mul_mod_against_schoolbook_large():
    r = np.random.default_rng(0)
    A = r.integers(0, 12289, (4, 480))
    B = r.integers(-5000, 5000, (480, 32))
    assert np.array_equal(zq.mat_mul_mod(A, B, 12289), schoolbook_mod(A, B, 12289))


def test_mat_mul_mod_big_modulus_uses_exact_path():
    q = 4611686018427387847
    r = np.random.default_rng(1)
    A = r.integers(0, 2**62, (3, 5))
    B = r.integers(0, 2**62, (5, 2))
    assert np.array_equal(zq.mat_mul_mod(A, B, q), schoolbook_mod(A, B, q))


@settings(max_examples=60, deadline=None)
@given(
    dims=st.tuples(st.integers(1, 12), st.integers(1, 64), st.integers(1, 6)),
    q=st.sampled_from(PRIMES[:6]),
    data=st.data(),
)
def test_mat_mul_mod_oracle_property(dims, q, data):
    n, k, m = dims
    A = data.draw(hnp.arrays(np.int64, (n, k), elements=st.integers(-2**40, 2**40)))
    B = data.draw(hnp.arrays(np.int64, (k, m), elements=st.integers(-2**40, 2**40)))
    got = zq.mat_mul_mod(A, B, q)
    assert got.min() >= 0 and got.max() < q
    assert np.array_equal(got, schoolbook_mod(A, B, q))


def test_int_matmul_never_wraps():
    A = np.full((2, 3), 2**40, dtype=np.int64)
    got = zq.int_matmul(A, A.T)
    assert got.dtype == object
    assert int(got[0, 0]) == 3 * 2**80


def test_solve_particular_examples():
    assert zq.solve_particular(np.eye(2, dtype=int), [3, 4], 5).tolist() == [3, 4]
    t = zq.solve_particular([[2, 4]], [1], 5)
    assert t.tolist() == [3, 0]
    assert (2 * t[0] + 4 * t[1]) % 5 == 1


def test_solve_particular_random_and_deterministic():
    r = np.random.default_rng(2)
    A = r.integers(0, 257, (4, 96))
    u = r.integers(0, 257, 4)
    t = zq.solve_particular(A, u, 257)
    assert np.array_equal(zq.mat_mul_mod(A, t, 257), u)
    assert np.array_equal(t, zq.solve_particular(A, u, 257))
    assert t.min() >= 0 and t.max() < 257


def test_solve_particular_rank_deficient():
    with pytest.raises(NoSolutionOrRankDeficient):
        zq.solve_particular([[1, 2], [2, 4]], [1, 1], 5)


@settings(max_examples=50, deadline=None)
@given(n=st.integers(1, 5), extra=st.integers(0, 20), q=st.sampled_from([5, 257, 12289]), data=st.data())
def test_solve_particular_reverifies(n, extra, q, data):
    A = data.draw(hnp.arrays(np.int64, (n, n + extra), elements=st.integers(0, q - 1)))
    u = data.draw(hnp.arrays(np.int64, (n,), elements=st.integers(0, q - 1)))
    if zq.rank_mod(A, q) < n:
        with pytest.raises(NoSolutionOrRankDeficient):
            zq.solve_particular(A, u, q)
    else:
        t = zq.solve_particular(A, u, q)
        assert np.array_equal(zq.mat_mul_mod(A, t, q), u)


def test_gram_schmidt_examples():
    _, norms = zq.gram_schmidt(3 * np.eye(4, dtype=int))
    assert np.allclose(norms, 3)
    Bs, norms = zq.gram_schmidt([[1, 1], [0, 1]])
    assert np.allclose(np.abs(Bs), [[1, 0], [0, 1]])
    assert np.allclose(norms, [1, 1])


def test_gram_schmidt_matches_rational_oracle():
    r = np.random.default_rng(3)
    for _ in range(5):
        B = np.tril(r.integers(-9, 10, (8, 8)), -1) + np.eye(8, dtype=np.int64)
        _, norms = zq.gram_schmidt(B)
        exact = [math.sqrt(v) for v in fraction_gram_schmidt(B)]
        assert np.allclose(norms, exact, rtol=1e-9)


def test_gram_schmidt_reconstruction():
    r = np.random.default_rng(4)
    for _ in range(10):
        B = r.integers(-20, 20, (12, 12))
        Q, R = zq.gso(B)
        Bs = Q * np.diag(R)[None, :]
        U = R / np.diag(R)[:, None]
        assert np.allclose(np.triu(U), U) and np.allclose(np.diag(U), 1)
        assert np.allclose(Bs @ U, B, rtol=1e-8, atol=1e-8 * np.abs(B).max())


def test_gram_schmidt_degenerate():
    with pytest.raises(DegenerateBasis):
        zq.gram_schmidt([[1, 2], [2, 4]])
    with pytest.raises(DegenerateBasis):
        zq.gram_schmidt(np.ones((2, 3), dtype=int))


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 10), data=st.data())
def test_row_permutation_keeps_gs_norms(n, data):
    B = data.draw(hnp.arrays(np.int64, (n, n), elements=st.integers(-50, 50)))
    B = B + 101 * np.eye(n, dtype=np.int64)  # strictly diagonally dominant, so nonsingular
    perm = data.draw(st.permutations(list(range(n))))
    _, a = zq.gram_schmidt(B)
    _, b = zq.gram_schmidt(zq.permute_rows(B, perm))
    assert np.allclose(a, b, rtol=1e-12)


def test_permute_and_concat():
    M = np.arange(6).reshape(3, 2)
    assert np.array_equal(zq.permute_rows(M, [0, 1, 2]), M)
    with pytest.raises(ValueError):
        zq.permute_rows(M, [0, 0, 1])
    I2 = np.eye(2, dtype=int)
    assert zq.concat_cols([I2, 2 * I2]).tolist() == [[1, 0, 2, 0], [0, 1, 0, 2]]
    with pytest.raises(ValueError):
        zq.concat_cols([I2, np.ones((3, 1), dtype=int)])


def test_int_det_against_rational_oracle():
    r = np.random.default_rng(5)
    for n in [1, 2, 3, 7, 15, 30]:
        M = r.integers(-30, 30, (n, n))
        assert zq.int_det(M) == fraction_det(M)
    M = r.integers(-3, 3, (10, 10))
    M[:, 4] = 2 * M[:, 1] - M[:, 7]
    assert zq.int_det(M) == 0


def test_int_det_huge_entries():
    r = np.random.default_rng(6)
    M = r.integers(-2**50, 2**50, (6, 6)).astype(object)
    M[0, 0] = 2**100 + 7
    assert zq.int_det(M) == fraction_det(M)


def test_int_det_peels_identity_blocks():
    r = np.random.default_rng(7)
    core = r.integers(-9, 9, (5, 5))
    M = np.block([[core, r.integers(0, 100, (5, 40))], [np.zeros((40, 5), dtype=int), np.eye(40, dtype=int)]])
    assert zq.int_det(M) == fraction_det(core)


def test_is_basis_examples():
    assert zq.is_basis_of_lambda_perp([[1, 0]], [[5, 0], [0, 1]], 5)
    assert not zq.is_basis_of_lambda_perp([[1, 0]], [[5, 0], [0, 5]], 5)
    assert not zq.is_basis_of_lambda_perp([[1, 0]], [[1, 0], [0, 1]], 5)
    assert not zq.is_basis_of_lambda_perp([[1, 0]], [[5, 0]], 5)


def test_matrix_encoding_roundtrip_and_errors():
    M = np.array([[1, -2, 3], [2**62, -(2**63) + 1, 0]], dtype=np.int64)
    buf = zq.encode_matrix(M)
    assert buf[:4] == b"FSM1" and buf[12] == 8
    back, off = zq.decode_matrix(buf)
    assert off == len(buf) and np.array_equal(back, M)
    big = np.array([[2**100, -(2**90)]], dtype=object)
    buf = zq.encode_matrix(big)
    assert buf[12] == 16
    back, _ = zq.decode_matrix(buf)
    assert [int(v) for v in back.ravel()] == [2**100, -(2**90)]
    with pytest.raises(FormatError):
        zq.decode_matrix(buf[:-1])
    with pytest.raises(FormatError):
        zq.decode_matrix(b"XXXX" + buf[4:])
    bad_width = bytearray(buf)
    bad_width[12] = 4
    with pytest.raises(FormatError):
        zq.decode_matrix(bytes(bad_width))


def test_matrix_encoding_layout_is_row_major_le():
    buf = zq.encode_matrix(np.array([[1, 2]]))
    assert buf[13:21] == (1).to_bytes(8, "little") and buf[21:29] == (2).to_bytes(8, "little")


def test_sq_norm_and_inner_exact():
    v = np.array([2**40, 2**40, 3], dtype=np.int64)
    assert zq.sq_norm(v) == 2 * 2**80 + 9
    assert zq.inner(v, v) == zq.sq_norm(v)
    assert zq.inner([1, 2], [3, 4]) == 11
    assert Fraction(zq.sq_norm(np.array([1, 1]))) == 2
