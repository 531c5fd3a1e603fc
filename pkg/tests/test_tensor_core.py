import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from risura.tensor_core import (
    fold, gram_expect, hadamard_all, khatri_rao, khatri_rao_chain, khatri_rao_except,
    kruskal_reconstruct, outer, unfold, vec,
)


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def brute_unfold(T, n):
    # column index: remaining modes, lower-numbered fastest
    others = [m for m in range(T.ndim) if m != n]
    out = np.zeros((T.shape[n], T.size // T.shape[n]), dtype=T.dtype)
    for idx in itertools.product(*[range(s) for s in T.shape]):
        col, stride = 0, 1
        for m in others:
            col += idx[m] * stride
            stride *= T.shape[m]
        out[idx[n], col] = T[idx]
    return out


def brute_kruskal(factors):
    shape = tuple(f.shape[0] for f in factors)
    T = np.zeros(shape, dtype=complex)
    for idx in itertools.product(*[range(s) for s in shape]):
        T[idx] = sum(np.prod([f[i, k] for f, i in zip(factors, idx)]) for k in range(factors[0].shape[1]))
    return T


shapes = st.lists(st.integers(1, 4), min_size=1, max_size=4).map(tuple)


class TestUnfoldFold:
    def test_matrix_mode0_is_identity(self):
        T = np.array([[i + 2 * j for j in range(2)] for i in range(2)], dtype=complex)
        np.testing.assert_array_equal(unfold(T, 0), T)

    def test_against_brute_force(self):
        rng = np.random.default_rng(0)
        T = crandn(rng, 3, 4, 5)
        for n in range(3):
            np.testing.assert_array_equal(unfold(T, n), brute_unfold(T, n))

    def test_zero_tensor(self):
        Z = np.zeros((2, 3, 4), complex)
        for n in range(3):
            assert not np.any(unfold(Z, n))
            assert not np.any(fold(unfold(Z, n), n, Z.shape))

    @settings(max_examples=60, deadline=None)
    @given(shapes, st.integers(0, 2**31 - 1))
    def test_round_trip_every_mode(self, shape, seed):
        T = crandn(np.random.default_rng(seed), *shape)
        for n in range(len(shape)):
            np.testing.assert_array_equal(fold(unfold(T, n), n, shape), T)

    def test_vec_is_first_index_fastest(self):
        T = np.arange(6).reshape(2, 3)
        np.testing.assert_array_equal(vec(T), [0, 3, 1, 4, 2, 5])

    def test_errors(self):
        T = np.zeros((2, 3))
        with pytest.raises(ValueError):
            unfold(T, 2)
        with pytest.raises(ValueError):
            fold(np.zeros((2, 4)), 0, (2, 3))
        with pytest.raises(ValueError):
            fold(np.zeros((2, 3)), 3, (2, 3))


class TestKhatriRao:
    def test_scalar(self):
        np.testing.assert_array_equal(khatri_rao(np.array([[2.0]]), np.array([[3.0]])), [[6.0]])

    def test_identity(self):
        np.testing.assert_array_equal(khatri_rao(np.eye(2), np.eye(2)),
                                      np.stack([np.kron([1, 0], [1, 0]), np.kron([0, 1], [0, 1])], 1))

    def test_columnwise_kron(self):
        rng = np.random.default_rng(1)
        A, B = crandn(rng, 3, 2), crandn(rng, 3, 2)
        KR = khatri_rao(A, B)
        assert KR.shape == (9, 2)
        for k in range(2):
            np.testing.assert_array_equal(KR[:, k], np.kron(A[:, k], B[:, k]))

    def test_mismatch(self):
        with pytest.raises(ValueError):
            khatri_rao(np.ones((2, 2)), np.ones((2, 3)))

    def test_associative(self):
        rng = np.random.default_rng(2)
        A, B, C = crandn(rng, 2, 3), crandn(rng, 3, 3), crandn(rng, 4, 3)
        np.testing.assert_allclose(khatri_rao(khatri_rao(A, B), C), khatri_rao(A, khatri_rao(B, C)),
                                   rtol=1e-12, atol=0)
        np.testing.assert_allclose(khatri_rao_chain([A, B, C]), khatri_rao(A, khatri_rao(B, C)),
                                   rtol=1e-12, atol=0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 4), st.integers(0, 2**31 - 1))
    def test_gram_hadamard_identity(self, ra, rb, k, seed):
        rng = np.random.default_rng(seed)
        A, B = crandn(rng, ra, k), crandn(rng, rb, k)
        KR = khatri_rao(A, B)
        lhs = KR.conj().T @ KR
        rhs = (A.conj().T @ A) * (B.conj().T @ B)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12 * np.abs(rhs).max())


class TestKruskal:
    def test_rank_one_outer(self):
        T = kruskal_reconstruct([np.array([[1.0], [0.0]]), np.array([[0.0], [1.0]])])
        expected = np.zeros((2, 2))
        expected[0, 1] = 1.0
        np.testing.assert_array_equal(T, expected)
        np.testing.assert_array_equal(outer([1.0, 0.0], [0.0, 1.0]), expected)

    def test_brute_force_sum(self):
        rng = np.random.default_rng(3)
        F = [crandn(rng, s, 3) for s in (3, 4, 5)]
        np.testing.assert_allclose(kruskal_reconstruct(F), brute_kruskal(F), rtol=1e-12, atol=1e-12)

    def test_zero_factor(self):
        rng = np.random.default_rng(4)
        F = [crandn(rng, 3, 2), np.zeros((4, 2)), crandn(rng, 2, 2)]
        assert not np.any(kruskal_reconstruct(F))

    @settings(max_examples=60, deadline=None)
    @given(shapes.filter(lambda s: len(s) >= 2), st.integers(1, 3), st.integers(0, 2**31 - 1))
    def test_unfolding_identity(self, shape, R, seed):
        rng = np.random.default_rng(seed)
        F = [crandn(rng, s, R) for s in shape]
        T = kruskal_reconstruct(F)
        for n in range(len(shape)):
            rhs = F[n] @ khatri_rao_except(F, n).T
            np.testing.assert_allclose(unfold(T, n), rhs, rtol=1e-12, atol=1e-12 * np.abs(rhs).max())

    def test_column_count_mismatch(self):
        with pytest.raises(ValueError):
            kruskal_reconstruct([np.ones((2, 2)), np.ones((3, 1))])


class TestGramExpect:
    def test_zero_sigma(self):
        rng = np.random.default_rng(5)
        M = crandn(rng, 4, 3)
        np.testing.assert_allclose(gram_expect(M, np.zeros((3, 3)), 4), M.conj().T @ M)

    def test_zero_mean(self):
        np.testing.assert_array_equal(gram_expect(np.zeros((5, 2)), np.eye(2), 5), 5 * np.eye(2))

    def test_monte_carlo(self):
        rng = np.random.default_rng(6)
        tau, K, n = 4, 2, 100_000
        M = crandn(rng, tau, K)
        B = crandn(rng, K, K)
        Sigma = B.conj().T @ B / 2
        Lc = np.linalg.cholesky(Sigma)
        # rows a = m + z with E[z^H z] = Sigma; z = w Lc^H with w ~ CN(0, I)
        w = crandn(rng, n, tau, K) / np.sqrt(2)
        A = M[None] + w @ Lc.conj().T
        grams = np.einsum("sik,sil->skl", A.conj(), A)
        mean = grams.mean(axis=0)
        expect = gram_expect(M, Sigma, tau)
        for part in (np.real, np.imag):
            se = part(grams).std(axis=0) / np.sqrt(n)
            assert np.all(np.abs(part(mean) - part(expect)) <= 3 * se + 1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            gram_expect(np.ones((3, 2)), np.eye(3), 3)


def test_hadamard_all():
    rng = np.random.default_rng(7)
    mats = [crandn(rng, 3, 3) for _ in range(3)]
    np.testing.assert_allclose(hadamard_all(mats), mats[0] * mats[1] * mats[2])
    with pytest.raises(ValueError):
        hadamard_all([])
