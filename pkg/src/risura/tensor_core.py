"""Complex multiway-array algebra.

Tensors are plain ``numpy.ndarray`` objects.  The canonical linear order is
first-index-fastest (Fortran order), and mode-n unfoldings follow the
Kolda-Bader convention: the column index of ``unfold(T, n)`` runs over the
remaining modes with lower-numbered modes varying fastest.  With that
convention, for ``T = [[A_1, ..., A_N]]``::

    unfold(T, n) == A_n @ khatri_rao_chain([A_N, ..., A_{n+1}, A_{n-1}, ..., A_1]).T

Modes are zero-based throughout the code base.
"""

from functools import reduce

import numpy as np

__all__ = [
    "vec",
    "unfold",
    "fold",
    "khatri_rao",
    "khatri_rao_chain",
    "khatri_rao_except",
    "kruskal_reconstruct",
    "outer",
    "gram_expect",
    "hadamard_all",
]


def vec(tensor):
    """Vectorize in the canonical (first-index-fastest) order."""
    return np.asarray(tensor).reshape(-1, order="F")


def unfold(tensor, mode):
    """Mode-``mode`` unfolding (zero-based), shape ``(I_mode, prod(other))``."""
    tensor = np.asarray(tensor)
    if not 0 <= mode < tensor.ndim:
        raise ValueError(f"mode {mode} out of range for order-{tensor.ndim} tensor")
    return np.moveaxis(tensor, mode, 0).reshape(tensor.shape[mode], -1, order="F")


def fold(matrix, mode, shape):
    """Inverse of :func:`unfold`."""
    matrix = np.asarray(matrix)
    shape = tuple(int(s) for s in shape)
    if not 0 <= mode < len(shape):
        raise ValueError(f"mode {mode} out of range for shape {shape}")
    rest = shape[:mode] + shape[mode + 1:]
    expected = (shape[mode], int(np.prod(rest, dtype=np.int64)))
    if matrix.shape != expected:
        raise ValueError(f"matrix of shape {matrix.shape} cannot fold to {shape} along mode {mode}")
    full = matrix.reshape((shape[mode],) + rest, order="F")
    return np.moveaxis(full, 0, mode)


def khatri_rao(a, b):
    """Column-wise Kronecker product: column k is ``kron(a[:, k], b[:, k])``."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("khatri_rao expects two matrices")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"column-count mismatch: {a.shape[1]} vs {b.shape[1]}")
    return (a[:, None, :] * b[None, :, :]).reshape(a.shape[0] * b.shape[0], a.shape[1])


def khatri_rao_chain(matrices):
    """Left-to-right Khatri-Rao product; the last matrix's row index varies fastest."""
    matrices = list(matrices)
    if not matrices:
        raise ValueError("khatri_rao_chain needs at least one matrix")
    return reduce(khatri_rao, matrices)


def khatri_rao_except(factors, skip):
    """Khatri-Rao of all factors but ``skip``, in descending mode order.

    This is exactly the matrix ``B`` for which ``unfold(T, skip) == factors[skip] @ B.T``.
    """
    others = [factors[m] for m in reversed(range(len(factors))) if m != skip]
    return khatri_rao_chain(others)


def kruskal_reconstruct(factors):
    """Dense tensor from CP factors: ``sum_k outer(F_1[:, k], ..., F_N[:, k])``."""
    factors = [np.asarray(f) for f in factors]
    if not factors:
        raise ValueError("need at least one factor matrix")
    ncols = {f.shape[1] for f in factors}
    if len(ncols) != 1:
        raise ValueError(f"factor matrices disagree on column count: {sorted(ncols)}")
    shape = tuple(f.shape[0] for f in factors)
    if len(factors) == 1:
        return factors[0].sum(axis=1)
    mat = factors[0] @ khatri_rao_except(factors, 0).T
    return fold(mat, 0, shape)


def outer(*vectors):
    """Outer product ``v_1 o v_2 o ... o v_N``."""
    return kruskal_reconstruct([np.asarray(v).reshape(-1, 1) for v in vectors])


def gram_expect(mean, sigma, rows):
    """Expected Gram ``E[A^H A] = M^H M + rows * Sigma``.

    ``A`` has ``rows`` independent rows with mean rows taken from ``mean`` and
    shared row covariance ``Sigma = E[(a - m)^H (a - m)]`` (rows as row vectors).
    """
    mean = np.asarray(mean)
    sigma = np.asarray(sigma)
    k = mean.shape[1]
    if sigma.shape != (k, k):
        raise ValueError(f"Sigma shape {sigma.shape} does not match {k} columns")
    return mean.conj().T @ mean + rows * sigma


def hadamard_all(matrices):
    """Elementwise product of a non-empty sequence of equally shaped matrices."""
    matrices = list(matrices)
    if not matrices:
        raise ValueError("hadamard_all needs at least one matrix")
    out = np.array(matrices[0], copy=True)
    for m in matrices[1:]:
        out = out * m
    return out
