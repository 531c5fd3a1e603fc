"""Plain coupled ALS baseline with a fixed column count (no priors, no pruning)."""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from ..tensor_core import hadamard_all, khatri_rao_chain, khatri_rao_except
from .state import CoupledData

__all__ = ["AlsResult", "als_fit"]

_JITTER = 1e-10


@dataclass
class AlsResult:
    G: np.ndarray
    factors: list
    residual_trace: list
    iterations: int


def _solve_psd(gram, rhs):
    n = gram.shape[0]
    scale = max(float(np.real(np.trace(gram))) / n, 1e-300)
    return sla.solve(gram + _JITTER * scale * np.eye(n), rhs, assume_a="her")


def _residual(data, G, X):
    total = 0.0
    for l in range(data.L):
        S = khatri_rao_chain(X[l][::-1])
        total += np.linalg.norm(data.unfoldings[l][data.d] - data.P[l] @ G @ S.T) ** 2
    return float(total)


def als_fit(Y_list, P_list=None, K_fixed=1, max_iter=500, tol=1e-10, rng=None):
    """Cyclic exact least squares over every ``X_l^i`` and the shared ``G``.

    Returns factors and the squared-residual trace (one entry per cycle).
    """
    if K_fixed < 1:
        raise ValueError("K_fixed must be >= 1")
    data = CoupledData.coerce(Y_list, P_list)
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    K, Ng = K_fixed, data.Ng

    def crandn(*shape):
        return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)

    X = [[crandn(data.tau[i], K) / np.sqrt(data.tau[i]) for i in range(data.d)] for _ in range(data.L)]
    G = crandn(Ng, K)
    trace = []
    it = 0
    for it in range(1, max_iter + 1):
        for l in range(data.L):
            for i in range(data.d):
                B = khatri_rao_except(X[l] + [data.P[l] @ G], i)
                # X B^T = Y(i)  ->  X = Y(i) B^* (B^T B^*)^{-1}
                X[l][i] = _solve_psd(B.conj().T @ B, (data.unfoldings[l][i] @ B.conj()).T).T
        prec = np.zeros((Ng * K, Ng * K), dtype=complex)
        rhs = np.zeros((Ng, K), dtype=complex)
        for l in range(data.L):
            S = khatri_rao_chain(X[l][::-1])
            prec += np.kron(data.A[l], S.conj().T @ S)
            rhs += data.P[l].conj().T @ data.unfoldings[l][data.d] @ S.conj()
        G = _solve_psd(prec, rhs.reshape(-1)).reshape(Ng, K)
        trace.append(_residual(data, G, X))
        if len(trace) > 1 and abs(trace[-2] - trace[-1]) <= tol * max(trace[-2], 1e-300):
            break
    return AlsResult(G=G, factors=X, residual_trace=trace, iterations=it)
