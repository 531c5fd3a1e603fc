"""Closed-form mean-field updates.

Notation: for subblock ``l`` the observed tensor has modes
``(tau_1, ..., tau_d, M)`` and model ``[[X_l^1, ..., X_l^d, P_l G]]``.
``H_l`` is the Hadamard product of the expected mode Grams
``E[X_l^i^H X_l^i]`` and ``C_l = E[G^H P_l^H P_l G]``.
"""

import numpy as np

from ..tensor_core import gram_expect, hadamard_all, khatri_rao_chain, khatri_rao_except
from .state import NumericalError, hermitian_inverse

__all__ = [
    "mode_grams",
    "expected_PG_gram",
    "update_G",
    "update_X",
    "update_xi",
    "update_eta",
    "update_gamma",
    "expected_residuals",
    "update_beta",
    "cap_beta",
]


def mode_grams(state, data, l):
    return [gram_expect(state.M[l][i], state.Sigma[l][i], data.tau[i]) for i in range(data.d)]


def _PG_cov_part(state, data, l):
    # sum_{n1,n2} A[n1,n2] * Cov(g_{n2,k2}, g_{n1,k1}) at [k1, k2]; Omega is Hermitian, so this
    # is the conjugate of sum A[n1,n2]^* Omega[n1,k1,n2,k2], a batched row-times-block product
    C = np.matmul(data.A[l].conj()[:, None, None, :], state.Omega4()).sum(axis=0)[:, 0, :].conj()
    return 0.5 * (C + C.conj().T)


def expected_PG_gram(state, data, l):
    """``E[(P_l G)^H (P_l G)]`` under Q(G)."""
    PM = data.P[l] @ state.MG
    return PM.conj().T @ PM + _PG_cov_part(state, data, l)


def refresh_C(state, data):
    """Cache ``C_l`` and its covariance part for every subblock (valid until G changes)."""
    state.C_cov = [_PG_cov_part(state, data, l) for l in range(data.L)]
    state.C = []
    for l in range(data.L):
        PM = data.P[l] @ state.MG
        state.C.append(PM.conj().T @ PM + state.C_cov[l])
    return state


def _signal_krs(state, l):
    """Khatri-Rao of the signal-mode means in descending order, (prod tau, K)."""
    return khatri_rao_chain(state.M[l][::-1])


def G_precision_and_rhs(state, data):
    """Natural parameters of Q(G): precision over row-major g and the linear term."""
    Ng, K = state.Ng, state.K
    Eb = float(state.beta.mean())
    prec = np.zeros((Ng * K, Ng * K), dtype=complex)
    rhs = np.zeros((Ng, K), dtype=complex)
    for l in range(data.L):
        H = hadamard_all(mode_grams(state, data, l))
        prec += Eb * np.kron(data.A[l], H)
        S = _signal_krs(state, l)
        rhs += Eb * (data.P[l].conj().T @ (data.unfoldings[l][data.d] @ S.conj()))
    prior = np.tile(state.eta.mean(), Ng) + state.xi.mean().reshape(-1)
    prec[np.diag_indices_from(prec)] += prior
    return prec, rhs.reshape(-1)


def update_G(state, data):
    prec, rhs = G_precision_and_rhs(state, data)
    state.Omega, state.Omega_logdet, mean = hermitian_inverse(prec, "precision of Q(G)", rhs)
    state.MG = mean.reshape(state.Ng, state.K)
    return refresh_C(state, data)


def update_X(state, data, l, i):
    if state.C is None:
        refresh_C(state, data)
    Eb = float(state.beta.mean())
    grams = mode_grams(state, data, l)
    others = [grams[j] for j in range(data.d) if j != i] + [state.C[l]]
    prec = Eb * hadamard_all(others).conj()
    prec[np.diag_indices_from(prec)] += state.gamma.mean()
    factors = list(state.M[l]) + [data.P[l] @ state.MG]
    B = khatri_rao_except(factors, i)
    # M = Eb Y(i) B^* Sigma, solved as Sigma^T-system on the transposed right-hand side
    rhs = Eb * (data.unfoldings[l][i] @ B.conj())
    Sigma, logdet, mt = hermitian_inverse(prec.T, f"precision of Q(X_{l}^{i})", rhs.T)
    Sigma = Sigma.T
    state.M[l][i] = mt.T
    state.Sigma[l][i] = Sigma
    state.Sigma_logdet[l][i] = logdet
    return state


def update_xi(state, data=None):
    state.xi.rate = state.delta + state.G_second_moment()
    state.xi.shape = np.asarray(state.delta + 1.0)
    return state


def update_eta(state, data=None):
    state.eta.rate = state.delta + state.G_second_moment().sum(axis=0)
    state.eta.shape = np.asarray(state.delta + state.Ng)
    return state


def update_gamma(state, data):
    rate = np.full(state.K, state.delta)
    for l in range(data.L):
        for i in range(data.d):
            m = state.M[l][i]
            rate += np.sum(np.abs(m) ** 2, axis=0) + data.tau[i] * np.real(np.diag(state.Sigma[l][i]))
    state.gamma.rate = rate
    state.gamma.shape = np.asarray(state.delta + data.L * sum(data.tau))
    return state


def expected_residuals(state, data):
    """``E||Y_l - [[X_l^1, ..., X_l^d, P_l G]]||_F^2`` for every subblock."""
    if state.C is None:
        refresh_C(state, data)
    out = []
    for l in range(data.L):
        # misfit of the mean model plus the variance terms, kept apart to avoid
        # cancellation when the fit is nearly exact
        S = _signal_krs(state, l)
        PM = data.P[l] @ state.MG
        misfit = np.linalg.norm(data.unfoldings[l][data.d] - PM @ S.T) ** 2
        mean_grams = [m.conj().T @ m for m in state.M[l]]
        h_mean = mean_grams[0]
        h_extra = data.tau[0] * state.Sigma[l][0]
        for i in range(1, data.d):
            cov = data.tau[i] * state.Sigma[l][i]
            h_extra = h_extra * (mean_grams[i] + cov) + h_mean * cov
            h_mean = h_mean * mean_grams[i]
        c_mean = PM.conj().T @ PM
        c_cov = state.C_cov[l]
        var = np.sum((h_mean + h_extra) * c_cov).real + np.sum(h_extra * c_mean).real
        out.append(float(misfit + var))
    return out


def update_beta(state, data):
    res = expected_residuals(state, data)
    total = sum(res)
    scale = max(sum(data.energy), 1e-300)
    if total < -1e-8 * scale:
        raise NumericalError(f"expected residual {total:.3e} is negative beyond round-off")
    state.beta.rate = np.asarray(state.delta + max(total, 0.0))
    state.beta.shape = np.asarray(state.delta + data.L * data.n_entries)
    return state


def cap_beta(state, noise_floor):
    """Keep ``E[beta] <= 1 / noise_floor`` by raising the rate where needed.

    With the shape fixed the ELBO is unimodal in the rate, so clamping toward
    the unconstrained optimum never lowers it as long as the floor only decreases.
    """
    if noise_floor > 0:
        state.beta.rate = np.maximum(state.beta.rate, state.beta.shape * noise_floor)
    return state
