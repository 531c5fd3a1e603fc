"""Variational state of the coupled-tensor detector and its construction."""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.special import digamma, gammaln

from ..tensor_core import unfold

__all__ = [
    "NumericalError",
    "GammaParam",
    "CoupledData",
    "VariationalState",
    "hermitian_inverse",
    "init_state",
    "MAX_G_DIM",
]

# Omega is dense (Ng*K)^2; beyond this the cubic solve dominates everything else
MAX_G_DIM = 4096

_JITTERS = (0.0, 1e-12, 1e-10, 1e-8)


class NumericalError(ArithmeticError):
    pass


def hermitian_inverse(mat, what="matrix", rhs=None):
    """Inverse of a Hermitian positive definite matrix and the inverse's log-determinant.

    The matrix is equilibrated by its diagonal before a Cholesky factorization;
    on failure the factorization is retried with jitter 1e-12, 1e-10, 1e-8
    (relative to the unit equilibrated diagonal).  When ``rhs`` is given,
    ``mat^{-1} rhs`` is returned as a third value, solved through the factor.
    """
    # only the lower triangle is read, so the input need not be exactly Hermitian
    diag = np.real(np.diagonal(mat))
    if np.any(~np.isfinite(diag)) or np.any(diag <= 0):
        raise NumericalError(f"{what} has a non-positive diagonal")
    d = 1.0 / np.sqrt(diag)
    dd = np.outer(d, d)
    scaled = mat * dd
    idx = np.diag_indices_from(scaled)
    for jitter in _JITTERS:
        if jitter:
            scaled[idx] = 1.0 + jitter
        try:
            c, lower = sla.cho_factor(scaled, lower=True, overwrite_a=False, check_finite=True)
        except (np.linalg.LinAlgError, ValueError):
            continue
        cdiag = np.real(np.diagonal(c))
        if np.any(cdiag <= 0):
            continue
        potri, = sla.get_lapack_funcs(("potri",), (c,))
        tri, info = potri(c, lower=True)
        if info != 0:
            continue
        inv = np.tril(tri)
        inv += np.tril(inv, -1).conj().T
        inv *= dd
        logdet = -2.0 * float(np.sum(np.log(cdiag))) + 2.0 * float(np.sum(np.log(d)))
        if rhs is None:
            return inv, logdet
        dr = d.reshape((-1,) + (1,) * (np.ndim(rhs) - 1))
        return inv, logdet, dr * sla.cho_solve((c, lower), dr * rhs)
    raise NumericalError(f"{what} is not numerically positive definite (jitter up to 1e-8 failed)")


@dataclass
class GammaParam:
    """Gamma distribution(s) in (shape, rate) form; arrays broadcast together."""

    shape: np.ndarray
    rate: np.ndarray

    def __post_init__(self):
        self.shape = np.asarray(self.shape, dtype=float)
        self.rate = np.asarray(self.rate, dtype=float)

    def mean(self):
        return self.shape / self.rate

    def mean_log(self):
        return digamma(self.shape) - np.log(self.rate)

    def entropy(self):
        a, b = np.broadcast_arrays(self.shape, self.rate)
        return a - np.log(b) + gammaln(a) + (1.0 - a) * digamma(a)

    def prior_cross(self, a0, b0):
        """``E_q[log Gamma(x | a0, b0)]`` summed over all entries."""
        shape = np.broadcast(self.shape, self.rate).shape
        n = int(np.prod(shape)) if shape else 1
        return float(n * (a0 * np.log(b0) - gammaln(a0))
                     + np.sum((a0 - 1.0) * self.mean_log() - b0 * self.mean()))

    def take(self, keep):
        """Restrict to the entries selected along the last axis."""
        rate = np.asarray(self.rate)[..., keep]
        shape = self.shape if self.shape.ndim == 0 else self.shape[..., keep]
        return GammaParam(shape, rate)

    def copy(self):
        return GammaParam(self.shape.copy(), self.rate.copy())


class CoupledData:
    """Observed subblock tensors and mixing matrices plus cached derived quantities."""

    def __init__(self, Y_list, P_list):
        if len(Y_list) == 0 or len(Y_list) != len(P_list):
            raise ValueError("need one mixing matrix per observed tensor, and at least one tensor")
        self.Y = [np.asarray(Y, dtype=complex) for Y in Y_list]
        self.P = [np.asarray(P, dtype=complex) for P in P_list]
        shape = self.Y[0].shape
        if len(shape) < 2:
            raise ValueError("observed tensors need at least one signal mode and the antenna mode")
        for Y, P in zip(self.Y, self.P):
            if Y.shape != shape:
                raise ValueError("all subblock tensors must share one shape")
            if P.shape[0] != shape[-1] or P.shape[1] != self.P[0].shape[1]:
                raise ValueError(f"mixing matrix shape {P.shape} inconsistent with tensor {shape}")
        self.L = len(self.Y)
        self.tau = shape[:-1]
        self.d = len(self.tau)
        self.M = shape[-1]
        self.Ng = self.P[0].shape[1]
        self.A = [P.conj().T @ P for P in self.P]
        self.unfoldings = [[unfold(Y, m) for m in range(self.d + 1)] for Y in self.Y]
        self.energy = [float(np.vdot(Y, Y).real) for Y in self.Y]
        self.n_entries = int(np.prod(shape))

    @classmethod
    def coerce(cls, Y_list, P_list=None):
        if isinstance(Y_list, CoupledData):
            return Y_list
        return cls(Y_list, P_list)


@dataclass
class VariationalState:
    """Posterior statistics.

    ``Omega`` is the covariance of ``g``, the row-major vectorization of G
    (entry (n, k) sits at ``n * K + k``).  ``Sigma[l][i]`` is the shared row
    covariance of factor ``X_l^i`` in the sense
    ``E[X^H X] = M^H M + tau_i Sigma``.
    """

    MG: np.ndarray
    Omega: np.ndarray
    M: list
    Sigma: list
    beta: GammaParam
    gamma: GammaParam
    eta: GammaParam
    xi: GammaParam
    delta: float
    Omega_logdet: float = 0.0
    Sigma_logdet: list = None
    C: list = None
    C_cov: list = None
    elbo_trace: list = field(default_factory=list)

    @property
    def K(self):
        return self.MG.shape[1]

    @property
    def Ng(self):
        return self.MG.shape[0]

    def Omega_block(self, n1, n2):
        K = self.K
        return self.Omega[n1 * K:(n1 + 1) * K, n2 * K:(n2 + 1) * K]

    def Omega4(self):
        """Omega viewed as ``[n1, k1, n2, k2]``."""
        return self.Omega.reshape(self.Ng, self.K, self.Ng, self.K)

    def G_second_moment(self):
        """``E|G(n, k)|^2`` as an (Ng, K) array."""
        var = np.real(np.diag(self.Omega)).reshape(self.Ng, self.K)
        return np.abs(self.MG) ** 2 + var

    def copy(self):
        return VariationalState(
            MG=self.MG.copy(), Omega=self.Omega.copy(),
            M=[[m.copy() for m in row] for row in self.M],
            Sigma=[[s.copy() for s in row] for row in self.Sigma],
            beta=self.beta.copy(), gamma=self.gamma.copy(), eta=self.eta.copy(), xi=self.xi.copy(),
            delta=self.delta, Omega_logdet=self.Omega_logdet,
            Sigma_logdet=[list(r) for r in self.Sigma_logdet] if self.Sigma_logdet else None,
            C=[c.copy() for c in self.C] if self.C is not None else None,
            C_cov=[c.copy() for c in self.C_cov] if self.C_cov is not None else None,
            elbo_trace=list(self.elbo_trace),
        )


def _crandn(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def init_state(data, K_init, delta=1e-6, rng=None, method="random"):
    """Initial posterior statistics.

    Factor means are scaled so that each column has, on average, the RMS
    magnitude implied by the data energy.  ``method="random"`` draws every
    mean i.i.d. complex Gaussian; ``method="svd"`` takes each signal factor
    from the leading left singular vectors of its mode unfolding weighted by
    the square roots of the singular values (random columns fill in beyond the
    mode rank) and draws G at random.  Covariances are identities scaled to
    the entry variance of the matching mean; every gamma mean is 1.
    """
    if method not in ("random", "svd"):
        raise ValueError(f"unknown init method {method!r}")
    if K_init < 1:
        raise ValueError("K_init must be >= 1")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    L, d, Ng, K = data.L, data.d, data.Ng, K_init
    if Ng * K > MAX_G_DIM:
        raise ValueError(
            f"Ng*K = {Ng * K} exceeds {MAX_G_DIM}: the dense G covariance costs O((Ng K)^3) per "
            "sweep and the O(L N^2 M) mixing term grows with it; reduce the grid or column budget"
        )

    energy = np.mean(data.energy) / K
    if not np.isfinite(energy) or energy <= 0:
        energy = 1.0
    per_vector = energy ** (1.0 / (d + 1))
    p_power = np.mean([np.linalg.norm(P) ** 2 for P in data.P])
    g_var = per_vector / p_power if p_power > 0 else 1.0

    M = [[_crandn(rng, (data.tau[i], K)) * np.sqrt(per_vector / data.tau[i]) for i in range(d)]
         for _ in range(L)]
    if method == "svd":
        for l in range(L):
            for i in range(d):
                u, sv, _ = np.linalg.svd(data.unfoldings[l][i], full_matrices=False)
                k = min(K, sv.size)
                X = M[l][i].copy()
                X[:, :k] = u[:, :k] * np.sqrt(sv[:k])
                norm = np.linalg.norm(X)
                if norm > 0:
                    M[l][i] = X * (np.linalg.norm(M[l][i]) / norm)
    MG = _crandn(rng, (Ng, K)) * np.sqrt(g_var)
    # identity covariances, scaled to each factor's initial entry variance
    Sigma = [[np.eye(K, dtype=complex) * (per_vector / data.tau[i]) for i in range(d)]
             for _ in range(L)]
    Omega = np.eye(Ng * K, dtype=complex) * g_var

    def flat(count, size=None):
        a = delta + count
        return GammaParam(a, np.full(size, a) if size is not None else a)

    return VariationalState(
        MG=MG, Omega=Omega, M=M, Sigma=Sigma,
        beta=flat(L * data.n_entries),
        gamma=flat(L * sum(data.tau), K),
        eta=flat(Ng, K),
        xi=flat(1, (Ng, K)),
        delta=delta,
        Omega_logdet=Ng * K * float(np.log(g_var)),
        Sigma_logdet=[[K * float(np.log(per_vector / data.tau[i])) for i in range(d)] for _ in range(L)],
    )
