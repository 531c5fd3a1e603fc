"""Phase-1 estimation of the RIS-BS channel ``U`` from ``Y = U F + W``.

Two estimators share the :class:`Phase1Estimate` result type: a genie that
returns the true matrix, and an alternating regularized least-squares solver
for the bilinear model ``F = V o (h1 g1^T)``.  Only the product ``U F`` is
identifiable (``U diag(c)`` and ``h1 / c`` give the same observations), so the
returned pair is normalized to a unit-norm ``h1_hat``.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

__all__ = ["Phase1Estimate", "SingularSystemError", "estimate_U_genie", "estimate_U_alternating"]


class SingularSystemError(np.linalg.LinAlgError):
    pass


@dataclass
class Phase1Estimate:
    U_hat: np.ndarray
    h1_hat: np.ndarray
    residual_norm: float
    iterations_used: int
    residual_trace: list = field(default_factory=list)
    objective_trace: list = field(default_factory=list)


def estimate_U_genie(realization):
    h1 = realization.h[:, 0] if realization.h.shape[1] else np.zeros(realization.U.shape[1])
    return Phase1Estimate(U_hat=realization.U.copy(), h1_hat=h1.copy(), residual_norm=0.0,
                          iterations_used=0)


def _ridge_solve(gram, rhs, ridge, reg=None):
    """Solve ``(gram + reg I) x = rhs`` (Hermitian).

    ``reg`` defaults to ``ridge * mean(diag(gram))``; it is returned so the
    caller can keep the weight fixed on later solves.
    """
    n = gram.shape[0]
    if reg is None:
        reg = ridge * np.real(np.trace(gram)) / n
    if reg <= 0:
        raise SingularSystemError("normal equations are singular; use ridge > 0")
    try:
        c = sla.cho_factor(gram + reg * np.eye(n), lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError("normal equations are singular; use ridge > 0") from exc
    return sla.cho_solve(c, rhs), reg


def _initial_h(Y, Vg):
    # dominant right singular direction of Y, pulled back through each element's on/off pattern
    _, _, vh = np.linalg.svd(Y, full_matrices=False)
    w = vh[0].conj()
    h0 = Vg.conj() @ w
    if np.linalg.norm(h0) == 0:
        h0 = np.ones(Vg.shape[0], dtype=complex)
    return h0 / np.linalg.norm(h0)


def estimate_U_alternating(Y, V_phase1, g1, ridge=1e-6, max_iter=50, tol=1e-10, h1_init=None):
    """Alternating ridge least squares for ``Y = U (V o (h1 g1^T))``.

    The ridge weights are relative: each is ``ridge`` times the mean diagonal
    of its normal matrix at the first solve, then held fixed, so every
    half-step exactly minimizes one objective
    ``||Y - U F||^2 + reg_u ||U||^2 + reg_h ||h1||^2`` and the product
    ``U_hat F_hat`` does not depend on the scale of ``h1_init``.
    ``objective_trace`` records that objective after every half-step once
    both weights are known.
    """
    Y = np.asarray(Y, dtype=complex)
    V = np.asarray(V_phase1)
    g1 = np.asarray(g1).reshape(-1)
    Vg = V * g1[None, :]
    h = _initial_h(Y, Vg) if h1_init is None else np.asarray(h1_init, dtype=complex).copy()
    data_norm = np.linalg.norm(Y)

    residuals, objectives = [], []
    U = np.zeros((Y.shape[0], V.shape[0]), dtype=complex)
    reg_u = reg_h = None
    it = 0
    for it in range(1, max_iter + 1):
        F = h[:, None] * Vg
        # (F F^H + reg I) U^H = F Y^H
        UH, reg_u = _ridge_solve(F @ F.conj().T, F @ Y.conj().T, ridge, reg_u)
        U = UH.conj().T
        res = np.linalg.norm(Y - U @ F)
        if reg_h is not None:
            objectives.append(res ** 2 + reg_u * np.linalg.norm(U) ** 2 + reg_h * np.linalg.norm(h) ** 2)
        residuals.append(res)
        if res <= 1e-14 * max(data_norm, 1e-300) or data_norm == 0:
            break

        # y_t = g1(t) U diag(v_t) h1  ->  normal matrix (U^H U) o (Vg^* Vg^T)
        gram = (U.conj().T @ U) * (Vg.conj() @ Vg.T)
        rhs = (Vg.conj() * (U.conj().T @ Y)).sum(axis=1)
        h, reg_h = _ridge_solve(gram, rhs, ridge, reg_h)
        F = h[:, None] * Vg
        res_h = np.linalg.norm(Y - U @ F)
        objectives.append(res_h ** 2 + reg_u * np.linalg.norm(U) ** 2 + reg_h * np.linalg.norm(h) ** 2)
        residuals.append(res_h)
        if len(residuals) >= 3 and abs(residuals[-3] - res_h) <= tol * max(residuals[-3], 1e-300):
            break

    nh = np.linalg.norm(h)
    if nh > 0:
        U = U * nh
        h = h / nh
    final = np.linalg.norm(Y - U @ (h[:, None] * Vg))
    return Phase1Estimate(U_hat=U, h1_hat=h, residual_norm=float(final), iterations_used=it,
                          residual_trace=residuals, objective_trace=objectives)
